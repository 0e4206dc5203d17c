//! Finite episodic CMDPs, policies and exact (model-known) evaluation.
//!
//! All tables are dense, row-major and 0-indexed by step:
//!
//! * transitions `P_h(x'|x,a)` live at `((h * S + x) * A + a) * S + x'`,
//! * rewards / utilities `r_h(x,a)`, `g_h(x,a)` at `(h * S + x) * A + a`,
//! * policies `pi_h(a|x)` at `(h * S + x) * A + a`.
//!
//! Value tables carry one extra terminal step `h = H` that is identically zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for row-stochastic validation.
pub const PROB_TOL: f64 = 1e-9;

/// Which of the two per-step signals a computation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Signal {
    Reward,
    Utility,
}

/// `(|S|, |A|, H)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
}

impl Shape {
    pub fn new(num_states: usize, num_actions: usize, horizon: usize) -> Result<Self> {
        if num_states == 0 || num_actions == 0 || horizon == 0 {
            return Err(Error::InvalidInput(format!(
                "shape must be positive, got |S|={num_states} |A|={num_actions} H={horizon}"
            )));
        }
        Ok(Self {
            num_states,
            num_actions,
            horizon,
        })
    }

    /// Number of `(h, x, a)` cells.
    pub fn sa_cells(&self) -> usize {
        self.horizon * self.num_states * self.num_actions
    }

    /// Number of `(h, x, a, x')` cells.
    pub fn sas_cells(&self) -> usize {
        self.sa_cells() * self.num_states
    }

    #[inline]
    pub fn sa(&self, h: usize, x: usize, a: usize) -> usize {
        (h * self.num_states + x) * self.num_actions + a
    }

    #[inline]
    pub fn sas(&self, h: usize, x: usize, a: usize, y: usize) -> usize {
        self.sa(h, x, a) * self.num_states + y
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Shape(format!("{what}: expected {want} entries, got {got}")));
    }
    Ok(())
}

/// Validate (and, within tolerance, renormalize) a probability row.
fn normalize_row(row: &mut [f64], what: impl Fn() -> String) -> Result<()> {
    if let Some(bad) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::InvalidInput(format!("{}: entry {bad} is not a probability", what())));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() >= PROB_TOL {
        return Err(Error::InvalidInput(format!("{}: row sums to {sum}", what())));
    }
    // Deviations within summation rounding are left alone so that validation is
    // idempotent on its own output.
    if (sum - 1.0).abs() > row.len() as f64 * f64::EPSILON {
        row.iter_mut().for_each(|p| *p /= sum);
    }
    Ok(())
}

/// One episode's CMDP: transitions, reward and utility tables, constraint offset `b`
/// and the fixed initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeModel {
    shape: Shape,
    transition: Vec<f64>,
    reward: Vec<f64>,
    utility: Vec<f64>,
    constraint_offset: f64,
    initial_state: usize,
}

impl EpisodeModel {
    /// Build a validated model. Rows off by less than [`PROB_TOL`] are renormalized,
    /// larger deviations are rejected. `b` may be 0 (vacuous constraint) but not
    /// negative or above `H`.
    pub fn new(
        shape: Shape,
        mut transition: Vec<f64>,
        reward: Vec<f64>,
        utility: Vec<f64>,
        constraint_offset: f64,
        initial_state: usize,
    ) -> Result<Self> {
        check_len("transition", transition.len(), shape.sas_cells())?;
        check_len("reward", reward.len(), shape.sa_cells())?;
        check_len("utility", utility.len(), shape.sa_cells())?;
        let s = shape.num_states;
        for (i, row) in transition.chunks_mut(s).enumerate() {
            let (h, rest) = (i / (s * shape.num_actions), i % (s * shape.num_actions));
            normalize_row(row, || {
                format!("transition row h={h} x={} a={}", rest / shape.num_actions, rest % shape.num_actions)
            })?;
        }
        for (name, table) in [("reward", &reward), ("utility", &utility)] {
            if let Some(v) = table.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::InvalidInput(format!("{name} entry {v} outside [0, 1]")));
            }
        }
        if !(constraint_offset >= 0.0 && constraint_offset <= shape.horizon as f64) {
            return Err(Error::InvalidInput(format!(
                "constraint offset {constraint_offset} outside [0, H={}]",
                shape.horizon
            )));
        }
        if initial_state >= s {
            return Err(Error::InvalidInput(format!("initial state {initial_state} >= |S|={s}")));
        }
        Ok(Self {
            shape,
            transition,
            reward,
            utility,
            constraint_offset,
            initial_state,
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }
    pub fn num_states(&self) -> usize {
        self.shape.num_states
    }
    pub fn num_actions(&self) -> usize {
        self.shape.num_actions
    }
    pub fn horizon(&self) -> usize {
        self.shape.horizon
    }
    pub fn constraint_offset(&self) -> f64 {
        self.constraint_offset
    }
    pub fn initial_state(&self) -> usize {
        self.initial_state
    }
    pub fn transition(&self) -> &[f64] {
        &self.transition
    }
    pub fn reward(&self) -> &[f64] {
        &self.reward
    }
    pub fn utility(&self) -> &[f64] {
        &self.utility
    }

    pub fn signal(&self, which: Signal) -> &[f64] {
        match which {
            Signal::Reward => &self.reward,
            Signal::Utility => &self.utility,
        }
    }

    /// `P_h(.|x, a)`.
    #[inline]
    pub fn p_row(&self, h: usize, x: usize, a: usize) -> &[f64] {
        let start = self.shape.sas(h, x, a, 0);
        &self.transition[start..start + self.shape.num_states]
    }

    #[inline]
    pub fn r(&self, h: usize, x: usize, a: usize) -> f64 {
        self.reward[self.shape.sa(h, x, a)]
    }

    #[inline]
    pub fn g(&self, h: usize, x: usize, a: usize) -> f64 {
        self.utility[self.shape.sa(h, x, a)]
    }

    /// Same model with a different constraint offset.
    pub fn with_constraint_offset(&self, b: f64) -> Result<Self> {
        Self::new(
            self.shape,
            self.transition.clone(),
            self.reward.clone(),
            self.utility.clone(),
            b,
            self.initial_state,
        )
    }
}

/// Per-step state-conditional action distributions `pi_h(a|x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    shape: Shape,
    probs: Vec<f64>,
}

impl PolicyTable {
    pub fn new(shape: Shape, mut probs: Vec<f64>) -> Result<Self> {
        check_len("policy", probs.len(), shape.sa_cells())?;
        let na = shape.num_actions;
        for (i, row) in probs.chunks_mut(na).enumerate() {
            normalize_row(row, || {
                format!("policy row h={} x={}", i / shape.num_states, i % shape.num_states)
            })?;
        }
        Ok(Self { shape, probs })
    }

    pub fn uniform(shape: Shape) -> Self {
        Self {
            shape,
            probs: vec![1.0 / shape.num_actions as f64; shape.sa_cells()],
        }
    }

    /// Deterministic policy from one action per `(h, x)`, indexed `h * S + x`.
    pub fn deterministic(shape: Shape, actions: &[usize]) -> Result<Self> {
        check_len("deterministic actions", actions.len(), shape.horizon * shape.num_states)?;
        let mut probs = vec![0.0; shape.sa_cells()];
        for (i, &a) in actions.iter().enumerate() {
            if a >= shape.num_actions {
                return Err(Error::InvalidInput(format!("action {a} >= |A|")));
            }
            probs[i * shape.num_actions + a] = 1.0;
        }
        Ok(Self { shape, probs })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn row(&self, h: usize, x: usize) -> &[f64] {
        let start = self.shape.sa(h, x, 0);
        &self.probs[start..start + self.shape.num_actions]
    }

    #[inline]
    pub fn prob(&self, h: usize, x: usize, a: usize) -> f64 {
        self.probs[self.shape.sa(h, x, a)]
    }

    /// Per-step distance `max_x ||pi_h(.|x) - other_h(.|x)||_1`.
    pub fn max_l1_distance(&self, other: &PolicyTable, h: usize) -> f64 {
        (0..self.shape.num_states)
            .map(|x| {
                self.row(h, x)
                    .iter()
                    .zip(other.row(h, x))
                    .map(|(p, q)| (p - q).abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

/// Reward and utility value tables `V_h(x)`, `Q_h(x, a)` for `h = 0..=H`, with the
/// terminal step `h = H` identically zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValuePair {
    shape: Shape,
    pub(crate) v_r: Vec<f64>,
    pub(crate) v_g: Vec<f64>,
    pub(crate) q_r: Vec<f64>,
    pub(crate) q_g: Vec<f64>,
}

impl ValuePair {
    pub fn zeros(shape: Shape) -> Self {
        let nv = (shape.horizon + 1) * shape.num_states;
        let nq = nv * shape.num_actions;
        Self {
            shape,
            v_r: vec![0.0; nv],
            v_g: vec![0.0; nv],
            q_r: vec![0.0; nq],
            q_g: vec![0.0; nq],
        }
    }

    /// Assemble from raw tables of length `(H+1)|S|` and `(H+1)|S||A|`.
    pub fn from_tables(
        shape: Shape,
        v_r: Vec<f64>,
        v_g: Vec<f64>,
        q_r: Vec<f64>,
        q_g: Vec<f64>,
    ) -> Result<Self> {
        let nv = (shape.horizon + 1) * shape.num_states;
        let nq = nv * shape.num_actions;
        check_len("v_r", v_r.len(), nv)?;
        check_len("v_g", v_g.len(), nv)?;
        check_len("q_r", q_r.len(), nq)?;
        check_len("q_g", q_g.len(), nq)?;
        let out = Self {
            shape,
            v_r,
            v_g,
            q_r,
            q_g,
        };
        let h = shape.horizon;
        let terminal_zero = (0..shape.num_states).all(|x| {
            out.v(Signal::Reward, h, x) == 0.0
                && out.v(Signal::Utility, h, x) == 0.0
                && (0..shape.num_actions)
                    .all(|a| out.q(Signal::Reward, h, x, a) == 0.0 && out.q(Signal::Utility, h, x, a) == 0.0)
        });
        if !terminal_zero {
            return Err(Error::InvalidInput("terminal step H must be identically zero".into()));
        }
        Ok(out)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    fn vi(&self, h: usize, x: usize) -> usize {
        h * self.shape.num_states + x
    }

    #[inline]
    pub fn v(&self, which: Signal, h: usize, x: usize) -> f64 {
        let i = self.vi(h, x);
        match which {
            Signal::Reward => self.v_r[i],
            Signal::Utility => self.v_g[i],
        }
    }

    #[inline]
    pub fn q(&self, which: Signal, h: usize, x: usize, a: usize) -> f64 {
        let i = self.shape.sa(h, x, a);
        match which {
            Signal::Reward => self.q_r[i],
            Signal::Utility => self.q_g[i],
        }
    }

    pub(crate) fn set_q(&mut self, which: Signal, h: usize, x: usize, a: usize, value: f64) {
        let i = self.shape.sa(h, x, a);
        match which {
            Signal::Reward => self.q_r[i] = value,
            Signal::Utility => self.q_g[i] = value,
        }
    }

    pub(crate) fn set_v(&mut self, which: Signal, h: usize, x: usize, value: f64) {
        let i = self.vi(h, x);
        match which {
            Signal::Reward => self.v_r[i] = value,
            Signal::Utility => self.v_g[i] = value,
        }
    }

    /// `V_h(.)` as a slice of length `|S|`.
    pub fn v_step(&self, which: Signal, h: usize) -> &[f64] {
        let i = self.vi(h, 0);
        let n = self.shape.num_states;
        match which {
            Signal::Reward => &self.v_r[i..i + n],
            Signal::Utility => &self.v_g[i..i + n],
        }
    }

    /// Q table over steps `0..H` only (no terminal row), laid out like a reward table.
    pub fn q_table(&self, which: Signal) -> &[f64] {
        let n = self.shape.sa_cells();
        match which {
            Signal::Reward => &self.q_r[..n],
            Signal::Utility => &self.q_g[..n],
        }
    }

    pub fn v_table(&self, which: Signal) -> &[f64] {
        match which {
            Signal::Reward => &self.v_r,
            Signal::Utility => &self.v_g,
        }
    }

    /// Recompute `V_h(x) = <Q_h(x,.), pi_h(.|x)>` for step `h`.
    /// `V_h(x) = <Q_h(x, .), pi_h(.|x)>`, kept inside `[0, H - h]` against rounding
    /// in the policy row.
    pub(crate) fn fill_v_from_q(&mut self, policy: &PolicyTable, h: usize) {
        let cap = (self.shape.horizon - h) as f64;
        for x in 0..self.shape.num_states {
            for which in [Signal::Reward, Signal::Utility] {
                let v: f64 = (0..self.shape.num_actions)
                    .map(|a| self.q(which, h, x, a) * policy.prob(h, x, a))
                    .sum();
                self.set_v(which, h, x, v.clamp(0.0, cap));
            }
        }
    }
}

fn check_policy_shape(model: &EpisodeModel, policy: &PolicyTable) -> Result<()> {
    if model.shape() != policy.shape() {
        return Err(Error::Shape(format!(
            "model shape {:?} vs policy shape {:?}",
            model.shape(),
            policy.shape()
        )));
    }
    Ok(())
}

/// Exact Bellman evaluation of `policy` on `model` by backward induction.
pub fn evaluate_exact(model: &EpisodeModel, policy: &PolicyTable) -> Result<ValuePair> {
    check_policy_shape(model, policy)?;
    let shape = model.shape();
    let mut out = ValuePair::zeros(shape);
    for h in (0..shape.horizon).rev() {
        for x in 0..shape.num_states {
            for a in 0..shape.num_actions {
                let row = model.p_row(h, x, a);
                for which in [Signal::Reward, Signal::Utility] {
                    let next = out.v_step(which, h + 1);
                    let cont: f64 = row.iter().zip(next).map(|(p, v)| p * v).sum();
                    let q = model.signal(which)[shape.sa(h, x, a)] + cont;
                    out.set_q(which, h, x, a, q);
                }
            }
        }
        out.fill_v_from_q(policy, h);
    }
    Ok(out)
}

/// Regularized Lagrangian `V_r + mu (V_g - b) + (xi / 2) mu^2`.
pub fn lagrangian(v_r1: f64, v_g1: f64, b: f64, mu: f64, xi: f64) -> Result<f64> {
    if mu < 0.0 || xi < 0.0 || mu.is_nan() || xi.is_nan() {
        return Err(Error::InvalidInput(format!("mu={mu} and xi={xi} must be >= 0")));
    }
    Ok(v_r1 + mu * (v_g1 - b) + 0.5 * xi * mu * mu)
}

/// Bellman residuals of an estimate against the true model.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionError {
    shape: Shape,
    pub iota_r: Vec<f64>,
    pub iota_g: Vec<f64>,
}

impl PredictionError {
    pub fn get(&self, which: Signal, h: usize, x: usize, a: usize) -> f64 {
        let i = self.shape.sa(h, x, a);
        match which {
            Signal::Reward => self.iota_r[i],
            Signal::Utility => self.iota_g[i],
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.iota_r
            .iter()
            .chain(&self.iota_g)
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `iota_h(x,a) = signal_h(x,a) + (P_h V_{h+1})(x,a) - Q_h(x,a)` for both signals.
pub fn model_prediction_error(model: &EpisodeModel, estimate: &ValuePair) -> Result<PredictionError> {
    if model.shape() != estimate.shape() {
        return Err(Error::Shape(format!(
            "model shape {:?} vs estimate shape {:?}",
            model.shape(),
            estimate.shape()
        )));
    }
    let shape = model.shape();
    let mut iota_r = vec![0.0; shape.sa_cells()];
    let mut iota_g = vec![0.0; shape.sa_cells()];
    for h in 0..shape.horizon {
        for x in 0..shape.num_states {
            for a in 0..shape.num_actions {
                let i = shape.sa(h, x, a);
                let row = model.p_row(h, x, a);
                for (which, dst) in [(Signal::Reward, &mut iota_r), (Signal::Utility, &mut iota_g)] {
                    let cont: f64 = row.iter().zip(estimate.v_step(which, h + 1)).map(|(p, v)| p * v).sum();
                    dst[i] = model.signal(which)[i] + cont - estimate.q(which, h, x, a);
                }
            }
        }
    }
    Ok(PredictionError {
        shape,
        iota_r,
        iota_g,
    })
}

/// Occupancy measure `q_h(x, a) = Pr(x_h = x, a_h = a)` of `policy` from the initial state.
pub fn occupancy(model: &EpisodeModel, policy: &PolicyTable) -> Result<Vec<f64>> {
    check_policy_shape(model, policy)?;
    let shape = model.shape();
    let mut occ = vec![0.0; shape.sa_cells()];
    let mut dist = vec![0.0; shape.num_states];
    dist[model.initial_state()] = 1.0;
    for h in 0..shape.horizon {
        let mut next = vec![0.0; shape.num_states];
        for x in 0..shape.num_states {
            if dist[x] == 0.0 {
                continue;
            }
            for a in 0..shape.num_actions {
                let q = dist[x] * policy.prob(h, x, a);
                occ[shape.sa(h, x, a)] = q;
                if q != 0.0 {
                    for (n, p) in next.iter_mut().zip(model.p_row(h, x, a)) {
                        *n += q * p;
                    }
                }
            }
        }
        dist = next;
    }
    Ok(occ)
}

/// Optimal value and a greedy deterministic policy for the scalarized signal
/// `w_r * r + w_g * g`.
#[derive(Debug, Clone)]
pub struct UnconstrainedSolution {
    /// `V*_0(x_1)`.
    pub value: f64,
    /// `V*_h(x)` for `h = 0..=H`.
    pub values: Vec<f64>,
    pub policy: PolicyTable,
}

/// Finite-horizon value iteration on `w_r * r + w_g * g`. Ties go to the lowest action index.
pub fn solve_unconstrained(model: &EpisodeModel, w_r: f64, w_g: f64) -> UnconstrainedSolution {
    let shape = model.shape();
    let (ns, na) = (shape.num_states, shape.num_actions);
    let mut values = vec![0.0; (shape.horizon + 1) * ns];
    let mut actions = vec![0usize; shape.horizon * ns];
    for h in (0..shape.horizon).rev() {
        let (head, tail) = values.split_at_mut((h + 1) * ns);
        let next = &tail[..ns];
        for x in 0..ns {
            let mut best = (f64::NEG_INFINITY, 0);
            for a in 0..na {
                let cont: f64 = model.p_row(h, x, a).iter().zip(next).map(|(p, v)| p * v).sum();
                let q = w_r * model.r(h, x, a) + w_g * model.g(h, x, a) + cont;
                if q > best.0 {
                    best = (q, a);
                }
            }
            head[h * ns + x] = best.0;
            actions[h * ns + x] = best.1;
        }
    }
    let policy = PolicyTable::deterministic(shape, &actions).expect("actions are in range by construction");
    UnconstrainedSolution {
        value: values[model.initial_state()],
        values,
        policy,
    }
}
