//! Periodically restarted optimistic primal-dual policy optimization.
//!
//! Episode `m` of [`run`]:
//!
//! 1. `l_pi = (ceil(m/L) - 1) L + 1`, `l_Q = (ceil(m/W) - 1) W + 1`; at `m = l_pi` the
//!    previous policy becomes uniform and the previous Q tables become zero.
//! 2. `pi^m ∝ pi^{m-1} exp(alpha (Q_r^{m-1} + mu^{m-1} Q_g^{m-1}))`.
//! 3. One trajectory is sampled from the true episode model under `pi^m`.
//! 4. `mu^m = Proj_[0, chi](mu^{m-1} + eta (b_m - V_hat_{g,1}^{m-1} - xi mu^{m-1}))`.
//! 5. `pi^m` is evaluated optimistically on the trajectories of episodes `l_Q..m-1`.
//!
//! The dual state (`mu`, `V_hat_g`) is never reset.

use serde::{Deserialize, Serialize};

use crate::env_gen::{epoch_budgets, NonStationaryCmdp};
use crate::error::{Error, Result};
use crate::kernel::KernelFeatures;
use crate::metrics::{EpisodeRecord, EpisodeTrace};
use crate::model::{PolicyTable, Shape, Signal, ValuePair};
use crate::policy_eval::{
    lstd_ucb, lv_slack, ope_tabular, Assumption, Setting, StepRecord, Trajectory, TrajectoryWindow,
};
use crate::rng::{domain, keyed_rng, sample_index};

/// Smallest variation budget a preset accepts; callers with a stationary sequence
/// should pass at least this.
pub const BUDGET_FLOOR: f64 = 1e-6;
/// Default failure probability used in the bonus scale.
pub const DEFAULT_CONFIDENCE: f64 = 0.05;
/// Tolerance on the simplex after an improvement step.
pub const SIMPLEX_TOL: f64 = 1e-9;

fn default_constants() -> [f64; 6] {
    [1.0; 6]
}

fn default_rho() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    pub alpha: f64,
    pub eta: f64,
    pub xi: f64,
    /// Dual cap; `None` means no upper clamp.
    pub chi: Option<f64>,
    /// Policy restart period `L`.
    pub restart_policy: usize,
    /// Evaluation window / restart period `W`.
    pub restart_window: usize,
    pub beta: f64,
    pub lambda: f64,
    pub assumption: Assumption,
    pub setting: Setting,
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Absolute constants `C_1..C_6`; only `C_1` (linear) and `C_4` (tabular) enter `beta`.
    #[serde(default = "default_constants")]
    pub constants: [f64; 6],
    /// Keep `mu` at zero (ablation).
    #[serde(default)]
    pub freeze_dual: bool,
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive and finite, got {}", self.alpha));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be positive and finite, got {}", self.eta));
        }
        if !(self.xi >= 0.0 && self.xi.is_finite()) {
            return bad(format!("xi must be >= 0, got {}", self.xi));
        }
        if self.restart_policy == 0 || self.restart_window == 0 {
            return bad("restart periods L and W must be >= 1".into());
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be >= 0, got {}", self.beta));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be > 0, got {}", self.lambda));
        }
        if !(1.0 / 3.0..=0.5).contains(&self.rho) {
            return bad(format!("rho must lie in [1/3, 1/2], got {}", self.rho));
        }
        if self.constants.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return bad(format!("constants must be positive, got {:?}", self.constants));
        }
        match self.assumption {
            Assumption::LocalBudget => {
                if self.xi <= 0.0 {
                    return bad("local_budget requires xi > 0".into());
                }
                if self.chi.is_some() {
                    return bad("local_budget requires an unbounded dual (chi = none)".into());
                }
                if self.xi * self.eta > 0.5 {
                    return bad(format!("local_budget requires xi * eta <= 1/2, got {}", self.xi * self.eta));
                }
            }
            Assumption::Slater => {
                if self.xi != 0.0 {
                    return bad("slater requires xi = 0".into());
                }
                match self.chi {
                    Some(c) if c > 0.0 && c.is_finite() => {}
                    other => return bad(format!("slater requires a finite chi > 0, got {other:?}")),
                }
            }
        }
        Ok(())
    }

    fn upper(&self) -> f64 {
        self.chi.unwrap_or(f64::INFINITY)
    }
}

/// `(l_pi, l_Q)` for 1-based episode `m`.
pub fn restart_indices(m: usize, l: usize, w: usize) -> (usize, usize) {
    assert!(m >= 1 && l >= 1 && w >= 1, "restart_indices needs m, L, W >= 1");
    ((m - 1) / l * l + 1, (m - 1) / w * w + 1)
}

/// Exponentiated-weights update of one distribution: `p' ∝ p exp(alpha * score)`.
pub fn exp_weights_row(prev: &[f64], scores: &[f64], alpha: f64) -> Vec<f64> {
    let top = scores
        .iter()
        .zip(prev)
        .filter(|(_, p)| **p > 0.0)
        .map(|(s, _)| *s)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = prev
        .iter()
        .zip(scores)
        .map(|(p, s)| if *p > 0.0 { p * (alpha * (s - top)).exp() } else { 0.0 })
        .collect();
    let z: f64 = out.iter().sum();
    for v in &mut out {
        *v /= z;
    }
    out
}

/// One improvement step on every `(h, x)` row with score `Q_r + mu Q_g`.
pub fn policy_improve(prev: &PolicyTable, q_r: &[f64], q_g: &[f64], mu: f64, alpha: f64) -> Result<PolicyTable> {
    let shape = prev.shape();
    let n = shape.sa_cells();
    if q_r.len() != n || q_g.len() != n {
        return Err(Error::Shape(format!(
            "Q tables have {} and {} cells, policy has {n}",
            q_r.len(),
            q_g.len()
        )));
    }
    if q_r.iter().chain(q_g).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite entry in Q".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) || !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::InvalidInput(format!("need alpha > 0 and finite mu >= 0, got {alpha}, {mu}")));
    }
    let na = shape.num_actions;
    let mut probs = Vec::with_capacity(n);
    let mut scores = vec![0.0; na];
    for row in 0..shape.horizon * shape.num_states {
        for a in 0..na {
            scores[a] = q_r[row * na + a] + mu * q_g[row * na + a];
        }
        probs.extend(exp_weights_row(&prev.probs()[row * na..(row + 1) * na], &scores, alpha));
    }
    PolicyTable::new(shape, probs)
}

/// Projected regularized dual ascent step.
pub fn dual_update(mu: f64, b: f64, v_g1_est: f64, cfg: &LearnerConfig) -> f64 {
    if cfg.freeze_dual {
        return 0.0;
    }
    let raw = mu + cfg.eta * (b - v_g1_est - cfg.xi * mu);
    raw.clamp(0.0, cfg.upper())
}

/// `D(p || q) = sum p log(p / q)`, with `0 log 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            if pi <= 0.0 {
                0.0
            } else if qi <= 0.0 {
                f64::INFINITY
            } else {
                pi * (pi / qi).ln()
            }
        })
        .sum()
}

/// Which parameter schedule to instantiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Linear kernel, local variation budgets.
    LinearLocalBudget,
    /// Linear kernel, strict feasibility.
    LinearSlater,
    /// Tabular, local variation budgets, trade-off `rho`.
    TabularLocalBudget,
    /// Tabular, strict feasibility.
    TabularSlater,
}

impl Preset {
    /// Preset number 1..=4.
    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Preset::LinearLocalBudget),
            2 => Ok(Preset::LinearSlater),
            3 => Ok(Preset::TabularLocalBudget),
            4 => Ok(Preset::TabularSlater),
            _ => Err(Error::Config(format!("preset must be 1..=4, got {n}"))),
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Preset::LinearLocalBudget => 1,
            Preset::LinearSlater => 2,
            Preset::TabularLocalBudget => 3,
            Preset::TabularSlater => 4,
        }
    }

    pub fn assumption(self) -> Assumption {
        match self {
            Preset::LinearLocalBudget | Preset::TabularLocalBudget => Assumption::LocalBudget,
            Preset::LinearSlater | Preset::TabularSlater => Assumption::Slater,
        }
    }

    pub fn setting(self) -> Setting {
        match self {
            Preset::LinearLocalBudget | Preset::LinearSlater => Setting::Linear,
            Preset::TabularLocalBudget | Preset::TabularSlater => Setting::Tabular,
        }
    }
}

/// Everything a preset schedule depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetInputs {
    pub preset: Preset,
    pub episodes: usize,
    pub horizon: usize,
    pub num_states: usize,
    pub num_actions: usize,
    /// Feature dimension for the linear presets; defaults to the canonical embedding's
    /// `max(|S|^2 |A|, |S||A|)`.
    pub dim: Option<usize>,
    pub b_delta: f64,
    pub b_star: f64,
    pub gamma: Option<f64>,
    pub rho: f64,
    pub confidence: f64,
    pub constants: [f64; 6],
}

impl PresetInputs {
    pub fn new(preset: Preset, shape: Shape, episodes: usize, b_delta: f64, b_star: f64) -> Self {
        Self {
            preset,
            episodes,
            horizon: shape.horizon,
            num_states: shape.num_states,
            num_actions: shape.num_actions,
            dim: None,
            b_delta,
            b_star,
            gamma: None,
            rho: default_rho(),
            confidence: DEFAULT_CONFIDENCE,
            constants: default_constants(),
        }
    }
}

fn round_period(v: f64) -> usize {
    if v.is_finite() {
        v.round().max(1.0) as usize
    } else {
        usize::MAX
    }
}

/// Evaluate a preset's closed-form schedule.
///
/// `L` and `W` are rounded to the nearest integer and floored at 1. Under the local
/// budget presets `xi` is capped at `1 / (2 eta)` if the formula would exceed it.
pub fn preset_params(inp: &PresetInputs) -> Result<LearnerConfig> {
    if inp.episodes == 0 || inp.horizon == 0 {
        return Err(Error::Config("M and H must be >= 1".into()));
    }
    if !(inp.b_delta > 0.0) || !(inp.b_star >= 0.0) || !inp.b_delta.is_finite() || !inp.b_star.is_finite() {
        return Err(Error::Config(format!(
            "preset schedules divide by the variation budgets; got B_delta = {}, B_star = {}. \
             Floor them at {BUDGET_FLOOR:e} for stationary sequences",
            inp.b_delta, inp.b_star
        )));
    }
    if !(inp.confidence > 0.0 && inp.confidence < 1.0) {
        return Err(Error::Config(format!("confidence p must lie in (0, 1), got {}", inp.confidence)));
    }
    let m = inp.episodes as f64;
    let h = inp.horizon as f64;
    let s = inp.num_states as f64;
    let a = inp.num_actions as f64;
    let p = inp.confidence;
    let slater_gamma = || -> Result<f64> {
        match inp.gamma {
            Some(g) if g > 0.0 && g.is_finite() => Ok(g),
            other => Err(Error::Config(format!("strict feasibility presets need gamma > 0, got {other:?}"))),
        }
    };

    let (alpha, l, eta, xi, chi, w, beta);
    match inp.preset.setting() {
        Setting::Linear => {
            let d = inp
                .dim
                .unwrap_or(inp.num_states * inp.num_states * inp.num_actions)
                .max(1) as f64;
            let x = d.sqrt() * inp.b_delta + inp.b_star;
            w = round_period(d.powf(-0.25) / h * m.sqrt() / inp.b_delta.sqrt());
            beta = inp.constants[0] * (d * h * h * (d * w as f64 / p).ln()).sqrt();
            eta = 1.0 / m.sqrt();
            if inp.preset == Preset::LinearLocalBudget {
                alpha = x.cbrt() / (h * m.sqrt());
                l = round_period(m.powf(0.75) * x.powf(-2.0 / 3.0));
                xi = 2.0 * h * x.cbrt() / m.sqrt();
                chi = None;
            } else {
                let g = slater_gamma()?;
                alpha = g * h.powf(-1.5) * m.powf(-1.0 / 3.0) * x.cbrt();
                l = round_period(m.powf(2.0 / 3.0) * x.powf(-2.0 / 3.0));
                xi = 0.0;
                chi = Some(2.0 * h / g);
            }
        }
        Setting::Tabular => {
            let y = inp.b_delta + inp.b_star;
            let ratio = (m / inp.b_delta).powf(2.0 / 3.0);
            let sa = s.powf(2.0 / 3.0) * a.cbrt();
            if inp.preset == Preset::TabularLocalBudget {
                let rho = inp.rho;
                if !(1.0 / 3.0..=0.5).contains(&rho) {
                    return Err(Error::Config(format!("rho must lie in [1/3, 1/2], got {rho}")));
                }
                alpha = h.powf(-1.0 / 3.0) * m.powf(-rho) * y.cbrt();
                l = round_period(h.powf(-1.0 / 3.0) * m.powf((1.0 + rho) / 2.0) * y.powf(-2.0 / 3.0));
                eta = h.powf(-1.0 / 3.0) / m.sqrt();
                xi = 2.0 * h.powf(5.0 / 3.0) * y.cbrt() * m.powf(-rho);
                w = round_period(h.powf(2.0 / 3.0) * sa * ratio);
                chi = None;
            } else {
                let g = slater_gamma()?;
                alpha = g * h.powf(-1.5) * m.powf(-1.0 / 3.0) * y.cbrt();
                l = round_period(m.powf(2.0 / 3.0) * y.powf(-2.0 / 3.0));
                eta = 1.0 / m.sqrt();
                xi = 0.0;
                w = round_period(sa * ratio);
                chi = Some(2.0 * h / g);
            }
            beta = inp.constants[3] * h * (s * (s * a * w as f64 / p).ln()).sqrt();
        }
    }
    let xi = if inp.preset.assumption() == Assumption::LocalBudget {
        xi.min(0.5 / eta)
    } else {
        xi
    };
    let cfg = LearnerConfig {
        alpha,
        eta,
        xi,
        chi,
        restart_policy: l,
        restart_window: w,
        beta,
        lambda: 1.0,
        assumption: inp.preset.assumption(),
        setting: inp.preset.setting(),
        rho: inp.rho,
        constants: inp.constants,
        freeze_dual: false,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Where a run starts. A fresh run is `start_episode = 1` with zero dual state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResumeState {
    pub start_episode: usize,
    /// `mu^{start-1}`.
    pub mu: f64,
    /// `V_hat_{g,1}^{start-1}(x_1)`.
    pub v_g1_est: f64,
}

impl Default for ResumeState {
    fn default() -> Self {
        Self {
            start_episode: 1,
            mu: 0.0,
            v_g1_est: 0.0,
        }
    }
}

/// Sample one trajectory of episode `m` under `policy` on the true model.
pub fn sample_trajectory(seq: &NonStationaryCmdp, m: usize, policy: &PolicyTable, seed: u64) -> Trajectory {
    use rand::Rng;
    let model = seq.episode(m);
    let mut x = model.initial_state();
    let steps = (0..model.horizon())
        .map(|h| {
            let mut rng = keyed_rng(seed, &[domain::TRAJECTORY, m as u64, h as u64]);
            let a = sample_index(policy.row(h, x), rng.random::<f64>());
            let next = sample_index(model.p_row(h, x, a), rng.random::<f64>());
            let rec = StepRecord {
                state: x,
                action: a,
                reward: model.r(h, x, a),
                utility: model.g(h, x, a),
                next_state: next,
            };
            x = next;
            rec
        })
        .collect();
    Trajectory { episode: m, steps }
}

/// Run episodes `1..=M`.
pub fn run(seq: &NonStationaryCmdp, cfg: &LearnerConfig, seed: u64) -> Result<EpisodeTrace> {
    run_from(seq, cfg, seed, ResumeState::default())
}

/// Run episodes `resume.start_episode..=M`. The start must be both a policy restart
/// and a window start, so no earlier policy or trajectory is needed.
///
/// The linear setting uses the canonical embedding of the sequence's shape.
pub fn run_from(seq: &NonStationaryCmdp, cfg: &LearnerConfig, seed: u64, resume: ResumeState) -> Result<EpisodeTrace> {
    cfg.validate()?;
    let shape = seq.shape();
    let total = seq.len();
    let (l, w) = (cfg.restart_policy, cfg.restart_window);
    let start = resume.start_episode;
    if start == 0 || start > total.max(1) {
        return Err(Error::InvalidInput(format!("start episode {start} outside 1..={total}")));
    }
    if restart_indices(start, l, w) != (start, start) {
        return Err(Error::InvalidInput(format!(
            "start episode {start} is not a restart point of both L = {l} and W = {w}"
        )));
    }
    let features = match cfg.setting {
        Setting::Linear => Some(KernelFeatures::canonical(shape)),
        Setting::Tabular => None,
    };
    let (d1, d2) = features.as_ref().map_or((0, 0), |f| (f.d1(), f.d2()));
    let epochs = match cfg.assumption {
        Assumption::LocalBudget => epoch_budgets(seq, w)?,
        Assumption::Slater => Vec::new(),
    };

    let mut policy = PolicyTable::uniform(shape);
    let mut values = ValuePair::zeros(shape);
    let mut mu = resume.mu;
    let mut v_g1_est = resume.v_g1_est;
    let mut history: Vec<Trajectory> = Vec::new();
    let mut records = Vec::with_capacity(total + 1 - start);

    for m in start..=total {
        let (l_pi, l_q) = restart_indices(m, l, w);
        if m == l_pi {
            policy = PolicyTable::uniform(shape);
            values = ValuePair::zeros(shape);
        }
        if m == l_q {
            history.clear();
        }
        policy = policy_improve(
            &policy,
            values.q_table(Signal::Reward),
            values.q_table(Signal::Utility),
            mu,
            cfg.alpha,
        )
        .map_err(|e| e.in_episode(m))?;
        let traj = sample_trajectory(seq, m, &policy, seed);
        let model = seq.episode(m);
        mu = dual_update(mu, model.constraint_offset(), v_g1_est, cfg);

        let lv = match cfg.assumption {
            Assumption::Slater => 0.0,
            Assumption::LocalBudget => {
                let e = &epochs[(m - 1) / w];
                lv_slack(cfg.assumption, cfg.setting, (e.b_p, e.b_g), shape.horizon, d1, d2, w)
            }
        };
        let window = TrajectoryWindow::select(&history, l_q, m, shape).map_err(|e| e.in_episode(m))?;
        values = match &features {
            None => ope_tabular(&window, &policy, cfg.lambda, cfg.beta, lv),
            Some(f) => lstd_ucb(&window, f, &policy, cfg.lambda, cfg.beta, lv),
        }
        .map_err(|e| e.in_episode(m))?;
        let x1 = model.initial_state();
        v_g1_est = values.v(Signal::Utility, 0, x1);
        records.push(EpisodeRecord {
            episode: m,
            policy: policy.clone(),
            mu,
            v_r1_est: values.v(Signal::Reward, 0, x1),
            v_g1_est,
            lv,
            trajectory: traj.clone(),
        });
        history.push(traj);
    }
    Ok(EpisodeTrace {
        seed,
        config: cfg.clone(),
        records,
    })
}
