//! Drifting CMDP sequences and their variation budgets.
//!
//! Budgets use the canonical tabular embedding: `theta_h` is the flattened
//! transition table of step `h`, `theta_{r,h}` / `theta_{g,h}` the flattened reward /
//! utility tables, and every distance is the Euclidean norm of the difference.

use std::sync::Arc;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EpisodeModel, PolicyTable, Shape};
use crate::oracle::strict_feasibility_margin;
use crate::rng::{domain, keyed_rng};

/// How the episode models change over `m = 1..=M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Drift {
    Stationary,
    /// `num_switches + 1` i.i.d. models held constant on evenly sized contiguous blocks.
    PiecewiseConstant { num_switches: usize },
    /// Convex interpolation between two random endpoint models; episode `m` sits at
    /// `t_m = rate * (m - 1) / (M - 1)` with `rate` in `[0, 1]`.
    LinearDrift { rate: f64 },
}

impl std::fmt::Display for Drift {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Drift::Stationary => write!(f, "stationary"),
            Drift::PiecewiseConstant { num_switches } => write!(f, "piecewise {num_switches}"),
            Drift::LinearDrift { rate } => write!(f, "linear {rate:?}"),
        }
    }
}

/// Constraint offsets `b_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConstraintSchedule {
    Constant(f64),
    PerEpisode(Vec<f64>),
}

impl ConstraintSchedule {
    fn resolve(&self, episodes: usize) -> Result<Vec<f64>> {
        match self {
            ConstraintSchedule::Constant(b) => Ok(vec![*b; episodes]),
            ConstraintSchedule::PerEpisode(v) if v.len() == episodes => Ok(v.clone()),
            ConstraintSchedule::PerEpisode(v) => Err(Error::Shape(format!(
                "constraint schedule has {} entries for {episodes} episodes",
                v.len()
            ))),
        }
    }
}

/// `(|S|, |A|, H, M)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceShape {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub episodes: usize,
}

impl SequenceShape {
    pub fn model_shape(&self) -> Result<Shape> {
        Shape::new(self.num_states, self.num_actions, self.horizon)
    }
}

/// Knobs for the random draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Require `max_pi V_g - b_m >= min_gamma` for every episode; `None` disables the check.
    pub min_gamma: Option<f64>,
    /// Redraw cap per base model.
    pub max_retries: usize,
    pub initial_state: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            min_gamma: Some(0.05),
            max_retries: 1000,
            initial_state: 0,
        }
    }
}

/// A sequence of `M` episode models sharing shape and initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct NonStationaryCmdp {
    episodes: Vec<Arc<EpisodeModel>>,
    seed: u64,
    drift: Drift,
}

impl NonStationaryCmdp {
    pub fn new(episodes: Vec<EpisodeModel>, seed: u64, drift: Drift) -> Result<Self> {
        Self::from_shared(episodes.into_iter().map(Arc::new).collect(), seed, drift)
    }

    pub(crate) fn from_shared(episodes: Vec<Arc<EpisodeModel>>, seed: u64, drift: Drift) -> Result<Self> {
        let first = episodes
            .first()
            .ok_or_else(|| Error::InvalidInput("a sequence needs at least one episode".into()))?;
        let (shape, x1) = (first.shape(), first.initial_state());
        if let Some(m) = episodes
            .iter()
            .position(|e| e.shape() != shape || e.initial_state() != x1)
        {
            return Err(Error::Shape(format!(
                "episode {} differs in shape or initial state from episode 1",
                m + 1
            )));
        }
        Ok(Self { episodes, seed, drift })
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn shape(&self) -> Shape {
        self.episodes[0].shape()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn drift(&self) -> &Drift {
        &self.drift
    }

    /// Episode `m` (1-based).
    pub fn episode(&self, m: usize) -> &EpisodeModel {
        &self.episodes[m - 1]
    }

    pub fn episodes(&self) -> impl ExactSizeIterator<Item = &EpisodeModel> {
        self.episodes.iter().map(|e| e.as_ref())
    }

    pub(crate) fn shared(&self) -> &[Arc<EpisodeModel>] {
        &self.episodes
    }

    /// Episode sequence with its order concatenated after `self`.
    pub fn concat(&self, other: &NonStationaryCmdp) -> Result<Self> {
        let mut episodes = self.episodes.clone();
        episodes.extend(other.episodes.iter().cloned());
        Self::from_shared(episodes, self.seed, self.drift.clone())
    }

    /// Episodes `from..=to` (1-based, inclusive).
    pub fn slice(&self, from: usize, to: usize) -> Result<Self> {
        if from == 0 || from > to || to > self.len() {
            return Err(Error::InvalidInput(format!("bad slice {from}..={to} of {}", self.len())));
        }
        Self::from_shared(self.episodes[from - 1..to].to_vec(), self.seed, self.drift.clone())
    }
}

/// Transition rows from a flat Dirichlet, rewards and utilities uniform on `[0, 1]`.
fn random_tables(shape: Shape, seed: u64, base: u64, attempt: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut transition = Vec::with_capacity(shape.sas_cells());
    let mut reward = Vec::with_capacity(shape.sa_cells());
    let mut utility = Vec::with_capacity(shape.sa_cells());
    for h in 0..shape.horizon {
        for x in 0..shape.num_states {
            for a in 0..shape.num_actions {
                let mut rng = keyed_rng(
                    seed,
                    &[domain::ENV_BASE, base, attempt, h as u64, x as u64, a as u64],
                );
                let draws: Vec<f64> = (0..shape.num_states).map(|_| rng.sample::<f64, _>(Exp1)).collect();
                let total: f64 = draws.iter().sum();
                transition.extend(draws.iter().map(|d| d / total));
                reward.push(rng.random::<f64>());
                utility.push(rng.random::<f64>());
            }
        }
    }
    (transition, reward, utility)
}

/// Tables of one episode model, used while building sequences.
#[derive(Clone)]
struct Tables {
    transition: Vec<f64>,
    reward: Vec<f64>,
    utility: Vec<f64>,
}

impl Tables {
    fn random(shape: Shape, seed: u64, base: u64, attempt: u64) -> Self {
        let (transition, reward, utility) = random_tables(shape, seed, base, attempt);
        Self {
            transition,
            reward,
            utility,
        }
    }

    fn model(&self, shape: Shape, b: f64, x1: usize) -> Result<EpisodeModel> {
        EpisodeModel::new(
            shape,
            self.transition.clone(),
            self.reward.clone(),
            self.utility.clone(),
            b,
            x1,
        )
    }

    /// `(1 - t) self + t other`, with transition rows renormalized.
    fn interpolate(&self, other: &Tables, t: f64, num_states: usize) -> Tables {
        let mix = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (1.0 - t) * x + t * y).collect::<Vec<_>>();
        let mut transition = mix(&self.transition, &other.transition);
        for row in transition.chunks_mut(num_states) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= s);
        }
        Tables {
            transition,
            reward: mix(&self.reward, &other.reward),
            utility: mix(&self.utility, &other.utility),
        }
    }
}

fn feasible(model: &EpisodeModel, min_gamma: Option<f64>) -> bool {
    min_gamma.is_none_or(|g| strict_feasibility_margin(model) >= g)
}

/// Block index (0-based) of episode `m` (1-based) when `M` episodes are split into
/// `blocks` evenly sized contiguous blocks.
pub fn block_of(m: usize, episodes: usize, blocks: usize) -> usize {
    ((m - 1) * blocks) / episodes
}

/// Draw a drifting sequence. Deterministic in `seed`.
pub fn make_sequence(
    seed: u64,
    shape: SequenceShape,
    drift: Drift,
    schedule: &ConstraintSchedule,
    cfg: &GeneratorConfig,
) -> Result<NonStationaryCmdp> {
    let mshape = shape.model_shape()?;
    let m_total = shape.episodes;
    if m_total == 0 {
        return Err(Error::InvalidInput("need at least one episode".into()));
    }
    let bs = schedule.resolve(m_total)?;
    let x1 = cfg.initial_state;
    let exhausted = |base: usize| {
        Error::InvalidInput(format!(
            "no draw for base model {base} reached the feasibility margin {:?} within {} retries",
            cfg.min_gamma, cfg.max_retries
        ))
    };

    let episodes: Vec<Arc<EpisodeModel>> = match &drift {
        Drift::Stationary | Drift::PiecewiseConstant { .. } => {
            let blocks = match drift {
                Drift::PiecewiseConstant { num_switches } => {
                    if num_switches >= m_total {
                        return Err(Error::InvalidInput(format!(
                            "{num_switches} switches need more than {m_total} episodes"
                        )));
                    }
                    num_switches + 1
                }
                _ => 1,
            };
            let mut out = Vec::with_capacity(m_total);
            let mut start = 1;
            for block in 0..blocks {
                let end = (start..=m_total)
                    .take_while(|&m| block_of(m, m_total, blocks) == block)
                    .last()
                    .unwrap_or(start - 1);
                let block_bs = &bs[start - 1..end];
                let tables = (0..cfg.max_retries as u64)
                    .map(|attempt| Tables::random(mshape, seed, block as u64, attempt))
                    .find(|t| {
                        block_bs.iter().all(|&b| {
                            t.model(mshape, b, x1)
                                .map(|m| feasible(&m, cfg.min_gamma))
                                .unwrap_or(false)
                        })
                    })
                    .ok_or_else(|| exhausted(block))?;
                // Consecutive episodes with the same offset share one allocation.
                let mut prev: Option<Arc<EpisodeModel>> = None;
                for &b in block_bs {
                    let model = match &prev {
                        Some(p) if p.constraint_offset() == b => p.clone(),
                        _ => Arc::new(tables.model(mshape, b, x1)?),
                    };
                    out.push(model.clone());
                    prev = Some(model);
                }
                start = end + 1;
            }
            out
        }
        Drift::LinearDrift { rate } => {
            if !(0.0..=1.0).contains(rate) {
                return Err(Error::InvalidInput(format!("drift rate {rate} outside [0, 1]")));
            }
            let denom = (m_total.max(2) - 1) as f64;
            let mut found = None;
            for attempt in 0..cfg.max_retries as u64 {
                let a = Tables::random(mshape, seed, 0, attempt);
                let b_end = Tables::random(mshape, seed, 1, attempt);
                let models: Result<Vec<_>> = (1..=m_total)
                    .map(|m| {
                        let t = rate * (m - 1) as f64 / denom;
                        a.interpolate(&b_end, t, mshape.num_states).model(mshape, bs[m - 1], x1)
                    })
                    .collect();
                let models = models?;
                if models.iter().all(|m| feasible(m, cfg.min_gamma)) {
                    found = Some(models.into_iter().map(Arc::new).collect());
                    break;
                }
            }
            found.ok_or_else(|| exhausted(0))?
        }
    };
    NonStationaryCmdp::from_shared(episodes, seed, drift)
}

/// Sum over steps of the Euclidean distances between consecutive parameter vectors:
/// `(transition, reward, utility)`.
pub fn step_differences(prev: &EpisodeModel, cur: &EpisodeModel) -> (f64, f64, f64) {
    let shape = cur.shape();
    let sas = shape.num_states * shape.num_actions * shape.num_states;
    let sa = shape.num_states * shape.num_actions;
    let per_step = |a: &[f64], b: &[f64], n: usize| -> f64 {
        a.chunks(n)
            .zip(b.chunks(n))
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
            .sum()
    };
    (
        per_step(prev.transition(), cur.transition(), sas),
        per_step(prev.reward(), cur.reward(), sa),
        per_step(prev.utility(), cur.utility(), sa),
    )
}

/// Local budgets inside one epoch `[start, end]` (1-based, inclusive). Only
/// differences between two episodes of the same epoch count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochBudget {
    pub start: usize,
    pub end: usize,
    pub b_p: f64,
    pub b_g: f64,
}

/// Transition and utility variation inside consecutive epochs of length `len`.
pub fn epoch_budgets(seq: &NonStationaryCmdp, len: usize) -> Result<Vec<EpochBudget>> {
    if len == 0 {
        return Err(Error::InvalidInput("epoch length must be >= 1".into()));
    }
    let m_total = seq.len();
    let shared = seq.shared();
    Ok((1..=m_total)
        .step_by(len)
        .map(|start| {
            let end = (start + len - 1).min(m_total);
            let (mut b_p, mut b_g) = (0.0, 0.0);
            for m in start + 1..=end {
                if Arc::ptr_eq(&shared[m - 2], &shared[m - 1]) {
                    continue;
                }
                let (dp, _, dg) = step_differences(&shared[m - 2], &shared[m - 1]);
                b_p += dp;
                b_g += dg;
            }
            EpochBudget { start, end, b_p, b_g }
        })
        .collect())
}

/// Whole-sequence budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationReport {
    pub b_p: f64,
    pub b_r: f64,
    pub b_g: f64,
    pub b_delta: f64,
    pub b_star: f64,
    pub epoch_len_w: usize,
    pub per_epoch_w: Vec<EpochBudget>,
    pub epoch_len_l: usize,
    pub per_epoch_l: Vec<EpochBudget>,
}

/// `(B_P, B_r, B_g)` of a sequence.
pub fn model_budgets(seq: &NonStationaryCmdp) -> (f64, f64, f64) {
    seq.shared()
        .windows(2)
        .filter(|w| !Arc::ptr_eq(&w[0], &w[1]))
        .map(|w| step_differences(&w[0], &w[1]))
        .fold((0.0, 0.0, 0.0), |acc, d| (acc.0 + d.0, acc.1 + d.1, acc.2 + d.2))
}

/// `B_star = sum_m sum_h max_x ||pi*_h^m(.|x) - pi*_h^{m-1}(.|x)||_1`.
pub fn policy_budget(policies: &[PolicyTable]) -> f64 {
    policies
        .windows(2)
        .map(|w| (0..w[1].shape().horizon).map(|h| w[1].max_l1_distance(&w[0], h)).sum::<f64>())
        .sum()
}

/// Measure every variation budget of `seq` given its per-episode optimal policies.
pub fn measure_budgets(
    seq: &NonStationaryCmdp,
    optimal_policies: &[PolicyTable],
    epoch_lengths: (usize, usize),
) -> Result<VariationReport> {
    if optimal_policies.len() != seq.len() {
        return Err(Error::Shape(format!(
            "{} optimal policies for {} episodes",
            optimal_policies.len(),
            seq.len()
        )));
    }
    let (w, l) = epoch_lengths;
    let (b_p, b_r, b_g) = model_budgets(seq);
    Ok(VariationReport {
        b_p,
        b_r,
        b_g,
        b_delta: b_p + b_r + b_g,
        b_star: policy_budget(optimal_policies),
        epoch_len_w: w,
        per_epoch_w: epoch_budgets(seq, w)?,
        epoch_len_l: l,
        per_epoch_l: epoch_budgets(seq, l)?,
    })
}
