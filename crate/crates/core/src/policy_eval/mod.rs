//! Optimistic policy evaluation from a sliding window of bandit-feedback trajectories.
//!
//! Two backends share the same output type ([`ValuePair`](crate::model::ValuePair)):
//!
//! * [`tabular`] – visit counters, ridge-smoothed empirical model, bonus
//!   `beta (n + lambda)^{-1/2}` added twice;
//! * [`lstd`] – least-squares temporal difference on kernel features with
//!   Gram-matrix bonuses.
//!
//! Both truncate every `Q_h` to `[0, H - h]` (0-based `h`), and add the slack
//! [`lv_slack`] to the utility estimate only.

pub mod lstd;
pub mod tabular;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Shape;

pub use lstd::{lstd_ucb, LstdEstimator, MAX_CONDITION};
pub use tabular::{ope_tabular, TabularEstimator};

/// Knowledge assumed about the time-varying constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assumption {
    /// Local variation budgets of transitions and utilities are known per epoch.
    LocalBudget,
    /// Every episode is strictly feasible with a known margin.
    Slater,
}

/// Evaluation backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Tabular,
    Linear,
}

/// Additive slack on the utility estimate compensating for in-window drift.
///
/// * tabular, local budget: `B_P,E * H + B_g,E`
/// * linear, local budget: `B_P,E * H^2 * d1 * sqrt(d1 W) + B_g,E * sqrt(d2 W)`
/// * Slater: `0`
#[allow(clippy::too_many_arguments)]
pub fn lv_slack(
    assumption: Assumption,
    setting: Setting,
    epoch_budgets: (f64, f64),
    horizon: usize,
    d1: usize,
    d2: usize,
    window: usize,
) -> f64 {
    let (b_p, b_g) = epoch_budgets;
    let h = horizon as f64;
    match (assumption, setting) {
        (Assumption::Slater, _) => 0.0,
        (Assumption::LocalBudget, Setting::Tabular) => b_p * h + b_g,
        (Assumption::LocalBudget, Setting::Linear) => {
            let (d1, d2, w) = (d1 as f64, d2 as f64, window as f64);
            b_p * h * h * d1 * (d1 * w).sqrt() + b_g * (d2 * w).sqrt()
        }
    }
}

/// One observed step `(x_h, a_h, r_h(x_h,a_h), g_h(x_h,a_h), x_{h+1})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub utility: f64,
    pub next_state: usize,
}

/// All `H` steps of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// 1-based episode index.
    pub episode: usize,
    pub steps: Vec<StepRecord>,
}

/// Trajectories of episodes `start..end` (end exclusive), validated against a shape.
#[derive(Debug, Clone)]
pub struct TrajectoryWindow<'a> {
    records: Vec<&'a Trajectory>,
    window_start: usize,
    shape: Shape,
}

impl<'a> TrajectoryWindow<'a> {
    /// Pick the trajectories of episodes in `[start, end)` out of `history`; anything
    /// outside that range is ignored.
    pub fn select(history: &'a [Trajectory], start: usize, end: usize, shape: Shape) -> Result<Self> {
        let records: Vec<&Trajectory> = history
            .iter()
            .filter(|t| t.episode >= start && t.episode < end)
            .collect();
        Self::from_records(records, start, shape)
    }

    pub fn empty(start: usize, shape: Shape) -> Self {
        Self {
            records: Vec::new(),
            window_start: start,
            shape,
        }
    }

    pub fn from_records(records: Vec<&'a Trajectory>, start: usize, shape: Shape) -> Result<Self> {
        for (i, t) in records.iter().enumerate() {
            if t.episode != start + i {
                return Err(Error::InvalidInput(format!(
                    "window starting at {start} is not contiguous: found episode {} at position {i}",
                    t.episode
                )));
            }
            if t.steps.len() != shape.horizon {
                return Err(Error::Shape(format!(
                    "episode {} has {} steps, horizon is {}",
                    t.episode,
                    t.steps.len(),
                    shape.horizon
                )));
            }
            for s in &t.steps {
                if s.state >= shape.num_states || s.next_state >= shape.num_states || s.action >= shape.num_actions {
                    return Err(Error::Shape(format!("episode {} has an out-of-range step {s:?}", t.episode)));
                }
                if !(0.0..=1.0).contains(&s.reward) || !(0.0..=1.0).contains(&s.utility) {
                    return Err(Error::InvalidInput(format!(
                        "episode {} has feedback outside [0, 1]: {s:?}",
                        t.episode
                    )));
                }
            }
        }
        Ok(Self {
            records,
            window_start: start,
            shape,
        })
    }

    pub fn window_start(&self) -> usize {
        self.window_start
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// Step-`h` records of every trajectory in the window.
    pub fn step(&self, h: usize) -> impl Iterator<Item = &StepRecord> + '_ {
        self.records.iter().map(move |t| &t.steps[h])
    }
}

pub(crate) fn check_regularization(lambda: f64, beta: f64, lv: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!("ridge lambda must be > 0, got {lambda}")));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidInput(format!("bonus scale beta must be >= 0, got {beta}")));
    }
    if !(lv >= 0.0 && lv.is_finite()) {
        return Err(Error::InvalidInput(format!("slack must be >= 0, got {lv}")));
    }
    Ok(())
}

/// `min(H - h, value)_+` for 0-based step `h`.
#[inline]
pub(crate) fn truncate(value: f64, horizon: usize, h: usize) -> f64 {
    value.min((horizon - h) as f64).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slack_formulas() {
        assert_eq!(lv_slack(Assumption::Slater, Setting::Tabular, (3.0, 4.0), 5, 1, 1, 9), 0.0);
        assert_eq!(lv_slack(Assumption::Slater, Setting::Linear, (3.0, 4.0), 5, 1, 1, 9), 0.0);
        assert!((lv_slack(Assumption::LocalBudget, Setting::Tabular, (0.1, 0.2), 3, 0, 0, 1) - 0.5).abs() < 1e-15);
        assert_eq!(lv_slack(Assumption::LocalBudget, Setting::Linear, (0.0, 1.0), 3, 2, 4, 4), 4.0);
        // B_P term: 1 * 2^2 * 2 * sqrt(2 * 8) = 32
        assert_eq!(lv_slack(Assumption::LocalBudget, Setting::Linear, (1.0, 0.0), 2, 2, 4, 8), 32.0);
    }

    #[test]
    fn window_rejects_gaps_and_bad_feedback() {
        let shape = Shape::new(2, 2, 1).unwrap();
        let step = StepRecord { state: 0, action: 1, reward: 0.5, utility: 0.5, next_state: 1 };
        let t1 = Trajectory { episode: 1, steps: vec![step] };
        let t3 = Trajectory { episode: 3, steps: vec![step] };
        assert!(TrajectoryWindow::from_records(vec![&t1, &t3], 1, shape).is_err());
        let bad = Trajectory { episode: 1, steps: vec![StepRecord { reward: 1.5, ..step }] };
        assert!(TrajectoryWindow::from_records(vec![&bad], 1, shape).is_err());
        let hist = vec![t1.clone(), Trajectory { episode: 2, steps: vec![step] }, t3];
        let w = TrajectoryWindow::select(&hist, 2, 4, shape).unwrap();
        assert_eq!(w.len(), 2);
    }
}
