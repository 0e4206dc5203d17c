//! Counter-based optimistic policy evaluation for tabular CMDPs.

use crate::error::{Error, Result};
use crate::model::{PolicyTable, Shape, Signal, ValuePair};

use super::{check_regularization, truncate, TrajectoryWindow};

/// Sufficient statistics of a window plus the derived ridge estimates and bonuses.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularEstimator {
    shape: Shape,
    /// `n_h(x, a, x')`, indexed like a transition table.
    pub counts3: Vec<u64>,
    /// `n_h(x, a)`.
    pub counts2: Vec<u64>,
    /// `n_h(x,a,x') / (n_h(x,a) + lambda)`.
    pub p_hat: Vec<f64>,
    pub r_hat: Vec<f64>,
    pub g_hat: Vec<f64>,
    /// `beta (n_h(x,a) + lambda)^{-1/2}`.
    pub bonus: Vec<f64>,
    pub lambda: f64,
    pub beta: f64,
    pub lv: f64,
}

impl TabularEstimator {
    pub fn fit(window: &TrajectoryWindow<'_>, lambda: f64, beta: f64, lv: f64) -> Result<Self> {
        check_regularization(lambda, beta, lv)?;
        let shape = window.shape();
        let mut counts3 = vec![0u64; shape.sas_cells()];
        let mut counts2 = vec![0u64; shape.sa_cells()];
        let mut sum_r = vec![0.0; shape.sa_cells()];
        let mut sum_g = vec![0.0; shape.sa_cells()];
        for h in 0..shape.horizon {
            for s in window.step(h) {
                let i = shape.sa(h, s.state, s.action);
                counts2[i] += 1;
                counts3[shape.sas(h, s.state, s.action, s.next_state)] += 1;
                sum_r[i] += s.reward;
                sum_g[i] += s.utility;
            }
        }
        let denom: Vec<f64> = counts2.iter().map(|&n| n as f64 + lambda).collect();
        let ns = shape.num_states;
        let p_hat = counts3
            .iter()
            .enumerate()
            .map(|(i, &n)| n as f64 / denom[i / ns])
            .collect();
        let r_hat = sum_r.iter().zip(&denom).map(|(s, d)| s / d).collect();
        let g_hat = sum_g.iter().zip(&denom).map(|(s, d)| s / d).collect();
        let bonus = denom.iter().map(|d| beta / d.sqrt()).collect();
        Ok(Self {
            shape,
            counts3,
            counts2,
            p_hat,
            r_hat,
            g_hat,
            bonus,
            lambda,
            beta,
            lv,
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// `sum_{x'} P_hat_h(x'|x,a) v(x')`.
    pub fn expected_next(&self, h: usize, x: usize, a: usize, v: &[f64]) -> f64 {
        let start = self.shape.sas(h, x, a, 0);
        self.p_hat[start..start + self.shape.num_states]
            .iter()
            .zip(v)
            .map(|(p, v)| p * v)
            .sum()
    }

    /// Optimistic backward pass under `policy`.
    pub fn evaluate(&self, policy: &PolicyTable) -> Result<ValuePair> {
        if policy.shape() != self.shape {
            return Err(Error::Shape(format!(
                "policy shape {:?} vs window shape {:?}",
                policy.shape(),
                self.shape
            )));
        }
        let shape = self.shape;
        let mut out = ValuePair::zeros(shape);
        for h in (0..shape.horizon).rev() {
            for x in 0..shape.num_states {
                for a in 0..shape.num_actions {
                    let i = shape.sa(h, x, a);
                    let bonus = 2.0 * self.bonus[i];
                    let cont_r = self.expected_next(h, x, a, out.v_step(Signal::Reward, h + 1));
                    let cont_g = self.expected_next(h, x, a, out.v_step(Signal::Utility, h + 1));
                    let q_r = truncate(self.r_hat[i] + cont_r + bonus, shape.horizon, h);
                    let q_g = truncate(self.g_hat[i] + cont_g + bonus + self.lv, shape.horizon, h);
                    out.set_q(Signal::Reward, h, x, a, q_r);
                    out.set_q(Signal::Utility, h, x, a, q_g);
                }
            }
            out.fill_v_from_q(policy, h);
        }
        Ok(out)
    }
}

/// Fit the counters on `window` and evaluate `policy` optimistically.
pub fn ope_tabular(
    window: &TrajectoryWindow<'_>,
    policy: &PolicyTable,
    lambda: f64,
    beta: f64,
    lv: f64,
) -> Result<ValuePair> {
    TabularEstimator::fit(window, lambda, beta, lv)?.evaluate(policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy_eval::{StepRecord, Trajectory};

    #[test]
    fn empty_window_saturates() {
        let shape = Shape::new(3, 2, 4).unwrap();
        let w = TrajectoryWindow::empty(1, shape);
        let vals = ope_tabular(&w, &PolicyTable::uniform(shape), 1.0, 4.0, 0.0).unwrap();
        for h in 0..4 {
            for x in 0..3 {
                for a in 0..2 {
                    assert_eq!(vals.q(Signal::Reward, h, x, a), (4 - h) as f64);
                    assert_eq!(vals.q(Signal::Utility, h, x, a), (4 - h) as f64);
                }
            }
        }
    }

    #[test]
    fn single_transition_arithmetic() {
        let shape = Shape::new(2, 2, 2).unwrap();
        let step = StepRecord { state: 1, action: 0, reward: 0.6, utility: 0.2, next_state: 0 };
        let t = Trajectory {
            episode: 5,
            steps: vec![StepRecord { state: 0, action: 1, reward: 0.1, utility: 0.1, next_state: 1 }, step],
        };
        let w = TrajectoryWindow::from_records(vec![&t], 5, shape).unwrap();
        let beta = 0.8;
        let est = TabularEstimator::fit(&w, 1.0, beta, 0.0).unwrap();
        assert_eq!(est.counts2[shape.sa(1, 1, 0)], 1);
        assert_eq!(est.p_hat[shape.sas(1, 1, 0, 0)], 0.5);
        assert_eq!(est.r_hat[shape.sa(1, 1, 0)], 0.3);
        assert_eq!(est.bonus[shape.sa(1, 1, 0)], beta / 2f64.sqrt());
        assert_eq!(est.bonus[shape.sa(1, 0, 0)], beta);
    }

    #[test]
    fn invalid_lambda_rejected() {
        let shape = Shape::new(1, 1, 1).unwrap();
        let w = TrajectoryWindow::empty(1, shape);
        assert!(TabularEstimator::fit(&w, 0.0, 1.0, 0.0).is_err());
        assert!(TabularEstimator::fit(&w, 1.0, -1.0, 0.0).is_err());
    }
}
