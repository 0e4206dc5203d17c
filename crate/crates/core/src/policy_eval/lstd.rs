//! Least-squares temporal-difference evaluation with UCB bonuses on kernel features.
//!
//! At each step `h` (backward) and for `* in {r, g}`:
//!
//! ```text
//! phi_*(x,a)  = sum_{x'} psi(x,a,x') V_{*,h+1}(x')
//! Lambda_*,h  = sum_tau phi_*(x_h, a_h) phi_*(x_h, a_h)^T + lambda I
//! w_*,h       = Lambda_*,h^{-1} sum_tau phi_*(x_h, a_h) V_{*,h+1}(x_{h+1})
//! Lambda_h    = sum_tau phi(x_h, a_h) phi(x_h, a_h)^T + lambda I
//! u_*,h       = Lambda_h^{-1} sum_tau phi(x_h, a_h) *_h(x_h, a_h)
//! Q_*,h       = clip(phi^T u + phi_*^T w + Gamma_h + Gamma_*,h)
//! ```
//!
//! `V_{*,h+1}` is the value of the policy being evaluated, recomputed by this same
//! backward pass, so the output only depends on the window and the policy.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::kernel::KernelFeatures;
use crate::model::{PolicyTable, Shape, Signal, ValuePair};

use super::{check_regularization, truncate, TrajectoryWindow};

/// Gram matrices with a larger condition number are rejected.
pub const MAX_CONDITION: f64 = 1e12;

const SIGNALS: [Signal; 2] = [Signal::Reward, Signal::Utility];

/// Per-step regression state for one signal.
#[derive(Debug, Clone)]
pub struct StepFit {
    /// `Lambda_*,h` (d1 x d1).
    pub gram_next: DMatrix<f64>,
    /// `w_*,h`.
    pub w: DVector<f64>,
    /// `u_*,h`.
    pub u: DVector<f64>,
    /// `phi(x,a)^T u` for every `(x, a)`, row-major.
    pub signal_part: Vec<f64>,
    /// `phi_*(x,a)^T w` for every `(x, a)`.
    pub transition_part: Vec<f64>,
    /// `Gamma_*,h(x,a)`.
    pub transition_bonus: Vec<f64>,
}

/// Result of one LSTD-UCB pass: the optimistic values plus all per-step fits.
#[derive(Debug, Clone)]
pub struct LstdEstimator {
    pub values: ValuePair,
    /// `Lambda_h` (d2 x d2), shared by both signals.
    pub gram_signal: Vec<DMatrix<f64>>,
    /// `Gamma_h(x,a)`.
    pub signal_bonus: Vec<Vec<f64>>,
    /// `fits[h][0]` for reward, `fits[h][1]` for utility.
    pub fits: Vec<[StepFit; 2]>,
}

fn sig_index(s: Signal) -> usize {
    match s {
        Signal::Reward => 0,
        Signal::Utility => 1,
    }
}

fn outer_add(m: &mut DMatrix<f64>, v: &[f64]) {
    let d = v.len();
    for i in 0..d {
        if v[i] == 0.0 {
            continue;
        }
        for j in 0..d {
            m[(i, j)] += v[i] * v[j];
        }
    }
}

/// Cholesky factor of a ridge Gram matrix, after a conditioning check.
fn factor(gram: &DMatrix<f64>, lambda: f64, what: &str, h: usize) -> Result<Cholesky<f64, Dyn>> {
    // Eigenvalues lie in [lambda, trace], so the bound is cheap and usually enough.
    if gram.trace() / lambda > MAX_CONDITION {
        let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
        let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
        if !(lo > 0.0) || hi / lo > MAX_CONDITION {
            return Err(Error::Numerical(format!(
                "{what} Gram matrix at step {h} is ill-conditioned (cond = {:.3e})",
                hi / lo
            )));
        }
    }
    Cholesky::new(gram.clone())
        .ok_or_else(|| Error::Numerical(format!("{what} Gram matrix at step {h} is not positive definite")))
}

/// `sqrt(v^T M^{-1} v)` given the Cholesky factor of `M`.
fn inverse_norm(chol: &Cholesky<f64, Dyn>, v: &[f64]) -> f64 {
    let dv = DVector::from_column_slice(v);
    let sol = chol.solve(&dv);
    dv.dot(&sol).max(0.0).sqrt()
}

fn dot(a: &[f64], b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

impl LstdEstimator {
    pub fn fit(
        window: &TrajectoryWindow<'_>,
        features: &KernelFeatures,
        policy: &PolicyTable,
        lambda: f64,
        beta: f64,
        lv: f64,
    ) -> Result<Self> {
        check_regularization(lambda, beta, lv)?;
        let shape: Shape = window.shape();
        if features.shape() != shape || policy.shape() != shape {
            return Err(Error::Shape(format!(
                "window {:?}, features {:?} and policy {:?} disagree",
                shape,
                features.shape(),
                policy.shape()
            )));
        }
        let (ns, na, hh) = (shape.num_states, shape.num_actions, shape.horizon);
        let (d1, d2) = (features.d1(), features.d2());
        let mut values = ValuePair::zeros(shape);
        let mut gram_signal = Vec::with_capacity(hh);
        let mut signal_bonus = Vec::with_capacity(hh);
        let mut fits: Vec<[StepFit; 2]> = Vec::with_capacity(hh);

        for h in (0..hh).rev() {
            // Reward/utility regression, shared Gram matrix.
            let mut gram = DMatrix::<f64>::identity(d2, d2) * lambda;
            let mut rhs = [DVector::<f64>::zeros(d2), DVector::<f64>::zeros(d2)];
            for s in window.step(h) {
                let f = features.phi(s.state, s.action);
                outer_add(&mut gram, f);
                for (k, obs) in [s.reward, s.utility].into_iter().enumerate() {
                    for (r, fi) in rhs[k].iter_mut().zip(f) {
                        *r += fi * obs;
                    }
                }
            }
            let chol = factor(&gram, lambda, "signal", h)?;
            let bonus_h: Vec<f64> = (0..ns * na)
                .map(|i| beta * inverse_norm(&chol, features.phi(i / na, i % na)))
                .collect();

            let mut step_fits = Vec::with_capacity(2);
            for which in SIGNALS {
                let k = sig_index(which);
                let u = chol.solve(&rhs[k]);
                let v_next = values.v_step(which, h + 1).to_vec();
                let mut gram_next = DMatrix::<f64>::identity(d1, d1) * lambda;
                let mut rhs_next = DVector::<f64>::zeros(d1);
                for s in window.step(h) {
                    let f = features.integrate(s.state, s.action, &v_next);
                    outer_add(&mut gram_next, &f);
                    let target = v_next[s.next_state];
                    for (r, fi) in rhs_next.iter_mut().zip(&f) {
                        *r += fi * target;
                    }
                }
                let chol_next = factor(&gram_next, lambda, "transition", h)?;
                let w = chol_next.solve(&rhs_next);
                let mut signal_part = Vec::with_capacity(ns * na);
                let mut transition_part = Vec::with_capacity(ns * na);
                let mut transition_bonus = Vec::with_capacity(ns * na);
                for x in 0..ns {
                    for a in 0..na {
                        let f_next = features.integrate(x, a, &v_next);
                        signal_part.push(dot(features.phi(x, a), &u));
                        transition_part.push(dot(&f_next, &w));
                        transition_bonus.push(beta * inverse_norm(&chol_next, &f_next));
                    }
                }
                step_fits.push(StepFit {
                    gram_next,
                    w,
                    u,
                    signal_part,
                    transition_part,
                    transition_bonus,
                });
            }

            for x in 0..ns {
                for a in 0..na {
                    let i = x * na + a;
                    for which in SIGNALS {
                        let fit = &step_fits[sig_index(which)];
                        let slack = if which == Signal::Utility { lv } else { 0.0 };
                        let raw = fit.signal_part[i] + fit.transition_part[i] + bonus_h[i] + fit.transition_bonus[i] + slack;
                        values.set_q(which, h, x, a, truncate(raw, hh, h));
                    }
                }
            }
            values.fill_v_from_q(policy, h);

            let mut it = step_fits.into_iter();
            let pair = [it.next().expect("reward fit"), it.next().expect("utility fit")];
            fits.push(pair);
            gram_signal.push(gram);
            signal_bonus.push(bonus_h);
        }
        fits.reverse();
        gram_signal.reverse();
        signal_bonus.reverse();
        Ok(Self {
            values,
            gram_signal,
            signal_bonus,
            fits,
        })
    }

    pub fn fit_for(&self, h: usize, which: Signal) -> &StepFit {
        &self.fits[h][sig_index(which)]
    }
}

/// LSTD-UCB evaluation of `policy` on `window`.
pub fn lstd_ucb(
    window: &TrajectoryWindow<'_>,
    features: &KernelFeatures,
    policy: &PolicyTable,
    lambda: f64,
    beta: f64,
    lv: f64,
) -> Result<ValuePair> {
    Ok(LstdEstimator::fit(window, features, policy, lambda, beta, lv)?.values)
}
