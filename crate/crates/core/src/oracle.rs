//! Hindsight-optimal per-episode solutions via the occupancy-measure linear program.
//!
//! For one episode the program is
//!
//! ```text
//! maximize   sum_{h,x,a} q_h(x,a) r_h(x,a)
//! subject to sum_a q_0(x,a)   = 1{x = x_1}
//!            sum_a q_{h+1}(y,a) = sum_{x,a} P_h(y|x,a) q_h(x,a)
//!            sum_{h,x,a} q_h(x,a) g_h(x,a) - s = b,      q, s >= 0
//! ```
//!
//! The optimal multiplier of the utility constraint is minus the LP dual of its row.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env_gen::NonStationaryCmdp;
use crate::error::{Error, Result};
use crate::lp::{self, LinearProgram, LpOutcome};
use crate::model::{evaluate_exact, solve_unconstrained, EpisodeModel, PolicyTable, Signal};

/// Tolerance of the LP-objective vs exact-evaluation round trip.
pub const ROUND_TRIP_TOL: f64 = 1e-6;
/// Occupancy mass below which a state counts as unvisited.
const UNVISITED_MASS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub policy: PolicyTable,
    /// `V_r^{pi*}(x_1)`.
    pub v_r_star: f64,
    /// `V_g^{pi*}(x_1)`.
    pub v_g_star: f64,
    /// Optimal multiplier; `+inf` when the episode is infeasible.
    pub mu_star: f64,
    /// `max_pi V_g(x_1) - b`; negative when infeasible.
    pub gamma: f64,
    pub feasible: bool,
}

/// `max_pi V_g(x_1) - b`, by value iteration on the utility.
pub fn strict_feasibility_margin(model: &EpisodeModel) -> f64 {
    solve_unconstrained(model, 0.0, 1.0).value - model.constraint_offset()
}

/// Dual function `D(mu) = max_pi V_r + mu (V_g - b)`.
pub fn dual_function(model: &EpisodeModel, mu: f64) -> f64 {
    solve_unconstrained(model, 1.0, mu).value - mu * model.constraint_offset()
}

fn occupancy_program(model: &EpisodeModel) -> LinearProgram {
    let shape = model.shape();
    let (ns, na, hh) = (shape.num_states, shape.num_actions, shape.horizon);
    let nq = shape.sa_cells();
    let n = nq + 1;
    let mut rows = Vec::with_capacity(hh * ns + 1);
    for y in 0..ns {
        let mut a = vec![0.0; n];
        for act in 0..na {
            a[shape.sa(0, y, act)] = 1.0;
        }
        rows.push((a, if y == model.initial_state() { 1.0 } else { 0.0 }));
    }
    for h in 1..hh {
        for y in 0..ns {
            let mut a = vec![0.0; n];
            for act in 0..na {
                a[shape.sa(h, y, act)] = 1.0;
            }
            for x in 0..ns {
                for act in 0..na {
                    a[shape.sa(h - 1, x, act)] -= model.p_row(h - 1, x, act)[y];
                }
            }
            rows.push((a, 0.0));
        }
    }
    let mut util = model.utility().to_vec();
    util.push(-1.0);
    rows.push((util, model.constraint_offset()));
    let mut objective = model.reward().to_vec();
    objective.push(0.0);
    LinearProgram { objective, rows }
}

/// Normalize occupancies into a policy; unvisited states get the uniform row.
fn policy_from_occupancy(model: &EpisodeModel, occ: &[f64]) -> Result<PolicyTable> {
    let shape = model.shape();
    let na = shape.num_actions;
    let mut probs = Vec::with_capacity(shape.sa_cells());
    for row in occ[..shape.sa_cells()].chunks(na) {
        let mass: f64 = row.iter().sum();
        if mass > UNVISITED_MASS {
            probs.extend(row.iter().map(|q| q / mass));
        } else {
            probs.extend(std::iter::repeat_n(1.0 / na as f64, na));
        }
    }
    PolicyTable::new(shape, probs)
}

/// Solve one episode exactly.
pub fn solve_episode(model: &EpisodeModel) -> Result<OracleSolution> {
    let gamma = strict_feasibility_margin(model);
    let lp_program = occupancy_program(model);
    match lp::solve(&lp_program)? {
        LpOutcome::Infeasible { .. } => {
            let best_g = solve_unconstrained(model, 0.0, 1.0);
            let vals = evaluate_exact(model, &best_g.policy)?;
            Ok(OracleSolution {
                v_r_star: vals.v(Signal::Reward, 0, model.initial_state()),
                v_g_star: best_g.value,
                policy: best_g.policy,
                mu_star: f64::INFINITY,
                gamma,
                feasible: false,
            })
        }
        LpOutcome::Optimal(sol) => {
            let policy = policy_from_occupancy(model, &sol.x)?;
            let vals = evaluate_exact(model, &policy)?;
            let x1 = model.initial_state();
            let v_r_star = vals.v(Signal::Reward, 0, x1);
            let v_g_star = vals.v(Signal::Utility, 0, x1);
            if (v_r_star - sol.objective).abs() > ROUND_TRIP_TOL {
                return Err(Error::Numerical(format!(
                    "extracted policy value {v_r_star} disagrees with LP optimum {}",
                    sol.objective
                )));
            }
            let mu_star = (-sol.duals[lp_program.rows.len() - 1]).max(0.0);
            Ok(OracleSolution {
                policy,
                v_r_star,
                v_g_star,
                mu_star,
                gamma,
                feasible: true,
            })
        }
    }
}

/// Solve every episode; consecutive identical models are solved once.
pub fn solve_sequence(seq: &NonStationaryCmdp) -> Result<Vec<OracleSolution>> {
    let shared = seq.shared();
    let mut heads = vec![0usize];
    for m in 1..shared.len() {
        let same = std::sync::Arc::ptr_eq(&shared[m - 1], &shared[m]) || shared[m - 1] == shared[m];
        if !same {
            heads.push(m);
        }
    }
    let solved: Vec<OracleSolution> = heads
        .par_iter()
        .map(|&i| solve_episode(&shared[i]).map_err(|e| e.in_episode(i + 1)))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(shared.len());
    for (k, sol) in solved.into_iter().enumerate() {
        let end = heads.get(k + 1).copied().unwrap_or(shared.len());
        out.extend(std::iter::repeat_n(sol, end - heads[k]));
    }
    Ok(out)
}

/// Number of distinct solves [`solve_sequence`] performs for `seq`.
pub fn distinct_runs(seq: &NonStationaryCmdp) -> usize {
    let shared = seq.shared();
    1 + shared.windows(2).filter(|w| !(std::sync::Arc::ptr_eq(&w[0], &w[1]) || w[0] == w[1])).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Shape;

    fn bandit(r: [f64; 2], g: [f64; 2], b: f64) -> EpisodeModel {
        let shape = Shape::new(1, 2, 1).unwrap();
        EpisodeModel::new(shape, vec![1.0, 1.0], r.to_vec(), g.to_vec(), b, 0).unwrap()
    }

    #[test]
    fn toy_bandit_mixes_half_half() {
        let sol = solve_episode(&bandit([1.0, 0.0], [0.0, 1.0], 0.5)).unwrap();
        assert!(sol.feasible);
        assert!((sol.v_r_star - 0.5).abs() < 1e-9);
        assert!((sol.v_g_star - 0.5).abs() < 1e-9);
        assert!((sol.policy.prob(0, 0, 0) - 0.5).abs() < 1e-9);
        assert!((sol.gamma - 0.5).abs() < 1e-12);
        // D(mu) = max(1 - 0.5 mu, 0.5 mu): minimized at mu = 1.
        assert!((sol.mu_star - 1.0).abs() < 1e-9);
    }

    #[test]
    fn vacuous_constraint_has_zero_multiplier() {
        let model = bandit([0.3, 0.9], [0.2, 0.1], 0.0);
        let sol = solve_episode(&model).unwrap();
        assert!((sol.v_r_star - 0.9).abs() < 1e-9);
        assert_eq!(sol.mu_star, 0.0);
    }

    #[test]
    fn infeasible_episode_reports_certificate() {
        let model = bandit([0.3, 0.9], [0.2, 0.1], 0.5);
        let sol = solve_episode(&model).unwrap();
        assert!(!sol.feasible);
        assert!((sol.v_g_star - 0.2).abs() < 1e-12);
        assert!(sol.gamma < 0.0);
        assert!(sol.mu_star.is_infinite());
    }

    #[test]
    fn margin_examples() {
        let shape = Shape::new(2, 2, 3).unwrap();
        let p = vec![0.5; shape.sas_cells()];
        let ones = EpisodeModel::new(shape, p.clone(), vec![0.0; 12], vec![1.0; 12], 2.0, 0).unwrap();
        assert!((strict_feasibility_margin(&ones) - 1.0).abs() < 1e-12);
        let zeros = EpisodeModel::new(shape, p, vec![0.0; 12], vec![0.0; 12], 0.5, 0).unwrap();
        assert!((strict_feasibility_margin(&zeros) + 0.5).abs() < 1e-12);
    }
}
