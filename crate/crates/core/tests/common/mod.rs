//! Random instances and the measurements shared by the property suites and the
//! acceptance target.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nscmdp::harness::{ExperimentConfig, ExperimentSpec};
use nscmdp::kernel::KernelFeatures;
use nscmdp::learner::{exp_weights_row, kl_divergence};
use nscmdp::model::{evaluate_exact, occupancy, solve_unconstrained, EpisodeModel, PolicyTable, Shape, Signal};
use nscmdp::oracle::solve_episode;
use nscmdp::policy_eval::{lstd_ucb, ope_tabular, LstdEstimator, StepRecord, TabularEstimator, Trajectory, TrajectoryWindow};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_shape(rng: &mut ChaCha8Rng, max_s: usize, max_a: usize, max_h: usize) -> Shape {
    Shape::new(
        rng.random_range(1..=max_s),
        rng.random_range(1..=max_a),
        rng.random_range(1..=max_h),
    )
    .unwrap()
}

/// A point on the simplex; with `sparse`, some entries may be exactly zero.
pub fn random_dist(rng: &mut ChaCha8Rng, n: usize, sparse: bool) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|_| {
            if sparse && rng.random_bool(0.3) {
                0.0
            } else {
                rng.random::<f64>() + 1e-3
            }
        })
        .collect();
    if v.iter().all(|x| *x == 0.0) {
        v[rng.random_range(0..n)] = 1.0;
    }
    let z: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= z);
    v
}

pub fn random_model(rng: &mut ChaCha8Rng, shape: Shape, b: f64) -> EpisodeModel {
    let mut p = Vec::with_capacity(shape.sas_cells());
    for _ in 0..shape.sa_cells() {
        p.extend(random_dist(rng, shape.num_states, true));
    }
    let r = (0..shape.sa_cells()).map(|_| rng.random::<f64>()).collect();
    let g = (0..shape.sa_cells()).map(|_| rng.random::<f64>()).collect();
    EpisodeModel::new(shape, p, r, g, b, 0).unwrap()
}

pub fn random_policy(rng: &mut ChaCha8Rng, shape: Shape, sparse: bool) -> PolicyTable {
    let mut probs = Vec::with_capacity(shape.sa_cells());
    for _ in 0..shape.horizon * shape.num_states {
        probs.extend(random_dist(rng, shape.num_actions, sparse));
    }
    PolicyTable::new(shape, probs).unwrap()
}

/// Trajectories of episodes `first..first + n` with arbitrary (not model-consistent) steps.
pub fn random_history(rng: &mut ChaCha8Rng, shape: Shape, first: usize, n: usize) -> Vec<Trajectory> {
    (first..first + n)
        .map(|episode| Trajectory {
            episode,
            steps: (0..shape.horizon)
                .map(|_| StepRecord {
                    state: rng.random_range(0..shape.num_states),
                    action: rng.random_range(0..shape.num_actions),
                    reward: rng.random(),
                    utility: rng.random(),
                    next_state: rng.random_range(0..shape.num_states),
                })
                .collect(),
        })
        .collect()
}

/// Largest violation of `V^{pi*} - V^pi = sum_h E_{pi*}[<Q^pi_h, pi*_h - pi_h>]` over
/// both signals, on `instances` random models with `|S|, |A|, H <= 4`.
pub fn perf_difference_max_err(instances: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let shape = random_shape(&mut rng, 4, 4, 4);
        let model = random_model(&mut rng, shape, 0.0);
        let pi_star = random_policy(&mut rng, shape, true);
        let pi = random_policy(&mut rng, shape, true);
        let v_star = evaluate_exact(&model, &pi_star).unwrap();
        let v_pi = evaluate_exact(&model, &pi).unwrap();
        let occ = occupancy(&model, &pi_star).unwrap();
        for which in [Signal::Reward, Signal::Utility] {
            let mut rhs = 0.0;
            for h in 0..shape.horizon {
                for x in 0..shape.num_states {
                    let d: f64 = (0..shape.num_actions).map(|a| occ[shape.sa(h, x, a)]).sum();
                    let inner: f64 = (0..shape.num_actions)
                        .map(|a| v_pi.q(which, h, x, a) * (pi_star.prob(h, x, a) - pi.prob(h, x, a)))
                        .sum();
                    rhs += d * inner;
                }
            }
            let lhs = v_star.v(which, 0, 0) - v_pi.v(which, 0, 0);
            worst = worst.max((lhs - rhs).abs());
        }
    }
    worst
}

/// Smallest slack of the one-step descent inequality
/// `<Q, p* - p> <= alpha H^2 / 2 + (D(p*||p) - D(p*||p')) / alpha`
/// over random rows, comparators on a grid and `alpha in {0.01, 0.1, 1}`.
/// Returns `(min slack, number of checks)`.
pub fn descent_min_slack(rows: usize, seed: u64) -> (f64, usize) {
    let mut rng = rng(seed);
    let mut worst = f64::INFINITY;
    let mut checks = 0;
    for _ in 0..rows {
        let na = rng.random_range(1..=4);
        let horizon = rng.random_range(1..=4) as f64;
        let p = random_dist(&mut rng, na, false);
        let q: Vec<f64> = (0..na).map(|_| rng.random::<f64>() * horizon).collect();
        let mut comparators: Vec<Vec<f64>> = (0..na)
            .map(|i| (0..na).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        comparators.push(vec![1.0 / na as f64; na]);
        for _ in 0..8 {
            comparators.push(random_dist(&mut rng, na, true));
        }
        for alpha in [0.01, 0.1, 1.0] {
            let next = exp_weights_row(&p, &q, alpha);
            for star in &comparators {
                let lhs: f64 = q.iter().zip(star).zip(&p).map(|((q, s), p)| q * (s - p)).sum();
                let rhs = alpha * horizon * horizon / 2.0 + (kl_divergence(star, &p) - kl_divergence(star, &next)) / alpha;
                worst = worst.min(rhs - lhs);
                checks += 1;
            }
        }
    }
    (worst, checks)
}

/// Largest `D(p || uniform) - log |A|` over random and vertex distributions.
pub fn kl_uniform_max_excess(samples: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst = f64::NEG_INFINITY;
    for i in 0..samples {
        let na = rng.random_range(1..=6);
        let p = if i % 5 == 0 {
            let mut v = vec![0.0; na];
            v[rng.random_range(0..na)] = 1.0;
            v
        } else {
            random_dist(&mut rng, na, true)
        };
        let uniform = vec![1.0 / na as f64; na];
        worst = worst.max(kl_divergence(&p, &uniform) - (na as f64).ln());
    }
    worst
}

/// Largest Bellman residual of exact evaluation.
pub fn bellman_max_residual(instances: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    (0..instances)
        .map(|_| {
            let shape = random_shape(&mut rng, 4, 4, 4);
            let model = random_model(&mut rng, shape, 0.0);
            let pi = random_policy(&mut rng, shape, true);
            let vals = evaluate_exact(&model, &pi).unwrap();
            nscmdp::model::model_prediction_error(&model, &vals).unwrap().max_abs()
        })
        .fold(0.0, f64::max)
}

/// Largest `|LP optimum - value iteration|` with a vacuous constraint.
pub fn lp_vs_vi_max_err(instances: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    (0..instances)
        .map(|_| {
            let shape = random_shape(&mut rng, 4, 4, 4);
            let model = random_model(&mut rng, shape, 0.0);
            let sol = solve_episode(&model).unwrap();
            assert!(sol.feasible);
            (sol.v_r_star - solve_unconstrained(&model, 1.0, 0.0).value).abs()
        })
        .fold(0.0, f64::max)
}

/// `|S| = 1`, `|A| = 2`, `H = 1`: action 0 pays reward, action 1 pays utility.
pub fn toy_bandit(b: f64) -> EpisodeModel {
    let shape = Shape::new(1, 2, 1).unwrap();
    EpisodeModel::new(shape, vec![1.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0], b, 0).unwrap()
}

/// `(largest mu* - H / gamma, feasible instances with gamma > 0 checked)`.
pub fn dual_bound_max_excess(instances: usize, seed: u64) -> (f64, usize) {
    let mut rng = rng(seed);
    let mut worst = f64::NEG_INFINITY;
    let mut checked = 0;
    for _ in 0..instances {
        let shape = random_shape(&mut rng, 3, 3, 3);
        let probe = random_model(&mut rng, shape, 0.0);
        let g_max = solve_unconstrained(&probe, 0.0, 1.0).value;
        // Offsets near the feasibility edge make mu* large.
        let b = g_max * rng.random_range(0.5..0.999);
        let model = probe.with_constraint_offset(b).unwrap();
        let sol = solve_episode(&model).unwrap();
        if sol.feasible && sol.gamma > 0.0 {
            worst = worst.max(sol.mu_star - shape.horizon as f64 / sol.gamma);
            checked += 1;
        }
    }
    (worst, checked)
}

/// Largest distance of any optimistic `Q` or `V` entry outside `[0, H - h]`
/// (0-based `h`) over random windows and both backends.
pub fn truncation_max_excess(windows: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..windows {
        let shape = random_shape(&mut rng, 3, 3, 4);
        let n = rng.random_range(0..30);
        let hist = random_history(&mut rng, shape, 1, n);
        let window = TrajectoryWindow::select(&hist, 1, n + 1, shape).unwrap();
        let pi = random_policy(&mut rng, shape, true);
        let lambda = rng.random_range(0.01..2.0);
        let beta = rng.random_range(0.0..10.0);
        let lv = rng.random_range(0.0..3.0);
        let tab = ope_tabular(&window, &pi, lambda, beta, lv).unwrap();
        let lin = lstd_ucb(&window, &KernelFeatures::canonical(shape), &pi, lambda, beta, lv).unwrap();
        for vals in [tab, lin] {
            for which in [Signal::Reward, Signal::Utility] {
                for h in 0..=shape.horizon {
                    let cap = (shape.horizon - h) as f64;
                    for x in 0..shape.num_states {
                        let v = vals.v(which, h, x);
                        worst = worst.max(v - cap).max(-v);
                        for a in 0..shape.num_actions {
                            let q = vals.q(which, h, x, a);
                            worst = worst.max(q - cap).max(-q);
                        }
                    }
                }
            }
        }
    }
    worst
}

/// Prepending trajectories before the window start leaves both backends bit-identical.
pub fn window_isolation_holds(cases: usize, seed: u64) -> bool {
    let mut rng = rng(seed);
    (0..cases).all(|_| {
        let shape = random_shape(&mut rng, 3, 3, 3);
        let start = rng.random_range(2..20);
        let n = rng.random_range(0..15);
        let clean = random_history(&mut rng, shape, start, n);
        let mut dirty = random_history(&mut rng, shape, 1, start - 1);
        dirty.extend(clean.iter().cloned());
        let pi = random_policy(&mut rng, shape, false);
        let feats = KernelFeatures::canonical(shape);
        let a = TrajectoryWindow::select(&clean, start, start + n, shape).unwrap();
        let b = TrajectoryWindow::select(&dirty, start, start + n, shape).unwrap();
        ope_tabular(&a, &pi, 1.0, 0.7, 0.2).unwrap() == ope_tabular(&b, &pi, 1.0, 0.7, 0.2).unwrap()
            && lstd_ucb(&a, &feats, &pi, 1.0, 0.7, 0.2).unwrap() == lstd_ucb(&b, &feats, &pi, 1.0, 0.7, 0.2).unwrap()
    })
}

/// Largest disagreement between the two backends on canonical features:
/// `(reward/utility estimates at lambda = 1, transition part at lambda = lambda_small)`.
pub fn cross_backend_max_err(cases: usize, lambda_small: f64, seed: u64) -> (f64, f64) {
    let mut rng = rng(seed);
    let (mut sig_err, mut trans_err) = (0.0f64, 0.0f64);
    for _ in 0..cases {
        let shape = random_shape(&mut rng, 3, 3, 3);
        let n = rng.random_range(1..40);
        let hist = random_history(&mut rng, shape, 1, n);
        let window = TrajectoryWindow::select(&hist, 1, n + 1, shape).unwrap();
        let pi = random_policy(&mut rng, shape, false);
        let feats = KernelFeatures::canonical(shape);
        let na = shape.num_actions;

        let tab = TabularEstimator::fit(&window, 1.0, 0.0, 0.0).unwrap();
        let lin = LstdEstimator::fit(&window, &feats, &pi, 1.0, 0.0, 0.0).unwrap();
        for h in 0..shape.horizon {
            for x in 0..shape.num_states {
                for a in 0..na {
                    let i = shape.sa(h, x, a);
                    let r_lin = lin.fit_for(h, Signal::Reward).signal_part[x * na + a];
                    let g_lin = lin.fit_for(h, Signal::Utility).signal_part[x * na + a];
                    sig_err = sig_err.max((r_lin - tab.r_hat[i]).abs()).max((g_lin - tab.g_hat[i]).abs());
                }
            }
        }

        // Both backends use the LSTD values of the evaluated policy as the continuation.
        let tab = TabularEstimator::fit(&window, lambda_small, 0.0, 0.0).unwrap();
        let lin = LstdEstimator::fit(&window, &feats, &pi, lambda_small, 0.0, 0.0).unwrap();
        for h in 0..shape.horizon {
            for which in [Signal::Reward, Signal::Utility] {
                let next = lin.values.v_step(which, h + 1);
                let fit = lin.fit_for(h, which);
                for x in 0..shape.num_states {
                    for a in 0..na {
                        if tab.counts2[shape.sa(h, x, a)] == 0 {
                            continue;
                        }
                        let t = tab.expected_next(h, x, a, next);
                        trans_err = trans_err.max((fit.transition_part[x * na + a] - t).abs());
                    }
                }
            }
        }
    }
    (sig_err, trans_err)
}

/// Empty window with `beta >= H`: every `Q` equals `H - h` exactly, both backends.
pub fn empty_window_saturates() -> bool {
    [(1, 1, 1), (2, 3, 4), (4, 2, 3)].iter().all(|&(s, a, hh)| {
        let shape = Shape::new(s, a, hh).unwrap();
        let window = TrajectoryWindow::empty(1, shape);
        let pi = PolicyTable::uniform(shape);
        let tab = ope_tabular(&window, &pi, 1.0, hh as f64, 0.0).unwrap();
        let lin = lstd_ucb(&window, &KernelFeatures::canonical(shape), &pi, 1.0, hh as f64, 0.0).unwrap();
        [tab, lin].iter().all(|vals| {
            (0..hh).all(|h| {
                (0..s).all(|x| {
                    (0..a).all(|act| {
                        vals.q(Signal::Reward, h, x, act) == (hh - h) as f64
                            && vals.q(Signal::Utility, h, x, act) == (hh - h) as f64
                    })
                })
            })
        })
    })
}

/// Desk-scale tabular experiment: `|S| = 5`, `|A| = 3`, `H = 5`, `M = 2000`,
/// piecewise drift, `b = 3`, 10 seeds, a tabular preset (3 or 4) with `rho = 1/2`
/// and all constants 1.
pub fn desk_scale_spec(num_switches: usize, preset: u8, variants: &[&str]) -> ExperimentSpec {
    let variants = variants.iter().map(|v| format!("\"{v}\"")).collect::<Vec<_>>().join(", ");
    let text = format!(
        r#"
version = 1
num_states = 5
num_actions = 3
horizon = 5
episodes = 2000
drift = "piecewise"
num_switches = {num_switches}
constraint_offset = 3.0
seeds = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10]
preset = {preset}
rho = 0.5
constants = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0]
variants = [{variants}]
checkpoints = [250, 500, 1000, 2000]
"#
    );
    ExperimentConfig::from_toml(&text).unwrap().resolve().unwrap()
}
