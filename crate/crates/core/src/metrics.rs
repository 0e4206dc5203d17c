//! Dynamic regret, long-run constraint violation and their prefix curves.
//!
//! True per-episode values always come from [`evaluate_exact`] on the episode's model,
//! so the curves are deterministic functions of the policy sequence.
//!
//! CSV layout of a [`RegretReport`] (header included, one row per episode):
//!
//! ```text
//! m,v_r_star,v_r_pi,v_g_pi,b,mu,prefix_dr,prefix_cv
//! ```

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env_gen::{NonStationaryCmdp, VariationReport};
use crate::error::{Error, Result};
use crate::learner::LearnerConfig;
use crate::model::{evaluate_exact, PolicyTable, Signal};
use crate::oracle::OracleSolution;
use crate::policy_eval::Trajectory;

/// What the learner did in one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// `pi^m`, the policy executed in episode `m`.
    pub policy: PolicyTable,
    /// `mu^m`.
    pub mu: f64,
    /// Optimistic `V_{r,1}^m(x_1)` from the evaluation at the end of episode `m`.
    pub v_r1_est: f64,
    /// Optimistic `V_{g,1}^m(x_1)`.
    pub v_g1_est: f64,
    /// Utility slack used by that evaluation.
    pub lv: f64,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub seed: u64,
    pub config: LearnerConfig,
    pub records: Vec<EpisodeRecord>,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn mu_path(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.mu).collect()
    }

    pub fn policies(&self) -> impl Iterator<Item = &PolicyTable> {
        self.records.iter().map(|r| &r.policy)
    }
}

/// A total plus its running partial values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub total: f64,
    pub prefix: Vec<f64>,
}

/// One CSV row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeGap {
    pub m: usize,
    pub v_r_star: f64,
    pub v_r_pi: f64,
    pub v_g_pi: f64,
    pub b: f64,
    pub mu: f64,
    pub prefix_dr: f64,
    pub prefix_cv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub dr: f64,
    pub cv: f64,
    pub per_episode: Vec<EpisodeGap>,
    pub budgets: Option<VariationReport>,
}

fn check_lengths(trace: &EpisodeTrace, seq: &NonStationaryCmdp) -> Result<()> {
    if trace.len() != seq.len() {
        return Err(Error::Shape(format!(
            "trace has {} episodes, sequence has {}",
            trace.len(),
            seq.len()
        )));
    }
    Ok(())
}

/// `(V_r^{pi^m,m}(x_1), V_g^{pi^m,m}(x_1))` for every episode.
pub fn true_values(trace: &EpisodeTrace, seq: &NonStationaryCmdp) -> Result<Vec<(f64, f64)>> {
    check_lengths(trace, seq)?;
    trace
        .records
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let model = seq.episode(i + 1);
            let vals = evaluate_exact(model, &rec.policy).map_err(|e| e.in_episode(i + 1))?;
            let x1 = model.initial_state();
            Ok((vals.v(Signal::Reward, 0, x1), vals.v(Signal::Utility, 0, x1)))
        })
        .collect()
}

fn regret_curve(v_star: impl Iterator<Item = f64>, v_pi: impl Iterator<Item = f64>) -> Curve {
    let mut acc = 0.0;
    let prefix: Vec<f64> = v_star
        .zip(v_pi)
        .map(|(s, p)| {
            acc += s - p;
            acc
        })
        .collect();
    Curve {
        total: prefix.last().copied().unwrap_or(0.0),
        prefix,
    }
}

/// Running `max(0, sum of gaps)`; the clamp applies to each partial sum, never per term.
pub fn violation_curve(gaps: impl Iterator<Item = f64>) -> Curve {
    let mut acc = 0.0;
    let prefix: Vec<f64> = gaps
        .map(|g| {
            acc += g;
            acc.max(0.0)
        })
        .collect();
    Curve {
        total: prefix.last().copied().unwrap_or(0.0),
        prefix,
    }
}

/// `DR(M) = sum_m V_r^{pi*,m} - V_r^{pi^m,m}` with its prefix curve.
pub fn dynamic_regret(trace: &EpisodeTrace, oracle: &[OracleSolution], seq: &NonStationaryCmdp) -> Result<Curve> {
    if oracle.len() != seq.len() {
        return Err(Error::Shape(format!("{} oracle solutions for {} episodes", oracle.len(), seq.len())));
    }
    let vals = true_values(trace, seq)?;
    Ok(regret_curve(oracle.iter().map(|o| o.v_r_star), vals.iter().map(|v| v.0)))
}

/// `CV(M) = [sum_m b_m - V_g^{pi^m,m}]_+` with its prefix curve.
pub fn constraint_violation(trace: &EpisodeTrace, seq: &NonStationaryCmdp) -> Result<Curve> {
    let vals = true_values(trace, seq)?;
    Ok(violation_curve(
        seq.episodes().zip(&vals).map(|(model, v)| model.constraint_offset() - v.1),
    ))
}

/// `(M_i, curve[M_i] / M_i)` for each checkpoint (1-based episode counts).
pub fn sublinearity_probe(prefix: &[f64], checkpoints: &[usize]) -> Result<Vec<(usize, f64)>> {
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput(format!("checkpoints must be increasing: {checkpoints:?}")));
    }
    checkpoints
        .iter()
        .map(|&c| {
            if c == 0 || c > prefix.len() {
                return Err(Error::InvalidInput(format!(
                    "checkpoint {c} outside 1..={}",
                    prefix.len()
                )));
            }
            Ok((c, prefix[c - 1] / c as f64))
        })
        .collect()
}

/// `{M/8, M/4, M/2, M}`, floored at 1 and deduplicated.
pub fn default_checkpoints(episodes: usize) -> Vec<usize> {
    let mut out: Vec<usize> = [8, 4, 2, 1].iter().map(|d| (episodes / d).max(1)).collect();
    out.dedup();
    out
}

impl RegretReport {
    pub fn build(
        trace: &EpisodeTrace,
        oracle: &[OracleSolution],
        seq: &NonStationaryCmdp,
        budgets: Option<VariationReport>,
    ) -> Result<Self> {
        if oracle.len() != seq.len() {
            return Err(Error::Shape(format!("{} oracle solutions for {} episodes", oracle.len(), seq.len())));
        }
        let vals = true_values(trace, seq)?;
        let dr = regret_curve(oracle.iter().map(|o| o.v_r_star), vals.iter().map(|v| v.0));
        let cv = violation_curve(seq.episodes().zip(&vals).map(|(model, v)| model.constraint_offset() - v.1));
        let per_episode = (0..seq.len())
            .map(|i| EpisodeGap {
                m: i + 1,
                v_r_star: oracle[i].v_r_star,
                v_r_pi: vals[i].0,
                v_g_pi: vals[i].1,
                b: seq.episode(i + 1).constraint_offset(),
                mu: trace.records[i].mu,
                prefix_dr: dr.prefix[i],
                prefix_cv: cv.prefix[i],
            })
            .collect();
        Ok(Self {
            dr: dr.total,
            cv: cv.total,
            per_episode,
            budgets,
        })
    }

    /// Rebuild from CSV rows; totals are the last prefix values.
    pub fn from_rows(per_episode: Vec<EpisodeGap>, budgets: Option<VariationReport>) -> Result<Self> {
        if per_episode.iter().enumerate().any(|(i, g)| g.m != i + 1) {
            return Err(Error::InvalidInput("report rows must be numbered 1..=M in order".into()));
        }
        let last = per_episode.last();
        Ok(Self {
            dr: last.map_or(0.0, |g| g.prefix_dr),
            cv: last.map_or(0.0, |g| g.prefix_cv),
            per_episode,
            budgets,
        })
    }

    pub fn episodes(&self) -> usize {
        self.per_episode.len()
    }

    pub fn prefix_dr(&self) -> Vec<f64> {
        self.per_episode.iter().map(|g| g.prefix_dr).collect()
    }

    pub fn prefix_cv(&self) -> Vec<f64> {
        self.per_episode.iter().map(|g| g.prefix_cv).collect()
    }

    pub fn mu_path(&self) -> Vec<f64> {
        self.per_episode.iter().map(|g| g.mu).collect()
    }

    /// Split `DR` into `(sum V* - V_hat, sum V_hat - V^pi)` using the trace's
    /// optimistic reward estimates.
    pub fn decomposition(&self, trace: &EpisodeTrace) -> Result<(f64, f64)> {
        if trace.len() != self.episodes() {
            return Err(Error::Shape("trace and report lengths differ".into()));
        }
        let mut opt_gap = 0.0;
        let mut est_gap = 0.0;
        for (g, r) in self.per_episode.iter().zip(&trace.records) {
            opt_gap += g.v_r_star - r.v_r1_est;
            est_gap += r.v_r1_est - g.v_r_pi;
        }
        Ok((opt_gap, est_gap))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.per_episode {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn read_csv(path: &Path) -> Result<Vec<EpisodeGap>> {
        let mut r = csv::Reader::from_path(path)?;
        r.deserialize().map(|row| row.map_err(Error::from)).collect()
    }
}
