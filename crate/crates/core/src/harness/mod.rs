//! Config-driven experiments: for every `(seed, variant)` cell, generate the sequence,
//! solve the oracle, run the learner and write the regret report.
//!
//! Output directory layout:
//!
//! ```text
//! env_seed<seed>.txt             sequence in the text format of `format`
//! env_seed<seed>.json            sidecar metadata (seed, drift, budgets)
//! oracle_seed<seed>.csv          m,v_r_star,v_g_star,mu_star,gamma,feasible
//! trace_seed<seed>_<variant>.csv per-episode report (see `metrics`)
//! summary.json                   across-seed mean/std at the checkpoints
//! ```
//!
//! Cells run in parallel; each cell writes only its own files and the summary is
//! written once at the end, so outputs are byte-identical across reruns.

pub mod config;
pub mod plot;

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env_gen::{make_sequence, measure_budgets, model_budgets, policy_budget, NonStationaryCmdp};
use crate::error::{Error, Result};
use crate::format::{write_sequence, SequenceMetadata};
use crate::learner::{self, preset_params, LearnerConfig, PresetInputs};
use crate::metrics::{EpisodeRecord, EpisodeTrace, RegretReport};
use crate::model::{evaluate_exact, Signal};
use crate::oracle::{solve_sequence, OracleSolution};

pub use config::{EnvSpec, ExperimentConfig, ExperimentSpec, LearnerSpec, Variant, CONFIG_VERSION};
pub use plot::{emit_plotdata, mean_std, LabeledReport, PlotKind, PlotTable};

pub const SUMMARY_VERSION: u32 = 1;

/// A generated sequence with its oracle solutions and measured budgets.
#[derive(Debug, Clone)]
pub struct SeedEnv {
    pub seed: u64,
    pub seq: NonStationaryCmdp,
    pub oracle: Vec<OracleSolution>,
    pub b_delta: f64,
    pub b_star: f64,
    /// `min_m gamma_m`.
    pub gamma: f64,
}

pub fn prepare_seed(env: &EnvSpec, seed: u64) -> Result<SeedEnv> {
    let seq = make_sequence(seed, env.shape, env.drift.clone(), &env.schedule, &env.generator)?;
    let oracle = solve_sequence(&seq)?;
    let (b_p, b_r, b_g) = model_budgets(&seq);
    let pols: Vec<_> = oracle.iter().map(|o| o.policy.clone()).collect();
    Ok(SeedEnv {
        seed,
        b_delta: b_p + b_r + b_g,
        b_star: policy_budget(&pols),
        gamma: oracle.iter().map(|o| o.gamma).fold(f64::INFINITY, f64::min),
        seq,
        oracle,
    })
}

/// The learner configuration a seed runs with (before the variant is applied).
pub fn learner_config(spec: &LearnerSpec, env: &SeedEnv) -> Result<LearnerConfig> {
    match spec {
        LearnerSpec::Explicit(c) => Ok(c.clone()),
        LearnerSpec::Preset {
            preset,
            rho,
            confidence,
            constants,
            budget_floor,
        } => {
            let mut inp = PresetInputs::new(
                *preset,
                env.seq.shape(),
                env.seq.len(),
                env.b_delta.max(*budget_floor),
                env.b_star.max(*budget_floor),
            );
            inp.gamma = Some(env.gamma);
            inp.rho = *rho;
            inp.confidence = *confidence;
            inp.constants = *constants;
            preset_params(&inp)
        }
    }
}

/// Trace that plays the oracle policy of every episode.
pub fn oracle_replay(env: &SeedEnv, cfg: &LearnerConfig) -> Result<EpisodeTrace> {
    let records = env
        .oracle
        .iter()
        .enumerate()
        .map(|(i, sol)| {
            let m = i + 1;
            let model = env.seq.episode(m);
            let vals = evaluate_exact(model, &sol.policy)?;
            let x1 = model.initial_state();
            Ok(EpisodeRecord {
                episode: m,
                policy: sol.policy.clone(),
                mu: 0.0,
                v_r1_est: vals.v(Signal::Reward, 0, x1),
                v_g1_est: vals.v(Signal::Utility, 0, x1),
                lv: 0.0,
                trajectory: learner::sample_trajectory(&env.seq, m, &sol.policy, env.seed),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EpisodeTrace {
        seed: env.seed,
        config: cfg.clone(),
        records,
    })
}

/// Run one cell and build its report (with budgets measured at the cell's `W`, `L`).
pub fn run_cell(env: &SeedEnv, base: &LearnerConfig, variant: Variant) -> Result<(EpisodeTrace, RegretReport)> {
    let cfg = variant.adjust(base, env.seq.len());
    let trace = match variant {
        Variant::OracleReplay => oracle_replay(env, &cfg)?,
        _ => learner::run(&env.seq, &cfg, env.seed)?,
    };
    let pols: Vec<_> = env.oracle.iter().map(|o| o.policy.clone()).collect();
    let budgets = measure_budgets(&env.seq, &pols, (cfg.restart_window, cfg.restart_policy))?;
    let report = RegretReport::build(&trace, &env.oracle, &env.seq, Some(budgets))?;
    Ok((trace, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        Self {
            mean,
            std,
            n: values.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointStat {
    pub m: usize,
    pub dr: Stat,
    pub cv: Stat,
    /// `DR(m) / m`.
    pub dr_rate: Stat,
    /// `CV(m) / m`.
    pub cv_rate: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub seeds: Vec<u64>,
    pub checkpoints: Vec<CheckpointStat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub seed: u64,
    pub variant: Variant,
    pub dr: f64,
    pub cv: f64,
    pub mu_max: f64,
    pub b_delta: f64,
    pub b_star: f64,
    pub gamma: f64,
    pub config: LearnerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub seed: u64,
    /// `None` when the failure happened while preparing the seed's sequence.
    pub variant: Option<Variant>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub version: u32,
    pub episodes: usize,
    pub checkpoints: Vec<usize>,
    pub variants: Vec<VariantSummary>,
    pub cells: Vec<CellSummary>,
    pub failures: Vec<CellFailure>,
}

/// A finished cell.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub seed: u64,
    pub variant: Variant,
    pub config: LearnerConfig,
    pub trace: EpisodeTrace,
    pub report: RegretReport,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub summary: Summary,
    pub cells: Vec<CellResult>,
    pub envs: Vec<SeedEnv>,
}

impl ExperimentOutcome {
    pub fn is_success(&self) -> bool {
        self.summary.failures.is_empty()
    }

    pub fn report(&self, seed: u64, variant: Variant) -> Option<&RegretReport> {
        self.cells
            .iter()
            .find(|c| c.seed == seed && c.variant == variant)
            .map(|c| &c.report)
    }

    pub fn labeled(&self) -> Vec<LabeledReport<'_>> {
        self.cells
            .iter()
            .map(|c| LabeledReport {
                variant: c.variant.name(),
                seed: c.seed,
                report: &c.report,
            })
            .collect()
    }
}

fn env_files(dir: &Path, env: &SeedEnv) -> Result<()> {
    std::fs::write(dir.join(format!("env_seed{}.txt", env.seed)), write_sequence(&env.seq))?;
    let meta = serde_json::to_string_pretty(&SequenceMetadata::of(&env.seq))?;
    std::fs::write(dir.join(format!("env_seed{}.json", env.seed)), meta + "\n")?;
    write_oracle_csv(&dir.join(format!("oracle_seed{}.csv", env.seed)), &env.oracle)
}

#[derive(Serialize)]
struct OracleRow {
    m: usize,
    v_r_star: f64,
    v_g_star: f64,
    mu_star: f64,
    gamma: f64,
    feasible: bool,
}

pub fn write_oracle_csv(path: &Path, oracle: &[OracleSolution]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (i, o) in oracle.iter().enumerate() {
        w.serialize(OracleRow {
            m: i + 1,
            v_r_star: o.v_r_star,
            v_g_star: o.v_g_star,
            mu_star: o.mu_star,
            gamma: o.gamma,
            feasible: o.feasible,
        })?;
    }
    w.flush()?;
    Ok(())
}

fn summarize(spec: &ExperimentSpec, cells: &[CellResult], envs: &[SeedEnv], failures: Vec<CellFailure>) -> Summary {
    let by_seed: BTreeMap<u64, &SeedEnv> = envs.iter().map(|e| (e.seed, e)).collect();
    let variants = spec
        .variants
        .iter()
        .map(|&v| {
            let members: Vec<&CellResult> = cells.iter().filter(|c| c.variant == v).collect();
            let checkpoints = spec
                .checkpoints
                .iter()
                .map(|&m| {
                    let dr: Vec<f64> = members.iter().map(|c| c.report.per_episode[m - 1].prefix_dr).collect();
                    let cv: Vec<f64> = members.iter().map(|c| c.report.per_episode[m - 1].prefix_cv).collect();
                    let rate = |xs: &[f64]| xs.iter().map(|x| x / m as f64).collect::<Vec<f64>>();
                    CheckpointStat {
                        m,
                        dr: Stat::of(&dr),
                        cv: Stat::of(&cv),
                        dr_rate: Stat::of(&rate(&dr)),
                        cv_rate: Stat::of(&rate(&cv)),
                    }
                })
                .collect();
            VariantSummary {
                variant: v,
                seeds: members.iter().map(|c| c.seed).collect(),
                checkpoints,
            }
        })
        .collect();
    let cell_summaries = cells
        .iter()
        .map(|c| {
            let env = by_seed[&c.seed];
            CellSummary {
                seed: c.seed,
                variant: c.variant,
                dr: c.report.dr,
                cv: c.report.cv,
                mu_max: c.trace.records.iter().map(|r| r.mu).fold(0.0, f64::max),
                b_delta: env.b_delta,
                b_star: env.b_star,
                gamma: env.gamma,
                config: c.config.clone(),
            }
        })
        .collect();
    Summary {
        version: SUMMARY_VERSION,
        episodes: spec.env.shape.episodes,
        checkpoints: spec.checkpoints.clone(),
        variants,
        cells: cell_summaries,
        failures,
    }
}

/// Run every `(seed, variant)` cell. Failures of individual cells are recorded in
/// the summary; only output-directory I/O errors abort the batch.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: Option<&Path>) -> Result<ExperimentOutcome> {
    if spec.seeds.is_empty() || spec.variants.is_empty() {
        return Err(Error::Config("experiment needs at least one seed and one variant".into()));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let prepared: Vec<(u64, Result<SeedEnv>)> = spec
        .seeds
        .par_iter()
        .map(|&seed| (seed, prepare_seed(&spec.env, seed)))
        .collect();
    let mut failures = Vec::new();
    let mut envs = Vec::new();
    for (seed, res) in prepared {
        match res {
            Ok(env) => envs.push(env),
            Err(e) => failures.push(CellFailure {
                seed,
                variant: None,
                error: e.to_string(),
            }),
        }
    }
    if let Some(dir) = out_dir {
        envs.par_iter().map(|env| env_files(dir, env)).collect::<Result<Vec<()>>>()?;
    }

    let jobs: Vec<(&SeedEnv, Variant)> = envs
        .iter()
        .flat_map(|env| spec.variants.iter().map(move |&v| (env, v)))
        .collect();
    let results: Vec<(u64, Variant, Result<CellResult>)> = jobs
        .par_iter()
        .map(|&(env, variant)| {
            let res = learner_config(&spec.learner, env).and_then(|base| {
                let (trace, report) = run_cell(env, &base, variant)?;
                if let Some(dir) = out_dir {
                    report.write_csv_file(&dir.join(format!("trace_seed{}_{}.csv", env.seed, variant)))?;
                }
                Ok(CellResult {
                    seed: env.seed,
                    variant,
                    config: variant.adjust(&base, env.seq.len()),
                    trace,
                    report,
                })
            });
            (env.seed, variant, res)
        })
        .collect();
    let mut cells = Vec::new();
    for (seed, variant, res) in results {
        match res {
            Ok(c) => cells.push(c),
            Err(e) => failures.push(CellFailure {
                seed,
                variant: Some(variant),
                error: e.to_string(),
            }),
        }
    }
    let summary = summarize(spec, &cells, &envs, failures);
    if let Some(dir) = out_dir {
        std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    }
    Ok(ExperimentOutcome { summary, cells, envs })
}
