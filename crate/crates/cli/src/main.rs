use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use nscmdp::env_gen::make_sequence;
use nscmdp::format::{read_sequence_file, write_sequence_file, SequenceMetadata};
use nscmdp::harness::{
    emit_plotdata, run_experiment, write_oracle_csv, ExperimentConfig, ExperimentOutcome, LabeledReport, PlotKind,
    Summary, Variant,
};
use nscmdp::metrics::RegretReport;
use nscmdp::oracle::{distinct_runs, solve_sequence};

#[derive(Parser)]
#[command(name = "nscmdp", version, about = "Non-stationary CMDP experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one sequence and write it with its metadata sidecar.
    GenEnv {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Output file for the sequence; the sidecar goes next to it as `.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve every episode of a sequence file and write the per-episode optimum.
    SolveOracle {
        #[arg(long)]
        env: PathBuf,
        /// `.csv` for a per-episode table, `.json` for full solutions.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Restrict to these seeds (repeatable).
        #[arg(long)]
        seed: Vec<u64>,
        /// Restrict to these variants (repeatable).
        #[arg(long)]
        variant: Vec<String>,
    },
    /// Summarize an output directory and write plot tables into it.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the config once per `sweep_rates` entry with linear drift.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Vec<u64>,
        #[arg(long)]
        variant: Vec<String>,
    },
}

fn load_config(path: &Path, seeds: &[u64], variants: &[String]) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(path).with_context(|| format!("reading {}", path.display()))?;
    if !seeds.is_empty() {
        cfg.seeds = seeds.to_vec();
    }
    if !variants.is_empty() {
        cfg.variants = Some(variants.to_vec());
    }
    Ok(cfg)
}

fn gen_env(config: &Path, seed: u64, out: &Path) -> Result<()> {
    let spec = load_config(config, &[], &[])?.resolve()?;
    let env = spec.env;
    let seq = make_sequence(seed, env.shape, env.drift, &env.schedule, &env.generator)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    write_sequence_file(&seq, out)?;
    let meta = serde_json::to_string_pretty(&SequenceMetadata::of(&seq))?;
    std::fs::write(out.with_extension("json"), meta + "\n")?;
    println!("wrote {} ({} episodes)", out.display(), seq.len());
    Ok(())
}

fn solve_oracle(env: &Path, out: &Path) -> Result<()> {
    let seq = read_sequence_file(env).with_context(|| format!("reading {}", env.display()))?;
    let sols = solve_sequence(&seq)?;
    match out.extension().and_then(|e| e.to_str()) {
        Some("json") => std::fs::write(out, serde_json::to_string(&sols)? + "\n")?,
        _ => write_oracle_csv(out, &sols)?,
    }
    let infeasible = sols.iter().filter(|s| !s.feasible).count();
    println!(
        "solved {} episodes ({} distinct LPs), {} infeasible",
        sols.len(),
        distinct_runs(&seq),
        infeasible
    );
    Ok(())
}

fn print_summary(summary: &Summary) {
    println!("{:<14} {:>8} {:>12} {:>10} {:>12} {:>10}", "variant", "m", "DR mean", "DR std", "CV mean", "CV std");
    for v in &summary.variants {
        for c in &v.checkpoints {
            println!(
                "{:<14} {:>8} {:>12.4} {:>10.4} {:>12.4} {:>10.4}",
                v.variant.name(),
                c.m,
                c.dr.mean,
                c.dr.std,
                c.cv.mean,
                c.cv.std
            );
        }
    }
    for f in &summary.failures {
        let variant = f.variant.map_or("-", |v| v.name());
        eprintln!("failed: seed {} variant {}: {}", f.seed, variant, f.error);
    }
}

fn run(config: &Path, out: &Path, seeds: &[u64], variants: &[String]) -> Result<bool> {
    let spec = load_config(config, seeds, variants)?.resolve()?;
    let outcome = run_experiment(&spec, Some(out))?;
    print_summary(&outcome.summary);
    Ok(outcome.is_success())
}

/// `trace_seed<seed>_<variant>.csv` -> `(seed, variant)`.
fn parse_trace_name(name: &str) -> Option<(u64, Variant)> {
    let rest = name.strip_prefix("trace_seed")?.strip_suffix(".csv")?;
    let (seed, variant) = rest.split_once('_')?;
    Some((seed.parse().ok()?, variant.parse().ok()?))
}

fn report(out: &Path) -> Result<bool> {
    let summary_path = out.join("summary.json");
    let summary: Summary = serde_json::from_str(
        &std::fs::read_to_string(&summary_path).with_context(|| format!("reading {}", summary_path.display()))?,
    )?;
    print_summary(&summary);
    let mut found = Vec::new();
    for entry in std::fs::read_dir(out)? {
        let path = entry?.path();
        if let Some(key) = path.file_name().and_then(|n| n.to_str()).and_then(parse_trace_name) {
            found.push((key, path));
        }
    }
    found.sort();
    let mut reports = Vec::with_capacity(found.len());
    for ((seed, variant), path) in &found {
        reports.push((*seed, *variant, RegretReport::from_rows(RegretReport::read_csv(path)?, None)?));
    }
    let labeled: Vec<LabeledReport<'_>> = reports
        .iter()
        .map(|(seed, variant, r)| LabeledReport {
            variant: variant.name(),
            seed: *seed,
            report: r,
        })
        .collect();
    for kind in [PlotKind::PrefixDr, PlotKind::PrefixCv, PlotKind::MuPath] {
        let (long, agg) = emit_plotdata(&labeled, kind)?.write(out)?;
        println!("wrote {} and {}", long.display(), agg.display());
    }
    Ok(summary.failures.is_empty())
}

fn sweep(config: &Path, out: &Path, seeds: &[u64], variants: &[String]) -> Result<bool> {
    let base = load_config(config, seeds, variants)?;
    let rates = match &base.sweep_rates {
        Some(r) if !r.is_empty() => r.clone(),
        _ => bail!("sweep needs a non-empty `sweep_rates` list in the config"),
    };
    let mut outcomes: Vec<(String, ExperimentOutcome)> = Vec::new();
    let mut ok = true;
    for (i, rate) in rates.iter().enumerate() {
        let mut cfg = base.clone();
        cfg.drift = "linear".into();
        cfg.num_switches = None;
        cfg.drift_rate = Some(*rate);
        let spec = cfg.resolve()?;
        let dir = out.join(format!("rate_{i}"));
        let outcome = run_experiment(&spec, Some(&dir))?;
        println!("rate {rate:?} -> {}", dir.display());
        print_summary(&outcome.summary);
        ok &= outcome.is_success();
        outcomes.push((format!("rate_{i}"), outcome));
    }
    let labels: Vec<(String, Vec<LabeledReport<'_>>)> = outcomes
        .iter()
        .map(|(label, o)| {
            let reports = o
                .cells
                .iter()
                .map(|c| LabeledReport {
                    variant: c.variant.name(),
                    seed: c.seed,
                    report: &c.report,
                })
                .collect();
            (label.clone(), reports)
        })
        .collect();
    let names: Vec<Vec<String>> = labels
        .iter()
        .map(|(label, rs)| rs.iter().map(|r| format!("{label}/{}", r.variant)).collect())
        .collect();
    let mut flat = Vec::new();
    for ((_, rs), ns) in labels.iter().zip(&names) {
        for (r, n) in rs.iter().zip(ns) {
            flat.push(LabeledReport {
                variant: n.as_str(),
                seed: r.seed,
                report: r.report,
            });
        }
    }
    std::fs::create_dir_all(out)?;
    let (long, agg) = emit_plotdata(&flat, PlotKind::BudgetSweep)?.write(out)?;
    println!("wrote {} and {}", long.display(), agg.display());
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenEnv { config, seed, out } => gen_env(&config, seed, &out).map(|_| true),
        Command::SolveOracle { env, out } => solve_oracle(&env, &out).map(|_| true),
        Command::Run {
            config,
            out,
            seed,
            variant,
        } => run(&config, &out, &seed, &variant),
        Command::Report { out } => report(&out),
        Command::Sweep {
            config,
            out,
            seed,
            variant,
        } => sweep(&config, &out, &seed, &variant),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
