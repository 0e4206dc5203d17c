use nscmdp::env_gen::{
    epoch_budgets, make_sequence, model_budgets, ConstraintSchedule, Drift, GeneratorConfig, NonStationaryCmdp,
    SequenceShape,
};
use nscmdp::harness::{emit_plotdata, run_experiment, ExperimentConfig, LabeledReport, PlotKind};
use nscmdp::learner::{run, LearnerConfig};
use nscmdp::metrics::{constraint_violation, dynamic_regret, RegretReport};
use nscmdp::oracle::solve_sequence;
use nscmdp::policy_eval::{Assumption, Setting};

fn sequence(seed: u64, episodes: usize, drift: Drift) -> NonStationaryCmdp {
    make_sequence(
        seed,
        SequenceShape {
            num_states: 3,
            num_actions: 2,
            horizon: 3,
            episodes,
        },
        drift,
        &ConstraintSchedule::Constant(1.0),
        &GeneratorConfig::default(),
    )
    .unwrap()
}

fn cfg() -> LearnerConfig {
    LearnerConfig {
        alpha: 0.3,
        eta: 0.1,
        xi: 0.0,
        chi: Some(20.0),
        restart_policy: 30,
        restart_window: 15,
        beta: 0.5,
        lambda: 1.0,
        assumption: Assumption::Slater,
        setting: Setting::Tabular,
        rho: 0.5,
        constants: [1.0; 6],
        freeze_dual: false,
    }
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn report_totals_decomposition_and_prefixes() {
    let seq = sequence(1, 90, Drift::PiecewiseConstant { num_switches: 2 });
    let oracle = solve_sequence(&seq).unwrap();
    let trace = run(&seq, &cfg(), 3).unwrap();
    let report = RegretReport::build(&trace, &oracle, &seq, None).unwrap();
    assert_eq!(report.dr, dynamic_regret(&trace, &oracle, &seq).unwrap().total);
    assert_eq!(report.cv, constraint_violation(&trace, &seq).unwrap().total);
    assert_eq!(*report.prefix_dr().last().unwrap(), report.dr);
    assert_eq!(*report.prefix_cv().last().unwrap(), report.cv);
    let (opt, est) = report.decomposition(&trace).unwrap();
    assert!((opt + est - report.dr).abs() < 1e-9);
    let direct: f64 = report.per_episode.iter().map(|g| g.v_r_star - g.v_r_pi).sum();
    assert!((direct - report.dr).abs() < 1e-9);
    let gaps: f64 = report.per_episode.iter().map(|g| g.b - g.v_g_pi).sum();
    assert!((report.cv - gaps.max(0.0)).abs() < 1e-9);
}

#[test]
fn csv_round_trip_and_header() {
    let seq = sequence(2, 20, Drift::Stationary);
    let oracle = solve_sequence(&seq).unwrap();
    let trace = run(&seq, &cfg(), 1).unwrap();
    let report = RegretReport::build(&trace, &oracle, &seq, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    report.write_csv_file(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("m,v_r_star,v_r_pi,v_g_pi,b,mu,prefix_dr,prefix_cv\n"));
    let back = RegretReport::from_rows(RegretReport::read_csv(&path).unwrap(), None).unwrap();
    assert_eq!(back, report);
}

#[test]
fn piecewise_budget_matches_direct_norms() {
    let seq = sequence(3, 4, Drift::PiecewiseConstant { num_switches: 1 });
    let (p2, p3) = (seq.episode(2), seq.episode(3));
    let shape = seq.shape();
    let sas = shape.num_states * shape.num_actions * shape.num_states;
    let sa = shape.num_states * shape.num_actions;
    let mut want = (0.0, 0.0, 0.0);
    for h in 0..shape.horizon {
        want.0 += norm_diff(&p3.transition()[h * sas..(h + 1) * sas], &p2.transition()[h * sas..(h + 1) * sas]);
        want.1 += norm_diff(&p3.reward()[h * sa..(h + 1) * sa], &p2.reward()[h * sa..(h + 1) * sa]);
        want.2 += norm_diff(&p3.utility()[h * sa..(h + 1) * sa], &p2.utility()[h * sa..(h + 1) * sa]);
    }
    let got = model_budgets(&seq);
    assert!(want.0 > 0.0);
    assert!((got.0 - want.0).abs() < 1e-12 && (got.1 - want.1).abs() < 1e-12 && (got.2 - want.2).abs() < 1e-12);
    // Epochs of length 2 split at the switch, so no in-epoch variation remains.
    let epochs = epoch_budgets(&seq, 2).unwrap();
    assert!(epochs.iter().all(|e| e.b_p == 0.0 && e.b_g == 0.0));
    let epochs = epoch_budgets(&seq, 4).unwrap();
    assert!((epochs[0].b_p - want.0).abs() < 1e-12);
}

const SMALL: &str = r#"
version = 1
num_states = 3
num_actions = 2
horizon = 3
episodes = 48
drift = "piecewise"
num_switches = 2
constraint_offset = 1.0
seeds = [4, 5, 6]
preset = 4
variants = ["full", "no_dual", "no_restart"]
"#;

#[test]
fn reruns_are_byte_identical() {
    let spec = ExperimentConfig::from_toml(SMALL).unwrap().resolve().unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let oa = run_experiment(&spec, Some(a.path())).unwrap();
    run_experiment(&spec, Some(b.path())).unwrap();
    assert!(oa.is_success());
    let mut names: Vec<_> = std::fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    // Per seed: sequence, sidecar, oracle table and one trace per variant; plus the summary.
    assert_eq!(names.len(), 3 * (3 + 3) + 1);
    for name in names {
        let x = std::fs::read(a.path().join(&name)).unwrap();
        let y = std::fs::read(b.path().join(&name)).unwrap();
        assert_eq!(x, y, "{name:?} differs");
    }
    // Different seeds share nothing; the no_dual multiplier is identically zero.
    assert_ne!(
        std::fs::read(a.path().join("trace_seed4_full.csv")).unwrap(),
        std::fs::read(a.path().join("trace_seed5_full.csv")).unwrap()
    );
    assert!(oa
        .cells
        .iter()
        .filter(|c| c.variant.name() == "no_dual")
        .all(|c| c.report.mu_path().iter().all(|m| *m == 0.0)));
}

#[test]
fn plot_tables_have_expected_rows() {
    let spec = ExperimentConfig::from_toml(SMALL).unwrap().resolve().unwrap();
    let outcome = run_experiment(&spec, None).unwrap();
    let full: Vec<LabeledReport<'_>> = outcome.labeled().into_iter().filter(|r| r.variant == "full").collect();
    let one = emit_plotdata(&full[..1], PlotKind::PrefixDr).unwrap();
    assert_eq!(one.rows.len(), 48);
    let all = emit_plotdata(&full, PlotKind::PrefixCv).unwrap();
    assert_eq!(all.rows.len(), 3 * 48);
    assert_eq!(all.aggregate.len(), 48);
    assert!(all.aggregate.iter().all(|r| r.n == 3 && r.std >= 0.0));
    let sweep = emit_plotdata(&full, PlotKind::BudgetSweep).unwrap();
    assert_eq!(sweep.rows.len(), 3);
    assert!(sweep.rows.iter().all(|r| r.key > 0.0));
}
