use nscmdp::env_gen::{make_sequence, ConstraintSchedule, Drift, GeneratorConfig, NonStationaryCmdp, SequenceShape};
use nscmdp::learner::{preset_params, run, run_from, LearnerConfig, Preset, PresetInputs, ResumeState};
use nscmdp::model::PolicyTable;
use nscmdp::policy_eval::{Assumption, Setting};

fn sequence(seed: u64, shape: (usize, usize, usize, usize), drift: Drift, b: f64) -> NonStationaryCmdp {
    make_sequence(
        seed,
        SequenceShape {
            num_states: shape.0,
            num_actions: shape.1,
            horizon: shape.2,
            episodes: shape.3,
        },
        drift,
        &ConstraintSchedule::Constant(b),
        &GeneratorConfig::default(),
    )
    .unwrap()
}

fn explicit(l: usize, w: usize, setting: Setting) -> LearnerConfig {
    LearnerConfig {
        alpha: 0.2,
        eta: 0.05,
        xi: 0.01,
        chi: None,
        restart_policy: l,
        restart_window: w,
        beta: 0.3,
        lambda: 1.0,
        assumption: Assumption::LocalBudget,
        setting,
        rho: 0.5,
        constants: [1.0; 6],
        freeze_dual: false,
    }
}

#[test]
fn identical_inputs_give_identical_traces() {
    let seq = sequence(1, (3, 2, 3, 60), Drift::PiecewiseConstant { num_switches: 2 }, 1.0);
    for setting in [Setting::Tabular, Setting::Linear] {
        let cfg = explicit(20, 10, setting);
        assert_eq!(run(&seq, &cfg, 9).unwrap(), run(&seq, &cfg, 9).unwrap());
        assert_ne!(run(&seq, &cfg, 9).unwrap(), run(&seq, &cfg, 10).unwrap());
    }
}

#[test]
fn single_episode_uses_initial_state() {
    let seq = sequence(2, (3, 2, 3, 1), Drift::Stationary, 1.2);
    let cfg = explicit(1, 1, Setting::Tabular);
    let trace = run(&seq, &cfg, 0).unwrap();
    assert_eq!(trace.len(), 1);
    assert_eq!(trace.records[0].policy, PolicyTable::uniform(seq.shape()));
    assert!((trace.records[0].mu - cfg.eta * 1.2).abs() < 1e-15);
}

#[test]
fn unit_policy_period_keeps_policy_uniform() {
    let seq = sequence(3, (3, 3, 2, 25), Drift::LinearDrift { rate: 0.5 }, 0.5);
    let trace = run(&seq, &explicit(1, 4, Setting::Tabular), 4).unwrap();
    let uniform = PolicyTable::uniform(seq.shape());
    assert!(trace.policies().all(|p| *p == uniform));
}

#[test]
fn restart_isolates_state() {
    let seq = sequence(5, (3, 2, 3, 48), Drift::PiecewiseConstant { num_switches: 3 }, 1.0);
    for (l, w) in [(12, 12), (12, 6), (16, 8)] {
        let cfg = explicit(l, w, Setting::Tabular);
        let full = run(&seq, &cfg, 21).unwrap();
        for start in (l + 1..=48).step_by(l) {
            let prev = &full.records[start - 2];
            let resume = ResumeState {
                start_episode: start,
                mu: prev.mu,
                v_g1_est: prev.v_g1_est,
            };
            let tail = run_from(&seq, &cfg, 21, resume).unwrap();
            assert_eq!(tail.records.as_slice(), &full.records[start - 1..]);
        }
        // A mid-epoch start is refused.
        let bad = ResumeState {
            start_episode: l,
            ..ResumeState::default()
        };
        assert!(run_from(&seq, &cfg, 21, bad).is_err());
    }
}

#[test]
fn simplex_and_dual_box_hold_along_runs() {
    let seq = sequence(6, (4, 3, 3, 150), Drift::PiecewiseConstant { num_switches: 2 }, 1.5);
    let shape = seq.shape();
    let mut inp = PresetInputs::new(Preset::TabularSlater, shape, seq.len(), 3.0, 1.0);
    inp.gamma = Some(0.2);
    let cfg = preset_params(&inp).unwrap();
    assert_eq!(cfg.chi, Some(2.0 * 3.0 / 0.2));
    let trace = run(&seq, &cfg, 1).unwrap();
    for rec in &trace.records {
        assert!((0.0..=30.0).contains(&rec.mu));
        for row in rec.policy.probs().chunks(shape.num_actions) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }
}

/// One state, one step, three actions, no binding constraint: the learner should
/// move toward the best arm.
#[test]
fn bandit_learns() {
    let mut improved = 0;
    for seed in 0..10u64 {
        let seq = make_sequence(
            100 + seed,
            SequenceShape {
                num_states: 1,
                num_actions: 3,
                horizon: 1,
                episodes: 2000,
            },
            Drift::Stationary,
            &ConstraintSchedule::Constant(0.0),
            &GeneratorConfig {
                min_gamma: None,
                ..GeneratorConfig::default()
            },
        )
        .unwrap();
        let cfg = LearnerConfig {
            alpha: 0.1,
            eta: 0.01,
            xi: 0.0,
            chi: Some(10.0),
            restart_policy: 2000,
            restart_window: 2000,
            beta: 0.05,
            lambda: 1.0,
            assumption: Assumption::Slater,
            setting: Setting::Tabular,
            rho: 0.5,
            constants: [1.0; 6],
            freeze_dual: false,
        };
        let trace = run(&seq, &cfg, seed).unwrap();
        let avg = |range: std::ops::Range<usize>| {
            let n = range.len() as f64;
            range.map(|i| trace.records[i].trajectory.steps[0].reward).sum::<f64>() / n
        };
        if avg(1500..2000) > avg(0..500) {
            improved += 1;
        }
    }
    assert!(improved >= 8, "improved in {improved}/10 seeds");
}

#[test]
fn preset_budgets_must_be_positive() {
    let shape = nscmdp::model::Shape::new(2, 2, 2).unwrap();
    let err = preset_params(&PresetInputs::new(Preset::TabularLocalBudget, shape, 10, 0.0, 0.0)).unwrap_err();
    assert!(err.to_string().contains("1e-6"));
    assert!(preset_params(&PresetInputs::new(Preset::TabularLocalBudget, shape, 10, 1e-6, 0.0)).is_ok());
}
