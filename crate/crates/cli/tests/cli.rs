use std::path::Path;
use std::process::Command;

const CONFIG: &str = r#"
version = 1
num_states = 2
num_actions = 2
horizon = 2
episodes = 40
drift = "piecewise"
num_switches = 1
constraint_offset = 0.5
seeds = [1, 2]
preset = 3
variants = ["full", "no_restart"]
sweep_rates = [0.2, 0.8]
"#;

fn nscmdp() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nscmdp"))
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("exp.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn gen_env_then_solve_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let env = tmp.path().join("envs/seed7.txt");
    let st = nscmdp()
        .args(["gen-env", "--seed", "7", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&env)
        .status()
        .unwrap();
    assert!(st.success());
    assert!(env.with_extension("json").exists());
    let oracle = tmp.path().join("oracle.csv");
    let st = nscmdp().arg("solve-oracle").arg("--env").arg(&env).arg("--out").arg(&oracle).status().unwrap();
    assert!(st.success());
    let text = std::fs::read_to_string(&oracle).unwrap();
    assert!(text.starts_with("m,v_r_star,v_g_star,mu_star,gamma,feasible"));
    assert_eq!(text.lines().count(), 41);
}

#[test]
fn run_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let out = tmp.path().join("out");
    let st = nscmdp().arg("run").arg("--config").arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert!(st.success());
    for f in [
        "summary.json",
        "env_seed1.txt",
        "env_seed2.json",
        "trace_seed1_full.csv",
        "trace_seed2_no_restart.csv",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let st = nscmdp().arg("report").arg("--out").arg(&out).status().unwrap();
    assert!(st.success());
    let agg = std::fs::read_to_string(out.join("prefix_dr_agg.csv")).unwrap();
    assert!(agg.starts_with("variant,key,m,mean,std,n"));
    // 2 variants x 40 episodes plus the header.
    assert_eq!(agg.lines().count(), 81);
}

#[test]
fn seed_and_variant_flags_restrict_the_batch() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let out = tmp.path().join("out");
    let st = nscmdp()
        .arg("run")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--seed", "5", "--variant", "no_bonus"])
        .status()
        .unwrap();
    assert!(st.success());
    assert!(out.join("trace_seed5_no_bonus.csv").exists());
    assert!(!out.join("trace_seed1_full.csv").exists());
}

#[test]
fn sweep_writes_budget_series() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &CONFIG.replace("[\"full\", \"no_restart\"]", "[\"full\"]"));
    let out = tmp.path().join("sweep");
    let st = nscmdp().arg("sweep").arg("--config").arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert!(st.success());
    let agg = std::fs::read_to_string(out.join("budget_sweep_agg.csv")).unwrap();
    assert_eq!(agg.lines().count(), 3);
    assert!(out.join("rate_1/summary.json").exists());
}

#[test]
fn bad_configs_fail_with_nonzero_exit() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!("{CONFIG}\nunknown_key = 1\n"));
    let out = nscmdp().arg("run").arg("--config").arg(&cfg).arg("--out").arg(tmp.path()).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown_key"));

    // An unreachable constraint makes every seed fail; the batch still completes.
    let cfg = write_config(tmp.path(), &CONFIG.replace("constraint_offset = 0.5", "constraint_offset = 1.99"));
    let out = nscmdp().arg("run").arg("--config").arg(&cfg).arg("--out").arg(tmp.path().join("o")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(tmp.path().join("o/summary.json").exists());
}
