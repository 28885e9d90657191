use std::path::Path;
use std::process::{Command, Output};

fn legend(args: &[&str], out_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_legend"))
        .args(args)
        .env("LEGEND_OUTPUT_DIR", out_dir)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const PROFILE: &str = "device_id,mu,beta,forward_time,compute_budget,comm_budget\n\
0,10,0,0,inf,inf\n\
1,5,0,0,inf,inf\n\
2,2.5,0,0,inf,inf\n";

#[test]
fn plan_prints_depths() {
    let dir = tempfile::tempdir().unwrap();
    let profile = write(dir.path(), "profile.csv", PROFILE);
    let out = legend(&["plan", &profile], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("# distribution=2 3 4 5 6 7 8 9 10 11 12 13"), "{text}");
    let depths: Vec<&str> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("device_id"))
        .map(|l| l.split(',').nth(2).unwrap())
        .collect();
    assert_eq!(depths.len(), 3);
}

#[test]
fn infeasible_psi_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let profile = write(dir.path(), "profile.csv", PROFILE);
    let out = legend(&["plan", &profile, "--psi", "66"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("78"));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(legend(&["bogus"], dir.path()).status.code(), Some(1));
    assert_eq!(legend(&["micro", "nowhere"], dir.path()).status.code(), Some(1));
    assert_eq!(legend(&[], dir.path()).status.code(), Some(1));
}

#[test]
fn bad_configs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write(dir.path(), "unknown.toml", "[run]\nrounds = 1\nspeed = 3\n");
    assert_eq!(legend(&["run", &unknown], dir.path()).status.code(), Some(2));
    let missing = dir.path().join("absent.toml");
    assert_eq!(
        legend(&["run", missing.to_str().unwrap()], dir.path()).status.code(),
        Some(2)
    );
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let config = write(dir.path(), "short.toml", "[run]\nrounds = 1\n");
    let out = legend(&["run", &config], &blocker.join("nested"));
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn run_writes_csvs_to_the_override_dir() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "short.toml",
        "[run]\nrounds = 2\nseed = 5\noutput_dir = \"ignored\"\n[devices]\ncount = 4\n",
    );
    let out_dir = dir.path().join("results");
    let out = legend(&["run", &config], &out_dir);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rounds = std::fs::read_to_string(out_dir.join("rounds.csv")).unwrap();
    assert!(rounds.starts_with(
        "round,device_id,depth,rank_sum,t_i,t_round,avg_wait,wait_violation,up_bytes,down_bytes,cum_time,cum_bytes,eval_loss,eval_acc"
    ));
    assert_eq!(rounds.lines().count(), 1 + 2 * 4);
    assert!(out_dir.join("summary.csv").exists());
    assert!(out_dir.join("config.resolved.toml").exists());
    assert!(!dir.path().join("ignored").exists());
}
