use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use grasp::config::{parse_config, RunConfig};
use grasp::policy::read_checkpoint;

fn grasp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grasp"))
        .args(args)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn train(config: &str, out: &Path) -> Output {
    grasp(&["train", "--config", config, "--out", out.to_str().unwrap()])
}

#[test]
fn missing_config_exits_2_and_names_the_path() {
    let out = grasp(&["train", "--config", "/definitely/not/here.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/definitely/not/here.json"));
}

#[test]
fn invalid_gamma_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"env": "matrix_climb", "gamma": 1.5}"#,
    );
    let out = train(&cfg, &dir.path().join("run"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma must lie in [0,1)"));
}

#[test]
fn unknown_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"env": "matrix_climb", "learnin_rate": 0.1}"#,
    );
    let out = train(&cfg, &dir.path().join("run"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learnin_rate"));
}

#[test]
fn zero_iterations_leave_a_header_only_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"env": "matrix_climb", "iterations": 0}"#,
    );
    let run = dir.path().join("run");
    let out = train(&cfg, &run);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(
        csv,
        "iteration,mean_return,u_star_norm,kkt_margin,g_norm_0,g_norm_1,actor_surrogate,critic_loss,qp_iters,wall_ms\n"
    );

    let cfg = write_config(
        dir.path(),
        "j.json",
        r#"{"env": "grid_spread", "iterations": 0, "metrics_format": "jsonl"}"#,
    );
    let run = dir.path().join("jsonl");
    assert_eq!(train(&cfg, &run).status.code(), Some(0));
    assert_eq!(fs::read_to_string(run.join("metrics.jsonl")).unwrap(), "");
}

#[test]
fn echoed_config_reparses_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"env": "grid_spread", "mode": "grasp_aligned", "seed": 9, "iterations": 1,
            "episodes_per_iteration": 2, "hidden_width": 8, "checkpoint_interval": 1}"#,
    );
    let run = dir.path().join("run");
    assert_eq!(
        grasp(&[
            "train",
            "--config",
            &cfg,
            "--out",
            run.to_str().unwrap(),
            "--seed",
            "4"
        ])
        .status
        .code(),
        Some(0)
    );
    let effective = parse_config(Path::new(&cfg))
        .unwrap()
        .with_overrides(Some(4), Some(run.clone()));
    let echoed = parse_config(&run.join("config.json")).unwrap();
    assert_eq!(echoed, effective);
    assert_eq!(echoed.train.seed, 4);

    let text = fs::read_to_string(run.join("config.json")).unwrap();
    assert_eq!(RunConfig::from_json_str(&text).unwrap(), echoed);
    let params = read_checkpoint(&run.join("final.ckpt")).unwrap();
    assert_eq!(
        params,
        read_checkpoint(&run.join("checkpoint_000001.ckpt")).unwrap()
    );
    assert!(params.flat().iter().all(|x| x.is_finite()));
}

#[test]
fn metrics_are_byte_identical_across_runs_and_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#""env": "grid_spread", "seed": 3, "iterations": 3, "episodes_per_iteration": 6, "hidden_width": 8"#;
    let one = write_config(
        dir.path(),
        "a.json",
        &format!("{{{body}, \"rollout_workers\": 1}}"),
    );
    let four = write_config(
        dir.path(),
        "b.json",
        &format!("{{{body}, \"rollout_workers\": 4}}"),
    );
    let runs = [(&one, "r1"), (&one, "r2"), (&four, "r3")];
    let files: Vec<Vec<u8>> = runs
        .iter()
        .map(|(cfg, name)| {
            let run = dir.path().join(name);
            assert_eq!(train(cfg, &run).status.code(), Some(0));
            fs::read(run.join("metrics.csv")).unwrap()
        })
        .collect();
    assert_eq!(files[0], files[1]);
    assert_eq!(files[0], files[2]);
    assert_eq!(String::from_utf8_lossy(&files[0]).lines().count(), 4);
}

#[test]
fn team_quadratic_reaches_equilibrium_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "q.json",
        r#"{"env": "team_quadratic", "seed": 2}"#,
    );
    let run = dir.path().join("run");
    assert_eq!(train(&cfg, &run).status.code(), Some(0));
    let csv = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2001);
    let u_norm: f64 = lines[2000].split(',').nth(2).unwrap().parse().unwrap();
    assert!(u_norm < 1e-4, "final |u*| = {u_norm}");
    let theta: Vec<f64> =
        serde_json::from_str(&fs::read_to_string(run.join("final.json")).unwrap()).unwrap();
    assert_eq!(theta.len(), 12);
}

#[test]
fn verify_exit_codes() {
    let ok = grasp(&["verify", "--suite", "gae", "--cases", "50"]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("suite gae: PASS (50/50 cases passed)"));
    let bad = grasp(&["verify", "--suite", "everything"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("usage:"));
}
