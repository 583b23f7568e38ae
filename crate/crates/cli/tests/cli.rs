use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bench(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cgail-bench"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn small_train_config(dir: &Path) -> PathBuf {
    write_config(
        dir,
        "train.json",
        &json!({
            "mdp": { "fixture": "two_corridor" },
            "seeds": [0, 1, 2, 3, 4],
            "window": 10,
            "output_dir": "runs",
            "parallelism": 2,
            "train": { "iterations": 25, "n_traj_per_iter": 4, "wasserstein_traj": 10 }
        }),
    )
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn simulate_writes_one_csv_per_tuple() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "sim.json",
        &json!({
            "params": [
                { "c": 1.0, "lambda": 1.0, "E": 0.5, "k": 1.0, "alpha": 0.0 },
                { "c": 0.5, "lambda": 0.2, "E": 0.3, "k": 2.0, "alpha": 0.0 }
            ],
            "init": { "x": 0.55, "y": 0.45 },
            "steps": 100,
            "output_dir": "sim"
        }),
    );
    let out = bench(&["simulate", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for i in 0..2 {
        let text = fs::read_to_string(tmp.path().join(format!("sim/trajectory_{i:03}.csv"))).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,x,y,dx,dy,u1,u2,dist_to_desired");
        assert_eq!(lines.count(), 101);
    }
}

#[test]
fn equilibria_of_uncontrolled_reference_exclude_desired_state() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "eq.json",
        &json!({
            "params": [{ "c": 1.0, "lambda": 1.0, "E": 0.5, "k": 0.0, "alpha": 0.0 }],
            "controlled": false,
            "output": "eq.csv"
        }),
    );
    let out = bench(&["equilibria", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(code(&out), 0);
    let text = fs::read_to_string(tmp.path().join("eq.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].ends_with(",false"));
}

fn audit_config(dir: &Path, k: f64, c: f64, lambda: f64, e: f64, alpha: f64) -> PathBuf {
    let point = |v: f64| json!({ "lo": v, "hi": v });
    write_config(
        dir,
        "audit.json",
        &json!({
            "ranges": { "c": point(c), "lambda": point(lambda), "E": point(e), "k": point(k), "alpha": point(alpha) },
            "resolution": 1,
            "output": "audit.csv"
        }),
    )
}

#[test]
fn audit_exit_code_tracks_counterexamples() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = audit_config(tmp.path(), 1.0, 1.0, 1.0, 0.5, 0.0);
    let out = bench(&["audit", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let header = fs::read_to_string(tmp.path().join("audit.csv")).unwrap();
    assert!(header.starts_with(
        "c,lambda,E,k,alpha,assumption_holds,det,trace,eig1_re,eig1_im,eig2_re,eig2_im,converged,terminal_distance\n"
    ));

    // slow eigenvalue near −0.14: still approaching at t = 50
    let cfg = audit_config(tmp.path(), 0.1, 0.1, 0.1, 0.05, -1.0);
    let out = bench(&["audit", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(code(&out), 3);
}

#[test]
fn flow_writes_csv_and_rejects_oversized_steps() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "flow.json",
        &json!({ "mdp": { "fixture": "three_state_entropy" }, "lambda": 1.0, "dt": 0.01, "steps": 20, "output": "flow.csv" }),
    );
    let out = bench(&["flow", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(code(&out), 0);
    let text = fs::read_to_string(tmp.path().join("flow.csv")).unwrap();
    assert_eq!(text.lines().count(), 22);

    let cfg = write_config(
        tmp.path(),
        "flow_big.json",
        &json!({ "mdp": { "fixture": "three_state_entropy" }, "lambda": 1.0, "dt": 5.0, "steps": 20, "output": "big.csv" }),
    );
    let out = bench(&["flow", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_sweep_is_byte_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_train_config(tmp.path());
    let run = |out: &str| {
        let o = bench(&["train", "--config", cfg.to_str().unwrap(), "--out", out, "--sweep", "k=0,1"], tmp.path());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        read_dir_sorted(&tmp.path().join(out))
    };
    let first = run("a");
    let second = run("b");
    assert_eq!(first.len(), 2 * 5 * 2 + 2);
    assert_eq!(first, second);

    let trace = String::from_utf8(first.iter().find(|(n, _)| n == "trace_k=1_seed0.csv").unwrap().1.clone()).unwrap();
    assert!(trace.starts_with(
        "iter,return,normalized_return,disc_mean,disc_dev_half,tv_to_expert,wasserstein_state,regularizer_value\n"
    ));
    assert_eq!(trace.lines().count(), 26);
}

#[test]
fn aggregate_matches_recomputation_from_summaries() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_train_config(tmp.path());
    let o = bench(&["train", "--config", cfg.to_str().unwrap(), "--sweep", "k=1"], tmp.path());
    assert_eq!(code(&o), 0);
    let runs = tmp.path().join("runs");
    let from_train = fs::read(runs.join("aggregate.json")).unwrap();

    let mut steps = Vec::new();
    let mut wass = Vec::new();
    for seed in 0..5 {
        let s: Value = serde_json::from_slice(&fs::read(runs.join(format!("summary_k=1_seed{seed}.json"))).unwrap()).unwrap();
        assert_eq!(s["schema_version"], 1);
        steps.push(s["convergence_step"].as_f64().unwrap_or(s["iterations"].as_f64().unwrap()));
        wass.push(s["final_wasserstein"].as_f64().unwrap());
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let pstd = |v: &[f64]| {
        let m = mean(v);
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
    };
    let agg: Value = serde_json::from_slice(&from_train).unwrap();
    assert_eq!(agg["schema_version"], 1);
    let row = &agg["rows"][0];
    assert_eq!(row["runs"], 5);
    assert!((row["convergence_step"]["mean"].as_f64().unwrap() - mean(&steps)).abs() < 1e-12);
    assert!((row["convergence_step"]["std"].as_f64().unwrap() - pstd(&steps)).abs() < 1e-12);
    assert!((row["final_wasserstein"]["mean"].as_f64().unwrap() - mean(&wass)).abs() < 1e-12);

    let o = bench(&["aggregate", "--inputs", "runs", "--out", "again"], tmp.path());
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(tmp.path().join("again/aggregate.json")).unwrap(), from_train);
}

#[test]
fn configuration_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&bench(&["bogus"], tmp.path())), 2);
    assert_eq!(code(&bench(&["simulate"], tmp.path())), 2);
    assert_eq!(code(&bench(&["simulate", "--config", "missing.json"], tmp.path())), 2);

    let cfg = small_train_config(tmp.path());
    let o = bench(&["train", "--config", cfg.to_str().unwrap(), "--sweep", "gamma=0.5"], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown sweep axis"));

    let bad = write_config(
        tmp.path(),
        "bad.json",
        &json!({ "mdp": { "fixture": "two_corridor" }, "output_dir": "x", "train": { "lr_disc": -1.0 } }),
    );
    let o = bench(&["train", "--config", bad.to_str().unwrap()], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("lr_disc"));

    let typo = write_config(tmp.path(), "typo.json", &json!({ "mdp": { "fixture": "nope" }, "output_dir": "x" }));
    assert_eq!(code(&bench(&["train", "--config", typo.to_str().unwrap()], tmp.path())), 2);
}

#[test]
fn mdp_file_with_soft_expert_loads_relative_to_config() {
    let tmp = tempfile::tempdir().unwrap();
    let sub = tmp.path().join("cfg");
    fs::create_dir(&sub).unwrap();
    fs::write(sub.join("mdp.json"), include_str!("../../../fixtures/two_corridor.json")).unwrap();
    let cfg = write_config(
        &sub,
        "flow.json",
        &json!({
            "mdp": { "mdp_path": "mdp.json", "expert_temperature": 0.1 },
            "lambda": 0.0, "dt": 0.01, "steps": 5, "output": "flow.csv"
        }),
    );
    let o = bench(&["flow", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(tmp.path().join("flow.csv").exists());
}
