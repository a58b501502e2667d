use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use flowcast_core::dataset::DatasetMeta;
use flowcast_core::{Dataset, Dims, Ensemble};
use ndarray::array;

fn flowcast(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowcast"))
        .args(args)
        .current_dir(dir)
        .env_remove("FLOWCAST_SEED")
        .output()
        .expect("spawn flowcast")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = flowcast(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn small_pp(dir: &Path, name: &str, n: &str) -> PathBuf {
    ok(dir, &["gen-data", "pp-gaussian", "--n", n, "--horizon", "20", "--seed", "1", "--out", name]);
    dir.join(name)
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_pp(dir.path(), "a.fmds", "50");
    let b = small_pp(dir.path(), "b.fmds", "50");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let ds = Dataset::read(&a).unwrap();
    assert_eq!(ds.len(), 50);
    assert_eq!(ds.meta.generator, "pp-gaussian");
}

#[test]
fn gen_data_uniform_y2_and_blob() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-data", "pp-uniform-y2", "--n", "20", "--horizon", "5", "--out", "u.fmds", "--csv", "u.csv"]);
    let ds = Dataset::read(&d.join("u.fmds")).unwrap();
    assert!(ds.sources().all(|s| s[0] == 1.0));
    assert_eq!(fs::read_to_string(d.join("u.csv")).unwrap().lines().count(), 21);

    ok(d, &["gen-data", "blob", "--n", "10", "--size", "8", "--out", "b.fmds"]);
    let ds = Dataset::read(&d.join("b.fmds")).unwrap();
    assert_eq!(ds.dims, Dims::grid(1, 8, 8));
}

#[test]
fn gen_data_empty_warns() {
    let dir = tempfile::tempdir().unwrap();
    let out = flowcast(dir.path(), &["gen-data", "pp-gaussian", "--n", "0", "--out", "e.fmds"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    assert_eq!(Dataset::read(&dir.path().join("e.fmds")).unwrap().len(), 0);
}

#[test]
fn bad_generator_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = flowcast(dir.path(), &["gen-data", "lorenz", "--out", "x.fmds"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_missing_dataset_exits_2_naming_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = flowcast(dir.path(), &["train", "forecast", "--data", "nowhere.fmds", "--out", "m.fmck"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.fmds"));
    assert!(!dir.path().join("m.fmck").exists());
}

#[test]
fn train_constant_shift_reaches_low_loss() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = (0..128)
        .map(|i| {
            let x = i as f64 / 64.0 - 1.0;
            let q0 = array![x, (3.0 * x).sin()];
            let qt = &q0 + &array![0.5, -1.0];
            (q0, qt)
        })
        .collect();
    Dataset::new(Dims::vector(2), pairs, 1.0, DatasetMeta::new("shift", 0))
        .unwrap()
        .write(&dir.path().join("shift.fmds"))
        .unwrap();
    ok(dir.path(), &["train", "forecast", "--data", "shift.fmds", "--out", "m.fmck", "--seed", "2"]);
    let log = fs::read_to_string(dir.path().join("m.fmck.log")).unwrap();
    let last: f64 = log.lines().last().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!(last < 1e-3, "final loss {last}");
    assert_eq!(log.lines().count(), 201);
}

#[test]
fn train_is_deterministic_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_pp(d, "d.fmds", "40");
    let args = |out: &'static str, seed: &'static str| {
        vec!["train", "gaussify", "--data", "d.fmds", "--out", out, "--epochs", "2", "--hidden", "8,8", "--seed", seed]
    };
    ok(d, &args("a.fmck", "3"));
    ok(d, &args("b.fmck", "3"));
    ok(d, &args("c.fmck", "4"));
    let a = fs::read(d.join("a.fmck")).unwrap();
    assert_eq!(a, fs::read(d.join("b.fmck")).unwrap());
    assert_ne!(a, fs::read(d.join("c.fmck")).unwrap());
}

#[test]
fn non_finite_training_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    small_pp(dir.path(), "d.fmds", "64");
    let out = flowcast(
        dir.path(),
        &["train", "forecast", "--data", "d.fmds", "--out", "m.fmck", "--epochs", "50", "--lr", "1e200"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));
    assert!(!dir.path().join("m.fmck").exists());
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_pp(d, "d.fmds", "30");
    fs::write(d.join("run.cfg"), "data = d.fmds\nepochs = 2\nhidden = 8\nseed = 5\n").unwrap();
    ok(d, &["--config", "run.cfg", "train", "forecast", "--out", "a.fmck"]);
    ok(d, &["train", "forecast", "--data", "d.fmds", "--out", "b.fmck", "--epochs", "2", "--hidden", "8", "--seed", "5"]);
    assert_eq!(fs::read(d.join("a.fmck")).unwrap(), fs::read(d.join("b.fmck")).unwrap());
    assert_eq!(fs::read_to_string(d.join("a.fmck.log")).unwrap().lines().count(), 3);

    ok(d, &["--config", "run.cfg", "train", "forecast", "--out", "c.fmck", "--epochs", "3"]);
    assert_eq!(fs::read_to_string(d.join("c.fmck.log")).unwrap().lines().count(), 4);

    fs::write(d.join("bad.cfg"), "epochz = 2\n").unwrap();
    let out = flowcast(d, &["--config", "bad.cfg", "train", "forecast", "--out", "x.fmck"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));
}

#[test]
fn seed_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |name: &str, seed: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_flowcast"));
        c.args(["gen-data", "pp-gaussian", "--n", "5", "--horizon", "1", "--out", name]).current_dir(d);
        match seed {
            Some(s) => c.env("FLOWCAST_SEED", s),
            None => c.env_remove("FLOWCAST_SEED"),
        };
        assert!(c.status().unwrap().success());
        fs::read(d.join(name)).unwrap()
    };
    let a = run("a.fmds", Some("17"));
    let b = run("b.fmds", Some("17"));
    let c = run("c.fmds", None);
    assert_eq!(a, b);
    assert_ne!(a, c);
    ok(d, &["gen-data", "pp-gaussian", "--n", "5", "--horizon", "1", "--seed", "17", "--out", "e.fmds"]);
    assert_eq!(a, fs::read(d.join("e.fmds")).unwrap());
}

fn trained_pair(d: &Path) {
    small_pp(d, "d.fmds", "60");
    for mode in ["forecast", "gaussify"] {
        let out = format!("{mode}.fmck");
        ok(d, &["train", mode, "--data", "d.fmds", "--out", &out, "--epochs", "2", "--hidden", "8,8"]);
    }
}

#[test]
fn forecast_and_perturb_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained_pair(d);

    // Deterministic single forecast.
    ok(d, &["forecast", "--model", "forecast.fmck", "--state", "0.1,0.3", "--out", "one.fmds", "--csv", "one.csv"]);
    let one = Ensemble::read(&d.join("one.fmds")).unwrap();
    assert_eq!(one.len(), 1);
    ok(d, &["forecast", "--model", "forecast.fmck", "--state", "0.1,0.3", "--out", "one_b.fmds"]);
    assert_eq!(fs::read(d.join("one.fmds")).unwrap(), fs::read(d.join("one_b.fmds")).unwrap());

    // sigma = 0, M = 1 through the perturbation path.
    ok(d, &[
        "forecast", "--model", "forecast.fmck", "--perturb", "gaussify.fmck", "--state", "0.1,0.3",
        "--sigma", "0", "--members", "1", "--out", "z.fmds",
    ]);
    assert_eq!(Ensemble::read(&d.join("z.fmds")).unwrap().len(), 1);

    ok(d, &[
        "forecast", "--model", "forecast.fmck", "--perturb", "gaussify.fmck", "--input", "d.fmds",
        "--index", "3", "--members", "25", "--out", "p.fmds", "--csv", "p.csv", "--svg", "p.svg",
    ]);
    let p = Ensemble::read(&d.join("p.fmds")).unwrap();
    assert_eq!(p.len(), 25);
    assert_eq!(fs::read_to_string(d.join("p.csv")).unwrap().lines().count(), 26);
    assert_eq!(fs::read_to_string(d.join("p.svg")).unwrap().matches("<circle").count(), 50);

    ok(d, &["perturb", "--model", "gaussify.fmck", "--state", "0.1,0.3", "--members", "7", "--noise", "uniform", "--out", "q.fmds"]);
    let q = Ensemble::read(&d.join("q.fmds")).unwrap();
    assert_eq!(q.len(), 7);
    assert_eq!(q.meta.get("family"), Some("uniform"));

    ok(d, &["forecast", "--model", "forecast.fmck", "--input", "d.fmds", "--out", "all.fmds"]);
    assert_eq!(Ensemble::read(&d.join("all.fmds")).unwrap().len(), 60);
}

#[test]
fn kind_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained_pair(d);
    let out = flowcast(d, &["forecast", "--model", "gaussify.fmck", "--state", "0.1,0.3", "--out", "x.fmds"]);
    assert_eq!(out.status.code(), Some(2));
    let out = flowcast(d, &[
        "forecast", "--model", "forecast.fmck", "--perturb", "forecast.fmck", "--state", "0.1,0.3", "--out", "x.fmds",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = flowcast(d, &["perturb", "--model", "forecast.fmck", "--state", "0.1,0.3", "--out", "x.fmds"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!d.join("x.fmds").exists());
}

#[test]
fn metrics_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_pp(d, "d.fmds", "30");
    let stdout = ok(d, &["metrics", "--pred", "d.fmds", "--truth", "d.fmds", "--out", "m.csv"]);
    assert!(stdout.contains("mean state"));
    let csv = fs::read_to_string(d.join("m.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "d");
    assert_eq!(row[3].parse::<f64>().unwrap(), 0.0);
    assert_eq!(row[5], "NA");
    assert_eq!(row[8], "NA");

    ok(d, &["gen-data", "blob", "--n", "4", "--size", "8", "--out", "b.fmds"]);
    let out = flowcast(d, &["metrics", "--pred", "d.fmds", "--truth", "b.fmds"]);
    assert_eq!(out.status.code(), Some(2));
    let stdout = ok(d, &["metrics", "--pred", "b.fmds", "--truth", "b.fmds", "--method", "same"]);
    assert!(stdout.contains("same,"));
    assert!(!stdout.contains(",NA"));
}

#[test]
fn bench_counts_and_runtime() {
    let dir = tempfile::tempdir().unwrap();
    // Wall-clock ordering can flake on a busy machine.
    let mut last_err = String::new();
    for _ in 0..3 {
        ok(dir.path(), &["bench", "--out", "cost.csv"]);
        let csv = fs::read_to_string(dir.path().join("cost.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("scheme,N,op_count,fn_calls,runtime_s"));
        let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
        let counts: Vec<(&str, u64, u64, u64)> = rows
            .iter()
            .map(|r| (r[0].as_str(), r[1].parse().unwrap(), r[2].parse().unwrap(), r[3].parse().unwrap()))
            .collect();
        assert_eq!(
            counts,
            vec![
                ("ODE", 1, 2, 1),
                ("ODE", 10, 20, 10),
                ("ODE", 100, 200, 100),
                ("ODE", 1000, 2000, 1000),
                ("SDE", 10, 40, 20),
                ("SDE", 100, 400, 200),
                ("SDE", 1000, 4000, 2000),
            ]
        );
        let times: Vec<f64> = rows.iter().map(|r| r[4].parse().unwrap()).collect();
        let increasing = times[..4].windows(2).all(|w| w[0] < w[1]) && times[4..].windows(2).all(|w| w[0] < w[1]);
        if increasing {
            return;
        }
        last_err = format!("{times:?}");
    }
    panic!("runtime not increasing in N: {last_err}");
}
