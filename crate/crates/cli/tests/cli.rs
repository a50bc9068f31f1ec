use std::path::Path;
use std::process::{Command, Output};

fn qdiscord(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qdiscord"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn field(out: &str, key: &str) -> f64 {
    out.lines()
        .find_map(|l| l.strip_prefix(&format!("{key},")))
        .unwrap_or_else(|| panic!("no {key} in {out}"))
        .parse()
        .unwrap()
}

fn binary_entropy(p: f64) -> f64 {
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

const COARSE: [&str; 6] = ["--grid-theta", "9", "--grid-phi", "16", "--starts", "2"];

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn feature_dim_table() {
    let o = qdiscord(&["feature-dim"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("7,6,1716"));
    assert!(out.contains("9,6,5005"));
    assert!(out.contains("9,9,48620"));
    assert_eq!(out.lines().count(), 1 + 18);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(qdiscord(&["feature-dim", "--bogus"]).status.code(), Some(2));
    assert_eq!(qdiscord(&["train", "--model", "cnn"]).status.code(), Some(2));
    assert_eq!(qdiscord(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(qdiscord(&["discord"]).status.code(), Some(2));
    let o = qdiscord(&["sweep-example", "--a-min", "0.5", "--a-max", "0.1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_one() {
    let o = qdiscord(&["discord", "--params", "0.5,0,0,0.9,0,0,0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("error"));
    let o = qdiscord(&["eval", "--checkpoint", "/nonexistent/ckpt", "--data", "/nonexistent/data"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn echo_lists_defaults() {
    let o = qdiscord(&["sweep-example", "--steps", "3", "--a-min", "0", "--a-max", "0.1"]);
    assert!(o.status.success());
    let err = stderr(&o);
    let echo = err.lines().find(|l| l.starts_with("# qdiscord sweep-example")).unwrap();
    for key in ["a_min=0", "a_max=0.1", "steps=3", "grid_theta=33", "grid_phi=64", "starts=3", "out=-"] {
        assert!(echo.contains(key), "{key} missing from {echo}");
    }
}

#[test]
fn bell_state_discord() {
    let o = qdiscord(&["discord", "--params", "0.5,0,0,0.5,0,0,0"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!((field(&out, "discord") - 1.0).abs() < 1e-4);
    assert!(field(&out, "analytic_c").abs() < 1e-12);
}

#[test]
fn sweep_rows_and_curves() {
    let o = qdiscord(&["sweep-example", "--steps", "11", "--a-min", "-0.2", "--a-max", "0.3"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let rows: Vec<Vec<f64>> = out
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 11);
    for r in &rows {
        let min = r[4];
        if min.is_finite() {
            assert!(r[1] >= min && r[2] >= min && r[3] >= min);
        }
    }
    // The first row lies outside the valid interval: flagged, not dropped.
    assert_eq!(rows[0][7], 0.0);
    let at_zero = rows.iter().find(|r| r[0].abs() < 1e-12).unwrap();
    assert_eq!(at_zero[7], 1.0);
    assert!((at_zero[4] - at_zero[5]).abs() < 1e-4);
}

#[test]
fn data_train_eval_predict_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let train = path(dir.path(), "train.txt");
    let test = path(dir.path(), "test.txt");
    let ckpt = path(dir.path(), "m.ckpt");
    let log = path(dir.path(), "m.log");
    let pairs = path(dir.path(), "pairs.csv");

    let mut args = vec!["gen-data", "--train-size", "40", "--seed", "5", "--out", &train];
    args.extend(COARSE);
    assert!(qdiscord(&args).status.success());
    let mut args = vec!["gen-data", "--split", "test", "--test-size", "10", "--seed", "5", "--out", &test];
    args.extend(COARSE);
    let o = qdiscord(&args);
    assert!(o.status.success());
    assert!(stderr(&o).contains("rejected"));

    let args = [
        "train", "--model", "dbnn", "--steps", "50", "--degree", "2", "--hidden", "4", "--data", &train,
        "--test-data", &test, "--out", &ckpt, "--log", &log,
    ];
    let o = qdiscord(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let echo = stderr(&o);
    assert!(echo.contains("decay=0.98") && echo.contains("lr0=0.2") && echo.contains("train_size=40"));
    assert!(std::fs::read_to_string(&log).unwrap().starts_with("step,lr,loss"));

    let o = qdiscord(&["eval", "--checkpoint", &ckpt, "--data", &train, "--out", &pairs]);
    assert!(o.status.success(), "{}", stderr(&o));
    let first_pair: Vec<f64> = std::fs::read_to_string(&pairs).unwrap().lines().nth(1).unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();

    // The first training sample through predict matches eval's first row.
    let data = std::fs::read_to_string(&train).unwrap();
    let record: Vec<&str> = data
        .lines()
        .filter(|l| !l.starts_with('#') && l.split_whitespace().count() == 8)
        .next()
        .unwrap()
        .split_whitespace()
        .collect();
    let params = record[..7].join(",");
    let o = qdiscord(&["predict", "--checkpoint", &ckpt, "--params", &params]);
    assert!(o.status.success(), "{}", stderr(&o));
    let pred = field(&stdout(&o), "prediction");
    assert_eq!(pred, first_pair[1]);
    assert_eq!(record[7].parse::<f64>().unwrap(), first_pair[0]);

    // Product state: the optimization term equals S(rho_A).
    let (p, q) = (0.3, 0.8);
    let prod = format!("{},{},{},0,0,0,0", p * q, p * (1.0 - q), (1.0 - p) * q);
    let o = qdiscord(&["predict", "--checkpoint", &ckpt, "--params", &prod, "--oracle"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!((field(&out, "oracle_c") - binary_entropy(p)).abs() < 1e-6);
    assert!((field(&out, "abs_error") - (field(&out, "oracle_c") - field(&out, "prediction")).abs()).abs() < 1e-15);

    // Real-state parameters against an X-state checkpoint.
    let o = qdiscord(&["predict", "--checkpoint", &ckpt, "--params", "0.25,0.25,0.25,0,0,0,0,0,0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("model expects"));
}

#[test]
fn replicate_report_averages() {
    let dir = tempfile::tempdir().unwrap();
    let train = path(dir.path(), "train.txt");
    let report = path(dir.path(), "report.csv");
    let mut args = vec!["gen-data", "--train-size", "30", "--seed", "2", "--out", &train];
    args.extend(COARSE);
    assert!(qdiscord(&args).status.success());
    let mut args = vec![
        "replicate", "--model", "nn,dbnn", "--runs", "2", "--steps", "20", "--degree", "2", "--hidden", "3", "--data",
        &train, "--test-size", "8", "--out", &report,
    ];
    args.extend(COARSE);
    let o = qdiscord(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&report).unwrap();
    for model in ["NN", "DBNN"] {
        let rows: Vec<Vec<&str>> = text
            .lines()
            .filter(|l| l.starts_with(&format!("{model},")))
            .map(|l| l.split(',').collect())
            .collect();
        assert_eq!(rows.len(), 3);
        let mean: f64 = rows[..2].iter().map(|r| r[4].parse::<f64>().unwrap()).sum::<f64>() / 2.0;
        let avg: f64 = rows[2][4].parse().unwrap();
        assert!((mean - avg).abs() <= 1e-15 * avg.abs().max(1.0));
    }
}
