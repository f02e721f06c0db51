use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn models() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("models")
}

fn tracelam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tracelam"))
        .args(args)
        .env_remove("TRACELAM_SEED")
        .output()
        .expect("spawn tracelam")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn model(name: &str) -> String {
    models().join(name).to_string_lossy().into_owned()
}

#[test]
fn mh_csv_on_the_geometric_model() {
    let o = tracelam(&["run", &model("geometric.church"), "--samples", "200", "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("index,value,log_weight,accepted"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 200);
    for (i, row) in rows.iter().enumerate() {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[0], i.to_string());
        let n: u64 = fields[1].parse().unwrap();
        assert!(n >= 2);
        assert_eq!(fields[2], "0.0");
    }
}

#[test]
fn identical_flags_give_identical_bytes() {
    for method in ["mh", "rejection", "forward"] {
        let args =
            ["run", &model("linear-regression-score.church"), "--method", method, "--samples", "100", "--seed", "9"];
        let (a, b) = (tracelam(&args), tracelam(&args));
        assert!(a.status.success());
        assert_eq!(a.stdout, b.stdout, "{method}");
    }
    let a = tracelam(&["run", &model("geometric.church"), "--samples", "100", "--seed", "1"]);
    let b = tracelam(&["run", &model("geometric.church"), "--samples", "100", "--seed", "2"]);
    assert_ne!(a.stdout, b.stdout);
}

#[test]
fn seed_can_come_from_the_environment() {
    let path = model("geometric.church");
    let flag = tracelam(&["run", &path, "--samples", "50", "--seed", "17"]);
    let env = Command::new(env!("CARGO_BIN_EXE_tracelam"))
        .args(["run", &path, "--samples", "50"])
        .env("TRACELAM_SEED", "17")
        .output()
        .unwrap();
    assert_eq!(flag.stdout, env.stdout);
}

#[test]
fn emitted_core_reproduces_the_samples() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["geometric.church", "linear-regression-flip.church", "linear-regression-score.church"] {
        let emitted = tracelam(&["run", &model(name), "--emit-core"]);
        assert!(emitted.status.success());
        let core = dir.path().join(name.replace(".church", ".core"));
        fs::write(&core, &emitted.stdout).unwrap();
        for method in ["mh", "rejection"] {
            let common = ["--method", method, "--samples", "50", "--seed", "5"];
            let from_church = tracelam(&[&["run", &model(name)], &common[..]].concat());
            let from_core = tracelam(&[&["run", core.to_str().unwrap()], &common[..]].concat());
            assert!(from_core.status.success(), "{}", String::from_utf8_lossy(&from_core.stderr));
            assert_eq!(from_church.stdout, from_core.stdout, "{name} {method}");
        }
    }
}

#[test]
fn jsonl_rows_mirror_the_csv_columns() {
    let o =
        tracelam(&["run", &model("geometric.church"), "--samples", "20", "--format", "jsonl", "--method", "rejection"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 20);
    for (i, line) in text.lines().enumerate() {
        let row: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(row["index"], i);
        assert!(row["value"].as_f64().unwrap() >= 2.0);
        assert_eq!(row["log_weight"], 0.0);
        assert!(row["accepted"].is_boolean());
    }
}

#[test]
fn several_chains_are_tagged() {
    let o = tracelam(&["run", &model("geometric.church"), "--samples", "10", "--chains", "3"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("chain,index,value,log_weight,accepted\n"));
    assert_eq!(text.lines().count(), 31);
    for c in 0..3 {
        assert_eq!(text.lines().filter(|l| l.starts_with(&format!("{c},"))).count(), 10);
    }
}

#[test]
fn output_and_summary_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("samples.csv");
    let summary = dir.path().join("summary.json");
    let o = tracelam(&[
        "run",
        &model("geometric.church"),
        "--samples",
        "500",
        "-o",
        out.to_str().unwrap(),
        "--summary",
        summary.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 501);
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(s["method"], "mh");
    assert_eq!(s["stats"]["n"], 500);
    assert!(s["stats"]["mean"].as_f64().unwrap() >= 2.0);
}

#[test]
fn eval_reports_the_run() {
    let o = tracelam(&["eval", &model("geometric.church"), "--trace", "0.7,0.8,0.3"]);
    assert!(o.status.success());
    let r: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(r["status"], "Completed");
    assert_eq!(r["result"], 2.0);
    assert_eq!(r["weight"], 1.0);

    let o = tracelam(&["eval", &model("geometric.church"), "--trace", "0.7"]);
    let r: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(r["status"], "TraceMismatch");

    let o = tracelam(&["eval", &model("geometric.church"), "--trace", "0.7,0.8,0.3", "--steps"]);
    let lines: Vec<&str> = std::str::from_utf8(&o.stdout).unwrap().lines().collect();
    assert!(lines.len() > 10);
    let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(first["step"], 0);
}

#[test]
fn check_passes() {
    let o = tracelam(&["check", "--cases", "100", "--seed", "2"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 5);
    assert!(!text.contains("FAIL"));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.church");
    fs::write(&bad, "(query (define x (rnd)) x").unwrap();
    let o = tracelam(&["run", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());

    let o = tracelam(&["run", &model("geometric.church"), "--method", "rejection", "--sigma", "0.5"]);
    assert_eq!(o.status.code(), Some(2));

    let o = tracelam(&["run", &model("geometric.church"), "--sigma", "-1"]);
    assert_eq!(o.status.code(), Some(2));

    let o = tracelam(&["eval", &model("geometric.church"), "--trace", "0.5,abc"]);
    assert_eq!(o.status.code(), Some(2));

    let open = dir.path().join("open.core");
    fs::write(&open, "(x 1.0)").unwrap();
    let o = tracelam(&["run", open.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn inference_failures_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let never = dir.path().join("never.church");
    fs::write(&never, "(query (define x (rnd)) x (< x 0))").unwrap();
    let o = tracelam(&["run", never.to_str().unwrap(), "--init-retries", "20"]);
    assert_eq!(o.status.code(), Some(3));
    let o = tracelam(&["run", never.to_str().unwrap(), "--method", "rejection", "--max-retries", "20"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn deterministic_models_fall_back_to_rejection() {
    let dir = tempfile::tempdir().unwrap();
    let constant = dir.path().join("five.church");
    fs::write(&constant, "(query 5 true)").unwrap();
    let o = tracelam(&["run", constant.to_str().unwrap(), "--samples", "3"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no random choices"));
    assert_eq!(stdout(&o).lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect::<Vec<_>>(), ["5", "5", "5"]);
}
