use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rdp-posterior"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn calibrate_loose_budget_succeeds() {
    let o = run(&["calibrate", "--lambda", "2", "--epsilon", "1e6", "--n", "100"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["coefficient"].as_f64(), Some(1.0));
}

#[test]
fn malformed_prior_is_a_usage_error() {
    let o = run(&["calibrate", "--prior", "6,abc", "--lambda", "2", "--epsilon", "1", "--n", "100"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
}

#[test]
fn unknown_flag_exits_one() {
    let o = run(&["calibrate", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn unverifiable_budget_is_refused() {
    let o = run(&[
        "sample", "--mode", "diffused", "--successes", "38", "--trials", "100", "--lambda", "15",
        "--epsilon", "0.5", "--max-iters", "1",
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
}

#[test]
fn sample_is_deterministic_in_the_seed() {
    let args = [
        "sample", "--mode", "concentrated", "--successes", "38", "--trials", "100", "--lambda", "2",
        "--epsilon", "0.5", "--seed", "9",
    ];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let mut other = args;
    other[12] = "10";
    assert_ne!(run(&other).stdout, a.stdout);
}

#[test]
fn statquery_reads_a_column() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("obs.csv");
    let body: String = std::iter::once("x,y\n".to_string())
        .chain((0..200).map(|i| format!("{},{}\n", (i % 4) as f64 / 4.0, i)))
        .collect();
    std::fs::write(&path, body).unwrap();
    let o = run(&[
        "statquery", "--data", path.to_str().unwrap(), "--column", "x", "--lambda", "2", "--epsilon", "1",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let est = v["estimate"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&est));
}

#[test]
fn experiment_rejects_empty_replicates() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, r#"{"id":"x","kind":"privacy_curve","lambdas":[2],"coefficients":[1],"replicates":0,"seed":1}"#)
        .unwrap();
    let o = run(&["experiment", "--spec", spec.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn experiment_writes_header_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, r#"{"id":"x","kind":"privacy_curve","lambdas":[2,8],"coefficients":[1],"replicates":1,"seed":1}"#)
        .unwrap();
    let o = run(&["experiment", "--spec", spec.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("experiment,mechanism,lambda,epsilon,coefficient,metric,value,replicate,seed"));
    assert!(text.contains(",inf,"));
}

#[test]
fn glm_train_on_separable_synthetic_data() {
    let o = run(&[
        "glm-train", "--synthetic", "400,400,3,50", "--mode", "concentrated", "--epsilon", "100",
        "--burn-in", "200", "--seed", "3",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["test_metrics"]["error_rate"].as_f64().unwrap() < 0.1, "{v}");
    assert_eq!(v["n_train"].as_u64(), Some(400));
}

#[test]
fn glm_train_requires_a_schema_for_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    std::fs::write(&path, "a,b\n1,2\n").unwrap();
    let o = run(&["glm-train", "--data", path.to_str().unwrap(), "--epsilon", "1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn glm_train_rejects_missing_schema_column() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("t.csv");
    let schema = dir.path().join("s.json");
    std::fs::write(&data, "a,b\n1,2\n3,4\n5,6\n").unwrap();
    std::fs::write(&schema, r#"{"a":"numeric","zzz":"label"}"#).unwrap();
    let o = run(&[
        "glm-train", "--data", data.to_str().unwrap(), "--schema", schema.to_str().unwrap(),
        "--label-rule", "lt:3", "--epsilon", "1", "--burn-in", "10",
    ]);
    assert_eq!(o.status.code(), Some(1));
}
