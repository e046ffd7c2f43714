use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dtr(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_dtr"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    out
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = dtr(dir, args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["simulate-cohort", "--n", "12", "--seed", "3", "--out", "data"]);
    for f in ["patients.csv", "visits.csv", "outcomes.csv", "standardization.json"] {
        assert!(d.join("data").join(f).exists(), "{f}");
    }
    fs::write(d.join("run.json"), r#"{"mcmc": {"iters": 60, "burnin": 20, "thin": 2, "init_evals": 200}}"#).unwrap();
    let fit = ok(d, &["fit", "--data", "data", "--config", "run.json", "--out", "post.json", "--trace-out", "trace.csv"]);
    assert!(fit.contains("draws: 20"), "{fit}");
    let waic: f64 = ok(d, &["waic", "--posterior", "post.json"]).trim().parse().unwrap();
    assert!(fit.contains(&format!("waic: {waic}")));
    assert_eq!(fs::read_to_string(d.join("trace.csv")).unwrap().lines().count(), 21);

    fs::write(d.join("patient.json"), r#"{"y0": 5.0, "covariates": {"donor_age": 60, "dgf": 1, "bmi": 22}}"#).unwrap();
    let args = ["optimize", "--posterior", "post.json", "--patient-covariates", "patient.json", "--steps", "3", "--rollouts", "8"];
    let opt = ok(d, &[&args[..], &["--out", "policy.json"]].concat());
    assert!(opt.contains("initial reward"));
    let curve = fs::read_to_string(d.join("policy.csv")).unwrap();
    assert_eq!(curve.lines().count(), 5);
    // same seed, same bytes
    ok(d, &[&args[..], &["--out", "again.json"]].concat());
    assert_eq!(fs::read(d.join("policy.json")).unwrap(), fs::read(d.join("again.json")).unwrap());
    ok(d, &[&args[..], &["--mask", "visits", "--out", "visits.json"]].concat());

    let fixed = ok(d, &[&args[..], &["--mask", "dosage", "--fixed-interval", "30", "--out", "monthly.json"]].concat());
    assert!(fixed.contains("initial reward"));
    assert!(!dtr(d, &[&args[..], &["--fixed-interval", "30", "--out", "x.json"]].concat()).status.success());
    ok(d, &["evaluate-policy", "--posterior", "post.json", "--policy", "monthly.json", "--reps", "6", "--out", "monthly.csv"]);

    let eval = ok(d, &["evaluate-policy", "--posterior", "post.json", "--policy", "policy.json", "--reps", "6", "--out", "eval.csv"]);
    assert!(eval.contains("mean median survival"));
    assert_eq!(fs::read_to_string(d.join("eval.csv")).unwrap().lines().count(), 7);
    ok(d, &[
        "evaluate-policy", "--posterior", "post.json", "--policy", "fixed:91", "--patient-covariates", "patient.json", "--reps", "6",
        "--out", "fixed.csv",
    ]);
}

#[test]
fn bad_inputs_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = dtr(d, &["fit", "--data", "missing", "--out", "p.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    fs::write(d.join("run.json"), r#"{"mcmc": {"iters": 10, "burnin": 20}}"#).unwrap();
    let out = dtr(d, &["fit", "--data", "missing", "--config", "run.json", "--out", "p.json"]);
    assert!(!out.status.success());
    let out = dtr(d, &["evaluate-policy", "--posterior", "p.json", "--policy", "fixed:abc", "--out", "e.csv"]);
    assert!(!out.status.success());
}
