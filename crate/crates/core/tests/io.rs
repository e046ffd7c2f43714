mod common;

use std::fs;
use std::path::Path;

use common::*;
use dtr::error::Error;
use dtr::inference::{AcceptanceReport, Draw, Hyperparameters, McmcConfig, PosteriorDraws};
use dtr::io::*;
use dtr::joint::ModelVariant;
use dtr::rng::{std_normal, stream};
use dtr::sim::{simulate_cohort, Truths};

fn dataset_dir(n: usize) -> (tempfile::TempDir, Dataset) {
    let dir = tempfile::tempdir().unwrap();
    let data = Dataset::from(simulate_cohort(&Truths::reference(), n, 5).unwrap());
    write_dataset(dir.path(), &data).unwrap();
    (dir, data)
}

fn posterior() -> PosteriorDraws {
    let mut rng = stream(2, &[]);
    let draws: Vec<Draw> = (0..5)
        .map(|k| {
            let mut phi = phi_ref();
            phi.surv.h0 += 0.1 * k as f64 + 1e-13;
            Draw { theta: theta_ref(), phi }
        })
        .collect();
    PosteriorDraws {
        variant: ModelVariant::Sls,
        covariate_names: vec!["a".into(), "b".into(), "c".into()],
        standardization: vec![],
        patient_ids: vec!["P1".into(), "P2".into(), "P3".into()],
        config: McmcConfig::default(),
        hyper: Hyperparameters::default(),
        draws,
        pointwise_loglik: (0..5).map(|_| (0..3).map(|_| -50.0 + std_normal(&mut rng) / 3.0).collect()).collect(),
        acceptance: AcceptanceReport::default(),
    }
}

fn rewrite(path: &Path, f: impl Fn(&str) -> String) {
    let text = fs::read_to_string(path).unwrap();
    fs::write(path, f(&text)).unwrap();
}

#[test]
fn dataset_round_trip_is_exact() {
    let (dir, data) = dataset_dir(15);
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.covariate_names, data.covariate_names);
    assert_eq!(back.records, data.records);
    assert_eq!(back.standardization, data.standardization);
}

#[test]
fn missing_sidecar_standardizes_continuous_columns() {
    let (dir, data) = dataset_dir(30);
    fs::remove_file(dir.path().join(STANDARDIZATION_FILE)).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.standardization.len(), 2);
    for c in [0, 2] {
        let col: Vec<f64> = back.records.iter().map(|r| r.x[c]).collect();
        let (m, sd) = mean_sd(&col);
        assert!(m.abs() < 1e-12 && (sd - 1.0).abs() < 1e-12);
    }
    let dgf: Vec<f64> = back.records.iter().map(|r| r.x[1]).collect();
    let orig: Vec<f64> = data.records.iter().map(|r| r.x[1]).collect();
    assert_eq!(dgf, orig);
}

fn expect_issue(err: Error, needle: &str) {
    let text = err.to_string();
    assert!(text.contains(needle), "expected '{needle}' in:\n{text}");
}

#[test]
fn malformed_rows_are_located() {
    let (dir, _) = dataset_dir(4);
    let visits = dir.path().join(VISITS_FILE);
    rewrite(&visits, |t| {
        let mut lines: Vec<String> = t.lines().map(String::from).collect();
        let cols: Vec<&str> = lines[2].split(',').collect();
        lines[2] = format!("{},{},abc,{}", cols[0], cols[1], cols[3]);
        lines.join("\n") + "\n"
    });
    expect_issue(load_dataset(dir.path()).unwrap_err(), "visits.csv:3:");

    let (dir, _) = dataset_dir(4);
    rewrite(&dir.path().join(OUTCOMES_FILE), |t| {
        let mut lines: Vec<String> = t.lines().map(String::from).collect();
        let cols: Vec<&str> = lines[1].split(',').collect();
        lines[1] = format!("{},{},2", cols[0], cols[1]);
        lines.join("\n") + "\n"
    });
    expect_issue(load_dataset(dir.path()).unwrap_err(), "outcomes.csv:2: delta must be 0 or 1");

    let (dir, _) = dataset_dir(4);
    rewrite(&dir.path().join(VISITS_FILE), |t| t.replacen("t_days", "time", 1));
    expect_issue(load_dataset(dir.path()).unwrap_err(), "visits.csv:1:");
}

#[test]
fn patient_without_visits_is_rejected() {
    let (dir, data) = dataset_dir(4);
    let id = data.records[1].id.clone();
    rewrite(&dir.path().join(VISITS_FILE), |t| {
        t.lines()
            .filter(|l| !l.starts_with(&format!("{id},")))
            .map(|l| format!("{l}\n"))
            .collect()
    });
    expect_issue(load_dataset(dir.path()).unwrap_err(), &format!("'{id}' has no visits"));
}

#[test]
fn out_of_order_and_late_visits_are_rejected() {
    let (dir, data) = dataset_dir(4);
    let r = &data.records[0];
    rewrite(&dir.path().join(VISITS_FILE), |t| {
        format!("{t}{},{},5.0,1.0\n", r.id, format_f64(r.t_tilde + 1.0))
    });
    expect_issue(load_dataset(dir.path()).unwrap_err(), "on or after t_tilde_days");

    let (dir, data) = dataset_dir(4);
    let id = data.records[0].id.clone();
    rewrite(&dir.path().join(VISITS_FILE), |t| format!("{t}{id},0,5.0,1.0\n"));
    expect_issue(load_dataset(dir.path()).unwrap_err(), "must increase");
}

#[test]
fn posterior_round_trip_preserves_waic() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("posterior.json");
    let post = posterior();
    save_posterior(&path, &post).unwrap();
    let back = load_posterior(&path).unwrap();
    assert_eq!(back, post);
    assert_eq!(back.waic().unwrap().to_bits(), post.waic().unwrap().to_bits());
    // writing again gives the same bytes
    let again = dir.path().join("again.json");
    save_posterior(&again, &back).unwrap();
    assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn schema_version_and_kind_are_checked() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("posterior.json");
    save_posterior(&path, &posterior()).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let bumped = text.replacen("\"schema_version\":1", "\"schema_version\":2", 1);
    assert_ne!(bumped, text);
    fs::write(&path, &bumped).unwrap();
    assert!(matches!(load_posterior(&path), Err(Error::SchemaVersion { found: 2, .. })));
    fs::write(&path, text.replacen("\"posterior\"", "\"policy\"", 1)).unwrap();
    assert!(load_posterior(&path).is_err());
}

#[test]
fn run_config_rejects_unknown_fields() {
    let cfg = RunConfig::from_json(r#"{"mcmc": {"iters": 50, "burnin": 10}}"#).unwrap();
    assert_eq!((cfg.mcmc.iters, cfg.mcmc.burnin, cfg.mcmc.thin), (50, 10, 10));
    assert!(RunConfig::from_json(r#"{"mcmcc": {}}"#).is_err());
}

#[test]
fn patient_input_standardizes_raw_covariates() {
    let (_, data) = dataset_dir(20);
    let s = &data.standardization;
    let raw = format!(
        r#"{{"y0": 5.1, "covariates": {{"donor_age": {}, "dgf": 1, "bmi": {}}}}}"#,
        s[0].mean + s[0].sd,
        s[1].mean - 2.0 * s[1].sd
    );
    let input: PatientInput = serde_json::from_str(&raw).unwrap();
    let p = input.to_profile(&data.covariate_names, s).unwrap();
    assert!((p.x[0] - 1.0).abs() < 1e-12 && p.x[1] == 1.0 && (p.x[2] + 2.0).abs() < 1e-12);
    let missing: PatientInput = serde_json::from_str(r#"{"y0": 5.1, "covariates": {"dgf": 1}}"#).unwrap();
    assert!(missing.to_profile(&data.covariate_names, s).is_err());
}
