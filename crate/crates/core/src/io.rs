//! Dataset CSVs, JSON artifacts and trace output.
//!
//! A dataset directory holds `patients.csv` (`id`, one column per
//! covariate), `visits.csv` (`id,t_days,y_log_lab,d_log_dose`) and
//! `outcomes.csv` (`id,t_tilde_days,delta`), plus an optional
//! `standardization.json` sidecar. Floats are written with 17 significant
//! digits so values survive a round trip bit for bit.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{Hyperparameters, McmcConfig, PosteriorDraws};
use crate::joint::PatientRecord;
use crate::mtpp::VisitEvent;
use crate::policy::{OptResult, PatientProfile, SgdConfig};
use crate::sim::{Cohort, Standardization};

pub const SCHEMA_VERSION: u32 = 1;
pub const PATIENTS_FILE: &str = "patients.csv";
pub const VISITS_FILE: &str = "visits.csv";
pub const OUTCOMES_FILE: &str = "outcomes.csv";
pub const STANDARDIZATION_FILE: &str = "standardization.json";

const VISITS_HEADER: [&str; 4] = ["id", "t_days", "y_log_lab", "d_log_dose"];
const OUTCOMES_HEADER: [&str; 3] = ["id", "t_tilde_days", "delta"];

/// 17 significant digits in scientific notation.
pub fn format_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

struct FullPrecision;

impl serde_json::ser::Formatter for FullPrecision {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        writer.write_all(format_f64(value).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

/// JSON text with every float at 17 significant digits.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FullPrecision);
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

#[derive(Serialize)]
struct EnvelopeOut<'a, T> {
    schema_version: u32,
    kind: &'a str,
    #[serde(flatten)]
    payload: &'a T,
}

/// Wraps a payload with `schema_version` and `kind`.
pub fn artifact_json<T: Serialize>(kind: &str, payload: &T) -> Result<String> {
    to_json_string(&EnvelopeOut {
        schema_version: SCHEMA_VERSION,
        kind,
        payload,
    })
}

/// Parses an artifact, rejecting other schema versions and kinds.
pub fn parse_artifact<T: DeserializeOwned>(kind: &str, text: &str) -> Result<T> {
    let mut value: serde_json::Value = serde_json::from_str(text)?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| Error::Config(format!("{kind}: expected a JSON object")))?;
    let found = obj
        .remove("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Config(format!("{kind}: missing schema_version")))?;
    if found != u64::from(SCHEMA_VERSION) {
        return Err(Error::SchemaVersion {
            what: kind.to_string(),
            expected: SCHEMA_VERSION,
            found: u32::try_from(found).unwrap_or(u32::MAX),
        });
    }
    match obj.remove("kind") {
        Some(serde_json::Value::String(k)) if k == kind => {}
        Some(other) => return Err(Error::Config(format!("expected a {kind} artifact, found kind {other}"))),
        None => return Err(Error::Config(format!("{kind}: missing kind"))),
    }
    Ok(serde_json::from_value(value)?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_context(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| io_context(path, e))
}

fn io_context(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub fn save_artifact<T: Serialize>(path: &Path, kind: &str, payload: &T) -> Result<()> {
    write_text(path, &artifact_json(kind, payload)?)
}

pub fn load_artifact<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    parse_artifact(kind, &read_text(path)?)
}

pub const POSTERIOR_KIND: &str = "posterior";
pub const POLICY_KIND: &str = "policy";
pub const STANDARDIZATION_KIND: &str = "standardization";

pub fn save_posterior(path: &Path, post: &PosteriorDraws) -> Result<()> {
    save_artifact(path, POSTERIOR_KIND, post)
}

pub fn load_posterior(path: &Path) -> Result<PosteriorDraws> {
    load_artifact(path, POSTERIOR_KIND)
}

/// Optimization output for one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub patient: PatientProfile,
    pub config: SgdConfig,
    pub result: OptResult,
}

pub fn save_policy(path: &Path, report: &PolicyReport) -> Result<()> {
    save_artifact(path, POLICY_KIND, report)
}

pub fn load_policy(path: &Path) -> Result<PolicyReport> {
    load_artifact(path, POLICY_KIND)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StandardizationFile {
    columns: Vec<Standardization>,
}

/// Settings for `fit`. Unknown fields are rejected; missing ones take
/// their defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: Option<u32>,
    pub hyper: Hyperparameters,
    pub mcmc: McmcConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        if let Some(v) = cfg.schema_version {
            if v != SCHEMA_VERSION {
                return Err(Error::SchemaVersion {
                    what: "run config".into(),
                    expected: SCHEMA_VERSION,
                    found: v,
                });
            }
        }
        cfg.mcmc.validate()?;
        Ok(cfg)
    }
}

/// Patient description for `optimize`: either model-scale covariates `x`,
/// or raw values by name that are standardized with the fit's statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientInput {
    #[serde(default)]
    pub x: Option<Vec<f64>>,
    #[serde(default)]
    pub covariates: Option<BTreeMap<String, f64>>,
    pub y0: f64,
}

impl PatientInput {
    pub fn to_profile(&self, names: &[String], standardization: &[Standardization]) -> Result<PatientProfile> {
        let x = match (&self.x, &self.covariates) {
            (Some(x), None) => {
                if x.len() != names.len() {
                    return Err(Error::Config(format!(
                        "patient has {} covariates, the fit uses {}",
                        x.len(),
                        names.len()
                    )));
                }
                x.clone()
            }
            (None, Some(raw)) => {
                let mut x = Vec::with_capacity(names.len());
                for name in names {
                    let v = *raw
                        .get(name)
                        .ok_or_else(|| Error::Config(format!("patient is missing covariate '{name}'")))?;
                    x.push(match standardization.iter().find(|s| &s.name == name) {
                        Some(s) => (v - s.mean) / s.sd,
                        None => v,
                    });
                }
                if let Some(extra) = raw.keys().find(|k| !names.contains(k)) {
                    return Err(Error::Config(format!("unknown covariate '{extra}'")));
                }
                x
            }
            _ => return Err(Error::Config("give exactly one of 'x' or 'covariates'".into())),
        };
        if !self.y0.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("patient values must be finite".into()));
        }
        Ok(PatientProfile { x, y0: self.y0 })
    }
}

/// Records read from a dataset directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub covariate_names: Vec<String>,
    pub records: Vec<PatientRecord>,
    pub standardization: Vec<Standardization>,
}

impl From<Cohort> for Dataset {
    fn from(c: Cohort) -> Self {
        Dataset {
            covariate_names: c.covariate_names,
            records: c.records,
            standardization: c.standardization,
        }
    }
}

/// Writes the three CSVs and the standardization sidecar.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_context(dir, e))?;
    let f = |v: f64| format_f64(v);

    let mut w = csv::Writer::from_writer(BufWriter::new(create(&dir.join(PATIENTS_FILE))?));
    let mut header = vec!["id".to_string()];
    header.extend(data.covariate_names.iter().cloned());
    w.write_record(&header)?;
    for r in &data.records {
        let mut row = vec![r.id.clone()];
        row.extend(r.x.iter().map(|&v| f(v)));
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(BufWriter::new(create(&dir.join(VISITS_FILE))?));
    w.write_record(VISITS_HEADER)?;
    for r in &data.records {
        for (e, y) in r.events.iter().zip(&r.labs) {
            w.write_record([r.id.clone(), f(e.t), f(*y), f(e.d)])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(BufWriter::new(create(&dir.join(OUTCOMES_FILE))?));
    w.write_record(OUTCOMES_HEADER)?;
    for r in &data.records {
        w.write_record([r.id.clone(), f(r.t_tilde), u8::from(r.delta).to_string()])?;
    }
    w.flush()?;

    write_standardization(&dir.join(STANDARDIZATION_FILE), &data.standardization)
}

pub fn write_standardization(path: &Path, columns: &[Standardization]) -> Result<()> {
    save_artifact(
        path,
        STANDARDIZATION_KIND,
        &StandardizationFile {
            columns: columns.to_vec(),
        },
    )
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| io_context(path, e))
}

struct Issues {
    list: Vec<String>,
}

impl Issues {
    fn at(&mut self, file: &str, line: usize, msg: impl std::fmt::Display) {
        self.list.push(format!("{file}:{line}: {msg}"));
    }
}

fn parse_num(field: &str, what: &str) -> std::result::Result<f64, String> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| format!("{what}: '{field}' is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{what}: non-finite value '{field}'"))
    }
}

fn read_csv(path: &Path, issues: &mut Issues) -> Result<(Vec<String>, Vec<(usize, csv::StringRecord)>)> {
    let file = File::open(path).map_err(|e| io_context(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(file);
    let name = path.display().to_string();
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        match rec {
            Ok(r) => {
                let line = r.position().map(|p| p.line() as usize).unwrap_or(0);
                if r.len() != header.len() {
                    issues.at(&name, line, format!("expected {} fields, found {}", header.len(), r.len()));
                } else {
                    rows.push((line, r));
                }
            }
            Err(e) => {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                issues.at(&name, line, e);
            }
        }
    }
    Ok((header, rows))
}

/// Reads and validates a dataset directory. Every problem found is
/// reported as `file:line: message`. Without a sidecar, non-binary
/// covariate columns are standardized with their sample mean and sd.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mut issues = Issues { list: Vec::new() };
    let p_path = dir.join(PATIENTS_FILE);
    let v_path = dir.join(VISITS_FILE);
    let o_path = dir.join(OUTCOMES_FILE);
    let (p_name, v_name, o_name) = (
        p_path.display().to_string(),
        v_path.display().to_string(),
        o_path.display().to_string(),
    );

    let (p_header, p_rows) = read_csv(&p_path, &mut issues)?;
    if p_header.first().map(String::as_str) != Some("id") {
        return Err(Error::Parse {
            file: p_name,
            line: 1,
            message: "first column must be 'id'".into(),
        });
    }
    let covariate_names: Vec<String> = p_header[1..].to_vec();
    let mut order: Vec<String> = Vec::new();
    let mut patients: HashMap<String, Vec<f64>> = HashMap::new();
    for (line, r) in &p_rows {
        let id = r[0].trim().to_string();
        if id.is_empty() {
            issues.at(&p_name, *line, "missing id");
            continue;
        }
        let mut x = Vec::with_capacity(covariate_names.len());
        for (k, name) in covariate_names.iter().enumerate() {
            match parse_num(&r[k + 1], name) {
                Ok(v) => x.push(v),
                Err(m) => issues.at(&p_name, *line, m),
            }
        }
        if patients.contains_key(&id) {
            issues.at(&p_name, *line, format!("duplicate id '{id}'"));
            continue;
        }
        if x.len() == covariate_names.len() {
            order.push(id.clone());
            patients.insert(id, x);
        }
    }

    let (v_header, v_rows) = read_csv(&v_path, &mut issues)?;
    if v_header != VISITS_HEADER {
        return Err(Error::Parse {
            file: v_name,
            line: 1,
            message: format!("header must be {}", VISITS_HEADER.join(",")),
        });
    }
    let mut visits: HashMap<String, (Vec<VisitEvent>, Vec<f64>)> = HashMap::new();
    for (line, r) in &v_rows {
        let id = r[0].trim().to_string();
        if !patients.contains_key(&id) {
            issues.at(&v_name, *line, format!("unknown patient id '{id}'"));
            continue;
        }
        let parsed = (
            parse_num(&r[1], "t_days"),
            parse_num(&r[2], "y_log_lab"),
            parse_num(&r[3], "d_log_dose"),
        );
        let (t, y, d) = match parsed {
            (Ok(t), Ok(y), Ok(d)) => (t, y, d),
            (a, b, c) => {
                for e in [a.err(), b.err(), c.err()].into_iter().flatten() {
                    issues.at(&v_name, *line, e);
                }
                continue;
            }
        };
        let entry = visits.entry(id.clone()).or_default();
        match entry.0.last() {
            None if t != 0.0 => {
                issues.at(&v_name, *line, format!("first visit of '{id}' must be at t_days = 0, found {t}"));
                continue;
            }
            Some(prev) if t <= prev.t => {
                issues.at(&v_name, *line, format!("visit times of '{id}' must increase ({} then {t})", prev.t));
                continue;
            }
            _ => {}
        }
        entry.0.push(VisitEvent { t, d });
        entry.1.push(y);
    }

    let (o_header, o_rows) = read_csv(&o_path, &mut issues)?;
    if o_header != OUTCOMES_HEADER {
        return Err(Error::Parse {
            file: o_name,
            line: 1,
            message: format!("header must be {}", OUTCOMES_HEADER.join(",")),
        });
    }
    let mut outcomes: HashMap<String, (f64, bool, usize)> = HashMap::new();
    for (line, r) in &o_rows {
        let id = r[0].trim().to_string();
        if !patients.contains_key(&id) {
            issues.at(&o_name, *line, format!("unknown patient id '{id}'"));
            continue;
        }
        let t = match parse_num(&r[1], "t_tilde_days") {
            Ok(t) if t > 0.0 => t,
            Ok(t) => {
                issues.at(&o_name, *line, format!("t_tilde_days must be positive, found {t}"));
                continue;
            }
            Err(m) => {
                issues.at(&o_name, *line, m);
                continue;
            }
        };
        let delta = match r[2].trim() {
            "1" => true,
            "0" => false,
            other => {
                issues.at(&o_name, *line, format!("delta must be 0 or 1, found '{other}'"));
                continue;
            }
        };
        if outcomes.insert(id.clone(), (t, delta, *line)).is_some() {
            issues.at(&o_name, *line, format!("duplicate outcome for '{id}'"));
        }
    }

    let mut records = Vec::with_capacity(order.len());
    for id in &order {
        let Some(&(t_tilde, delta, o_line)) = outcomes.get(id) else {
            issues.list.push(format!("{o_name}: no outcome for patient '{id}'"));
            continue;
        };
        let Some((events, labs)) = visits.remove(id) else {
            issues.list.push(format!("{v_name}: patient '{id}' has no visits (a t_days = 0 row is required)"));
            continue;
        };
        if let Some(last) = events.last() {
            if last.t >= t_tilde {
                issues.at(
                    &o_name,
                    o_line,
                    format!("'{id}' has a visit at {} on or after t_tilde_days {t_tilde}", last.t),
                );
                continue;
            }
        }
        records.push(PatientRecord {
            id: id.clone(),
            x: patients[id].clone(),
            events,
            labs,
            t_tilde,
            delta,
        });
    }
    if !issues.list.is_empty() {
        return Err(Error::Dataset(issues.list));
    }

    let side = dir.join(STANDARDIZATION_FILE);
    let standardization = if side.exists() {
        let f: StandardizationFile = load_artifact(&side, STANDARDIZATION_KIND)?;
        for s in &f.columns {
            if !covariate_names.contains(&s.name) {
                return Err(Error::Config(format!(
                    "{}: column '{}' is not in {PATIENTS_FILE}",
                    side.display(),
                    s.name
                )));
            }
        }
        f.columns
    } else {
        standardize(&covariate_names, &mut records)
    };
    Ok(Dataset {
        covariate_names,
        records,
        standardization,
    })
}

/// Standardizes every column that is not purely 0/1 in place.
pub fn standardize(names: &[String], records: &mut [PatientRecord]) -> Vec<Standardization> {
    let n = records.len();
    let mut out = Vec::new();
    for (c, name) in names.iter().enumerate() {
        let binary = records.iter().all(|r| r.x[c] == 0.0 || r.x[c] == 1.0);
        if binary || n == 0 {
            continue;
        }
        let mean = records.iter().map(|r| r.x[c]).sum::<f64>() / n as f64;
        let var = if n > 1 {
            records.iter().map(|r| (r.x[c] - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        for r in records.iter_mut() {
            r.x[c] = (r.x[c] - mean) / sd;
        }
        out.push(Standardization {
            name: name.clone(),
            mean,
            sd,
        });
    }
    out
}

/// Column names of the parameter trace.
pub fn trace_header(post: &PosteriorDraws) -> Vec<String> {
    let mut h = vec!["draw".to_string(), "nu1".into(), "nu2".into(), "mu".into()];
    if let Some(d) = post.draws.first() {
        h.extend((0..d.theta.beta_d.len()).map(|i| format!("beta_d{i}")));
        h.push("sigma_d2".into());
        h.extend((0..d.phi.long.beta_l.len()).map(|i| format!("beta_l{i}")));
    }
    h.push("sigma_l2".into());
    for i in 0..3 {
        for j in i..3 {
            h.push(format!("sigma_b{i}{j}"));
        }
    }
    h.extend(["beta_s1", "beta_s2", "beta_s3", "beta_s4", "h0", "omega", "eta_tox", "xi", "beta_alpha0", "beta_alpha1"].map(String::from));
    h
}

/// One row per retained draw.
pub fn write_trace(path: &Path, post: &PosteriorDraws) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(create(path)?));
    w.write_record(trace_header(post))?;
    for (k, d) in post.draws.iter().enumerate() {
        let mut row = vec![k.to_string()];
        let mut v = vec![d.theta.nu1, d.theta.nu2, d.theta.mu];
        v.extend(&d.theta.beta_d);
        v.push(d.theta.sigma_d2);
        v.extend(&d.phi.long.beta_l);
        v.push(d.phi.long.sigma_l2);
        for i in 0..3 {
            for j in i..3 {
                v.push(d.phi.long.sigma_b[i][j]);
            }
        }
        v.extend(d.phi.surv.beta_s);
        v.extend([d.phi.surv.h0, d.phi.surv.omega, d.phi.surv.eta_tox, d.phi.shared.xi]);
        v.extend(d.phi.shared.beta_alpha);
        row.extend(v.into_iter().map(format_f64));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `iteration,mean_reward` curve of an optimization run.
pub fn write_reward_curve(path: &Path, result: &OptResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(create(path)?));
    w.write_record(["iteration", "mean_reward"])?;
    for (m, it) in result.iterations.iter().enumerate() {
        w.write_record([m.to_string(), format_f64(it.mean_reward)])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-rollout results of `evaluate-policy`.
pub fn write_evaluation(path: &Path, outcomes: &[crate::policy::EvalOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(create(path)?));
    w.write_record(["rep", "median_days", "reward", "visits", "capped"])?;
    for o in outcomes {
        w.write_record([
            o.rep.to_string(),
            format_f64(o.median_time),
            format_f64(o.reward),
            o.n_visits.to_string(),
            u8::from(o.capped).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
