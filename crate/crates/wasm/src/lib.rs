//! Browser bindings for the demo page. Every function works on the reference
//! simulation truths with the visit-policy parameters overridden, so the page
//! can show how ν₁, ν₂, μ and σ_d² change visits, doses and survival.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use dtr::inference::Draw;
use dtr::joint::ModelVariant;
use dtr::mtpp::{alpha_magnitude, intensity_at, PolicyParams};
use dtr::policy::{evaluate_policy, EvalPolicy, PatientProfile};
use dtr::quadrature::Integrator;
use dtr::rng::{open01, stream};
use dtr::sim::{simulate_trajectory, RewardSpec, RolloutStreams, Truths};
use dtr::survival::{cumulative_hazard, HazardContext};

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn policy(nu1: f64, nu2: f64, mu: f64, sigma_d2: f64) -> Result<PolicyParams, JsError> {
    let mut theta = Truths::reference().theta;
    theta.nu1 = nu1;
    theta.nu2 = nu2;
    theta.mu = mu;
    theta.sigma_d2 = sigma_d2;
    theta.validate().map_err(js_err)?;
    Ok(theta)
}

/// Visit intensity λ(t) after a visit with lab `y`, on `points` evenly
/// spaced elapsed times in (0, horizon].
#[wasm_bindgen(js_name = intensityCurve)]
pub fn intensity_curve(nu1: f64, nu2: f64, mu: f64, y: f64, horizon: f64, points: usize) -> Result<Vec<f64>, JsError> {
    let theta = policy(nu1, nu2, mu, 0.09)?;
    if !(horizon > 0.0) || points == 0 {
        return Err(JsError::new("horizon and points must be positive"));
    }
    let alpha = alpha_magnitude(y, &Truths::reference().phi.shared);
    (1..=points)
        .map(|i| intensity_at(horizon * i as f64 / points as f64, alpha, &theta).map_err(js_err))
        .collect()
}

#[derive(Serialize)]
struct SimulatedPatient {
    visit_times: Vec<f64>,
    doses: Vec<f64>,
    labs: Vec<f64>,
    survival_time: Option<f64>,
    median_time: Option<f64>,
    reward: Option<f64>,
    /// (t, S(t)) along the simulated path.
    survival_curve: Vec<(f64, f64)>,
}

/// One simulated patient under the given policy. `x` are the standardized
/// donor age, DGF indicator and BMI. Returns JSON.
#[wasm_bindgen(js_name = simulatePatient)]
#[allow(clippy::too_many_arguments)]
pub fn simulate_patient(
    nu1: f64,
    nu2: f64,
    mu: f64,
    sigma_d2: f64,
    x: Vec<f64>,
    y0: f64,
    seed: u64,
) -> Result<String, JsError> {
    let theta = policy(nu1, nu2, mu, sigma_d2)?;
    let phi = Truths::reference().phi;
    let mut streams = RolloutStreams::new(seed, &[]);
    let traj = simulate_trajectory(&theta, &phi, &x, y0, &mut streams, RewardSpec::default()).map_err(js_err)?;

    let events: Vec<_> = traj.events.iter().chain(&traj.continuation).copied().collect();
    let labs: Vec<f64> = traj.labs.iter().chain(&traj.continuation_labs).copied().collect();
    let ctx = HazardContext {
        events: &events,
        labs: &labs,
        x: &x,
        b: traj.b,
        long: &phi.long,
        shared: &phi.shared,
        variant: ModelVariant::Joint,
        integrator: Integrator::default(),
    };
    let end = traj.survival_time.unwrap_or(0.0).max(traj.median_time.unwrap_or(0.0)).max(365.0);
    let mut curve = Vec::with_capacity(201);
    let mut h = 0.0;
    let mut prev = 0.0;
    for i in 0..=200 {
        let t = end * i as f64 / 200.0;
        h += cumulative_hazard(prev, t, &ctx, &phi.surv).map_err(js_err)?;
        prev = t;
        curve.push((t, (-h).exp()));
    }
    let n = traj.events.len();
    let out = SimulatedPatient {
        visit_times: traj.events.iter().map(|e| e.t).collect(),
        doses: traj.events.iter().map(|e| e.d).collect(),
        labs: labs[..n].to_vec(),
        survival_time: traj.survival_time,
        median_time: traj.median_time,
        reward: traj.reward,
        survival_curve: curve,
    };
    serde_json::to_string(&out).map_err(js_err)
}

#[derive(Serialize)]
struct ScheduleRow {
    schedule: String,
    mean_median_days: f64,
    mean_visits: f64,
}

/// Mean median survival over `reps` rollouts for monthly, quarterly and
/// semiannual visits and for the intensity policy. All four share random
/// numbers. Returns JSON.
#[wasm_bindgen(js_name = compareSchedules)]
#[allow(clippy::too_many_arguments)]
pub fn compare_schedules(
    nu1: f64,
    nu2: f64,
    mu: f64,
    sigma_d2: f64,
    x: Vec<f64>,
    y0: f64,
    reps: usize,
    seed: u64,
) -> Result<String, JsError> {
    let theta = policy(nu1, nu2, mu, sigma_d2)?;
    let truths = Truths::reference();
    // a handful of perturbed effect sizes stands in for posterior draws
    let mut rng = stream(seed, &[1]);
    let draws: Vec<Draw> = (0..8)
        .map(|_| {
            let mut phi = truths.phi.clone();
            phi.surv.h0 += 0.2 * (open01(&mut rng) - 0.5);
            Draw { theta: theta.clone(), phi }
        })
        .collect();
    let patient = PatientProfile { x, y0 };
    let policies = [
        ("every 30 days".to_string(), EvalPolicy::Fixed { interval: 30.0, dosage: theta.clone() }),
        ("every 91 days".to_string(), EvalPolicy::Fixed { interval: 91.0, dosage: theta.clone() }),
        ("every 182 days".to_string(), EvalPolicy::Fixed { interval: 182.0, dosage: theta.clone() }),
        ("intensity policy".to_string(), EvalPolicy::Intensity(theta.clone())),
    ];
    let mut rows = Vec::new();
    for (name, p) in policies {
        let out = evaluate_policy(&p, &draws, &patient, reps.max(1), RewardSpec::default(), seed).map_err(js_err)?;
        let n = out.len() as f64;
        rows.push(ScheduleRow {
            schedule: name,
            mean_median_days: out.iter().map(|o| o.median_time).sum::<f64>() / n,
            mean_visits: out.iter().map(|o| o.n_visits as f64).sum::<f64>() / n,
        });
    }
    serde_json::to_string(&rows).map_err(js_err)
}
