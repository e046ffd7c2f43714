//! Forward simulation of visits, doses, labs and survival.
//!
//! A rollout walks the decision path one inter-visit segment at a time. In
//! each segment it samples the next visit, checks whether death falls inside
//! the segment (a fresh uniform per segment, inverted through the cumulative
//! hazard), and tracks where the cumulative hazard from t = 0 crosses ln 2,
//! the median survival time behind the reward. When the median lies beyond
//! the sampled death, the decision path is extended past death until the
//! crossing is reached.

use nalgebra::{Matrix3, Vector3};
use rand_distr::{Distribution, Weibull};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::joint::{ModelVariant, ObservationParams, PatientRecord};
use crate::longitudinal::{clamped_sqrt, RandomEffects};
use crate::mtpp::{alpha_magnitude, IntensityKernel, PolicyParams, VisitEvent};
use crate::quadrature::Integrator;
use crate::rng::{open01, std_normal, stream, Purpose, StreamRng};
use crate::survival::{SegmentHazard, SegmentInputs, SURVIVAL_CAP};

/// How the rollout reward is built from the median survival time T̂.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardSpec {
    /// log T̂.
    #[default]
    LogMedianSurvival,
    /// log T̂ + eta0 · (follow-up visits before T̂).
    PenalizedVisits { eta0: f64 },
}

/// Reward from a median time and the number of follow-up visits before it.
pub fn compute_reward(median_time: f64, visits: usize, spec: &RewardSpec) -> f64 {
    match *spec {
        RewardSpec::LogMedianSurvival => median_time.ln(),
        RewardSpec::PenalizedVisits { eta0 } => median_time.ln() + eta0 * visits as f64,
    }
}

/// Where the next visit comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VisitRule {
    /// The fitted point process under the rollout's policy.
    Intensity,
    /// Deterministic visits every `interval` days.
    Fixed { interval: f64 },
}

/// Which outputs a rollout must produce; it stops once both are settled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutOptions {
    pub sample_death: bool,
    pub reward: Option<RewardSpec>,
    pub visits: VisitRule,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        RolloutOptions {
            sample_death: true,
            reward: Some(RewardSpec::LogMedianSurvival),
            visits: VisitRule::Intensity,
        }
    }
}

/// Independent random streams for each kind of draw in one rollout.
/// Rollouts built from the same key path share their draws across policies.
pub struct RolloutStreams {
    pub visit: StreamRng,
    pub survival: StreamRng,
    pub lab: StreamRng,
    pub dose: StreamRng,
    pub effects: StreamRng,
}

impl RolloutStreams {
    pub fn new(master: u64, path: &[u64]) -> Self {
        let sub = |p: Purpose| {
            let mut key = path.to_vec();
            key.push(p as u64);
            stream(master, &key)
        };
        RolloutStreams {
            visit: sub(Purpose::Visit),
            survival: sub(Purpose::Survival),
            lab: sub(Purpose::Lab),
            dose: sub(Purpose::Dose),
            effects: sub(Purpose::Effects),
        }
    }
}

/// One simulated patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Visits before death (or the whole simulated path when death was not
    /// sampled), starting with the baseline visit.
    pub events: Vec<VisitEvent>,
    pub labs: Vec<f64>,
    /// Visits simulated after death to reach the median crossing.
    pub continuation: Vec<VisitEvent>,
    pub continuation_labs: Vec<f64>,
    pub b: RandomEffects,
    /// Sampled survival time, if requested (the cap when not reached).
    pub survival_time: Option<f64>,
    /// Median survival time T̂ along this path (the cap when not reached).
    pub median_time: Option<f64>,
    pub reward: Option<f64>,
    /// True if death or the median crossing ran into the time cap.
    pub capped: bool,
}

impl Trajectory {
    /// Follow-up visits before death.
    pub fn n_followups(&self) -> usize {
        self.events.len().saturating_sub(1)
    }

    /// Visits and labs on `[0, horizon)`, for the decision log-likelihood.
    pub fn path_until(&self, horizon: f64) -> (Vec<VisitEvent>, Vec<f64>) {
        let mut ev = Vec::new();
        let mut labs = Vec::new();
        let all_ev = self.events.iter().chain(&self.continuation);
        let all_labs = self.labs.iter().chain(&self.continuation_labs);
        for (e, y) in all_ev.zip(all_labs) {
            if e.t > 0.0 && e.t >= horizon {
                break;
            }
            ev.push(*e);
            labs.push(*y);
        }
        (ev, labs)
    }
}

/// Per-(θ, φ) quantities reused across rollouts.
pub struct Simulator<'a> {
    theta: &'a PolicyParams,
    phi: &'a ObservationParams,
    kernel: IntensityKernel,
    sigma_b_root: Matrix3<f64>,
    sigma_d: f64,
    sigma_l: f64,
    pub integrator: Integrator,
}

impl<'a> Simulator<'a> {
    pub fn new(theta: &'a PolicyParams, phi: &'a ObservationParams) -> Result<Self> {
        theta.validate()?;
        phi.validate()?;
        check_dim(
            "beta_d vs beta_l covariates",
            phi.long.n_covariates(),
            theta.n_covariates(),
        )?;
        Ok(Simulator {
            theta,
            phi,
            kernel: IntensityKernel::new(theta),
            sigma_b_root: clamped_sqrt(&phi.long.sigma_b_matrix()),
            sigma_d: theta.sigma_d2.sqrt(),
            sigma_l: phi.long.sigma_l2.sqrt(),
            integrator: Integrator::default(),
        })
    }

    fn dose(&self, y: f64, x: &[f64], rng: &mut StreamRng) -> f64 {
        let bd = &self.theta.beta_d;
        let mean = bd[0] + bd[1] * y + x.iter().zip(&bd[2..]).map(|(a, c)| a * c).sum::<f64>();
        mean + self.sigma_d * std_normal(rng)
    }

    fn lab(&self, t: f64, d_last: f64, x: &[f64], b: &RandomEffects, rng: &mut StreamRng) -> f64 {
        let (c0, c1, c2) = self.phi.long.latent_coefficients(d_last, x, b);
        c0 + c1 * t + c2 * t * t + self.sigma_l * std_normal(rng)
    }

    fn effects(&self, rng: &mut StreamRng) -> RandomEffects {
        let z = Vector3::new(std_normal(rng), std_normal(rng), std_normal(rng));
        let v = self.sigma_b_root * z;
        RandomEffects { b: [v[0], v[1], v[2]] }
    }

    /// One rollout for a patient with covariates `x` and baseline lab `y0`.
    pub fn rollout(
        &self,
        x: &[f64],
        y0: f64,
        streams: &mut RolloutStreams,
        opts: &RolloutOptions,
    ) -> Result<Trajectory> {
        check_dim("covariates", self.theta.n_covariates(), x.len())?;
        if let VisitRule::Fixed { interval } = opts.visits {
            if !(interval > 0.0) {
                return Err(Error::Domain(format!("visit interval must be positive, got {interval}")));
            }
        }
        let b = self.effects(&mut streams.effects);
        let d0 = self.dose(y0, x, &mut streams.dose);
        let mut events = vec![VisitEvent { t: 0.0, d: d0 }];
        let mut labs = vec![y0];
        let mut death: Option<f64> = None;
        let mut median: Option<f64> = None;
        let mut capped = false;
        let mut n_alive = None;
        let mut cum_h = 0.0;
        let mut tox = 0.0;
        let ln2 = std::f64::consts::LN_2;
        let need_median = opts.reward.is_some();

        loop {
            let j = events.len() - 1;
            let (start, dose, y) = (events[j].t, events[j].d, labs[j]);
            let gap = match opts.visits {
                VisitRule::Intensity => {
                    let alpha = alpha_magnitude(y, &self.phi.shared);
                    self.kernel.sample_next(alpha, open01(&mut streams.visit))?
                }
                VisitRule::Fixed { interval } => interval,
            };
            let next = start + gap;
            let seg = SegmentHazard::new(
                SegmentInputs {
                    start,
                    end: next,
                    dose,
                    lab: y,
                    tox_start: tox,
                },
                x,
                &b,
                &self.phi.long,
                &self.phi.shared,
                &self.phi.surv,
                ModelVariant::Joint,
            );
            let hi = next.min(SURVIVAL_CAP);
            let piece = seg.integral(start, hi, &self.integrator);

            if opts.sample_death && death.is_none() {
                let target = -(-open01(&mut streams.survival)).ln_1p();
                if piece >= target {
                    death = Some(seg.crossing(start, hi, target, &self.integrator));
                    n_alive = Some(events.len());
                } else if hi >= SURVIVAL_CAP {
                    death = Some(SURVIVAL_CAP);
                    n_alive = Some(events.len());
                    capped = true;
                }
            }
            if need_median && median.is_none() {
                if cum_h + piece >= ln2 {
                    median = Some(seg.crossing(start, hi, ln2 - cum_h, &self.integrator));
                } else {
                    cum_h += piece;
                    if hi >= SURVIVAL_CAP {
                        median = Some(SURVIVAL_CAP);
                        capped = true;
                    }
                }
            }
            let death_done = !opts.sample_death || death.is_some();
            let median_done = !need_median || median.is_some();
            if (death_done && median_done) || hi >= SURVIVAL_CAP {
                break;
            }

            let y_next = self.lab(next, dose, x, &b, &mut streams.lab);
            let d_next = self.dose(y_next, x, &mut streams.dose);
            tox = seg.tox_at(next);
            events.push(VisitEvent { t: next, d: d_next });
            labs.push(y_next);
        }

        let split = n_alive.unwrap_or(events.len());
        let continuation = events.split_off(split);
        let continuation_labs = labs.split_off(split);
        let reward = match (opts.reward, median) {
            (Some(spec), Some(m)) => {
                let before = events
                    .iter()
                    .chain(&continuation)
                    .skip(1)
                    .take_while(|e| e.t < m)
                    .count();
                Some(compute_reward(m, before, &spec))
            }
            _ => None,
        };
        Ok(Trajectory {
            events,
            labs,
            continuation,
            continuation_labs,
            b,
            survival_time: death,
            median_time: median,
            reward,
            capped,
        })
    }
}

/// Algorithm-1 rollout with its reward under the fitted visit process.
pub fn simulate_trajectory(
    theta: &PolicyParams,
    phi: &ObservationParams,
    x: &[f64],
    y0: f64,
    streams: &mut RolloutStreams,
    reward: RewardSpec,
) -> Result<Trajectory> {
    let opts = RolloutOptions {
        reward: Some(reward),
        ..RolloutOptions::default()
    };
    Simulator::new(theta, phi)?.rollout(x, y0, streams, &opts)
}

/// Rollout with visits every `interval` days; doses still follow the mark
/// model of `theta_dosage`.
pub fn fixed_schedule_rollout(
    interval: f64,
    theta_dosage: &PolicyParams,
    phi: &ObservationParams,
    x: &[f64],
    y0: f64,
    streams: &mut RolloutStreams,
    reward: RewardSpec,
) -> Result<Trajectory> {
    let opts = RolloutOptions {
        sample_death: true,
        reward: Some(reward),
        visits: VisitRule::Fixed { interval },
    };
    Simulator::new(theta_dosage, phi)?.rollout(x, y0, streams, &opts)
}

/// Distribution of one baseline covariate in a simulated cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateSpec {
    /// Drawn Normal(mean, sd²), then standardized with the sample mean and
    /// standard deviation.
    Normal { name: String, mean: f64, sd: f64 },
    /// 0/1 indicator, left unstandardized.
    Bernoulli { name: String, p: f64 },
}

impl CovariateSpec {
    pub fn name(&self) -> &str {
        match self {
            CovariateSpec::Normal { name, .. } | CovariateSpec::Bernoulli { name, .. } => name,
        }
    }
}

/// Everything needed to generate a synthetic cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truths {
    pub theta: PolicyParams,
    pub phi: ObservationParams,
    /// Baseline covariates, in the order the coefficient vectors use.
    pub covariates: Vec<CovariateSpec>,
    pub y0_mean: f64,
    pub y0_sd: f64,
    /// Weibull censoring distribution.
    pub censor_shape: f64,
    pub censor_scale: f64,
}

impl Truths {
    /// The reference simulation study: donor age, delayed graft function and
    /// BMI as covariates; tacrolimus-style dosing; roughly 1,700-day median
    /// survival with about 10% censoring.
    pub fn reference() -> Self {
        use crate::longitudinal::LongitudinalParams;
        use crate::mtpp::SharedVisitParams;
        use crate::survival::SurvivalParams;
        Truths {
            theta: PolicyParams {
                nu1: 2.5,
                nu2: 1.5,
                mu: -4.8,
                beta_d: vec![1.0, 0.2, 0.15, 0.2, 0.15],
                sigma_d2: 0.09,
            },
            phi: ObservationParams {
                long: LongitudinalParams {
                    beta_l: vec![5.3, 0.1, 0.3, 0.4, 0.25, -1e-4, 3e-8],
                    sigma_l2: 0.01,
                    sigma_b: [[0.04, 0.0, 0.0], [0.0, 0.0049, 0.0], [0.0, 0.0, 1e-8]],
                },
                surv: SurvivalParams {
                    omega: 1.05,
                    beta_s: [1.0, 0.9, -0.75, -5.0],
                    h0: 5.0,
                    eta_tox: 50.0,
                },
                shared: SharedVisitParams {
                    xi: 2.0,
                    beta_alpha: [9.5, -1.5],
                },
            },
            covariates: vec![
                CovariateSpec::Normal {
                    name: "donor_age".into(),
                    mean: 52.5,
                    sd: 15.8,
                },
                CovariateSpec::Bernoulli {
                    name: "dgf".into(),
                    p: 0.4,
                },
                CovariateSpec::Normal {
                    name: "bmi".into(),
                    mean: 24.3,
                    sd: 4.5,
                },
            ],
            y0_mean: 5.0,
            y0_sd: 0.1,
            censor_shape: 3.0,
            censor_scale: 8000.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.theta.validate()?;
        self.phi.validate()?;
        check_dim("covariate specs vs beta_d", self.theta.n_covariates(), self.covariates.len())?;
        check_dim("covariate specs vs beta_l", self.phi.long.n_covariates(), self.covariates.len())?;
        if !(self.censor_shape > 0.0 && self.censor_scale > 0.0) {
            return Err(Error::Config("censoring shape and scale must be positive".into()));
        }
        if !(self.y0_sd >= 0.0) {
            return Err(Error::Config("y0_sd must be nonnegative".into()));
        }
        for c in &self.covariates {
            match c {
                CovariateSpec::Normal { sd, .. } if !(*sd > 0.0) => {
                    return Err(Error::Config(format!("covariate {} needs sd > 0", c.name())))
                }
                CovariateSpec::Bernoulli { p, .. } if !(0.0..=1.0).contains(p) => {
                    return Err(Error::Config(format!("covariate {} needs p in [0,1]", c.name())))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Sample statistics used to standardize one covariate column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub covariate_names: Vec<String>,
    pub records: Vec<PatientRecord>,
    /// Standardization applied to continuous covariates.
    pub standardization: Vec<Standardization>,
}

/// Synthetic cohort of `n` patients under `truths`: covariates, baseline
/// lab, an uncensored rollout to death, then Weibull censoring.
pub fn simulate_cohort(truths: &Truths, n: usize, seed: u64) -> Result<Cohort> {
    truths.validate()?;
    if n == 0 {
        return Err(Error::Config("cohort size must be at least 1".into()));
    }
    let p = truths.covariates.len();
    let mut raw = vec![vec![0.0; p]; n];
    for (i, row) in raw.iter_mut().enumerate() {
        let mut rng = stream(seed, &[i as u64, Purpose::Covariates as u64]);
        for (v, spec) in row.iter_mut().zip(&truths.covariates) {
            *v = match *spec {
                CovariateSpec::Normal { mean, sd, .. } => mean + sd * std_normal(&mut rng),
                CovariateSpec::Bernoulli { p, .. } => f64::from(open01(&mut rng) < p),
            };
        }
    }
    let mut standardization = Vec::new();
    for (c, spec) in truths.covariates.iter().enumerate() {
        if let CovariateSpec::Normal { name, .. } = spec {
            let mean = raw.iter().map(|r| r[c]).sum::<f64>() / n as f64;
            let var = if n > 1 {
                raw.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / (n - 1) as f64
            } else {
                0.0
            };
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            for r in raw.iter_mut() {
                r[c] = (r[c] - mean) / sd;
            }
            standardization.push(Standardization {
                name: name.clone(),
                mean,
                sd,
            });
        }
    }

    let sim = Simulator::new(&truths.theta, &truths.phi)?;
    let censor = Weibull::new(truths.censor_scale, truths.censor_shape)
        .map_err(|e| Error::Config(format!("censoring distribution: {e}")))?;
    let opts = RolloutOptions {
        sample_death: true,
        reward: None,
        visits: VisitRule::Intensity,
    };
    let mut records = Vec::with_capacity(n);
    for (i, x) in raw.into_iter().enumerate() {
        let mut base = stream(seed, &[i as u64, Purpose::Censoring as u64]);
        let y0 = truths.y0_mean + truths.y0_sd * std_normal(&mut base);
        let c: f64 = censor.sample(&mut base);
        let mut streams = RolloutStreams::new(seed, &[i as u64]);
        let traj = sim.rollout(&x, y0, &mut streams, &opts)?;
        let death = traj.survival_time.expect("death sampled");
        let t_tilde = death.min(c);
        let keep = traj.events.iter().take_while(|e| e.t < t_tilde).count();
        records.push(PatientRecord {
            id: format!("P{:04}", i + 1),
            x,
            events: traj.events[..keep].to_vec(),
            labs: traj.labs[..keep].to_vec(),
            t_tilde,
            delta: death <= c && death < SURVIVAL_CAP,
        });
    }
    Ok(Cohort {
        covariate_names: truths.covariates.iter().map(|c| c.name().to_string()).collect(),
        records,
        standardization,
    })
}
