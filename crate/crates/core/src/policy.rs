//! Score-function policy gradient over posterior-integrated rollouts.
//!
//! Each step simulates one trajectory per posterior draw of φ under the
//! current θ, and forms `(1/K) Σ (R_k − R̄) ∇θ log p(e_k | y_k, x, φ_k, θ)`
//! with the decision log-likelihood evaluated on the realized path up to the
//! median survival time. Ascent happens in the unconstrained coordinates
//! `(ν₁, ν₂, μ, β_d…, log σ_d²)`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::inference::Draw;
use crate::mtpp::{decision_loglik_grad, PolicyParams, IDX_BETA_D};
use crate::par::map_indexed;
use crate::rng::{stream, Purpose};
use crate::sim::{RewardSpec, RolloutOptions, RolloutStreams, Simulator, VisitRule};
use crate::survival::SURVIVAL_CAP;

/// Which coordinates of θ the ascent may move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamMask {
    #[default]
    Both,
    /// Moves ν₁, ν₂, μ; freezes β_d and σ_d².
    VisitsOnly,
    /// Moves β_d and σ_d²; freezes ν₁, ν₂, μ.
    DosageOnly,
}

impl ParamMask {
    pub fn is_active(&self, index: usize) -> bool {
        match self {
            ParamMask::Both => true,
            ParamMask::VisitsOnly => index < IDX_BETA_D,
            ParamMask::DosageOnly => index >= IDX_BETA_D,
        }
    }
}

impl std::str::FromStr for ParamMask {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "both" => Ok(ParamMask::Both),
            "visits" | "visits_only" => Ok(ParamMask::VisitsOnly),
            "dosage" | "dosage_only" => Ok(ParamMask::DosageOnly),
            other => Err(Error::Config(format!("unknown mask '{other}' (both|visits|dosage)"))),
        }
    }
}

/// How squared past gradients enter the step-size denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Each coordinate uses its own windowed sum.
    #[default]
    PerCoordinate,
    /// All coordinates share the windowed sum of squared gradient norms.
    ScalarNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub steps: usize,
    /// Rollouts per step. `None` uses one rollout per posterior draw;
    /// otherwise draws are resampled with replacement each step.
    pub rollouts_per_step: Option<usize>,
    /// Visits every this many days instead of the point process. Only the
    /// dosage parameters can then affect the reward, so the mask must be
    /// `DosageOnly`.
    pub fixed_interval: Option<f64>,
    pub step_scale: f64,
    pub window: usize,
    pub mask: ParamMask,
    pub step_rule: StepRule,
    pub reward: RewardSpec,
    pub master_seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            steps: 1000,
            rollouts_per_step: None,
            fixed_interval: None,
            step_scale: 0.01,
            window: 50,
            mask: ParamMask::Both,
            step_rule: StepRule::PerCoordinate,
            reward: RewardSpec::LogMedianSurvival,
            master_seed: 1,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self, n_draws: usize) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        if !(self.step_scale > 0.0 && self.step_scale.is_finite()) {
            return Err(Error::Config("step_scale must be positive".into()));
        }
        if n_draws == 0 {
            return Err(Error::Config("no posterior draws".into()));
        }
        if let Some(iv) = self.fixed_interval {
            if !(iv > 0.0 && iv.is_finite()) {
                return Err(Error::Config(format!("fixed_interval must be positive, got {iv}")));
            }
            if self.mask != ParamMask::DosageOnly {
                return Err(Error::Config("a fixed visit schedule needs the dosage-only mask".into()));
            }
        }
        if self.rollouts(n_draws) < 2 {
            return Err(Error::Config("baseline subtraction needs at least 2 rollouts per step".into()));
        }
        Ok(())
    }

    pub fn rollouts(&self, n_draws: usize) -> usize {
        self.rollouts_per_step.unwrap_or(n_draws)
    }
}

/// Baseline covariates (standardized) and the baseline lab of one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientProfile {
    pub x: Vec<f64>,
    pub y0: f64,
}

/// `(1/(K−1)) Σ (R_k − R̄) g_k` with R̄ the mean of all K rewards, or
/// `(1/K) Σ R_k g_k` without a baseline. The K−1 divisor makes the baseline
/// form equal to the leave-one-out baseline `(1/K) Σ (R_k − R̄₋ₖ) g_k`,
/// which is unbiased; dividing by K would shrink the estimate by (K−1)/K.
pub fn reinforce_estimate(rewards: &[f64], scores: &[Vec<f64>], baseline: bool) -> Result<Vec<f64>> {
    check_dim("scores per reward", rewards.len(), scores.len())?;
    let k = rewards.len();
    if k == 0 {
        return Err(Error::Domain("no rollouts".into()));
    }
    let dim = scores[0].len();
    if baseline && k < 2 {
        return Err(Error::Domain("baseline subtraction needs at least 2 rollouts".into()));
    }
    let (r_bar, denom) = if baseline {
        (rewards.iter().sum::<f64>() / k as f64, (k - 1) as f64)
    } else {
        (0.0, k as f64)
    };
    let mut grad = vec![0.0; dim];
    for (r, g) in rewards.iter().zip(scores) {
        check_dim("score length", dim, g.len())?;
        let w = r - r_bar;
        for (acc, gi) in grad.iter_mut().zip(g) {
            *acc += w * gi;
        }
    }
    for v in &mut grad {
        *v /= denom;
    }
    Ok(grad)
}

/// Windowed adaptive step. `history` holds past gradients, oldest first;
/// the last `window` of them enter the denominator. With no history the
/// current gradient is used instead.
pub fn adaptive_step(history: &[Vec<f64>], current: &[f64], scale: f64, window: usize, rule: StepRule) -> Vec<f64> {
    let dim = current.len();
    let sums: Vec<f64> = if history.is_empty() {
        current.iter().map(|g| g * g).collect()
    } else {
        let recent = &history[history.len().saturating_sub(window)..];
        (0..dim).map(|i| recent.iter().map(|g| g[i] * g[i]).sum()).collect()
    };
    match rule {
        StepRule::PerCoordinate => sums.iter().map(|s| scale / (s.sqrt() + 1e-8)).collect(),
        StepRule::ScalarNorm => {
            let total: f64 = sums.iter().sum();
            vec![scale / (total.sqrt() + 1e-8); dim]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub grad: Vec<f64>,
    pub mean_reward: f64,
    /// Rollouts whose median crossing hit the time cap; excluded.
    pub n_capped: usize,
    pub n_used: usize,
}

/// Draw indices for step `m`: the identity when K equals the draw count and
/// no resampling was asked for, otherwise uniform with replacement.
fn draw_indices(config: &SgdConfig, n_draws: usize, m: usize) -> Vec<usize> {
    use rand::Rng;
    match config.rollouts_per_step {
        None => (0..n_draws).collect(),
        Some(k) => {
            let mut rng = stream(config.master_seed, &[Purpose::Resample as u64, m as u64]);
            (0..k).map(|_| rng.random_range(0..n_draws)).collect()
        }
    }
}

/// One gradient estimate at θ, with rollouts keyed by `(m, k)` so that every
/// θ evaluated at the same step index shares its random numbers.
pub fn estimate_gradient(
    theta: &PolicyParams,
    draws: &[Draw],
    patient: &PatientProfile,
    config: &SgdConfig,
    m: usize,
) -> Result<GradientEstimate> {
    theta.validate()?;
    check_dim("patient covariates", theta.n_covariates(), patient.x.len())?;
    let idx = draw_indices(config, draws.len(), m);
    let opts = RolloutOptions {
        sample_death: false,
        reward: Some(config.reward),
        visits: match config.fixed_interval {
            Some(interval) => VisitRule::Fixed { interval },
            None => VisitRule::Intensity,
        },
    };
    let out: Vec<Result<Option<(f64, Vec<f64>)>>> = map_indexed(idx.len(), |k| {
        let phi = &draws[idx[k]].phi;
        let sim = Simulator::new(theta, phi)?;
        let mut streams = RolloutStreams::new(config.master_seed, &[m as u64, k as u64]);
        let traj = sim.rollout(&patient.x, patient.y0, &mut streams, &opts)?;
        let horizon = traj.median_time.unwrap_or(SURVIVAL_CAP);
        if traj.capped || horizon >= SURVIVAL_CAP {
            return Ok(None);
        }
        let (ev, labs) = traj.path_until(horizon);
        let g = decision_loglik_grad(&ev, &labs, &patient.x, horizon, theta, &phi.shared)?;
        Ok(Some((traj.reward.unwrap_or(f64::NAN), g)))
    });
    let mut rewards = Vec::with_capacity(out.len());
    let mut scores = Vec::with_capacity(out.len());
    let mut n_capped = 0;
    for r in out {
        match r? {
            Some((rew, g)) => {
                rewards.push(rew);
                scores.push(g);
            }
            None => n_capped += 1,
        }
    }
    let k = idx.len();
    if n_capped * 100 > k {
        log::warn!("{n_capped} of {k} rollouts reached the time cap and were excluded");
    }
    if rewards.is_empty() {
        return Err(Error::Numerical("every rollout reached the time cap".into()));
    }
    let mean_reward = rewards.iter().sum::<f64>() / rewards.len() as f64;
    let grad = if rewards.len() >= 2 {
        reinforce_estimate(&rewards, &scores, true)?
    } else {
        vec![0.0; theta.dim()]
    };
    Ok(GradientEstimate {
        grad,
        mean_reward,
        n_capped,
        n_used: rewards.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptIteration {
    pub theta: PolicyParams,
    pub mean_reward: f64,
    pub grad_norm: f64,
    pub n_capped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    /// Iteration 0 is θ₀; iteration m is θ after m ascent steps.
    pub iterations: Vec<OptIteration>,
    pub best_index: usize,
    pub best_theta: PolicyParams,
    pub best_reward: f64,
}

impl OptResult {
    pub fn initial_reward(&self) -> f64 {
        self.iterations[0].mean_reward
    }

    pub fn improvement(&self) -> f64 {
        self.best_reward - self.initial_reward()
    }
}

/// `steps` ascent steps from θ₀, each θ evaluated on its own step's
/// rollouts; the final θ is evaluated too, so `steps + 1` rewards are
/// recorded. Returns the θ with the highest mean reward.
pub fn optimize(theta0: &PolicyParams, draws: &[Draw], patient: &PatientProfile, config: &SgdConfig) -> Result<OptResult> {
    config.validate(draws.len())?;
    theta0.validate()?;
    let mut u = theta0.to_unconstrained();
    let mut history: Vec<Vec<f64>> = Vec::new();
    let mut iterations = Vec::with_capacity(config.steps + 1);
    let i_sigma = theta0.idx_log_sigma_d2();
    let mut theta = theta0.clone();
    for m in 0..=config.steps {
        let mut est = estimate_gradient(&theta, draws, patient, config, m)?;
        for (i, g) in est.grad.iter_mut().enumerate() {
            if !config.mask.is_active(i) {
                *g = 0.0;
            }
        }
        let grad_norm = est.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        iterations.push(OptIteration {
            theta: theta.clone(),
            mean_reward: est.mean_reward,
            grad_norm,
            n_capped: est.n_capped,
        });
        if m == config.steps {
            break;
        }
        let step = adaptive_step(&history, &est.grad, config.step_scale, config.window, config.step_rule);
        for (i, ((ui, s), g)) in u.iter_mut().zip(&step).zip(&est.grad).enumerate() {
            if config.mask.is_active(i) {
                *ui += s * g;
            }
        }
        history.push(est.grad);
        let sigma_d2 = theta.sigma_d2;
        theta = PolicyParams::from_unconstrained(&u);
        // a frozen variance keeps its exact value rather than exp(ln σ²)
        if !config.mask.is_active(i_sigma) {
            theta.sigma_d2 = sigma_d2;
        }
        if (m + 1) % 100 == 0 {
            log::info!("step {}/{}: mean reward {:.4}", m + 1, config.steps, est.mean_reward);
        }
    }
    let mut best_index = 0;
    for (i, it) in iterations.iter().enumerate() {
        if it.mean_reward > iterations[best_index].mean_reward {
            best_index = i;
        }
    }
    let best = &iterations[best_index];
    Ok(OptResult {
        best_theta: best.theta.clone(),
        best_reward: best.mean_reward,
        best_index,
        iterations,
    })
}

/// Policy under evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalPolicy {
    /// Visits from the fitted point process under θ.
    Intensity(PolicyParams),
    /// Visits every `interval` days, doses from the mark model of θ.
    Fixed { interval: f64, dosage: PolicyParams },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub rep: usize,
    pub median_time: f64,
    pub reward: f64,
    pub n_visits: usize,
    pub capped: bool,
}

/// `reps` rollouts, rollout r under draw r mod K. Keyed by `r` so different
/// policies evaluated with one seed share their random numbers.
pub fn evaluate_policy(
    policy: &EvalPolicy,
    draws: &[Draw],
    patient: &PatientProfile,
    reps: usize,
    reward: RewardSpec,
    seed: u64,
) -> Result<Vec<EvalOutcome>> {
    if draws.is_empty() {
        return Err(Error::Config("no posterior draws".into()));
    }
    let (theta, visits) = match policy {
        EvalPolicy::Intensity(t) => (t, VisitRule::Intensity),
        EvalPolicy::Fixed { interval, dosage } => (dosage, VisitRule::Fixed { interval: *interval }),
    };
    theta.validate()?;
    let opts = RolloutOptions {
        sample_death: false,
        reward: Some(reward),
        visits,
    };
    map_indexed(reps, |r| {
        let phi = &draws[r % draws.len()].phi;
        let sim = Simulator::new(theta, phi)?;
        let mut streams = RolloutStreams::new(seed, &[u64::MAX, r as u64]);
        let traj = sim.rollout(&patient.x, patient.y0, &mut streams, &opts)?;
        let median_time = traj.median_time.unwrap_or(SURVIVAL_CAP);
        let n_visits = traj
            .events
            .iter()
            .chain(&traj.continuation)
            .skip(1)
            .take_while(|e| e.t < median_time)
            .count();
        Ok(EvalOutcome {
            rep: r,
            median_time,
            reward: traj.reward.unwrap_or(f64::NAN),
            n_visits,
            capped: traj.capped,
        })
    })
    .into_iter()
    .collect()
}
