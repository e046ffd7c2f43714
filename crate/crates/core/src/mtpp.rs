//! Marked temporal point process for clinical decisions.
//!
//! Visit times follow a conditional intensity that resets at every visit:
//! a constant baseline `exp(μ)` plus a Gamma-density bump whose height `α`
//! is driven by the lab value measured at the opening visit. Each visit
//! carries a mark, the log dose, drawn from a Gaussian linear model in the
//! current lab and the baseline covariates.
//!
//! The policy parameters are optimized on an unconstrained vector
//! `(ν₁, ν₂, μ, β_d…, log σ_d²)`; see [`PolicyParams::to_unconstrained`].

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::roots::{bracket_and_bisect, Root};
use crate::special::{digamma, ln_gamma, normal_logpdf, reg_lower_gamma_with_ln_gamma};

/// Absolute tolerance (days) of the inverse-transform root solve.
pub const VISIT_ROOT_TOL: f64 = 1e-6;
/// Initial bracket width (days) of the inverse-transform root solve.
pub const VISIT_ROOT_BRACKET: f64 = 1.0;
/// Beyond this elapsed time a visit is reported as never happening.
pub const VISIT_SEARCH_LIMIT: f64 = 1e12;

pub const IDX_NU1: usize = 0;
pub const IDX_NU2: usize = 1;
pub const IDX_MU: usize = 2;
pub const IDX_BETA_D: usize = 3;

/// Decision-policy parameters θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    /// Log peak time: the Gamma bump peaks `exp(nu1)` days after a visit.
    pub nu1: f64,
    /// Log shape offset: κ = exp(nu2) + 1.
    pub nu2: f64,
    /// Log baseline visit rate (per day).
    pub mu: f64,
    /// Dosage regression on (1, lab, covariates…).
    pub beta_d: Vec<f64>,
    /// Dosage error variance.
    pub sigma_d2: f64,
}

impl PolicyParams {
    pub fn kappa(&self) -> f64 {
        self.nu2.exp() + 1.0
    }

    /// Gamma rate γ = exp(ν₂ − ν₁).
    pub fn rate(&self) -> f64 {
        (self.nu2 - self.nu1).exp()
    }

    pub fn peak_time(&self) -> f64 {
        self.nu1.exp()
    }

    pub fn n_covariates(&self) -> usize {
        self.beta_d.len().saturating_sub(2)
    }

    /// Length of the unconstrained parameter vector.
    pub fn dim(&self) -> usize {
        IDX_BETA_D + self.beta_d.len() + 1
    }

    pub fn idx_log_sigma_d2(&self) -> usize {
        IDX_BETA_D + self.beta_d.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_d2 > 0.0) || !self.sigma_d2.is_finite() {
            return Err(Error::Domain(format!("sigma_d2 must be positive, got {}", self.sigma_d2)));
        }
        if self.beta_d.len() < 2 {
            return Err(Error::Dimension {
                what: "beta_d (intercept + lab + covariates)",
                expected: 2,
                got: self.beta_d.len(),
            });
        }
        let finite = [self.nu1, self.nu2, self.mu].iter().chain(&self.beta_d).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Domain("policy parameters must be finite".into()));
        }
        Ok(())
    }

    /// `(ν₁, ν₂, μ, β_d…, log σ_d²)`.
    pub fn to_unconstrained(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend([self.nu1, self.nu2, self.mu]);
        v.extend(&self.beta_d);
        v.push(self.sigma_d2.ln());
        v
    }

    pub fn from_unconstrained(v: &[f64]) -> Self {
        let n = v.len();
        PolicyParams {
            nu1: v[IDX_NU1],
            nu2: v[IDX_NU2],
            mu: v[IDX_MU],
            beta_d: v[IDX_BETA_D..n - 1].to_vec(),
            sigma_d2: v[n - 1].exp(),
        }
    }
}

/// Visit parameters shared with the survival model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedVisitParams {
    /// Ceiling of the peak magnitude.
    pub xi: f64,
    /// Logistic coefficients on (1, lab).
    pub beta_alpha: [f64; 2],
}

impl SharedVisitParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.xi > 0.0) || !self.xi.is_finite() {
            return Err(Error::Domain(format!("xi must be positive, got {}", self.xi)));
        }
        Ok(())
    }
}

/// One clinic visit: time since baseline (days) and assigned log dose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisitEvent {
    pub t: f64,
    pub d: f64,
}

/// Peak magnitude α = ξ / (1 + exp((1, y)·β_α)), evaluated without overflow.
pub fn alpha_magnitude(y: f64, shared: &SharedVisitParams) -> f64 {
    let eta = shared.beta_alpha[0] + shared.beta_alpha[1] * y;
    if eta > 0.0 {
        let e = (-eta).exp();
        shared.xi * e / (1.0 + e)
    } else {
        shared.xi / (1.0 + eta.exp())
    }
}

/// Intensity shape at fixed θ, with ln Γ(κ) cached.
#[derive(Debug, Clone)]
pub struct IntensityKernel {
    baseline: f64,
    kappa: f64,
    rate: f64,
    ln_gamma_kappa: f64,
    log_norm: f64,
}

impl IntensityKernel {
    pub fn new(policy: &PolicyParams) -> Self {
        let kappa = policy.kappa();
        let rate = policy.rate();
        let ln_gamma_kappa = ln_gamma(kappa);
        IntensityKernel {
            baseline: policy.mu.exp(),
            kappa,
            rate,
            ln_gamma_kappa,
            log_norm: kappa * rate.ln() - ln_gamma_kappa,
        }
    }

    pub fn baseline(&self) -> f64 {
        self.baseline
    }

    /// Gamma(κ, γ) density at `elapsed > 0`.
    #[inline]
    pub fn bump(&self, elapsed: f64) -> f64 {
        (self.log_norm + (self.kappa - 1.0) * elapsed.ln() - self.rate * elapsed).exp()
    }

    #[inline]
    pub fn rate_at(&self, elapsed: f64, alpha: f64) -> f64 {
        self.baseline + alpha * self.bump(elapsed)
    }

    /// ∫₀^delta λ = exp(μ)·delta + α·P(κ, γ·delta).
    #[inline]
    pub fn compensator(&self, delta: f64, alpha: f64) -> f64 {
        if delta <= 0.0 {
            return 0.0;
        }
        self.baseline * delta
            + alpha * reg_lower_gamma_with_ln_gamma(self.kappa, self.rate * delta, self.ln_gamma_kappa)
    }

    /// Elapsed time to the next visit by inverting the compensator at `u`.
    /// Returns `f64::INFINITY` if the visit would lie beyond
    /// [`VISIT_SEARCH_LIMIT`].
    pub fn sample_next(&self, alpha: f64, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::Domain(format!("uniform draw must lie in (0,1), got {u}")));
        }
        let target = -(-u).ln_1p();
        let root = bracket_and_bisect(
            |delta| self.compensator(delta, alpha),
            target,
            VISIT_ROOT_BRACKET,
            VISIT_SEARCH_LIMIT,
            VISIT_ROOT_TOL,
        );
        Ok(match root {
            Root::Found(delta) => delta,
            Root::Capped => f64::INFINITY,
        })
    }
}

/// λ(elapsed) = exp(μ) + α·Gamma(κ, γ) density at `elapsed`.
pub fn intensity_at(elapsed: f64, alpha: f64, policy: &PolicyParams) -> Result<f64> {
    if !(elapsed > 0.0) {
        return Err(Error::Domain(format!("elapsed time must be positive, got {elapsed}")));
    }
    Ok(IntensityKernel::new(policy).rate_at(elapsed, alpha))
}

/// Compensator of the intensity over `[0, delta]`.
pub fn intensity_integral(delta: f64, alpha: f64, policy: &PolicyParams) -> f64 {
    IntensityKernel::new(policy).compensator(delta, alpha)
}

/// Inverse-transform draw of the elapsed time to the next visit.
pub fn sample_next_visit(alpha: f64, policy: &PolicyParams, u: f64) -> Result<f64> {
    IntensityKernel::new(policy).sample_next(alpha, u)
}

/// (1, y, x)·β_d.
pub fn dosage_mean(y: f64, x: &[f64], beta_d: &[f64]) -> Result<f64> {
    check_dim("beta_d vs (1, lab, covariates)", 2 + x.len(), beta_d.len())?;
    Ok(dosage_mean_unchecked(y, x, beta_d))
}

#[inline]
fn dosage_mean_unchecked(y: f64, x: &[f64], beta_d: &[f64]) -> f64 {
    beta_d[0] + beta_d[1] * y + x.iter().zip(&beta_d[2..]).map(|(a, b)| a * b).sum::<f64>()
}

pub fn dosage_logpdf(d: f64, y: f64, x: &[f64], policy: &PolicyParams) -> Result<f64> {
    let mean = dosage_mean(y, x, &policy.beta_d)?;
    Ok(normal_logpdf(d, mean, policy.sigma_d2))
}

/// Checks the shared preconditions of the decision likelihood.
pub fn validate_path(events: &[VisitEvent], labs: &[f64], horizon: f64) -> Result<()> {
    let first = events
        .first()
        .ok_or_else(|| Error::InvalidEvents("at least the baseline visit is required".into()))?;
    if first.t != 0.0 {
        return Err(Error::InvalidEvents(format!("first visit must be at t=0, got {}", first.t)));
    }
    if let Some(w) = events.windows(2).find(|w| !(w[1].t > w[0].t)) {
        return Err(Error::InvalidEvents(format!(
            "visit times must be strictly increasing ({} then {})",
            w[0].t, w[1].t
        )));
    }
    check_dim("labs aligned with visits", events.len(), labs.len())?;
    let last = events[events.len() - 1].t;
    if !(horizon >= last) {
        return Err(Error::InvalidEvents(format!(
            "horizon {horizon} precedes the last visit at {last}"
        )));
    }
    Ok(())
}

/// Log-likelihood of visit times and doses on `[0, horizon]`.
pub fn decision_loglik(
    events: &[VisitEvent],
    labs: &[f64],
    x: &[f64],
    horizon: f64,
    policy: &PolicyParams,
    shared: &SharedVisitParams,
) -> Result<f64> {
    validate_path(events, labs, horizon)?;
    check_dim("beta_d vs (1, lab, covariates)", 2 + x.len(), policy.beta_d.len())?;
    let kernel = IntensityKernel::new(policy);
    let mut ll = 0.0;
    for (ev, &y) in events.iter().zip(labs) {
        ll += normal_logpdf(ev.d, dosage_mean_unchecked(y, x, &policy.beta_d), policy.sigma_d2);
    }
    Ok(ll + timing_loglik(&kernel, events, labs, horizon, shared))
}

/// Visit-timing part of [`decision_loglik`] (no dosage marks) on a path
/// already checked by [`validate_path`].
pub fn timing_loglik(
    kernel: &IntensityKernel,
    events: &[VisitEvent],
    labs: &[f64],
    horizon: f64,
    shared: &SharedVisitParams,
) -> f64 {
    let mut ll = 0.0;
    for (j, (ev, &y)) in events.iter().zip(labs).enumerate() {
        let alpha = alpha_magnitude(y, shared);
        match events.get(j + 1) {
            Some(next) => {
                let delta = next.t - ev.t;
                ll += kernel.rate_at(delta, alpha).ln() - kernel.compensator(delta, alpha);
            }
            None => ll -= kernel.compensator(horizon - ev.t, alpha),
        }
    }
    ll
}

/// Gradient of [`decision_loglik`] with respect to the unconstrained vector
/// `(ν₁, ν₂, μ, β_d…, log σ_d²)`.
pub fn decision_loglik_grad(
    events: &[VisitEvent],
    labs: &[f64],
    x: &[f64],
    horizon: f64,
    policy: &PolicyParams,
    shared: &SharedVisitParams,
) -> Result<Vec<f64>> {
    validate_path(events, labs, horizon)?;
    check_dim("beta_d vs (1, lab, covariates)", 2 + x.len(), policy.beta_d.len())?;
    let kernel = IntensityKernel::new(policy);
    let fd = KappaDerivative::new(kernel.kappa);
    let mut grad = vec![0.0; policy.dim()];
    let e_nu2 = policy.nu2.exp();
    let psi = digamma(kernel.kappa);
    let ln_rate = kernel.rate.ln();
    let sigma2 = policy.sigma_d2;
    let i_sigma = policy.idx_log_sigma_d2();

    for (j, (ev, &y)) in events.iter().zip(labs).enumerate() {
        // dosage mark
        let resid = ev.d - dosage_mean_unchecked(y, x, &policy.beta_d);
        let w = resid / sigma2;
        grad[IDX_BETA_D] += w;
        grad[IDX_BETA_D + 1] += w * y;
        for (g, xi) in grad[IDX_BETA_D + 2..i_sigma].iter_mut().zip(x) {
            *g += w * xi;
        }
        grad[i_sigma] += 0.5 * (resid * resid / sigma2 - 1.0);

        let alpha = alpha_magnitude(y, shared);
        let (delta, has_event) = match events.get(j + 1) {
            Some(next) => (next.t - ev.t, true),
            None => (horizon - ev.t, false),
        };
        if delta <= 0.0 {
            continue;
        }

        // −compensator = −exp(μ)Δ − α P(κ, γΔ)
        grad[IDX_MU] -= kernel.baseline * delta;
        if alpha != 0.0 {
            let z = kernel.rate * delta;
            // ∂P/∂z = z^{κ−1} e^{−z} / Γ(κ)
            let dp_dz = ((kernel.kappa - 1.0) * z.ln() - z - kernel.ln_gamma_kappa).exp();
            let dp_dkappa = fd.derivative(z);
            grad[IDX_NU1] -= alpha * dp_dz * (-z);
            grad[IDX_NU2] -= alpha * (dp_dkappa * e_nu2 + dp_dz * z);
        }

        if has_event {
            let bump = kernel.bump(delta);
            let lambda = kernel.baseline + alpha * bump;
            grad[IDX_MU] += kernel.baseline / lambda;
            if alpha != 0.0 {
                let scale = alpha * bump / lambda;
                let gd = kernel.rate * delta;
                // ∂ log g/∂ν₁ = −κ + γΔ ; ∂ log g/∂ν₂ = e^{ν₂}(ln γΔ − ψ(κ)) + κ − γΔ
                grad[IDX_NU1] += scale * (gd - kernel.kappa);
                grad[IDX_NU2] += scale * (e_nu2 * (ln_rate + delta.ln() - psi) + kernel.kappa - gd);
            }
        }
    }
    Ok(grad)
}

/// Central finite difference of P(κ, z) in κ with step 1e-6·max(1, |κ|).
struct KappaDerivative {
    hi: f64,
    lo: f64,
    ln_gamma_hi: f64,
    ln_gamma_lo: f64,
}

impl KappaDerivative {
    fn new(kappa: f64) -> Self {
        let h = 1e-6 * kappa.abs().max(1.0);
        let hi = kappa + h;
        let lo = kappa - h;
        KappaDerivative {
            hi,
            lo,
            ln_gamma_hi: ln_gamma(hi),
            ln_gamma_lo: ln_gamma(lo),
        }
    }

    fn derivative(&self, z: f64) -> f64 {
        let up = reg_lower_gamma_with_ln_gamma(self.hi, z, self.ln_gamma_hi);
        let down = reg_lower_gamma_with_ln_gamma(self.lo, z, self.ln_gamma_lo);
        (up - down) / (self.hi - self.lo)
    }
}
