//! Retained posterior draws and their summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::joint::{waic, ModelVariant, ObservationParams};
use crate::mtpp::PolicyParams;
use crate::sim::Standardization;

use super::chain::McmcConfig;
use super::hyper::Hyperparameters;

/// One retained draw of (θ, φ); Σ_b lives in `phi.long`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub theta: PolicyParams,
    pub phi: ObservationParams,
}

/// Post-burn-in Metropolis acceptance rates per block. The dosage block
/// and σ_l² are exact Gibbs steps and always accept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct AcceptanceReport {
    pub longitudinal: f64,
    pub random_effects: f64,
    pub survival: f64,
    pub visit: f64,
    /// Final random-walk scale factors.
    pub survival_scale: f64,
    pub visit_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub variant: ModelVariant,
    pub covariate_names: Vec<String>,
    pub standardization: Vec<Standardization>,
    pub patient_ids: Vec<String>,
    pub config: McmcConfig,
    pub hyper: Hyperparameters,
    pub draws: Vec<Draw>,
    /// K×N per-patient joint log-likelihood at each retained draw.
    pub pointwise_loglik: Vec<Vec<f64>>,
    pub acceptance: AcceptanceReport,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn waic(&self) -> Result<f64> {
        waic(&self.pointwise_loglik)
    }

    /// Posterior mean of θ, averaging σ_d² on its natural scale.
    pub fn mean_theta(&self) -> Result<PolicyParams> {
        let first = self
            .draws
            .first()
            .ok_or_else(|| Error::Config("posterior has no draws".into()))?;
        let k = self.draws.len() as f64;
        let mut acc = first.theta.clone();
        acc.nu1 = 0.0;
        acc.nu2 = 0.0;
        acc.mu = 0.0;
        acc.sigma_d2 = 0.0;
        acc.beta_d.iter_mut().for_each(|v| *v = 0.0);
        for d in &self.draws {
            acc.nu1 += d.theta.nu1 / k;
            acc.nu2 += d.theta.nu2 / k;
            acc.mu += d.theta.mu / k;
            acc.sigma_d2 += d.theta.sigma_d2 / k;
            for (a, b) in acc.beta_d.iter_mut().zip(&d.theta.beta_d) {
                *a += b / k;
            }
        }
        Ok(acc)
    }

    /// Values of one scalar across draws.
    pub fn scalar<F: Fn(&Draw) -> f64>(&self, f: F) -> Vec<f64> {
        self.draws.iter().map(f).collect()
    }
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}
