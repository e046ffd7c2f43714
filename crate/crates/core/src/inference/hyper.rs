//! Prior hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{gamma_logpdf, normal_logpdf};

/// Prior block. Vector prior means left as `None` are zero; prior
/// covariances are isotropic (`variance · I`). Gamma priors use the
/// (shape, rate) parameterization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    pub beta_d0: Option<Vec<f64>>,
    pub sigma2_beta_d: f64,
    /// Inverse-gamma (shape, scale) for σ_d².
    pub pi_d1: f64,
    pub pi_d2: f64,
    pub beta_l0: Option<Vec<f64>>,
    pub sigma2_beta_l: f64,
    /// Inverse-gamma (shape, scale) for σ_l².
    pub pi_l1: f64,
    pub pi_l2: f64,
    /// Normal prior mean and variance of β_s1..β_s4 and h₀.
    pub beta_s0: f64,
    pub sigma2_s0: f64,
    /// Gamma (shape, rate) for η_tox.
    pub pi_s1: f64,
    pub pi_s2: f64,
    /// Gamma (shape, rate) for ω.
    pub pi_s3: f64,
    pub pi_s4: f64,
    /// Normal prior mean and variance of μ, ν₁, ν₂.
    pub beta_v0: f64,
    pub sigma2_v0: f64,
    pub beta_alpha0: [f64; 2],
    pub sigma2_beta_alpha: f64,
    /// Gamma (shape, rate) for ξ.
    pub pi_v1: f64,
    pub pi_v2: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            beta_d0: None,
            sigma2_beta_d: 1e4,
            pi_d1: 0.01,
            pi_d2: 0.01,
            beta_l0: None,
            sigma2_beta_l: 1e4,
            pi_l1: 0.01,
            pi_l2: 0.01,
            beta_s0: 0.0,
            sigma2_s0: 1e4,
            pi_s1: 0.01,
            pi_s2: 0.01,
            pi_s3: 0.01,
            pi_s4: 0.01,
            beta_v0: 0.0,
            sigma2_v0: 1e4,
            beta_alpha0: [0.0; 2],
            sigma2_beta_alpha: 1e4,
            pi_v1: 400.0,
            pi_v2: 200.0,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self, n_beta_d: usize, n_beta_l: usize) -> Result<()> {
        let positive = [
            ("sigma2_beta_d", self.sigma2_beta_d),
            ("pi_d1", self.pi_d1),
            ("pi_d2", self.pi_d2),
            ("sigma2_beta_l", self.sigma2_beta_l),
            ("pi_l1", self.pi_l1),
            ("pi_l2", self.pi_l2),
            ("sigma2_s0", self.sigma2_s0),
            ("pi_s1", self.pi_s1),
            ("pi_s2", self.pi_s2),
            ("pi_s3", self.pi_s3),
            ("pi_s4", self.pi_s4),
            ("sigma2_v0", self.sigma2_v0),
            ("sigma2_beta_alpha", self.sigma2_beta_alpha),
            ("pi_v1", self.pi_v1),
            ("pi_v2", self.pi_v2),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("hyperparameter {name} must be positive, got {v}")));
            }
        }
        if let Some(v) = &self.beta_d0 {
            if v.len() != n_beta_d {
                return Err(Error::Config(format!("beta_d0 has {} entries, expected {n_beta_d}", v.len())));
            }
        }
        if let Some(v) = &self.beta_l0 {
            if v.len() != n_beta_l {
                return Err(Error::Config(format!("beta_l0 has {} entries, expected {n_beta_l}", v.len())));
            }
        }
        Ok(())
    }

    pub fn beta_d_mean(&self, n: usize) -> Vec<f64> {
        self.beta_d0.clone().unwrap_or_else(|| vec![0.0; n])
    }

    pub fn beta_l_mean(&self, n: usize) -> Vec<f64> {
        self.beta_l0.clone().unwrap_or_else(|| vec![0.0; n])
    }

    /// Log prior of (β_s1..β_s4, h₀, ω, η_tox).
    pub fn log_prior_survival(&self, beta_s: &[f64; 4], h0: f64, omega: f64, eta: f64) -> f64 {
        beta_s
            .iter()
            .chain(std::iter::once(&h0))
            .map(|&b| normal_logpdf(b, self.beta_s0, self.sigma2_s0))
            .sum::<f64>()
            + gamma_logpdf(eta, self.pi_s1, self.pi_s2)
            + gamma_logpdf(omega, self.pi_s3, self.pi_s4)
    }

    /// Log prior of (μ, ν₁, ν₂, ξ, β_α).
    pub fn log_prior_visit(&self, mu: f64, nu1: f64, nu2: f64, xi: f64, beta_alpha: &[f64; 2]) -> f64 {
        [mu, nu1, nu2]
            .iter()
            .map(|&v| normal_logpdf(v, self.beta_v0, self.sigma2_v0))
            .sum::<f64>()
            + beta_alpha
                .iter()
                .zip(&self.beta_alpha0)
                .map(|(&b, &m)| normal_logpdf(b, m, self.sigma2_beta_alpha))
                .sum::<f64>()
            + gamma_logpdf(xi, self.pi_v1, self.pi_v2)
    }
}
