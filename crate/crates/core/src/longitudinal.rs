//! Linear mixed-effects model for the log lab value.
//!
//! The latent process is `y*(t) = z(t)·β_l + r(t)·b` with
//! `z = (1, d, x…, t, t²)` and `r = (1, d, t)`, where `d` is the dose set at
//! the most recent visit. Labs are observed with Gaussian noise σ_l².

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::mtpp::VisitEvent;
use crate::rng::std_normal;
use crate::special::normal_logpdf;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalParams {
    /// Fixed effects on (1, d, x…, t, t²).
    pub beta_l: Vec<f64>,
    pub sigma_l2: f64,
    /// Random-effects covariance for (intercept, dose, time), row-major.
    pub sigma_b: [[f64; 3]; 3],
}

impl LongitudinalParams {
    pub fn n_covariates(&self) -> usize {
        self.beta_l.len().saturating_sub(4)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_l2 > 0.0) || !self.sigma_l2.is_finite() {
            return Err(Error::Domain(format!("sigma_l2 must be positive, got {}", self.sigma_l2)));
        }
        if self.beta_l.len() < 4 {
            return Err(Error::Dimension {
                what: "beta_l (1, d, x…, t, t²)",
                expected: 4,
                got: self.beta_l.len(),
            });
        }
        for i in 0..3 {
            for j in 0..i {
                if (self.sigma_b[i][j] - self.sigma_b[j][i]).abs()
                    > 1e-12 * (1.0 + self.sigma_b[i][j].abs())
                {
                    return Err(Error::Domain("Sigma_b must be symmetric".into()));
                }
            }
        }
        let eig = SymmetricEigen::new(self.sigma_b_matrix());
        if eig.eigenvalues.iter().any(|&l| l < -1e-12) {
            return Err(Error::Domain("Sigma_b must be positive semidefinite".into()));
        }
        Ok(())
    }

    pub fn sigma_b_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.sigma_b[i][j])
    }

    /// Latent mean on a stretch with constant dose `d_last`, as
    /// `c0 + c1·t + c2·t²`.
    pub fn latent_coefficients(&self, d_last: f64, x: &[f64], b: &RandomEffects) -> (f64, f64, f64) {
        let p = x.len();
        let bl = &self.beta_l;
        let cov: f64 = x.iter().zip(&bl[2..2 + p]).map(|(a, c)| a * c).sum();
        let c0 = bl[0] + bl[1] * d_last + cov + b.b[0] + b.b[1] * d_last;
        let c1 = bl[2 + p] + b.b[2];
        let c2 = bl[3 + p];
        (c0, c1, c2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RandomEffects {
    pub b: [f64; 3],
}

impl RandomEffects {
    pub const ZERO: RandomEffects = RandomEffects { b: [0.0; 3] };
}

/// `z = (1, d_last, x…, t, t²)` and `r = (1, d_last, t)`.
pub fn design_vectors(t: f64, d_last: f64, x: &[f64]) -> (Vec<f64>, [f64; 3]) {
    let mut z = Vec::with_capacity(4 + x.len());
    z.push(1.0);
    z.push(d_last);
    z.extend_from_slice(x);
    z.push(t);
    z.push(t * t);
    (z, [1.0, d_last, t])
}

/// y*(t) = z·β_l + r·b.
pub fn latent_mean(t: f64, d_last: f64, x: &[f64], params: &LongitudinalParams, b: &RandomEffects) -> Result<f64> {
    check_dim("beta_l vs (1, d, covariates, t, t²)", 4 + x.len(), params.beta_l.len())?;
    let (c0, c1, c2) = params.latent_coefficients(d_last, x, b);
    Ok(c0 + c1 * t + c2 * t * t)
}

/// Log-likelihood of the labs after baseline: lab `j ≥ 1` is Gaussian around
/// the latent mean at `t_j` under the dose set at visit `j − 1`. The baseline
/// lab is conditioned on, not modeled.
pub fn long_loglik(
    events: &[VisitEvent],
    labs: &[f64],
    x: &[f64],
    params: &LongitudinalParams,
    b: &RandomEffects,
) -> Result<f64> {
    check_dim("labs aligned with visits", events.len(), labs.len())?;
    check_dim("beta_l vs (1, d, covariates, t, t²)", 4 + x.len(), params.beta_l.len())?;
    let mut ll = 0.0;
    for j in 1..events.len() {
        let (c0, c1, c2) = params.latent_coefficients(events[j - 1].d, x, b);
        let t = events[j].t;
        ll += normal_logpdf(labs[j], c0 + c1 * t + c2 * t * t, params.sigma_l2);
    }
    Ok(ll)
}

/// One noisy lab draw at `t`.
pub fn sample_measurement<R: Rng + ?Sized>(
    t: f64,
    d_last: f64,
    x: &[f64],
    params: &LongitudinalParams,
    b: &RandomEffects,
    rng: &mut R,
) -> Result<f64> {
    let mean = latent_mean(t, d_last, x, params, b)?;
    Ok(mean + params.sigma_l2.sqrt() * std_normal(rng))
}

/// Square root `L` with `L·Lᵀ = Σ`, clamping negative eigenvalues at zero so
/// near-singular covariances still factor.
pub fn clamped_sqrt(sigma: &Matrix3<f64>) -> Matrix3<f64> {
    let eig = SymmetricEigen::new(*sigma);
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    eig.eigenvectors * Matrix3::from_diagonal(&root)
}

/// b ~ Normal(0, Σ_b).
pub fn sample_random_effects<R: Rng + ?Sized>(params: &LongitudinalParams, rng: &mut R) -> RandomEffects {
    let l = clamped_sqrt(&params.sigma_b_matrix());
    let z = Vector3::new(std_normal(rng), std_normal(rng), std_normal(rng));
    let v = l * z;
    RandomEffects { b: [v[0], v[1], v[2]] }
}
