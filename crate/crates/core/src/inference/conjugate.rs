//! Conjugate draws: multivariate normal in canonical form, inverse gamma,
//! and inverse Wishart via the Bartlett decomposition.

use nalgebra::{Cholesky, DMatrix, DVector, Matrix3, SymmetricEigen};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma};

use crate::error::{Error, Result};
use crate::rng::std_normal;

/// Eigenvalue floor for scatter matrices in the inverse-Wishart draw.
pub const SCATTER_EIGEN_FLOOR: f64 = 1e-12;

/// Normal distribution with precision `Λ` and potential `h`, so the mean is
/// `Λ⁻¹h`. Factorization works on the diagonally equilibrated precision,
/// because regression designs with t and t² columns span many orders of
/// magnitude.
pub struct CanonicalGaussian {
    scale: DVector<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
    mean: DVector<f64>,
}

impl CanonicalGaussian {
    pub fn new(precision: &DMatrix<f64>, h: &DVector<f64>) -> Result<Self> {
        let n = precision.nrows();
        let mut scale = DVector::zeros(n);
        for i in 0..n {
            let d = precision[(i, i)];
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Numerical(format!(
                    "posterior precision has non-positive diagonal entry {d} at {i}"
                )));
            }
            scale[i] = 1.0 / d.sqrt();
        }
        let eq = DMatrix::from_fn(n, n, |i, j| precision[(i, j)] * scale[i] * scale[j]);
        let chol = Cholesky::new(eq).ok_or_else(|| {
            Error::Numerical("posterior precision is not positive definite".into())
        })?;
        let hs = h.component_mul(&scale);
        let mean = chol.solve(&hs).component_mul(&scale);
        Ok(CanonicalGaussian { scale, chol, mean })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Covariance `Λ⁻¹`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let inv = self.chol.inverse();
        let n = inv.nrows();
        DMatrix::from_fn(n, n, |i, j| inv[(i, j)] * self.scale[i] * self.scale[j])
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let n = self.mean.len();
        let z = DVector::from_fn(n, |_, _| std_normal(rng));
        let dev = self
            .chol
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .expect("Cholesky factor has a positive diagonal");
        &self.mean + dev.component_mul(&self.scale)
    }
}

/// Draw from InverseGamma(shape, scale).
pub fn sample_inverse_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> Result<f64> {
    let g = Gamma::new(shape, 1.0)
        .map_err(|e| Error::Numerical(format!("inverse-gamma shape {shape}: {e}")))?;
    Ok(scale / g.sample(rng))
}

/// Draw Σ ~ InverseWishart(df, S) for a 3×3 scatter matrix `S`, whose
/// eigenvalues are floored at [`SCATTER_EIGEN_FLOOR`].
pub fn sample_inverse_wishart<R: Rng + ?Sized>(df: f64, scatter: &Matrix3<f64>, rng: &mut R) -> Result<Matrix3<f64>> {
    let p = 3;
    if !(df > (p - 1) as f64) {
        return Err(Error::Numerical(format!("inverse-Wishart needs df > {}, got {df}", p - 1)));
    }
    let eig = SymmetricEigen::new(*scatter);
    let root = eig.eigenvalues.map(|l| l.max(SCATTER_EIGEN_FLOOR).sqrt());
    // Σ = V·diag(√λ)·A⁻ᵀ·A⁻¹·diag(√λ)·Vᵀ with A the Bartlett factor of a
    // standard Wishart.
    let mut a = Matrix3::zeros();
    for i in 0..p {
        let chi = ChiSquared::new(df - i as f64)
            .map_err(|e| Error::Numerical(format!("chi-squared: {e}")))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = std_normal(rng);
        }
    }
    let a_inv = a
        .solve_lower_triangular(&Matrix3::identity())
        .ok_or_else(|| Error::Numerical("singular Bartlett factor".into()))?;
    let m = eig.eigenvectors * Matrix3::from_diagonal(&root) * a_inv.transpose();
    let sigma = m * m.transpose();
    Ok(0.5 * (sigma + sigma.transpose()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn canonical_mean_solves_system() {
        let p = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let h = DVector::from_row_slice(&[1.0, 2.0]);
        let g = CanonicalGaussian::new(&p, &h).unwrap();
        let back = &p * g.mean();
        assert!((back - h).norm() < 1e-12);
        let cov = g.covariance();
        assert!(((&p * cov) - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn rejects_indefinite_precision() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(CanonicalGaussian::new(&p, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn inverse_wishart_mean() {
        let mut rng = stream(1, &[]);
        let s = Matrix3::new(2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 0.5);
        let df = 20.0;
        let n = 20_000;
        let mut acc = Matrix3::zeros();
        for _ in 0..n {
            acc += sample_inverse_wishart(df, &s, &mut rng).unwrap();
        }
        let mean = acc / n as f64;
        let expect = s / (df - 4.0);
        assert!((mean - expect).norm() / expect.norm() < 0.03, "{mean} vs {expect}");
    }
}
