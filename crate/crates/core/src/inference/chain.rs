//! Metropolis-within-Gibbs sampler for the joint model.
//!
//! One sweep updates, in order:
//! 1. β_d, σ_d²: exact Gibbs (semi-conjugate normal / inverse-gamma).
//! 2. β_l: independence Metropolis whose proposal is the conjugate
//!    longitudinal full conditional, so only the survival factor enters the
//!    ratio; then σ_l² by exact Gibbs.
//! 3. b_i: the same scheme per patient.
//! 4. Σ_b: inverse-Wishart full conditional under the flat prior.
//! 5. Survival block (β_s1..4, h₀, log ω, log η_tox): joint random walk.
//! 6. Visit block (μ, ν₁, ν₂, log ξ, β_α): joint random walk.
//!
//! The random-walk blocks start at a Nelder–Mead mode with a proposal
//! covariance from the finite-difference Hessian there. During burn-in the
//! walk scale adapts toward a target acceptance rate and the covariance is
//! re-estimated once from the chain; both are frozen afterwards.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::joint::{ModelVariant, ObservationParams, PatientRecord};
use crate::longitudinal::{LongitudinalParams, RandomEffects};
use crate::mtpp::{decision_loglik, timing_loglik, IntensityKernel, PolicyParams, SharedVisitParams};
use crate::optim::{fd_hessian, nelder_mead};
use crate::par::map_indexed;
use crate::quadrature::Integrator;
use crate::longitudinal::long_loglik;
use crate::rng::{open01, stream, Purpose, StreamRng};
use crate::special::log_sum_exp;
use crate::survival::{survival_loglik, SurvivalParams};

use super::conjugate::{sample_inverse_gamma, sample_inverse_wishart, CanonicalGaussian};
use super::draws::{AcceptanceReport, Draw, PosteriorDraws};
use super::hyper::Hyperparameters;

/// Panel width (days) of the Gauss–Legendre rule used for survival
/// integrals inside the sampler.
pub const CHAIN_GL_PANEL: f64 = 200.0;

/// Three-point Gauss–Hermite rule for a standard normal (nodes, weights),
/// used per axis for the survival factor of the WAIC pointwise term.
const HERMITE3: [(f64, f64); 3] = [(-1.732_050_807_568_877_2, 1.0 / 6.0), (0.0, 2.0 / 3.0), (1.732_050_807_568_877_2, 1.0 / 6.0)];

/// Whether the data enter the target. `PriorOnly` samples the prior and
/// exists to validate the sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodMode {
    #[default]
    Full,
    PriorOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub iters: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
    pub variant: ModelVariant,
    pub integrator: Integrator,
    /// Random-walk proposals per sweep for the survival block.
    pub survival_moves: usize,
    /// Random-walk proposals per sweep for the visit block.
    pub visit_moves: usize,
    pub target_accept: f64,
    /// Objective evaluations allowed per Nelder–Mead start.
    pub init_evals: usize,
    pub likelihood: LikelihoodMode,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            iters: 6000,
            burnin: 1000,
            thin: 10,
            seed: 1,
            variant: ModelVariant::Joint,
            integrator: Integrator::GaussLegendre {
                max_panel: CHAIN_GL_PANEL,
            },
            survival_moves: 2,
            visit_moves: 2,
            target_accept: 0.25,
            init_evals: 3000,
            likelihood: LikelihoodMode::Full,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iters <= self.burnin {
            return Err(Error::Config(format!(
                "iters ({}) must exceed burnin ({})",
                self.iters, self.burnin
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.n_retained() == 0 {
            return Err(Error::Config("thin exceeds the post-burn-in iterations".into()));
        }
        if self.survival_moves == 0 || self.visit_moves == 0 {
            return Err(Error::Config("each random-walk block needs at least one move per sweep".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config("target_accept must lie in (0,1)".into()));
        }
        Ok(())
    }

    /// K = (iters − burnin) / thin.
    pub fn n_retained(&self) -> usize {
        (self.iters - self.burnin) / self.thin
    }
}

/// Explicit starting point; required when there is no data to initialize
/// from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainInit {
    pub theta: PolicyParams,
    pub phi: ObservationParams,
}

/// Data summaries fixed for the whole run.
struct Prepared<'a> {
    records: &'a [PatientRecord],
    p: usize,
    n_dose: usize,
    dose_xx: DMatrix<f64>,
    dose_xd: DVector<f64>,
    dose_dd: f64,
    n_long: usize,
    long_zz: DMatrix<f64>,
    long_zy: DVector<f64>,
    /// Per patient: Zᵢᵀ Rᵢ, Rᵢᵀ Rᵢ, Rᵢᵀ yᵢ.
    zr: Vec<DMatrix<f64>>,
    rr: Vec<Matrix3<f64>>,
    ry: Vec<Vector3<f64>>,
}

fn long_row(rec: &PatientRecord, j: usize) -> (Vec<f64>, [f64; 3], f64) {
    let d = rec.events[j - 1].d;
    let t = rec.events[j].t;
    let mut z = Vec::with_capacity(4 + rec.x.len());
    z.push(1.0);
    z.push(d);
    z.extend_from_slice(&rec.x);
    z.push(t);
    z.push(t * t);
    (z, [1.0, d, t], rec.labs[j])
}

impl<'a> Prepared<'a> {
    fn new(records: &'a [PatientRecord], p: usize, mode: LikelihoodMode) -> Self {
        let pd = 2 + p;
        let pl = 4 + p;
        let mut prep = Prepared {
            records,
            p,
            n_dose: 0,
            dose_xx: DMatrix::zeros(pd, pd),
            dose_xd: DVector::zeros(pd),
            dose_dd: 0.0,
            n_long: 0,
            long_zz: DMatrix::zeros(pl, pl),
            long_zy: DVector::zeros(pl),
            zr: Vec::new(),
            rr: Vec::new(),
            ry: Vec::new(),
        };
        for rec in records {
            let mut zr = DMatrix::zeros(pl, 3);
            let mut rr = Matrix3::zeros();
            let mut ry = Vector3::zeros();
            if mode == LikelihoodMode::Full {
                for (ev, &y) in rec.events.iter().zip(&rec.labs) {
                    let mut row = Vec::with_capacity(pd);
                    row.push(1.0);
                    row.push(y);
                    row.extend_from_slice(&rec.x);
                    for a in 0..pd {
                        prep.dose_xd[a] += row[a] * ev.d;
                        for b in 0..pd {
                            prep.dose_xx[(a, b)] += row[a] * row[b];
                        }
                    }
                    prep.dose_dd += ev.d * ev.d;
                    prep.n_dose += 1;
                }
                for j in 1..rec.events.len() {
                    let (z, r, y) = long_row(rec, j);
                    for a in 0..pl {
                        prep.long_zy[a] += z[a] * y;
                        for b in 0..pl {
                            prep.long_zz[(a, b)] += z[a] * z[b];
                        }
                        for b in 0..3 {
                            zr[(a, b)] += z[a] * r[b];
                        }
                    }
                    for a in 0..3 {
                        ry[a] += r[a] * y;
                        for b in 0..3 {
                            rr[(a, b)] += r[a] * r[b];
                        }
                    }
                    prep.n_long += 1;
                }
            }
            prep.zr.push(zr);
            prep.rr.push(rr);
            prep.ry.push(ry);
        }
        prep
    }
}

/// Adaptive Gaussian random walk on an unconstrained block.
#[derive(Debug, Clone)]
struct RandomWalk {
    chol: DMatrix<f64>,
    log_scale: f64,
    n_adapt: usize,
    window: Vec<Vec<f64>>,
    proposed: usize,
    accepted: usize,
}

impl RandomWalk {
    fn from_covariance(cov: &DMatrix<f64>) -> Self {
        let d = cov.nrows();
        let scaled = cov * (2.38 * 2.38 / d as f64);
        RandomWalk {
            chol: robust_cholesky(&scaled),
            log_scale: 0.0,
            n_adapt: 0,
            window: Vec::new(),
            proposed: 0,
            accepted: 0,
        }
    }

    fn propose<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        let n = x.len();
        let z = DVector::from_fn(n, |_, _| crate::rng::std_normal(rng));
        let step = &self.chol * z * self.log_scale.exp();
        x.iter().zip(step.iter()).map(|(a, s)| a + s).collect()
    }
}

/// Cholesky factor of a covariance, falling back to the eigen square root
/// with eigenvalues floored relative to the largest.
fn robust_cholesky(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(c) = nalgebra::Cholesky::new(cov.clone()) {
        return c.l();
    }
    let eig = SymmetricEigen::new(cov.clone());
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1e-300);
    let root = eig.eigenvalues.map(|l| l.max(1e-10 * top).sqrt());
    eig.eigenvectors * DMatrix::from_diagonal(&root)
}

/// Covariance from the Hessian of a negative log target at its mode;
/// diagonal fallback when the Hessian is not positive definite.
fn covariance_from_hessian(h: &[Vec<f64>]) -> DMatrix<f64> {
    let n = h.len();
    let m = DMatrix::from_fn(n, n, |i, j| h[i][j]);
    if let Some(c) = nalgebra::Cholesky::new(m.clone()) {
        return c.inverse();
    }
    let eig = SymmetricEigen::new(m);
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1e-12);
    let inv = eig.eigenvalues.map(|l| 1.0 / l.abs().max(1e-6 * top));
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

fn survival_block(sp: &SurvivalParams) -> Vec<f64> {
    let [b1, b2, b3, b4] = sp.beta_s;
    vec![b1, b2, b3, b4, sp.h0, sp.omega.ln(), sp.eta_tox.ln()]
}

fn survival_from_block(v: &[f64]) -> SurvivalParams {
    SurvivalParams {
        beta_s: [v[0], v[1], v[2], v[3]],
        h0: v[4],
        omega: v[5].exp(),
        eta_tox: v[6].exp(),
    }
}

fn visit_block(theta: &PolicyParams, shared: &SharedVisitParams) -> Vec<f64> {
    vec![
        theta.mu,
        theta.nu1,
        theta.nu2,
        shared.xi.ln(),
        shared.beta_alpha[0],
        shared.beta_alpha[1],
    ]
}

fn apply_visit_block(v: &[f64], theta: &mut PolicyParams, shared: &mut SharedVisitParams) {
    theta.mu = v[0];
    theta.nu1 = v[1];
    theta.nu2 = v[2];
    shared.xi = v[3].exp();
    shared.beta_alpha = [v[4], v[5]];
}

struct Sampler<'a> {
    data: Prepared<'a>,
    hyper: &'a Hyperparameters,
    config: &'a McmcConfig,
    theta: PolicyParams,
    phi: ObservationParams,
    b: Vec<RandomEffects>,
    surv: Vec<f64>,
    timing: f64,
    rng: StreamRng,
    surv_walk: RandomWalk,
    visit_walk: RandomWalk,
    long_tries: usize,
    long_accepts: usize,
    b_tries: usize,
    b_accepts: usize,
}

impl<'a> Sampler<'a> {
    fn full(&self) -> bool {
        self.config.likelihood == LikelihoodMode::Full
    }

    fn couples_long(&self) -> bool {
        self.full() && self.config.variant == ModelVariant::Joint
    }

    fn surv_one(&self, i: usize, phi: &ObservationParams, b: &RandomEffects) -> f64 {
        let rec = &self.data.records[i];
        let ctx = rec.hazard_context(phi, *b, self.config.variant, self.config.integrator);
        match survival_loglik(rec.t_tilde, rec.delta, &ctx, &phi.surv) {
            Ok(v) if v.is_finite() => v,
            _ => f64::NEG_INFINITY,
        }
    }

    fn surv_all(&self, phi: &ObservationParams) -> Vec<f64> {
        if !self.full() {
            return vec![0.0; self.data.records.len()];
        }
        map_indexed(self.data.records.len(), |i| self.surv_one(i, phi, &self.b[i]))
    }

    fn timing_all(&self, theta: &PolicyParams, shared: &SharedVisitParams) -> f64 {
        if !self.full() {
            return 0.0;
        }
        let kernel = IntensityKernel::new(theta);
        map_indexed(self.data.records.len(), |i| {
            let r = &self.data.records[i];
            timing_loglik(&kernel, &r.events, &r.labs, r.t_tilde, shared)
        })
        .into_iter()
        .sum()
    }

    fn log_target_survival(&self, v: &[f64], surv_total: f64) -> f64 {
        let sp = survival_from_block(v);
        surv_total + self.hyper.log_prior_survival(&sp.beta_s, sp.h0, sp.omega, sp.eta_tox) + v[5] + v[6]
    }

    fn log_target_visit(&self, v: &[f64], timing: f64, surv_total: f64) -> f64 {
        timing
            + surv_total
            + self.hyper.log_prior_visit(v[0], v[1], v[2], v[3].exp(), &[v[4], v[5]])
            + v[3]
    }

    // ---- block 1: dosage ----
    fn update_dosage(&mut self) -> Result<()> {
        let pd = 2 + self.data.p;
        let tau2 = self.hyper.sigma2_beta_d;
        let prior = DVector::from_vec(self.hyper.beta_d_mean(pd));
        let s2 = self.theta.sigma_d2;
        let precision = DMatrix::identity(pd, pd) / tau2 + &self.data.dose_xx / s2;
        let h = &prior / tau2 + &self.data.dose_xd / s2;
        let beta = CanonicalGaussian::new(&precision, &h)
            .map_err(|e| Error::Numerical(format!("dosage regression: {e}")))?
            .sample(&mut self.rng);
        let rss = if self.data.n_dose > 0 {
            (self.data.dose_dd - 2.0 * beta.dot(&self.data.dose_xd) + (beta.transpose() * &self.data.dose_xx * &beta)[0])
                .max(0.0)
        } else {
            0.0
        };
        self.theta.beta_d = beta.iter().copied().collect();
        self.theta.sigma_d2 = sample_inverse_gamma(
            self.hyper.pi_d1 + self.data.n_dose as f64 / 2.0,
            self.hyper.pi_d2 + rss / 2.0,
            &mut self.rng,
        )?;
        Ok(())
    }

    // ---- block 2: longitudinal fixed effects and noise ----
    fn update_longitudinal(&mut self) -> Result<()> {
        let pl = 4 + self.data.p;
        let tau2 = self.hyper.sigma2_beta_l;
        let prior = DVector::from_vec(self.hyper.beta_l_mean(pl));
        let s2 = self.phi.long.sigma_l2;
        let mut zy = self.data.long_zy.clone();
        for (zr, b) in self.data.zr.iter().zip(&self.b) {
            zy -= zr * Vector3::from(b.b);
        }
        let precision = DMatrix::identity(pl, pl) / tau2 + &self.data.long_zz / s2;
        let h = &prior / tau2 + zy / s2;
        let proposal = CanonicalGaussian::new(&precision, &h)
            .map_err(|e| Error::Numerical(format!("longitudinal regression: {e}")))?
            .sample(&mut self.rng);
        let mut phi_new = self.phi.clone();
        phi_new.long.beta_l = proposal.iter().copied().collect();
        let u = open01(&mut self.rng);
        if self.couples_long() {
            self.long_tries += 1;
            let surv_new = self.surv_all(&phi_new);
            let ratio: f64 = surv_new.iter().sum::<f64>() - self.surv.iter().sum::<f64>();
            if u.ln() < ratio {
                self.phi = phi_new;
                self.surv = surv_new;
                self.long_accepts += 1;
            }
        } else {
            self.long_tries += 1;
            self.long_accepts += 1;
            self.phi = phi_new;
        }

        let mut rss = 0.0;
        if self.full() {
            let beta = &self.phi.long.beta_l;
            for (rec, b) in self.data.records.iter().zip(&self.b) {
                for j in 1..rec.events.len() {
                    let (z, r, y) = long_row(rec, j);
                    let m: f64 = z.iter().zip(beta).map(|(a, c)| a * c).sum::<f64>()
                        + r.iter().zip(&b.b).map(|(a, c)| a * c).sum::<f64>();
                    rss += (y - m) * (y - m);
                }
            }
        }
        self.phi.long.sigma_l2 = sample_inverse_gamma(
            self.hyper.pi_l1 + self.data.n_long as f64 / 2.0,
            self.hyper.pi_l2 + rss / 2.0,
            &mut self.rng,
        )?;
        Ok(())
    }

    /// Prior precision of b (eigenvalues of Σ_b floored) and its log
    /// determinant.
    fn effects_prior(&self) -> (Matrix3<f64>, f64) {
        let eig = SymmetricEigen::new(self.phi.long.sigma_b_matrix());
        let inv_diag = eig.eigenvalues.map(|l| 1.0 / l.max(super::conjugate::SCATTER_EIGEN_FLOOR));
        let prec = eig.eigenvectors * Matrix3::from_diagonal(&inv_diag) * eig.eigenvectors.transpose();
        (prec, inv_diag.iter().map(|v| v.ln()).sum())
    }

    /// Precision and linear term of b given patient i's labs alone.
    fn effects_given_labs(&self, i: usize, prior_prec: &Matrix3<f64>) -> (Matrix3<f64>, Vector3<f64>) {
        let s2 = self.phi.long.sigma_l2;
        let beta = DVector::from_column_slice(&self.phi.long.beta_l);
        let zrb = self.data.zr[i].transpose() * &beta;
        let prec = prior_prec + self.data.rr[i] / s2;
        let h = (self.data.ry[i] - Vector3::new(zrb[0], zrb[1], zrb[2])) / s2;
        (prec, h)
    }

    // ---- block 3: random effects ----
    fn update_random_effects(&mut self, iter: usize) -> Result<()> {
        let (prior_prec, _) = self.effects_prior();
        let couples = self.couples_long();
        let seed = self.config.seed;
        let this = &*self;
        let results: Vec<Result<(RandomEffects, f64, bool)>> = map_indexed(self.data.records.len(), |i| {
            let mut rng = stream(seed, &[Purpose::Chain as u64, iter as u64, i as u64]);
            let (prec3, h3) = this.effects_given_labs(i, &prior_prec);
            let precision = DMatrix::from_fn(3, 3, |a, b| prec3[(a, b)]);
            let h = DVector::from_fn(3, |a, _| h3[a]);
            let draw = CanonicalGaussian::new(&precision, &h)?.sample(&mut rng);
            let proposal = RandomEffects {
                b: [draw[0], draw[1], draw[2]],
            };
            if couples {
                let new = this.surv_one(i, &this.phi, &proposal);
                let u = open01(&mut rng);
                if u.ln() < new - this.surv[i] {
                    return Ok((proposal, new, true));
                }
                Ok((this.b[i], this.surv[i], false))
            } else {
                Ok((proposal, this.surv[i], true))
            }
        });
        for (i, r) in results.into_iter().enumerate() {
            let (b, s, acc) = r?;
            self.b[i] = b;
            self.surv[i] = s;
            self.b_tries += 1;
            self.b_accepts += usize::from(acc);
        }
        Ok(())
    }

    // ---- block 4: random-effects covariance ----
    fn update_sigma_b(&mut self) -> Result<()> {
        if !self.full() {
            return Ok(());
        }
        let mut scatter = Matrix3::zeros();
        for b in &self.b {
            let v = Vector3::from(b.b);
            scatter += v * v.transpose();
        }
        let df = self.data.records.len() as f64 - 4.0;
        let s = sample_inverse_wishart(df, &scatter, &mut self.rng)?;
        self.phi.long.sigma_b = [
            [s[(0, 0)], s[(0, 1)], s[(0, 2)]],
            [s[(1, 0)], s[(1, 1)], s[(1, 2)]],
            [s[(2, 0)], s[(2, 1)], s[(2, 2)]],
        ];
        Ok(())
    }

    // ---- block 5: survival ----
    fn update_survival(&mut self, iter: usize) {
        for _ in 0..self.config.survival_moves {
            let cur = survival_block(&self.phi.surv);
            let surv_total: f64 = self.surv.iter().sum();
            let cur_lp = self.log_target_survival(&cur, surv_total);
            let prop = self.surv_walk.propose(&cur, &mut self.rng);
            let mut phi_new = self.phi.clone();
            phi_new.surv = survival_from_block(&prop);
            let surv_new = self.surv_all(&phi_new);
            let new_lp = self.log_target_survival(&prop, surv_new.iter().sum());
            let u = open01(&mut self.rng);
            let accept = new_lp.is_finite() && u.ln() < new_lp - cur_lp;
            if accept {
                self.phi = phi_new;
                self.surv = surv_new;
            }
            let state = if accept { prop } else { cur };
            record_move(&mut self.surv_walk, accept, iter, self.config, &state);
        }
    }

    // ---- block 6: visit process ----
    fn update_visit(&mut self, iter: usize) {
        for _ in 0..self.config.visit_moves {
            let cur = visit_block(&self.theta, &self.phi.shared);
            let cur_lp = self.log_target_visit(&cur, self.timing, self.surv.iter().sum());
            let prop = self.visit_walk.propose(&cur, &mut self.rng);
            let mut theta_new = self.theta.clone();
            let mut phi_new = self.phi.clone();
            apply_visit_block(&prop, &mut theta_new, &mut phi_new.shared);
            let timing_new = self.timing_all(&theta_new, &phi_new.shared);
            let surv_new = self.surv_all(&phi_new);
            let new_lp = self.log_target_visit(&prop, timing_new, surv_new.iter().sum());
            let u = open01(&mut self.rng);
            let accept = new_lp.is_finite() && u.ln() < new_lp - cur_lp;
            if accept {
                self.theta = theta_new;
                self.phi = phi_new;
                self.timing = timing_new;
                self.surv = surv_new;
            }
            let state = if accept { prop } else { cur };
            record_move(&mut self.visit_walk, accept, iter, self.config, &state);
        }
    }

    fn sweep(&mut self, iter: usize) -> Result<()> {
        self.update_dosage()?;
        self.update_longitudinal()?;
        self.update_random_effects(iter)?;
        self.update_sigma_b()?;
        self.update_survival(iter);
        self.update_visit(iter);
        if self.full() {
            let total: f64 = self.surv.iter().sum::<f64>() + self.timing;
            if !total.is_finite() {
                return Err(Error::Numerical(format!(
                    "log-likelihood became non-finite at iteration {iter}"
                )));
            }
        }
        Ok(())
    }

    /// Per-patient log-likelihood with b integrated out:
    /// `log p(labs | φ) + log E[p(survival | b)]`, the expectation over b
    /// given the labs. The lab term is exact; the survival term uses a
    /// 27-point Gauss–Hermite product rule over that Gaussian.
    fn pointwise(&self) -> Vec<f64> {
        if !self.full() {
            return vec![0.0; self.data.records.len()];
        }
        let (prior_prec, ld_prior) = self.effects_prior();
        map_indexed(self.data.records.len(), |i| {
            let r = &self.data.records[i];
            let dec = decision_loglik(&r.events, &r.labs, &r.x, r.t_tilde, &self.theta, &self.phi.shared)
                .unwrap_or(f64::NEG_INFINITY);
            let (prec, h) = self.effects_given_labs(i, &prior_prec);
            let Some(chol) = prec.cholesky() else {
                return f64::NEG_INFINITY;
            };
            let l = chol.l();
            let m = chol.solve(&h);
            let mean = RandomEffects { b: [m[0], m[1], m[2]] };
            let ld_post: f64 = (0..3).map(|a| 2.0 * l[(a, a)].ln()).sum();
            // log p(y) = log p(y | m) + log p(m) − log p(m | y)
            let lon = long_loglik(&r.events, &r.labs, &r.x, &self.phi.long, &mean).unwrap_or(f64::NEG_INFINITY)
                + 0.5 * (ld_prior - ld_post)
                - 0.5 * m.dot(&(prior_prec * m));
            let surv = if self.config.variant == ModelVariant::Joint {
                let lt = l.transpose();
                let mut terms = Vec::with_capacity(27);
                for &(z0, w0) in &HERMITE3 {
                    for &(z1, w1) in &HERMITE3 {
                        for &(z2, w2) in &HERMITE3 {
                            let dev = lt.solve_upper_triangular(&Vector3::new(z0, z1, z2)).unwrap_or(Vector3::zeros());
                            let b = RandomEffects { b: [m[0] + dev[0], m[1] + dev[1], m[2] + dev[2]] };
                            terms.push((w0 * w1 * w2).ln() + self.surv_one(i, &self.phi, &b));
                        }
                    }
                }
                log_sum_exp(&terms)
            } else {
                self.surv_one(i, &self.phi, &mean)
            };
            dec + lon + surv
        })
    }
}

fn record_move(walk: &mut RandomWalk, accepted: bool, iter: usize, config: &McmcConfig, state: &[f64]) {
    if iter < config.burnin {
        walk.n_adapt += 1;
        let gain = 1.0 / (walk.n_adapt as f64 + 10.0).powf(0.6);
        walk.log_scale += gain * (f64::from(u8::from(accepted)) - config.target_accept);
        let half = config.burnin / 2;
        if iter >= config.burnin / 4 && iter < half {
            walk.window.push(state.to_vec());
        }
        if iter + 1 == half && walk.window.len() >= 20 * state.len() {
            let cov = sample_covariance(&walk.window);
            if nalgebra::Cholesky::new(cov.clone()).is_some() {
                let d = state.len() as f64;
                walk.chol = robust_cholesky(&(cov * (2.38 * 2.38 / d)));
                walk.log_scale = 0.0;
            }
            walk.window.clear();
        }
    } else {
        walk.proposed += 1;
        walk.accepted += usize::from(accepted);
    }
}

fn sample_covariance(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    DMatrix::from_fn(d, d, |a, b| {
        rows.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / (n - 1.0)
    })
}

fn hessian_steps(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| 1e-3 * v.abs().max(1.0)).collect()
}

/// Data-driven starting point: least squares for the regressions, zero
/// random effects, Nelder–Mead modes for the random-walk blocks.
fn data_init(records: &[PatientRecord], p: usize, data: &Prepared) -> Result<(PolicyParams, ObservationParams)> {
    let pd = 2 + p;
    let pl = 4 + p;
    let ridge = |xx: &DMatrix<f64>, xy: &DVector<f64>| -> Result<DVector<f64>> {
        let prec = DMatrix::identity(xx.nrows(), xx.nrows()) * 1e-8 + xx;
        Ok(CanonicalGaussian::new(&prec, xy)?.mean().clone())
    };
    let beta_d = ridge(&data.dose_xx, &data.dose_xd)?;
    let rss_d = data.dose_dd - 2.0 * beta_d.dot(&data.dose_xd) + (beta_d.transpose() * &data.dose_xx * &beta_d)[0];
    let sigma_d2 = (rss_d / data.n_dose.max(1) as f64).max(1e-6);
    let beta_l = ridge(&data.long_zz, &data.long_zy)?;
    let mut rss_l = 0.0;
    for rec in records {
        for j in 1..rec.events.len() {
            let (z, _, y) = long_row(rec, j);
            let m: f64 = z.iter().zip(beta_l.iter()).map(|(a, c)| a * c).sum();
            rss_l += (y - m).powi(2);
        }
    }
    let sigma_l2 = (rss_l / data.n_long.max(1) as f64).max(1e-6);

    let n_visits: usize = records.iter().map(|r| r.events.len() - 1).sum();
    let exposure: f64 = records.iter().map(|r| r.t_tilde).sum();
    let mut gaps: Vec<f64> = records
        .iter()
        .flat_map(|r| r.events.windows(2).map(|w| w[1].t - w[0].t))
        .collect();
    gaps.sort_by(f64::total_cmp);
    let median_gap = gaps.get(gaps.len() / 2).copied().unwrap_or(30.0).max(1.0);
    let deaths = records.iter().filter(|r| r.delta).count().max(1);

    let theta = PolicyParams {
        nu1: median_gap.ln(),
        nu2: 1.0,
        mu: (0.5 * n_visits.max(1) as f64 / exposure).ln(),
        beta_d: beta_d.iter().copied().collect(),
        sigma_d2,
    };
    debug_assert_eq!(theta.beta_d.len(), pd);
    debug_assert_eq!(beta_l.len(), pl);
    let phi = ObservationParams {
        long: LongitudinalParams {
            beta_l: beta_l.iter().copied().collect(),
            sigma_l2,
            sigma_b: [[0.01, 0.0, 0.0], [0.0, 0.001, 0.0], [0.0, 0.0, 1e-8]],
        },
        surv: SurvivalParams {
            omega: 1.0,
            beta_s: [0.0; 4],
            h0: (exposure / deaths as f64).ln(),
            eta_tox: median_gap,
        },
        shared: SharedVisitParams {
            xi: 2.0,
            beta_alpha: [0.0, 0.0],
        },
    };
    Ok((theta, phi))
}

/// Run one chain. Without `init`, the starting point is derived from the
/// data; with `init` the given values are used as Nelder–Mead starts.
pub fn run_chain(
    records: &[PatientRecord],
    hyper: &Hyperparameters,
    config: &McmcConfig,
    init: Option<&ChainInit>,
) -> Result<PosteriorDraws> {
    config.validate()?;
    let p = match (init, records.first()) {
        (Some(i), _) => i.theta.n_covariates(),
        (None, Some(r)) => r.x.len(),
        (None, None) => return Err(Error::Config("no records and no initial values".into())),
    };
    hyper.validate(2 + p, 4 + p)?;
    if config.likelihood == LikelihoodMode::Full {
        if records.len() < 7 {
            return Err(Error::Config(format!(
                "the random-effects covariance update needs at least 7 patients, got {}",
                records.len()
            )));
        }
        let mut issues = Vec::new();
        for r in records {
            if let Err(e) = r.validate() {
                issues.push(e.to_string());
            } else if r.x.len() != p {
                issues.push(format!("patient {}: {} covariates, expected {p}", r.id, r.x.len()));
            }
        }
        if !issues.is_empty() {
            return Err(Error::Dataset(issues));
        }
    }
    let data = Prepared::new(records, p, config.likelihood);
    let (theta0, phi0) = match init {
        Some(i) => {
            i.theta.validate()?;
            i.phi.validate()?;
            (i.theta.clone(), i.phi.clone())
        }
        None => data_init(records, p, &data)?,
    };

    let identity = |d: usize| RandomWalk::from_covariance(&DMatrix::identity(d, d));
    let mut s = Sampler {
        data,
        hyper,
        config,
        theta: theta0,
        phi: phi0,
        b: vec![RandomEffects::ZERO; records.len()],
        surv: Vec::new(),
        timing: 0.0,
        rng: stream(config.seed, &[Purpose::Chain as u64]),
        surv_walk: identity(7),
        visit_walk: identity(6),
        long_tries: 0,
        long_accepts: 0,
        b_tries: 0,
        b_accepts: 0,
    };

    // visit block mode (timing likelihood and priors), then survival mode
    let scale_v = [0.5, 0.5, 0.5, 0.1, 1.0, 0.2];
    let v0 = visit_block(&s.theta, &s.phi.shared);
    let visit_nll = |s: &Sampler, v: &[f64]| {
        let mut th = s.theta.clone();
        let mut sh = s.phi.shared.clone();
        apply_visit_block(v, &mut th, &mut sh);
        -(s.timing_all(&th, &sh) + s.hyper.log_prior_visit(v[0], v[1], v[2], v[3].exp(), &[v[4], v[5]]) + v[3])
    };
    let (mut v_best, _) = nelder_mead(|v| visit_nll(&s, v), &v0, &scale_v, config.init_evals, 1e-10);
    let (v2, _) = nelder_mead(|v| visit_nll(&s, v), &v_best, &scale_v, config.init_evals, 1e-10);
    v_best = v2;
    {
        let (mut th, mut sh) = (s.theta.clone(), s.phi.shared.clone());
        apply_visit_block(&v_best, &mut th, &mut sh);
        s.theta = th;
        s.phi.shared = sh;
    }

    let scale_s = [0.5, 0.5, 0.5, 1.0, 1.0, 0.1, 0.5];
    let surv_nll = |s: &Sampler, v: &[f64]| {
        let mut phi = s.phi.clone();
        phi.surv = survival_from_block(v);
        let total: f64 = s.surv_all(&phi).iter().sum();
        -s.log_target_survival(v, total)
    };
    let s0 = survival_block(&s.phi.surv);
    let (s_best, _) = nelder_mead(|v| surv_nll(&s, v), &s0, &scale_s, config.init_evals, 1e-10);
    let (s_best, _) = nelder_mead(|v| surv_nll(&s, v), &s_best, &scale_s, config.init_evals, 1e-10);
    s.phi.surv = survival_from_block(&s_best);
    s.surv = s.surv_all(&s.phi);
    s.timing = s.timing_all(&s.theta, &s.phi.shared);

    let h_s = fd_hessian(|v| surv_nll(&s, v), &s_best, &hessian_steps(&s_best));
    s.surv_walk = RandomWalk::from_covariance(&covariance_from_hessian(&h_s));
    let visit_full_nll = |s: &Sampler, v: &[f64]| {
        let mut th = s.theta.clone();
        let mut phi = s.phi.clone();
        apply_visit_block(v, &mut th, &mut phi.shared);
        let surv_total: f64 = s.surv_all(&phi).iter().sum();
        -s.log_target_visit(v, s.timing_all(&th, &phi.shared), surv_total)
    };
    let h_v = fd_hessian(|v| visit_full_nll(&s, v), &v_best, &hessian_steps(&v_best));
    s.visit_walk = RandomWalk::from_covariance(&covariance_from_hessian(&h_v));
    log::info!("chain initialized; starting {} iterations", config.iters);

    let mut draws = Vec::with_capacity(config.n_retained());
    let mut pointwise = Vec::with_capacity(config.n_retained());
    for iter in 0..config.iters {
        s.sweep(iter)?;
        if iter >= config.burnin && (iter - config.burnin + 1) % config.thin == 0 && draws.len() < config.n_retained() {
            draws.push(Draw {
                theta: s.theta.clone(),
                phi: s.phi.clone(),
            });
            pointwise.push(s.pointwise());
        }
        if (iter + 1) % 500 == 0 {
            log::info!(
                "iteration {}/{}: survival acc {:.2}, visit acc {:.2}",
                iter + 1,
                config.iters,
                rate(s.surv_walk.accepted, s.surv_walk.proposed),
                rate(s.visit_walk.accepted, s.visit_walk.proposed)
            );
        }
    }

    let acceptance = AcceptanceReport {
        longitudinal: rate(s.long_accepts, s.long_tries),
        random_effects: rate(s.b_accepts, s.b_tries),
        survival: rate(s.surv_walk.accepted, s.surv_walk.proposed),
        visit: rate(s.visit_walk.accepted, s.visit_walk.proposed),
        survival_scale: s.surv_walk.log_scale.exp(),
        visit_scale: s.visit_walk.log_scale.exp(),
    };
    Ok(PosteriorDraws {
        variant: config.variant,
        covariate_names: Vec::new(),
        standardization: Vec::new(),
        patient_ids: records.iter().map(|r| r.id.clone()).collect(),
        config: config.clone(),
        hyper: hyper.clone(),
        draws,
        pointwise_loglik: pointwise,
        acceptance,
    })
}

fn rate(a: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        a as f64 / n as f64
    }
}
