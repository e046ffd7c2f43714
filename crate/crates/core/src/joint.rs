//! Joint likelihood of decisions, labs and survival for one patient, and
//! WAIC over a matrix of per-patient log-likelihoods.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::longitudinal::{long_loglik, LongitudinalParams, RandomEffects};
use crate::mtpp::{decision_loglik, validate_path, PolicyParams, SharedVisitParams, VisitEvent};
use crate::quadrature::Integrator;
use crate::special::log_sum_exp;
use crate::survival::{survival_loglik, HazardContext, SurvivalParams};

/// Whether the hazard sees the latent lab process or the last observed lab.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    #[default]
    Joint,
    /// Separate longitudinal and survival submodels: the hazard uses the
    /// carried-forward observed lab.
    Sls,
}

impl std::str::FromStr for ModelVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "joint" => Ok(ModelVariant::Joint),
            "sls" => Ok(ModelVariant::Sls),
            other => Err(Error::Config(format!("unknown model variant '{other}' (joint|sls)"))),
        }
    }
}

/// Parameters held fixed while a decision policy is optimized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationParams {
    pub long: LongitudinalParams,
    pub surv: SurvivalParams,
    pub shared: SharedVisitParams,
}

impl ObservationParams {
    pub fn validate(&self) -> Result<()> {
        self.long.validate()?;
        self.surv.validate()?;
        self.shared.validate()
    }
}

/// One patient's observed history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    pub x: Vec<f64>,
    pub events: Vec<VisitEvent>,
    /// Lab at each visit, aligned with `events`.
    pub labs: Vec<f64>,
    /// Observed time: death or censoring (days).
    pub t_tilde: f64,
    /// True if death was observed.
    pub delta: bool,
}

impl PatientRecord {
    pub fn validate(&self) -> Result<()> {
        validate_path(&self.events, &self.labs, self.t_tilde)
            .map_err(|e| Error::InvalidEvents(format!("patient {}: {e}", self.id)))?;
        if !(self.t_tilde > 0.0) || !self.t_tilde.is_finite() {
            return Err(Error::InvalidEvents(format!(
                "patient {}: observed time must be positive, got {}",
                self.id, self.t_tilde
            )));
        }
        let finite = self.x.iter().chain(&self.labs).all(|v| v.is_finite())
            && self.events.iter().all(|e| e.t.is_finite() && e.d.is_finite());
        if !finite {
            return Err(Error::InvalidEvents(format!("patient {}: non-finite value", self.id)));
        }
        Ok(())
    }

    pub fn hazard_context<'a>(
        &'a self,
        phi: &'a ObservationParams,
        b: RandomEffects,
        variant: ModelVariant,
        integrator: Integrator,
    ) -> HazardContext<'a> {
        HazardContext {
            events: &self.events,
            labs: &self.labs,
            x: &self.x,
            b,
            long: &phi.long,
            shared: &phi.shared,
            variant,
            integrator,
        }
    }
}

/// The three submodel log-likelihoods of one patient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointTerms {
    pub decision: f64,
    pub longitudinal: f64,
    pub survival: f64,
}

impl JointTerms {
    /// decision + longitudinal + survival, always summed in that order.
    pub fn total(&self) -> f64 {
        self.decision + self.longitudinal + self.survival
    }
}

pub fn joint_terms(
    record: &PatientRecord,
    theta: &PolicyParams,
    phi: &ObservationParams,
    b: &RandomEffects,
    variant: ModelVariant,
    integrator: Integrator,
) -> Result<JointTerms> {
    let decision = decision_loglik(&record.events, &record.labs, &record.x, record.t_tilde, theta, &phi.shared)?;
    let longitudinal = long_loglik(&record.events, &record.labs, &record.x, &phi.long, b)?;
    let ctx = record.hazard_context(phi, *b, variant, integrator);
    let survival = survival_loglik(record.t_tilde, record.delta, &ctx, &phi.surv)?;
    Ok(JointTerms {
        decision,
        longitudinal,
        survival,
    })
}

/// Full joint log-likelihood of one patient, survival integrals by adaptive
/// Simpson.
pub fn joint_loglik(
    record: &PatientRecord,
    theta: &PolicyParams,
    phi: &ObservationParams,
    b: &RandomEffects,
    variant: ModelVariant,
) -> Result<f64> {
    Ok(joint_terms(record, theta, phi, b, variant, Integrator::default())?.total())
}

/// WAIC from a K×N matrix of pointwise log-likelihoods (draws × patients):
/// `−2·Σₙ [log meanₖ exp(ll) − varₖ(ll)]`, variance with denominator K−1.
pub fn waic(pointwise: &[Vec<f64>]) -> Result<f64> {
    let k = pointwise.len();
    if k < 2 {
        return Err(Error::Domain(format!("WAIC needs at least 2 draws, got {k}")));
    }
    let n = pointwise[0].len();
    for row in pointwise {
        check_dim("pointwise log-likelihood row", n, row.len())?;
    }
    let mut total = 0.0;
    let mut column = vec![0.0; k];
    for i in 0..n {
        for (c, row) in column.iter_mut().zip(pointwise) {
            *c = row[i];
        }
        let lppd = log_sum_exp(&column) - (k as f64).ln();
        let mean = column.iter().sum::<f64>() / k as f64;
        let var = column.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1) as f64;
        total += lppd - var;
    }
    Ok(-2.0 * total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn waic_identical_draws_has_no_penalty() {
        let m = vec![vec![-1.0, -2.5], vec![-1.0, -2.5], vec![-1.0, -2.5]];
        assert!((waic(&m).unwrap() - 7.0).abs() < 1e-12);
    }

    #[test]
    fn waic_two_by_one() {
        let m = vec![vec![0.0], vec![-1.0]];
        let lppd = ((1.0 + (-1f64).exp()) / 2.0).ln();
        assert!((waic(&m).unwrap() + 2.0 * (lppd - 0.5)).abs() < 1e-14);
        assert!(waic(&m[..1]).is_err());
    }

    #[test]
    fn variant_parses() {
        assert_eq!("SLS".parse::<ModelVariant>().unwrap(), ModelVariant::Sls);
        assert!("both".parse::<ModelVariant>().is_err());
    }
}
