//! Weibull proportional-hazards survival model.
//!
//! The hazard is `exp(−LP(t))·ω·t^{ω−1}` with linear predictor
//! `LP = β₁·y*(t) + β₂·d(t) + β₃·Tox(t) + β₄·α(t) + h₀`. Dose, visit-peak
//! magnitude and (for the SLS variant) the observed lab are carried forward
//! from the most recent visit, so the hazard is smooth between visits and
//! may jump only at visit times. Integrals are therefore taken one
//! inter-visit segment at a time, after the substitution `u = t^ω` that
//! removes the `t^{ω−1}` factor.
//!
//! Tox is the exponentially weighted running mean of past doses,
//! `∫₀ᵗ d(τ)·(1/η)·e^{−(t−τ)/η} dτ`, so a constant dose `d` saturates at `d`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::joint::ModelVariant;
use crate::longitudinal::{LongitudinalParams, RandomEffects};
use crate::mtpp::{alpha_magnitude, SharedVisitParams, VisitEvent};
use crate::quadrature::Integrator;

/// Horizon (days) for every survival root solve and path extension.
pub const SURVIVAL_CAP: f64 = 30_000.0;
/// Absolute tolerance (days) of survival-time root solves.
pub const SURVIVAL_ROOT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalParams {
    /// Weibull shape.
    pub omega: f64,
    /// Effects of (y*, dose, Tox, α).
    pub beta_s: [f64; 4],
    pub h0: f64,
    /// Toxicity decay scale (days).
    pub eta_tox: f64,
}

impl SurvivalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0) || !self.omega.is_finite() {
            return Err(Error::Domain(format!("omega must be positive, got {}", self.omega)));
        }
        if !(self.eta_tox > 0.0) || !self.eta_tox.is_finite() {
            return Err(Error::Domain(format!("eta_tox must be positive, got {}", self.eta_tox)));
        }
        if !self.h0.is_finite() || self.beta_s.iter().any(|b| !b.is_finite()) {
            return Err(Error::Domain("survival coefficients must be finite".into()));
        }
        Ok(())
    }
}

/// Tox(t) in closed form for a dose path that is piecewise constant between
/// visits.
pub fn toxicity(t: f64, events: &[VisitEvent], eta_tox: f64) -> f64 {
    let mut tox = 0.0;
    for (j, ev) in events.iter().enumerate() {
        if ev.t >= t {
            break;
        }
        let a = ev.t;
        let b = events.get(j + 1).map_or(t, |n| n.t.min(t));
        tox += ev.d * ((-(t - b) / eta_tox).exp() - (-(t - a) / eta_tox).exp());
    }
    tox
}

/// Everything the hazard depends on besides the survival parameters.
#[derive(Debug, Clone, Copy)]
pub struct HazardContext<'a> {
    pub events: &'a [VisitEvent],
    /// Lab at each visit, aligned with `events`.
    pub labs: &'a [f64],
    pub x: &'a [f64],
    pub b: RandomEffects,
    pub long: &'a LongitudinalParams,
    pub shared: &'a SharedVisitParams,
    pub variant: ModelVariant,
    pub integrator: Integrator,
}

impl<'a> HazardContext<'a> {
    fn check(&self) -> Result<()> {
        if self.events.is_empty() || self.events[0].t != 0.0 {
            return Err(Error::InvalidEvents("hazard path must start with a visit at t=0".into()));
        }
        if self.labs.len() != self.events.len() {
            return Err(Error::Dimension {
                what: "labs aligned with visits",
                expected: self.events.len(),
                got: self.labs.len(),
            });
        }
        Ok(())
    }

    /// The hazard on each inter-visit segment; the last one is open-ended.
    pub fn segments<'s>(&'s self, sp: &'s SurvivalParams) -> impl Iterator<Item = SegmentHazard> + 's {
        let mut tox = 0.0;
        self.events.iter().enumerate().map(move |(j, ev)| {
            let end = self.events.get(j + 1).map_or(f64::INFINITY, |n| n.t);
            let seg = SegmentHazard::new(
                SegmentInputs {
                    start: ev.t,
                    end,
                    dose: ev.d,
                    lab: self.labs[j],
                    tox_start: tox,
                },
                self.x,
                &self.b,
                self.long,
                self.shared,
                sp,
                self.variant,
            );
            if end.is_finite() {
                tox = seg.tox_at(end);
            }
            seg
        })
    }

    fn segment_at(&self, t: f64, sp: &SurvivalParams) -> SegmentHazard {
        // left limit: the segment whose start precedes t
        self.segments(sp)
            .take_while(|s| s.start < t)
            .last()
            .expect("t > 0 lies in some segment")
    }
}

/// Past `TRANSIENT_WIDTHS·η` beyond its unit-size point the toxicity term
/// has settled up to e^{−40}.
const TRANSIENT_WIDTHS: f64 = 40.0;
/// Largest toxicity transient, in log-hazard units, split into unit steps.
const MAX_TRANSIENT_STEPS: f64 = 200.0;

/// State at the opening visit of a segment.
#[derive(Debug, Clone, Copy)]
pub struct SegmentInputs {
    pub start: f64,
    pub end: f64,
    pub dose: f64,
    pub lab: f64,
    pub tox_start: f64,
}

/// Hazard on one inter-visit segment. The linear predictor is
/// `c0 + c1·t + c2·t² + β₃·(dose + (tox_start − dose)·e^{−(t−start)/η})`.
#[derive(Debug, Clone, Copy)]
pub struct SegmentHazard {
    pub start: f64,
    pub end: f64,
    c0: f64,
    c1: f64,
    c2: f64,
    beta3: f64,
    dose: f64,
    tox_start: f64,
    inv_eta: f64,
    omega: f64,
    inv_omega: f64,
    ln_omega: f64,
}

impl SegmentHazard {
    pub fn new(
        inp: SegmentInputs,
        x: &[f64],
        b: &RandomEffects,
        long: &LongitudinalParams,
        shared: &SharedVisitParams,
        sp: &SurvivalParams,
        variant: ModelVariant,
    ) -> Self {
        let [b1, b2, b3, b4] = sp.beta_s;
        let (l0, l1, l2) = match variant {
            ModelVariant::Joint => long.latent_coefficients(inp.dose, x, b),
            ModelVariant::Sls => (inp.lab, 0.0, 0.0),
        };
        let alpha = alpha_magnitude(inp.lab, shared);
        SegmentHazard {
            start: inp.start,
            end: inp.end,
            c0: b1 * l0 + b2 * inp.dose + b4 * alpha + sp.h0,
            c1: b1 * l1,
            c2: b1 * l2,
            beta3: b3,
            dose: inp.dose,
            tox_start: inp.tox_start,
            inv_eta: 1.0 / sp.eta_tox,
            omega: sp.omega,
            inv_omega: 1.0 / sp.omega,
            ln_omega: sp.omega.ln(),
        }
    }

    /// A segment with a time-constant linear predictor.
    pub fn constant(start: f64, end: f64, lp: f64, omega: f64) -> Self {
        SegmentHazard {
            start,
            end,
            c0: lp,
            c1: 0.0,
            c2: 0.0,
            beta3: 0.0,
            dose: 0.0,
            tox_start: 0.0,
            inv_eta: 1.0,
            omega,
            inv_omega: 1.0 / omega,
            ln_omega: omega.ln(),
        }
    }

    #[inline]
    pub fn tox_at(&self, t: f64) -> f64 {
        self.dose + (self.tox_start - self.dose) * (-(t - self.start) * self.inv_eta).exp()
    }

    #[inline]
    pub fn linear_predictor(&self, t: f64) -> f64 {
        self.c0 + self.c1 * t + self.c2 * t * t + self.beta3 * self.tox_at(t)
    }

    #[inline]
    pub fn log_hazard(&self, t: f64) -> f64 {
        -self.linear_predictor(t) + self.ln_omega + (self.omega - 1.0) * t.ln()
    }

    #[inline]
    pub fn hazard(&self, t: f64) -> f64 {
        self.log_hazard(t).exp()
    }

    /// ∫_a^b hazard, for `start ≤ a ≤ b`. A sharp toxicity transient is
    /// integrated on its own pieces.
    pub fn integral(&self, a: f64, b: f64, integrator: &Integrator) -> f64 {
        if b <= a {
            return 0.0;
        }
        let mut lo = a;
        let mut total = 0.0;
        for p in self.transient_breaks(b - a) {
            if p > lo && p < b {
                total += self.smooth_integral(lo, p, integrator);
                lo = p;
            }
        }
        total + self.smooth_integral(lo, b, integrator)
    }

    /// Times after `start` where the toxicity term of the log hazard,
    /// `A·e^{−s/η}`, has fallen by one unit (while `|A| > 1`), then a few
    /// multiples of η until it has settled. The tail ladder is skipped for
    /// small transients and for ones wider than `width`.
    fn transient_breaks(&self, width: f64) -> Vec<f64> {
        let amp = (self.beta3 * (self.tox_start - self.dose)).abs();
        if amp == 0.0 || !amp.is_finite() {
            return Vec::new();
        }
        let eta = 1.0 / self.inv_eta;
        let mut out = Vec::new();
        let top = amp.min(MAX_TRANSIENT_STEPS);
        let mut e = top;
        while e > 1.0 {
            out.push(self.start + eta * (amp / e).ln());
            e -= 1.0;
        }
        let knee = eta * amp.max(1.0).ln();
        if amp > 0.25 && 16.0 * eta < width {
            for k in [1.0, 4.0, 16.0, TRANSIENT_WIDTHS] {
                out.push(self.start + knee + k * eta);
            }
        }
        out
    }

    fn smooth_integral(&self, a: f64, b: f64, integrator: &Integrator) -> f64 {
        let inv_omega = self.inv_omega;
        let (ua, ub) = (a.powf(self.omega), b.powf(self.omega));
        // panel widths are meant in days, not in the transformed variable
        let integrator = match *integrator {
            Integrator::GaussLegendre { max_panel } => {
                let panels = ((b - a) / max_panel).ceil().max(1.0);
                Integrator::GaussLegendre {
                    max_panel: (ub - ua) / panels * (1.0 + 1e-12),
                }
            }
            other => other,
        };
        integrator.integrate(|u| (-self.linear_predictor(u.powf(inv_omega))).exp(), ua, ub)
    }

    /// Time `T ∈ (from, hi]` with `∫_from^T hazard = target`, given that the
    /// integral over `[from, hi]` reaches the target. Each bisection step
    /// integrates only the newly probed piece.
    pub fn crossing(&self, from: f64, hi: f64, target: f64, integrator: &Integrator) -> f64 {
        let (mut lo, mut hi) = (from, hi);
        let mut acc = 0.0;
        while hi - lo > SURVIVAL_ROOT_TOL {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let piece = self.integral(lo, mid, integrator);
            if acc + piece >= target {
                hi = mid;
            } else {
                acc += piece;
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Hazard at `t > 0`.
pub fn hazard(t: f64, ctx: &HazardContext, sp: &SurvivalParams) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("hazard needs t > 0, got {t}")));
    }
    ctx.check()?;
    Ok(ctx.segment_at(t, sp).hazard(t))
}

/// H(a, b) = ∫_a^b hazard, one segment at a time.
pub fn cumulative_hazard(a: f64, b: f64, ctx: &HazardContext, sp: &SurvivalParams) -> Result<f64> {
    if !(a >= 0.0) || !(b >= a) {
        return Err(Error::Domain(format!("need 0 ≤ a ≤ b, got a={a}, b={b}")));
    }
    ctx.check()?;
    let mut total = 0.0;
    for seg in ctx.segments(sp) {
        if seg.start >= b {
            break;
        }
        let lo = seg.start.max(a);
        let hi = seg.end.min(b);
        if hi > lo {
            total += seg.integral(lo, hi, &ctx.integrator);
        }
    }
    Ok(total)
}

/// δ·log h(T̃) − H(0, T̃).
pub fn survival_loglik(t_tilde: f64, delta: bool, ctx: &HazardContext, sp: &SurvivalParams) -> Result<f64> {
    if !(t_tilde > 0.0) {
        return Err(Error::Domain(format!("observed time must be positive, got {t_tilde}")));
    }
    ctx.check()?;
    let mut ll = 0.0;
    let mut last = None;
    for seg in ctx.segments(sp) {
        if seg.start >= t_tilde {
            break;
        }
        ll -= seg.integral(seg.start, seg.end.min(t_tilde), &ctx.integrator);
        last = Some(seg);
    }
    if delta {
        ll += last.expect("t=0 segment precedes t_tilde").log_hazard(t_tilde);
    }
    Ok(ll)
}

/// Survival time within `[t_start, t_end]` when the cumulative hazard from
/// `t_start` must reach `−log(1−u)`; `None` if the patient survives the
/// segment. An infinite `t_end` is capped at [`SURVIVAL_CAP`].
pub fn sample_survival_in_segment(
    t_start: f64,
    t_end: f64,
    ctx: &HazardContext,
    sp: &SurvivalParams,
    u: f64,
) -> Result<Option<f64>> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain(format!("uniform draw must lie in (0,1), got {u}")));
    }
    if !(t_end > t_start) || t_start < 0.0 {
        return Err(Error::Domain(format!("need 0 ≤ t_start < t_end, got {t_start}, {t_end}")));
    }
    ctx.check()?;
    let target = -(-u).ln_1p();
    let t_end = t_end.min(SURVIVAL_CAP);
    let mut acc = 0.0;
    for seg in ctx.segments(sp) {
        if seg.start >= t_end {
            break;
        }
        let lo = seg.start.max(t_start);
        let hi = seg.end.min(t_end);
        if hi <= lo {
            continue;
        }
        let piece = seg.integral(lo, hi, &ctx.integrator);
        if acc + piece >= target {
            return Ok(Some(seg.crossing(lo, hi, target - acc, &ctx.integrator)));
        }
        acc += piece;
    }
    Ok(None)
}

/// Where the cumulative hazard along a path of segments first reaches ln 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MedianRoot {
    Found(f64),
    /// Not reached before [`SURVIVAL_CAP`].
    Capped,
}

impl MedianRoot {
    /// The crossing time, or the cap.
    pub fn time(self) -> f64 {
        match self {
            MedianRoot::Found(t) => t,
            MedianRoot::Capped => SURVIVAL_CAP,
        }
    }
}

/// Median survival time along a path supplied segment by segment, starting
/// at t = 0. The supplier may extend the path lazily (for instance by
/// simulating further visits); it is not asked past the crossing.
pub fn median_survival_root<I>(segments: I, integrator: &Integrator) -> Result<MedianRoot>
where
    I: IntoIterator<Item = Result<SegmentHazard>>,
{
    let target = std::f64::consts::LN_2;
    let mut acc = 0.0;
    for seg in segments {
        let seg = seg?;
        if seg.start >= SURVIVAL_CAP {
            break;
        }
        let hi = seg.end.min(SURVIVAL_CAP);
        let piece = seg.integral(seg.start, hi, integrator);
        if acc + piece >= target {
            return Ok(MedianRoot::Found(seg.crossing(seg.start, hi, target - acc, integrator)));
        }
        acc += piece;
        if hi >= SURVIVAL_CAP {
            break;
        }
    }
    Ok(MedianRoot::Capped)
}
