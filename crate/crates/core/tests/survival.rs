mod common;

use common::*;
use dtr::joint::{ModelVariant, ObservationParams};
use dtr::longitudinal::RandomEffects;
use dtr::mtpp::VisitEvent;
use dtr::quadrature::Integrator;
use dtr::rng::{open01, stream};
use dtr::survival::*;
use proptest::prelude::*;

const LN2: f64 = std::f64::consts::LN_2;

struct Toy {
    events: Vec<VisitEvent>,
    labs: Vec<f64>,
    x: Vec<f64>,
    b: RandomEffects,
    phi: ObservationParams,
}

fn toy() -> Toy {
    Toy {
        events: vec![
            VisitEvent { t: 0.0, d: 2.0 },
            VisitEvent { t: 40.0, d: 1.6 },
            VisitEvent { t: 95.0, d: 2.3 },
        ],
        labs: vec![5.0, 5.4, 5.3],
        x: vec![0.3, 1.0, -0.5],
        b: RandomEffects { b: [0.05, -0.02, 1e-5] },
        phi: phi_ref(),
    }
}

impl Toy {
    fn ctx(&self, variant: ModelVariant) -> HazardContext<'_> {
        HazardContext {
            events: &self.events,
            labs: &self.labs,
            x: &self.x,
            b: self.b,
            long: &self.phi.long,
            shared: &self.phi.shared,
            variant,
            integrator: Integrator::default(),
        }
    }

    fn segment(&self, t: f64) -> usize {
        self.events.iter().rposition(|e| e.t < t).unwrap_or(0)
    }

    /// Hazard from its definition.
    fn hazard_oracle(&self, t: f64) -> f64 {
        let j = self.segment(t);
        let d = self.events[j].d;
        let p = &self.phi.long;
        let l = &p.beta_l;
        let ystar = l[0] + l[1] * d + l[2] * self.x[0] + l[3] * self.x[1] + l[4] * self.x[2] + l[5] * t + l[6] * t * t
            + self.b.b[0]
            + self.b.b[1] * d
            + self.b.b[2] * t;
        let alpha = alpha_oracle(self.labs[j], self.phi.shared.xi, self.phi.shared.beta_alpha);
        let tox = tox_exact(t, &self.events, self.phi.surv.eta_tox);
        let s = &self.phi.surv;
        let lp = s.beta_s[0] * ystar + s.beta_s[1] * d + s.beta_s[2] * tox + s.beta_s[3] * alpha + s.h0;
        (-lp).exp() * s.omega * t.powf(s.omega - 1.0)
    }

    fn cum_oracle(&self, a: f64, b: f64, points: usize) -> f64 {
        let mut knots = vec![a];
        knots.extend(self.events.iter().map(|e| e.t).filter(|&t| t > a && t < b));
        knots.push(b);
        let total = b - a;
        knots
            .windows(2)
            .map(|w| {
                let n = ((w[1] - w[0]) / total * points as f64).ceil().max(2.0) as usize;
                // clamping keeps each piece on one side of a jump
                let f = |t: f64| self.hazard_oracle(t.clamp(w[0] + 1e-12, w[1] - 1e-12).max(1e-300));
                trapezoid(f, w[0], w[1], n)
            })
            .sum()
    }
}

/// Piecewise antiderivative of the exponential kernel.
fn tox_exact(t: f64, events: &[VisitEvent], eta: f64) -> f64 {
    let mut total = 0.0;
    for (j, e) in events.iter().enumerate() {
        if e.t >= t {
            break;
        }
        let end = events.get(j + 1).map_or(t, |n| n.t.min(t));
        total += e.d * ((-(t - end) / eta).exp() - (-(t - e.t) / eta).exp());
    }
    total
}

fn tox_oracle(t: f64, events: &[VisitEvent], eta: f64) -> f64 {
    let mut total = 0.0;
    for (j, e) in events.iter().enumerate() {
        if e.t >= t {
            break;
        }
        let end = events.get(j + 1).map_or(t, |n| n.t.min(t));
        total += asr(&|s: f64| e.d / eta * (-(t - s) / eta).exp(), e.t, end, 1e-15);
    }
    total
}

fn constant_params(lp: f64, omega: f64) -> ObservationParams {
    let mut phi = phi_ref();
    phi.surv = SurvivalParams {
        omega,
        beta_s: [0.0; 4],
        h0: lp,
        eta_tox: 50.0,
    };
    phi
}

#[test]
fn toxicity_closed_form_matches_quadrature() {
    let t = toy();
    assert_eq!(toxicity(0.0, &t.events, 50.0), 0.0);
    for &at in &[10.0, 40.0, 41.0, 94.9, 95.0, 150.0, 800.0] {
        let got = toxicity(at, &t.events, 50.0);
        let want = tox_oracle(at, &t.events, 50.0);
        assert!(rel_err(got, want) < 1e-8, "t={at}: {got} vs {want}");
    }
    let constant = [VisitEvent { t: 0.0, d: 1.0 }];
    assert!((toxicity(1e5, &constant, 50.0) - 1.0).abs() < 1e-12);
}

#[test]
fn hazard_reference_cases() {
    let t = toy();
    // constant linear predictor, ω = 1
    let phi = constant_params(3.0, 1.0);
    let ctx = HazardContext { long: &phi.long, shared: &phi.shared, ..t.ctx(ModelVariant::Joint) };
    for at in [0.5, 40.0, 500.0] {
        assert!(rel_err(hazard(at, &ctx, &phi.surv).unwrap(), (-3.0f64).exp()) < 1e-14);
    }
    // pure Weibull
    let phi = constant_params(0.0, 1.3);
    let ctx = HazardContext { long: &phi.long, shared: &phi.shared, ..t.ctx(ModelVariant::Joint) };
    assert!(rel_err(hazard(70.0, &ctx, &phi.surv).unwrap(), 1.3 * 70f64.powf(0.3)) < 1e-13);
    // full model at t = 100
    let h = hazard(100.0, &t.ctx(ModelVariant::Joint), &t.phi.surv).unwrap();
    assert!(rel_err(h, t.hazard_oracle(100.0)) < 1e-10, "{h} vs {}", t.hazard_oracle(100.0));
    assert!(hazard(0.0, &t.ctx(ModelVariant::Joint), &t.phi.surv).is_err());
}

#[test]
fn cumulative_hazard_against_trapezoid() {
    let t = toy();
    let ctx = t.ctx(ModelVariant::Joint);
    let got = cumulative_hazard(0.0, 300.0, &ctx, &t.phi.surv).unwrap();
    let want = t.cum_oracle(0.0, 300.0, 1_000_000);
    assert!(rel_err(got, want) < 1e-6, "{got} vs {want}");
    let ab = cumulative_hazard(10.0, 60.0, &ctx, &t.phi.surv).unwrap();
    let bc = cumulative_hazard(60.0, 250.0, &ctx, &t.phi.surv).unwrap();
    let ac = cumulative_hazard(10.0, 250.0, &ctx, &t.phi.surv).unwrap();
    assert!((ab + bc - ac).abs() < 1e-8 * ac.max(1.0), "{ab} + {bc} vs {ac}");

    let phi = constant_params(2.0, 1.05);
    let ctx = HazardContext { long: &phi.long, shared: &phi.shared, ..t.ctx(ModelVariant::Joint) };
    let h = cumulative_hazard(0.0, 400.0, &ctx, &phi.surv).unwrap();
    assert!(rel_err(h, (-2.0f64).exp() * 400f64.powf(1.05)) < 1e-9);
}

#[test]
fn loglik_cases() {
    let t = toy();
    let ctx = t.ctx(ModelVariant::Joint);
    let cens = survival_loglik(250.0, false, &ctx, &t.phi.surv).unwrap();
    assert_eq!(cens, -cumulative_hazard(0.0, 250.0, &ctx, &t.phi.surv).unwrap());
    let dead = survival_loglik(250.0, true, &ctx, &t.phi.surv).unwrap();
    let want = t.hazard_oracle(250.0).ln() - t.cum_oracle(0.0, 250.0, 1_000_000);
    assert!((dead - want).abs() < 1e-6);

    let (c, w) = (4.0, 1.2);
    let phi = constant_params(c, w);
    let ctx = HazardContext { long: &phi.long, shared: &phi.shared, ..t.ctx(ModelVariant::Joint) };
    let ll = survival_loglik(300.0, true, &ctx, &phi.surv).unwrap();
    let closed = -c + w.ln() + (w - 1.0) * 300f64.ln() - (-c).exp() * 300f64.powf(w);
    assert!((ll - closed).abs() < 1e-9);
}

#[test]
fn segment_sampler_reference_values() {
    let t = toy();
    let phi = constant_params(5.0, 1.0);
    let ctx = HazardContext { long: &phi.long, shared: &phi.shared, ..t.ctx(ModelVariant::Joint) };
    let got = sample_survival_in_segment(0.0, f64::INFINITY, &ctx, &phi.surv, 0.5).unwrap().unwrap();
    assert!((got - LN2 * 5f64.exp()).abs() < 1e-5);
    assert!((got - 102.87).abs() < 0.01);
    assert!(sample_survival_in_segment(0.0, 50.0, &ctx, &phi.surv, 0.5).unwrap().is_none());

    let phi = constant_params(5.0, 1.05);
    let ctx = HazardContext { long: &phi.long, shared: &phi.shared, ..t.ctx(ModelVariant::Joint) };
    let got = sample_survival_in_segment(0.0, f64::INFINITY, &ctx, &phi.surv, 0.5).unwrap().unwrap();
    assert!((got - (LN2 * 5f64.exp()).powf(1.0 / 1.05)).abs() < 1e-5);

    // full model: invert the oracle cumulative hazard
    let ctx = t.ctx(ModelVariant::Joint);
    let mut phi = t.phi.clone();
    phi.surv.h0 = -3.0;
    let t2 = Toy { phi: phi.clone(), ..toy() };
    let ctx = HazardContext { long: &phi.long, shared: &phi.shared, ..ctx };
    let u = 0.3;
    let target = -(1.0f64 - u).ln();
    let got = sample_survival_in_segment(0.0, f64::INFINITY, &ctx, &phi.surv, u).unwrap().unwrap();
    let oracle = bisect(|s| t2.cum_oracle(0.0, s, 200_000), target, 0.0, got * 4.0 + 1.0, 1e-7);
    assert!((got - oracle).abs() < 1e-3 * oracle.max(1.0), "{got} vs {oracle}");
}

#[test]
fn median_roots() {
    let g = Integrator::default();
    for c in [3.0, 5.0, 7.0] {
        let seg = SegmentHazard::constant(0.0, f64::INFINITY, c, 1.0);
        let m = median_survival_root([Ok(seg)], &g).unwrap().time();
        assert!((m - LN2 * f64::exp(c)).abs() < 1e-5);
        let seg = SegmentHazard::constant(0.0, f64::INFINITY, c, 1.05);
        let m = median_survival_root([Ok(seg)], &g).unwrap().time();
        assert!((m - (LN2 * f64::exp(c)).powf(1.0 / 1.05)).abs() < 1e-5);
    }
    let seg = SegmentHazard::constant(0.0, f64::INFINITY, 30.0, 1.0);
    assert_eq!(median_survival_root([Ok(seg)], &g).unwrap(), MedianRoot::Capped);
}

#[test]
fn constant_hazard_sampler_is_weibull() {
    let t = toy();
    let (c, w) = (5.5, 1.05);
    let phi = constant_params(c, w);
    let ctx = HazardContext { long: &phi.long, shared: &phi.shared, ..t.ctx(ModelVariant::Joint) };
    let mut rng = stream(31, &[]);
    let draws: Vec<f64> = (0..10_000)
        .map(|_| {
            sample_survival_in_segment(0.0, f64::INFINITY, &ctx, &phi.surv, open01(&mut rng))
                .unwrap()
                .unwrap_or(SURVIVAL_CAP)
        })
        .collect();
    let (p, ok) = ks_pass(&draws, |s| 1.0 - (-(-c).exp() * s.powf(w)).exp());
    assert!(ok, "KS p = {p}");
}

#[test]
fn sls_reads_the_observed_lab() {
    let t = toy();
    let h = hazard(60.0, &t.ctx(ModelVariant::Sls), &t.phi.surv).unwrap();
    let s = &t.phi.surv;
    let d = 1.6;
    let tox = tox_oracle(60.0, &t.events, s.eta_tox);
    let alpha = alpha_oracle(5.4, 2.0, [9.5, -1.5]);
    let lp = s.beta_s[0] * 5.4 + s.beta_s[1] * d + s.beta_s[2] * tox + s.beta_s[3] * alpha + s.h0;
    assert!(rel_err(h, (-lp).exp() * s.omega * 60f64.powf(s.omega - 1.0)) < 1e-10);
}

proptest! {
    #[test]
    fn survival_curve_is_monotone(a in 0.0f64..2000.0, gap in 0.0f64..2000.0, h0 in -2.0f64..6.0) {
        let t = toy();
        let mut phi = t.phi.clone();
        phi.surv.h0 = h0;
        let ctx = HazardContext { long: &phi.long, shared: &phi.shared, ..t.ctx(ModelVariant::Joint) };
        let ha = cumulative_hazard(0.0, a, &ctx, &phi.surv).unwrap();
        let hb = cumulative_hazard(0.0, a + gap, &ctx, &phi.surv).unwrap();
        prop_assert!(hb >= ha);
        let (sa, sb) = ((-ha).exp(), (-hb).exp());
        prop_assert!((0.0..=1.0).contains(&sa) && sb <= sa);
    }

    #[test]
    fn hazard_is_positive(at in 1e-6f64..30_000.0) {
        let t = toy();
        for v in [ModelVariant::Joint, ModelVariant::Sls] {
            prop_assert!(hazard(at, &t.ctx(v), &t.phi.surv).unwrap() > 0.0);
        }
    }

    #[test]
    fn toxicity_continuous_and_nonnegative(
        d in proptest::collection::vec(0.0f64..4.0, 1..6),
        gaps in proptest::collection::vec(1.0f64..200.0, 5),
        eta in 1.0f64..200.0,
    ) {
        let mut t = 0.0;
        let events: Vec<VisitEvent> = d.iter().enumerate().map(|(j, &dose)| {
            if j > 0 { t += gaps[j - 1]; }
            VisitEvent { t, d: dose }
        }).collect();
        for e in &events[1..] {
            let left = toxicity(e.t - 1e-9, &events, eta);
            let right = toxicity(e.t + 1e-9, &events, eta);
            prop_assert!((left - right).abs() < 1e-8);
        }
        for k in 0..50 {
            prop_assert!(toxicity(k as f64 * 20.0, &events, eta) >= 0.0);
        }
    }
}

/// ∫_{s1}^{s2} exp(K·e^{−s/η}) ds by the series of the exponential integral.
fn transient_oracle(k: f64, eta: f64, s1: f64, s2: f64) -> f64 {
    let (v1, v2) = ((-s1 / eta).exp(), (-s2 / eta).exp());
    let mut sum = 0.0;
    let mut kn_over_fact = 1.0;
    for n in 1..400 {
        kn_over_fact *= k / n as f64;
        sum += kn_over_fact * (v1.powi(n) - v2.powi(n)) / n as f64;
    }
    (s2 - s1) + eta * sum
}

#[test]
fn sharp_toxicity_transients() {
    let (dose, beta3, h0) = (1.0, -6.0, 2.0);
    for k in [-10.0, -3.0, 3.0, 15.0, 25.0] {
        for eta in [1e-6, 1e-3, 0.5] {
            // K = −β₃·(tox_start − dose)
            let tox_start = dose - k / beta3;
            let mut phi = phi_ref();
            phi.surv = SurvivalParams {
                omega: 1.0,
                beta_s: [0.0, 0.0, beta3, 0.0],
                h0,
                eta_tox: eta,
            };
            let start = 600.0;
            let seg = SegmentHazard::new(
                SegmentInputs { start, end: 700.0, dose, lab: 5.0, tox_start },
                &[0.0, 0.0, 0.0],
                &RandomEffects::default(),
                &phi.long,
                &phi.shared,
                &phi.surv,
                ModelVariant::Sls,
            );
            let scale = (-h0 - beta3 * dose).exp();
            for (s1, s2) in [(0.0, 100.0), (2.0 * eta, 50.0), (0.3 * eta, 1.7 * eta)] {
                let want = scale * transient_oracle(k, eta, s1, s2);
                for integrator in [Integrator::default(), Integrator::GaussLegendre { max_panel: 200.0 }] {
                    let got = seg.integral(start + s1, start + s2, &integrator);
                    // absolute below 1, relative above, plus the rounding of
                    // t − start amplified by K/η
                    let err = (got - want).abs() / want.max(1.0);
                    let base = if matches!(integrator, Integrator::GaussLegendre { .. }) { 1e-6 } else { 1e-8 };
                    let tol = base + k.abs() * f64::EPSILON * (start + s2) / eta;
                    assert!(err < tol, "K {k} eta {eta} [{s1}, {s2}] {integrator:?}: {got} vs {want}");
                }
            }
        }
    }
}
