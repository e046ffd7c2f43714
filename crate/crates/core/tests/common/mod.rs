//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use dtr::joint::ObservationParams;
use dtr::longitudinal::LongitudinalParams;
use dtr::mtpp::{PolicyParams, SharedVisitParams};
use dtr::survival::SurvivalParams;
use statrs::distribution::{ContinuousCDF, Gamma};
use statrs::function::gamma::ln_gamma;

pub fn theta_ref() -> PolicyParams {
    PolicyParams {
        nu1: 2.5,
        nu2: 1.5,
        mu: -4.8,
        beta_d: vec![1.0, 0.2, 0.15, 0.2, 0.15],
        sigma_d2: 0.09,
    }
}

pub fn phi_ref() -> ObservationParams {
    ObservationParams {
        long: LongitudinalParams {
            beta_l: vec![5.3, 0.1, 0.3, 0.4, 0.25, -1e-4, 3e-8],
            sigma_l2: 0.01,
            sigma_b: [[0.04, 0.0, 0.0], [0.0, 0.0049, 0.0], [0.0, 0.0, 1e-8]],
        },
        surv: SurvivalParams {
            omega: 1.05,
            beta_s: [1.0, 0.9, -0.75, -5.0],
            h0: 5.0,
            eta_tox: 50.0,
        },
        shared: SharedVisitParams {
            xi: 2.0,
            beta_alpha: [9.5, -1.5],
        },
    }
}

/// Composite Simpson with `n` (even) panels.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

pub fn trapezoid<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = 0.5 * (f(a) + f(b));
    for i in 1..n {
        s += f(a + i as f64 * h);
    }
    s * h
}

/// Smallest x in [lo, hi] with f(x) ≥ target for nondecreasing f.
pub fn bisect<F: Fn(f64) -> f64>(f: F, target: f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if f(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Gamma(shape, rate) density from the statrs log-gamma.
pub fn gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    (shape * rate.ln() + (shape - 1.0) * x.ln() - rate * x - ln_gamma(shape)).exp()
}

pub fn gamma_cdf(x: f64, shape: f64, rate: f64) -> f64 {
    Gamma::new(shape, rate).unwrap().cdf(x)
}

/// Visit intensity written out from its definition.
pub fn intensity_oracle(elapsed: f64, alpha: f64, th: &PolicyParams) -> f64 {
    let kappa = th.nu2.exp() + 1.0;
    let rate = (th.nu2 - th.nu1).exp();
    th.mu.exp() + alpha * gamma_pdf(elapsed, kappa, rate)
}

pub fn compensator_oracle(delta: f64, alpha: f64, th: &PolicyParams) -> f64 {
    let kappa = th.nu2.exp() + 1.0;
    let rate = (th.nu2 - th.nu1).exp();
    th.mu.exp() * delta + alpha * gamma_cdf(delta, kappa, rate)
}

pub fn alpha_oracle(y: f64, xi: f64, ba: [f64; 2]) -> f64 {
    xi / (1.0 + (ba[0] + ba[1] * y).exp())
}

/// Kolmogorov–Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in s.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

/// Asymptotic p-value with Stephens' small-sample correction.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut p = 0.0;
    for j in 1..200 {
        let j = j as f64;
        let term = 2.0 * (-1f64).powf(j - 1.0) * (-2.0 * j * j * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

pub fn ks_pass<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> (f64, bool) {
    let p = ks_pvalue(ks_statistic(samples, cdf), samples.len());
    (p, p > 0.01)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

/// Adaptive Simpson written independently of the library's integrator.
pub fn asr<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, eps: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, eps: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * eps {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
    }
    if b <= a {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), eps, 50)
}

/// `asr` over [0, b] split at `feature·2^k` so narrow peaks are not missed.
pub fn split_asr<F: Fn(f64) -> f64>(f: &F, b: f64, feature: f64, eps: f64) -> f64 {
    let mut knots = vec![0.0];
    let mut k = feature / 64.0;
    while k < b {
        knots.push(k);
        k *= 2.0;
    }
    knots.push(b);
    let n = (knots.len() - 1) as f64;
    knots.windows(2).map(|w| asr(f, w[0], w[1], eps / n)).sum()
}
