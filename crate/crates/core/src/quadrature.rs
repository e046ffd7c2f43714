//! One-dimensional quadrature for smooth integrands on finite intervals.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

pub const DEFAULT_ABS_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_DEPTH: u32 = 40;
/// Tolerance floor relative to the first Simpson estimate, so large
/// integrals do not refine toward an unreachable absolute target.
pub const REL_TOL_FLOOR: f64 = 1e-12;

/// How a segment integral is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Integrator {
    /// Adaptive Simpson with an absolute tolerance per call.
    AdaptiveSimpson { abs_tol: f64, max_depth: u32 },
    /// Fixed 16-point Gauss–Legendre on panels no wider than `max_panel`.
    GaussLegendre { max_panel: f64 },
}

impl Default for Integrator {
    fn default() -> Self {
        Integrator::AdaptiveSimpson {
            abs_tol: DEFAULT_ABS_TOL,
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }
}

impl Integrator {
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> f64 {
        match *self {
            Integrator::AdaptiveSimpson { abs_tol, max_depth } => {
                adaptive_simpson(&f, a, b, abs_tol, max_depth)
            }
            Integrator::GaussLegendre { max_panel } => gauss_legendre(&f, a, b, max_panel),
        }
    }
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    abs_tol: f64,
    max_depth: u32,
) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let tol = abs_tol.max(REL_TOL_FLOOR * whole.abs());
    simpson_step(f, a, b, fa, fm, fb, whole, tol, max_depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    // below this width the differences are roundoff
    let tiny = b - a <= 64.0 * f64::EPSILON * a.abs().max(b.abs());
    if depth == 0 || tiny || !delta.is_finite() || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

const GL_ORDER: usize = 16;

fn gl_rule() -> &'static ([f64; GL_ORDER], [f64; GL_ORDER]) {
    static RULE: OnceLock<([f64; GL_ORDER], [f64; GL_ORDER])> = OnceLock::new();
    RULE.get_or_init(|| legendre_rule::<GL_ORDER>())
}

/// Nodes and weights on [-1, 1] by Newton iteration on P_n.
fn legendre_rule<const N: usize>() -> ([f64; N], [f64; N]) {
    let mut nodes = [0.0; N];
    let mut weights = [0.0; N];
    let n = N as f64;
    for i in 0..N.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=N {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        weights[i] = w;
        nodes[N - 1 - i] = x;
        weights[N - 1 - i] = w;
    }
    (nodes, weights)
}

/// Composite 16-point Gauss–Legendre with equal panels of width ≤ `max_panel`.
pub fn gauss_legendre<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, max_panel: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (nodes, weights) = gl_rule();
    let panels = ((b - a).abs() / max_panel).ceil().max(1.0) as usize;
    let width = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + width * p as f64;
        let half = 0.5 * width;
        let mid = lo + half;
        let mut s = 0.0;
        for (x, w) in nodes.iter().zip(weights.iter()) {
            s += w * f(mid + half * x);
        }
        total += s * half;
    }
    total
}
