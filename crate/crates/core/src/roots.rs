//! Root finding for monotone functions of elapsed time.

/// Outcome of a bracketed search on a nondecreasing function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Root {
    Found(f64),
    /// The function never reached the target before `cap`.
    Capped,
}

/// Smallest `x ∈ (0, cap]` with `f(x) ≥ target` for nondecreasing `f` with
/// `f(0) < target`: bracket by doubling from `initial`, then bisect to
/// absolute width `tol`.
pub fn bracket_and_bisect<F: FnMut(f64) -> f64>(
    mut f: F,
    target: f64,
    initial: f64,
    cap: f64,
    tol: f64,
) -> Root {
    let mut lo = 0.0;
    let mut hi = initial.min(cap);
    loop {
        if f(hi) >= target {
            break;
        }
        if hi >= cap {
            return Root::Capped;
        }
        lo = hi;
        hi = (2.0 * hi).min(cap);
    }
    Root::Found(bisect(f, target, lo, hi, tol))
}

/// Bisection on `[lo, hi]` given `f(lo) < target ≤ f(hi)`.
pub fn bisect<F: FnMut(f64) -> f64>(mut f: F, target: f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}
