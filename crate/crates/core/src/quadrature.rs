//! One-dimensional numerics: adaptive Simpson integration, bisection and
//! golden-section search.

use crate::defaults::{QUADRATURE_MAX_INTERVALS, QUADRATURE_TOL};

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub intervals: usize,
    /// `false` when the interval cap was hit before every panel met its
    /// tolerance share.
    pub converged: bool,
}

struct Panel {
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

/// Adaptive Simpson on `[a, b]` with absolute tolerance `tol` and at most
/// `max_intervals` leaf panels.
pub fn adaptive_simpson<F>(f: F, a: f64, b: f64, tol: f64, max_intervals: usize) -> Integral
where
    F: Fn(f64) -> f64,
{
    adaptive_simpson_with_ends(&f, a, b, f(a), f(b), tol, max_intervals)
}

fn adaptive_simpson_with_ends<F>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    tol: f64,
    max_intervals: usize,
) -> Integral
where
    F: Fn(f64) -> f64,
{
    if b <= a {
        return Integral { value: 0.0, intervals: 0, converged: true };
    }
    let m = 0.5 * (a + b);
    let fm = f(m);
    let mut stack = vec![Panel { a, b, fa, fm, fb, whole: simpson(a, b, fa, fm, fb), tol, depth: 0 }];
    let mut total = 0.0;
    let mut leaves = 0usize;
    let mut converged = true;
    while let Some(p) = stack.pop() {
        let m = 0.5 * (p.a + p.b);
        let lm = 0.5 * (p.a + m);
        let rm = 0.5 * (m + p.b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(p.a, m, p.fa, flm, p.fm);
        let right = simpson(m, p.b, p.fm, frm, p.fb);
        let delta = left + right - p.whole;
        let budget_left = leaves + 2 * (stack.len() + 2) <= max_intervals;
        if delta.abs() <= 15.0 * p.tol || p.depth >= 60 || !budget_left {
            if delta.abs() > 15.0 * p.tol {
                converged = false;
            }
            total += left + right + delta / 15.0;
            leaves += 2;
        } else {
            stack.push(Panel { a: p.a, b: m, fa: p.fa, fm: flm, fb: p.fm, whole: left, tol: 0.5 * p.tol, depth: p.depth + 1 });
            stack.push(Panel { a: m, b: p.b, fa: p.fm, fm: frm, fb: p.fb, whole: right, tol: 0.5 * p.tol, depth: p.depth + 1 });
        }
    }
    Integral { value: total, intervals: leaves, converged }
}

/// Integrates a piecewise-smooth integrand over `[a, b]`, splitting at the
/// given breakpoints. The integrand is sampled just inside each piece, so a
/// jump located exactly at a breakpoint never leaks into a neighbour.
pub fn integrate_piecewise<F>(f: F, a: f64, b: f64, breaks: &[f64], tol: f64) -> Integral
where
    F: Fn(f64) -> f64,
{
    if b <= a {
        return Integral { value: 0.0, intervals: 0, converged: true };
    }
    let mut cuts: Vec<f64> = breaks.iter().copied().filter(|x| *x > a && *x < b && x.is_finite()).collect();
    cuts.push(a);
    cuts.push(b);
    cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    cuts.dedup();
    let span = b - a;
    let mut out = Integral { value: 0.0, intervals: 0, converged: true };
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let width = hi - lo;
        if width <= 0.0 {
            continue;
        }
        let nudge = width * 1e-13;
        let piece_tol = tol * width / span;
        let cap = ((QUADRATURE_MAX_INTERVALS as f64 * width / span).ceil() as usize).max(64);
        let piece = adaptive_simpson_with_ends(&f, lo, hi, f(lo + nudge), f(hi - nudge), piece_tol, cap);
        out.value += piece.value;
        out.intervals += piece.intervals;
        out.converged &= piece.converged;
    }
    out
}

/// Shorthand for [`integrate_piecewise`] at the library tolerance.
pub fn integrate<F>(f: F, a: f64, b: f64, breaks: &[f64]) -> f64
where
    F: Fn(f64) -> f64,
{
    integrate_piecewise(f, a, b, breaks, QUADRATURE_TOL).value
}

/// Smallest `x` in `[lo, hi]` with `pred(x)` true, up to a bracket of width
/// `tol`, assuming `pred` is monotone (false then true) and `pred(hi)` holds.
pub fn bisect_threshold<P>(pred: P, mut lo: f64, mut hi: f64, tol: f64) -> f64
where
    P: Fn(f64) -> bool,
{
    if pred(lo) {
        return lo;
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Maximizer of a unimodal function on `[lo, hi]` by golden-section search.
pub fn golden_section_max<F>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64)
where
    F: Fn(f64) -> f64,
{
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_is_exact_on_cubics() {
        let r = adaptive_simpson(|x| x * x * x - 2.0 * x, 0.0, 2.0, 1e-12, 100);
        assert!((r.value - 0.0).abs() < 1e-14);
        assert!(r.converged);
    }

    #[test]
    fn smooth_integrals_meet_tolerance() {
        let r = adaptive_simpson(f64::exp, 0.0, 1.0, 1e-10, 10_000);
        assert!((r.value - (std::f64::consts::E - 1.0)).abs() < 1e-10);
        let r = adaptive_simpson(|x: f64| x.powi(9), 0.0, 1.0, 1e-10, 10_000);
        assert!((r.value - 0.1).abs() < 1e-10);
    }

    #[test]
    fn step_at_breakpoint_is_integrated_exactly() {
        let step = |x: f64| if x < 0.3 { 0.0 } else { 1.0 };
        let v = integrate(step, 0.0, 1.0, &[0.3]);
        assert!((v - 0.7).abs() < 1e-12);
        let v = integrate(|x| if x <= 0.5 { x } else { 0.0 }, 0.0, 1.0, &[0.5]);
        assert!((v - 0.125).abs() < 1e-12);
    }

    #[test]
    fn interval_cap_is_reported() {
        let r = adaptive_simpson(|x: f64| (1.0 / (x + 1e-9)).sin(), 0.0, 1.0, 1e-14, 50);
        assert!(!r.converged);
        assert!(r.intervals <= 52);
    }

    #[test]
    fn bisection_and_golden_section() {
        let root = bisect_threshold(|x| 2.0 * x - 1.0 >= 0.0, 0.0, 1.0, 1e-12);
        assert!((root - 0.5).abs() < 1e-12);
        let (x, fx) = golden_section_max(|p| p * (1.0 - p * p), 0.0, 1.0, 1e-10);
        assert!((x - 1.0 / 3f64.sqrt()).abs() < 1e-8);
        assert!((fx - 2.0 / (3.0 * 3f64.sqrt())).abs() < 1e-12);
    }
}
