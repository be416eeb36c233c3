//! One-dimensional numerical building blocks: adaptive quadrature, bisection
//! and the grid-scan + golden-section maximizer used by the radial solvers.

use crate::scalar::Real;

const MAX_BISECTION_STEPS: usize = 500;

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance
/// `tol`.
///
/// The interval is first cut into `panels` equal pieces so that narrow
/// features (sharp Laplace peaks, square-root edges) are seen by the
/// initial Simpson estimates.
pub fn adaptive_simpson<T, F>(f: F, a: T, b: T, tol: T, panels: usize) -> T
where
    T: Real,
    F: Fn(T) -> T,
{
    let panels = panels.max(1);
    let width = (b - a) / T::lit(panels as f64);
    let panel_tol = tol / T::lit(panels as f64);
    let mut total = T::zero();
    for p in 0..panels {
        let lo = a + width * T::lit(p as f64);
        let hi = if p + 1 == panels { b } else { lo + width };
        let mid = (lo + hi) / T::lit(2.0);
        let (flo, fmid, fhi) = (f(lo), f(mid), f(hi));
        let whole = simpson(lo, hi, flo, fmid, fhi);
        total = total + simpson_step(&f, lo, hi, flo, fmid, fhi, whole, panel_tol, 48);
    }
    total
}

#[inline]
fn simpson<T: Real>(a: T, b: T, fa: T, fm: T, fb: T) -> T {
    (b - a) / T::lit(6.0) * (fa + T::lit(4.0) * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<T, F>(f: &F, a: T, b: T, fa: T, fm: T, fb: T, whole: T, tol: T, depth: u32) -> T
where
    T: Real,
    F: Fn(T) -> T,
{
    let two = T::lit(2.0);
    let m = (a + b) / two;
    let lm = (a + m) / two;
    let rm = (m + b) / two;
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= T::lit(15.0) * tol || m <= a || m >= b {
        return left + right + delta / T::lit(15.0);
    }
    simpson_step(f, a, m, fa, flm, fm, left, tol / two, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, tol / two, depth - 1)
}

/// Bisection for a root of `f` in `[lo, hi]` where `f(lo)` and `f(hi)` have
/// opposite signs (or one is zero). Runs until the bracket is narrower than
/// `tol` or stops shrinking in floating point.
pub fn bisect<T, F>(f: F, mut lo: T, mut hi: T, tol: T) -> T
where
    T: Real,
    F: Fn(T) -> T,
{
    let mut flo = f(lo);
    if flo == T::zero() {
        return lo;
    }
    let two = T::lit(2.0);
    for _ in 0..MAX_BISECTION_STEPS {
        let mid = lo + (hi - lo) / two;
        if hi - lo <= tol || mid <= lo || mid >= hi {
            break;
        }
        let fmid = f(mid);
        if fmid == T::zero() {
            return mid;
        }
        if (fmid > T::zero()) == (flo > T::zero()) {
            lo = mid;
            flo = fmid;
        } else {
            hi = mid;
        }
    }
    lo + (hi - lo) / two
}

/// Result of a bounded one-dimensional maximization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Maximum<T> {
    pub arg: T,
    pub value: T,
}

/// Maximizes `f` on `[lo, hi]`: a uniform pre-scan with `grid` cells locates
/// the best cell, then golden-section search refines inside the two cells
/// around it until the bracket is below `tol`.
///
/// The pre-scan guards against the two local extrema the radial functionals
/// can have; golden section alone would lock onto whichever it saw first.
pub fn grid_golden_max<T, F>(f: F, lo: T, hi: T, grid: usize, tol: T) -> Maximum<T>
where
    T: Real,
    F: Fn(T) -> T,
{
    assert!(hi >= lo, "empty interval");
    let grid = grid.max(2);
    let step = (hi - lo) / T::lit(grid as f64);
    let point = |i: usize| {
        if i == grid {
            hi
        } else {
            lo + step * T::lit(i as f64)
        }
    };

    let mut best = Maximum {
        arg: lo,
        value: f(lo),
    };
    let mut best_i = 0;
    for i in 1..=grid {
        let x = point(i);
        let v = f(x);
        if v > best.value || best.value.is_nan() {
            best = Maximum { arg: x, value: v };
            best_i = i;
        }
    }

    let a = point(best_i.saturating_sub(1));
    let b = point((best_i + 1).min(grid));
    let refined = golden_section_max(&f, a, b, tol);
    if refined.value > best.value {
        refined
    } else {
        best
    }
}

/// Golden-section search for the maximum of a unimodal `f` on `[a, b]`.
pub fn golden_section_max<T, F>(f: &F, mut a: T, mut b: T, tol: T) -> Maximum<T>
where
    T: Real,
    F: Fn(T) -> T,
{
    let inv_phi = (T::lit(5.0).sqrt() - T::one()) / T::lit(2.0);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..MAX_BISECTION_STEPS {
        if b - a <= tol {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let candidates = [(a, f(a)), (c, fc), (d, fd), (b, f(b))];
    let (arg, value) = candidates
        .into_iter()
        .fold((a, T::neg_infinity()), |acc, (x, v)| if v > acc.1 { (x, v) } else { acc });
    Maximum { arg, value }
}

/// `log(sum(exp(xs)))` without overflow.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
