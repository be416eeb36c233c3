//! Closed-form asymptotics of the model.
//!
//! The semicircle law `μ(x) = (1/π)√(2 − x²)` on `[−√2, √2]`, its Stieltjes
//! transform `g`, log-potential `h`, the limiting coarse free energy
//! `F(β) = β²/2`, and the two one-dimensional variational problems whose
//! values coincide: the TAP–Plefka functional `B(q)` maximized over the
//! Plefka-feasible set and the replica-symmetric Parisi functional `P(q)`.

use crate::error::{domain, Result};
use crate::numeric::{bisect, grid_golden_max};
use crate::scalar::Real;

/// Points in the uniform pre-scan of the radial solvers.
pub const RADIAL_GRID: usize = 10_000;
/// Golden-section bracket width at which the radial solvers stop.
pub const RADIAL_TOL: f64 = 1e-10;
/// Upper end of the overlap domain; both functionals diverge at `q = 1`.
pub const Q_CEILING: f64 = 1.0 - 1e-12;
/// Tolerance for reporting that an optimum sits on the Plefka boundary.
pub const CONSTRAINT_TOL: f64 = 1e-8;

/// Inverse temperature and field strength of the limiting problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsymptoticParams<T> {
    pub beta: T,
    pub h: T,
}

impl<T: Real> AsymptoticParams<T> {
    /// Validates `beta ≥ 0` and `h ≥ 0`. Operations that need `beta > 0`
    /// check it themselves.
    pub fn new(beta: T, h: T) -> Result<Self> {
        if !(beta >= T::zero()) || !beta.is_finite() {
            return domain("beta", beta.as_f64(), "[0, inf)");
        }
        if !(h >= T::zero()) || !h.is_finite() {
            return domain("h", h.as_f64(), "[0, inf)");
        }
        Ok(Self { beta, h })
    }
}

/// Optimizer and optimum of one of the radial functionals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialCandidate<T> {
    pub q: T,
    pub value: T,
    /// The optimum satisfies `β(1 − q) = 1/√2` within [`CONSTRAINT_TOL`].
    pub constraint_active: bool,
}

/// The semicircle law with a quadrature tolerance for its cross-checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemicircleLaw<T> {
    pub cdf_tol: T,
}

impl<T: Real> Default for SemicircleLaw<T> {
    fn default() -> Self {
        Self {
            cdf_tol: T::lit(1e-12),
        }
    }
}

impl<T: Real> SemicircleLaw<T> {
    pub fn support(&self) -> (T, T) {
        (-T::SQRT_2(), T::SQRT_2())
    }

    pub fn density(&self, x: T) -> T {
        mu_density(x)
    }

    pub fn cdf(&self, x: T) -> T {
        semicircle_cdf(x)
    }

    /// The `u`-quantile, bisected to `cdf_tol`.
    pub fn quantile(&self, u: T) -> Result<T> {
        quantile_with_tol(u, self.cdf_tol)
    }
}

/// Semicircle density `(1/π)√(2 − x²)`, zero off the support.
pub fn mu_density<T: Real>(x: T) -> T {
    let r = T::lit(2.0) - x * x;
    if r <= T::zero() {
        T::zero()
    } else {
        r.sqrt() / T::PI()
    }
}

/// Distribution function of the semicircle law.
pub fn semicircle_cdf<T: Real>(x: T) -> T {
    let s2 = T::SQRT_2();
    if x <= -s2 {
        return T::zero();
    }
    if x >= s2 {
        return T::one();
    }
    let half = T::lit(0.5);
    let root = (T::lit(2.0) - x * x).max(T::zero()).sqrt();
    let arg = (x / s2).max(-T::one()).min(T::one());
    half + (x * root * half + arg.asin()) / T::PI()
}

/// Classical location `θ_u`: the `u`-quantile of the semicircle law, found by
/// bisection on the closed-form distribution function to `1e−12`.
pub fn classical_location<T: Real>(u: T) -> Result<T> {
    quantile_with_tol(u, T::lit(1e-12))
}

/// Classical locations `θ_{i/N}` for `i = 1..=n`, ascending.
pub fn classical_spectrum<T: Real>(n: usize) -> Vec<T> {
    let nn = T::lit(n as f64);
    (1..=n)
        .map(|i| classical_location(T::lit(i as f64) / nn).expect("i/n lies in [0, 1]"))
        .collect()
}

fn quantile_with_tol<T: Real>(u: T, tol: T) -> Result<T> {
    if !(u >= T::zero() && u <= T::one()) {
        return domain("u", u.as_f64(), "[0, 1]");
    }
    let s2 = T::SQRT_2();
    if u == T::zero() {
        return Ok(-s2);
    }
    if u == T::one() {
        return Ok(s2);
    }
    Ok(bisect(|x| semicircle_cdf(x) - u, -s2, s2, tol))
}

/// `√(λ² − 2)` as `√((λ − √2)(λ + √2))`, exactly zero at `λ = √2`.
fn edge_root<T: Real>(lambda: T) -> T {
    ((lambda - T::SQRT_2()) * (lambda + T::SQRT_2())).max(T::zero()).sqrt()
}

fn check_lambda<T: Real>(lambda: T) -> Result<()> {
    if lambda >= T::SQRT_2() && lambda.is_finite() {
        Ok(())
    } else {
        domain("lambda", lambda.as_f64(), "[sqrt(2), inf)")
    }
}

/// Stieltjes transform `g(λ) = ∫ μ(x)/(λ − x) dx = λ − √(λ² − 2)`.
pub fn stieltjes_g<T: Real>(lambda: T) -> Result<T> {
    check_lambda(lambda)?;
    // 2 / (λ + √(λ²−2)) is the same number without cancellation at large λ.
    Ok(T::lit(2.0) / (lambda + edge_root(lambda)))
}

/// Log-potential `h(λ) = ∫ μ(x) log(λ − x) dx`, in closed form
/// `λ²/2 − 1/2 − λ√(λ²−2)/2 + log((λ + √(λ²−2))/2)`.
pub fn log_potential_h<T: Real>(lambda: T) -> Result<T> {
    let g = stieltjes_g(lambda)?;
    let half = T::lit(0.5);
    // λ²/2 − λ√(λ²−2)/2 = λ g(λ)/2.
    Ok(lambda * g * half - half + ((lambda + edge_root(lambda)) * half).ln())
}

fn check_subcritical_beta<T: Real>(beta: T, allow_zero: bool) -> Result<()> {
    let slack = T::one() + T::lit(4.0) * T::epsilon();
    let upper = T::FRAC_1_SQRT_2() * slack;
    let lower_ok = if allow_zero {
        beta >= T::zero()
    } else {
        beta > T::zero()
    };
    if lower_ok && beta <= upper {
        Ok(())
    } else if allow_zero {
        domain("beta", beta.as_f64(), "[0, 1/sqrt(2)]")
    } else {
        domain("beta", beta.as_f64(), "(0, 1/sqrt(2)]")
    }
}

/// The unique `λ(β) ≥ √2` with `g(λ) = 2β`, namely `β + 1/(2β)`.
pub fn lambda_of_beta<T: Real>(beta: T) -> Result<T> {
    check_subcritical_beta(beta, false)?;
    // β + 1/(2β) ≥ √2; rounding can land one ulp below at β = 1/√2.
    Ok((beta + T::one() / (T::lit(2.0) * beta)).max(T::SQRT_2()))
}

/// Limiting coarse free energy `β²/2` on `[0, 1/√2]`.
pub fn limiting_free_energy<T: Real>(beta: T) -> Result<T> {
    check_subcritical_beta(beta, true)?;
    Ok(beta * beta * T::lit(0.5))
}

/// The unsimplified form `βλ(β) − 1/2 − log(2β)/2 − h(λ(β))/2` of the
/// limiting free energy, for `β ∈ (0, 1/√2]`.
pub fn free_energy_from_transforms<T: Real>(beta: T) -> Result<T> {
    let lambda = lambda_of_beta(beta)?;
    let half = T::lit(0.5);
    Ok(beta * lambda - half - half * (T::lit(2.0) * beta).ln() - half * log_potential_h(lambda)?)
}

fn check_q<T: Real>(q: T) -> Result<()> {
    if q >= T::zero() && q < T::one() {
        Ok(())
    } else {
        domain("q", q.as_f64(), "[0, 1)")
    }
}

fn b_unchecked<T: Real>(q: T, beta: T, h: T) -> T {
    let half = T::lit(0.5);
    let one_minus = T::one() - q;
    (h * h * q + T::lit(2.0) * beta * beta * q * q).sqrt()
        + half * one_minus.ln()
        + half * beta * beta * one_minus * one_minus
}

fn p_unchecked<T: Real>(q: T, beta: T, h: T) -> T {
    let half = T::lit(0.5);
    let one_minus = T::one() - q;
    half * h * h * one_minus + half * q / one_minus + half * one_minus.ln()
        + half * beta * beta * (T::one() - q * q)
}

/// TAP–Plefka radial functional
/// `B(q) = √(h²q + 2β²q²) + ½ log(1 − q) + (β²/2)(1 − q)²`.
pub fn tap_functional_b<T: Real>(q: T, params: &AsymptoticParams<T>) -> Result<T> {
    check_q(q)?;
    Ok(b_unchecked(q, params.beta, params.h))
}

/// Replica-symmetric Parisi functional
/// `P(q) = ½h²(1 − q) + ½ q/(1 − q) + ½ log(1 − q) + ½β²(1 − q²)`.
pub fn parisi_functional_p<T: Real>(q: T, params: &AsymptoticParams<T>) -> Result<T> {
    check_q(q)?;
    Ok(p_unchecked(q, params.beta, params.h))
}

/// Smallest Plefka-feasible overlap `max(0, 1 − 1/(√2β))`.
pub fn plefka_q_min<T: Real>(beta: T) -> T {
    (T::one() - T::one() / (T::SQRT_2() * beta)).max(T::zero())
}

fn on_plefka_boundary<T: Real>(q: T, beta: T) -> bool {
    (beta * (T::one() - q) - T::FRAC_1_SQRT_2()).abs() <= T::lit(CONSTRAINT_TOL)
}

/// Maximizes `B` over `{q ∈ [0, 1): β(1 − q) ≤ 1/√2}` (clipped at
/// [`Q_CEILING`]).
pub fn solve_tap_variational<T: Real>(params: &AsymptoticParams<T>) -> Result<RadialCandidate<T>> {
    let AsymptoticParams { beta, h } = *params;
    if !(beta > T::zero()) {
        return domain("beta", beta.as_f64(), "(0, inf)");
    }
    let lo = plefka_q_min(beta);
    let hi = T::lit(Q_CEILING);
    if !(lo < hi) {
        // The whole feasible set lies above the overlap ceiling.
        return domain("beta", beta.as_f64(), "(0, 1/(sqrt(2)(1 - Q_CEILING)))");
    }
    let mut best = grid_golden_max(
        |q| b_unchecked(q, beta, h),
        lo,
        hi,
        RADIAL_GRID,
        T::lit(RADIAL_TOL),
    );
    // At h = 0 and β > 1/√2, B′ has a double zero on the boundary, so B is
    // flat to rounding there and the search stops short of it. A boundary
    // value that ties the search result to rounding wins.
    let at_lo = b_unchecked(lo, beta, h);
    let ulps = T::lit(16.0) * T::epsilon() * best.value.abs().max(T::one());
    if at_lo >= best.value - ulps {
        best.arg = lo;
        best.value = at_lo;
    }
    Ok(RadialCandidate {
        q: best.arg,
        value: best.value,
        constraint_active: on_plefka_boundary(best.arg, beta),
    })
}

/// Minimizes `P` over `[0, Q_CEILING]`. `constraint_active` is always false:
/// the Parisi problem carries no Plefka constraint.
pub fn solve_parisi<T: Real>(params: &AsymptoticParams<T>) -> Result<RadialCandidate<T>> {
    let AsymptoticParams { beta, h } = *params;
    if !(beta >= T::zero()) {
        return domain("beta", beta.as_f64(), "[0, inf)");
    }
    if beta == T::zero() && h == T::zero() {
        return domain("beta", 0.0, "(0, inf) when h = 0");
    }
    let best = grid_golden_max(
        |q| -p_unchecked(q, beta, h),
        T::zero(),
        T::lit(Q_CEILING),
        RADIAL_GRID,
        T::lit(RADIAL_TOL),
    );
    Ok(RadialCandidate {
        q: best.arg,
        value: -best.value,
        constraint_active: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::adaptive_simpson;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

    fn params(beta: f64, h: f64) -> AsymptoticParams<f64> {
        AsymptoticParams::new(beta, h).unwrap()
    }

    // Oracles integrate in the angle x = √2 sin t, where μ(x)dx = (2/π)cos²t dt
    // is smooth up to the edges.
    fn semicircle_expectation(f: impl Fn(f64) -> f64) -> f64 {
        adaptive_simpson(
            |t: f64| 2.0 / PI * t.cos().powi(2) * f(SQRT_2 * t.sin()),
            -PI / 2.0,
            PI / 2.0,
            1e-13,
            16,
        )
    }

    #[test]
    fn tap_rejects_beta_beyond_the_overlap_ceiling() {
        let p = AsymptoticParams::new(1e200, 0.0).unwrap();
        assert!(solve_tap_variational(&p).is_err());
        let p = AsymptoticParams::new(1e6, 0.0).unwrap();
        assert!(solve_tap_variational(&p).unwrap().constraint_active);
    }

    #[test]
    fn density_values() {
        assert_abs_diff_eq!(mu_density(0.0), SQRT_2 / PI, epsilon = 1e-15);
        assert_abs_diff_eq!(mu_density(0.0), 0.450158, epsilon = 1e-6);
        assert_eq!(mu_density(SQRT_2), 0.0);
        assert_eq!(mu_density(2.0), 0.0);
        assert_eq!(mu_density(-2.0), 0.0);
    }

    #[test]
    fn density_normalized_and_symmetric() {
        let mass = adaptive_simpson(mu_density, -SQRT_2, SQRT_2, 1e-12, 64);
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(semicircle_expectation(|_| 1.0), 1.0, epsilon = 1e-12);
        for x in [0.1, 0.7, 1.3] {
            assert_eq!(mu_density(x), mu_density(-x));
        }
        let law = SemicircleLaw::<f64>::default();
        assert_eq!(law.support(), (-SQRT_2, SQRT_2));
    }

    #[test]
    fn classical_locations() {
        assert_abs_diff_eq!(classical_location(0.5).unwrap(), 0.0, epsilon = 1e-12);
        assert_eq!(classical_location(1.0).unwrap(), SQRT_2);
        assert_eq!(classical_location(0.0).unwrap(), -SQRT_2);
        // Independent oracle: invert a quadrature CDF by bisection.
        let quad_cdf = |x: f64| adaptive_simpson(mu_density, -SQRT_2, x, 1e-13, 64);
        let oracle = bisect(|x| quad_cdf(x) - 0.25, -SQRT_2, SQRT_2, 1e-13);
        let theta = classical_location(0.25).unwrap();
        assert_abs_diff_eq!(theta, oracle, epsilon = 1e-6);
        assert_abs_diff_eq!(theta, -0.572, epsilon = 1e-3);
        assert!(classical_location(-0.1).is_err());
        assert!(classical_location(1.1).is_err());
        assert!(classical_location(f64::NAN).is_err());
    }

    #[test]
    fn stieltjes_values() {
        assert_abs_diff_eq!(stieltjes_g(SQRT_2).unwrap(), SQRT_2, epsilon = 1e-15);
        assert_abs_diff_eq!(stieltjes_g(2.0).unwrap(), 2.0 - SQRT_2, epsilon = 1e-15);
        assert_abs_diff_eq!(stieltjes_g(100.0).unwrap(), 0.0100005, epsilon = 1e-7);
        assert!(stieltjes_g(1.4).is_err());
        for lambda in [SQRT_2 + 2e-3, 1.5, 2.0, 3.0, 10.0] {
            let oracle = semicircle_expectation(|x| 1.0 / (lambda - x));
            assert_abs_diff_eq!(stieltjes_g(lambda).unwrap(), oracle, epsilon = 1e-8);
        }
    }

    #[test]
    fn log_potential_values() {
        let at_edge = 0.5 + (SQRT_2 / 2.0).ln();
        assert_abs_diff_eq!(log_potential_h(SQRT_2).unwrap(), at_edge, epsilon = 1e-15);
        assert_abs_diff_eq!(log_potential_h(SQRT_2).unwrap(), 0.153426, epsilon = 1e-6);
        let oracle = semicircle_expectation(|x| (2.0 - x).ln());
        assert_abs_diff_eq!(log_potential_h(2.0).unwrap(), oracle, epsilon = 1e-8);
        let d = 1e-5;
        let fd = (log_potential_h(2.0 + d).unwrap() - log_potential_h(2.0 - d).unwrap()) / (2.0 * d);
        assert_abs_diff_eq!(fd, 2.0 - SQRT_2, epsilon = 1e-6);
        assert!(log_potential_h(0.0).is_err());
    }

    #[test]
    fn derivative_of_log_potential_is_stieltjes() {
        let d = 1e-5;
        for i in 0..20 {
            let lambda = SQRT_2 + 0.01 + 0.4 * i as f64;
            let fd = (log_potential_h(lambda + d).unwrap() - log_potential_h(lambda - d).unwrap())
                / (2.0 * d);
            assert_abs_diff_eq!(fd, stieltjes_g(lambda).unwrap(), epsilon = 1e-6);
        }
    }

    #[test]
    fn lambda_of_beta_values() {
        assert_abs_diff_eq!(lambda_of_beta(FRAC_1_SQRT_2).unwrap(), SQRT_2, epsilon = 1e-15);
        assert_abs_diff_eq!(lambda_of_beta(0.5).unwrap(), 1.5, epsilon = 1e-15);
        let lambda = lambda_of_beta(0.3).unwrap();
        assert_abs_diff_eq!(stieltjes_g(lambda).unwrap(), 0.6, epsilon = 1e-12);
        assert!(lambda_of_beta(0.0).is_err());
        assert!(lambda_of_beta(0.8).is_err());
    }

    #[test]
    fn free_energy_forms_agree() {
        assert_abs_diff_eq!(limiting_free_energy(FRAC_1_SQRT_2).unwrap(), 0.25, epsilon = 1e-15);
        assert_eq!(limiting_free_energy(0.0).unwrap(), 0.0);
        assert!(limiting_free_energy(-0.1).is_err());
        assert!(limiting_free_energy(0.71).is_err());
        assert_abs_diff_eq!(free_energy_from_transforms(0.5).unwrap(), 0.125, epsilon = 1e-10);
        for i in 1..=50 {
            let beta = FRAC_1_SQRT_2 * i as f64 / 50.0;
            let direct = free_energy_from_transforms(beta).unwrap();
            assert_abs_diff_eq!(direct, limiting_free_energy(beta).unwrap(), epsilon = 1e-10);
        }
    }

    #[test]
    fn functional_values() {
        let p = params(1.0, 1.0);
        assert_abs_diff_eq!(tap_functional_b(0.5, &p).unwrap(), 1.0 - 0.346574 + 0.125, epsilon = 1e-6);
        assert_abs_diff_eq!(parisi_functional_p(0.5, &p).unwrap(), 0.778426, epsilon = 1e-6);
        assert!(tap_functional_b(1.0 - 1e-9, &p).unwrap() < -8.0);
        assert!(parisi_functional_p(1.0 - 1e-9, &p).unwrap() > 1e8);
        assert!(tap_functional_b(1.0, &p).is_err());
        assert!(parisi_functional_p(-0.1, &p).is_err());
        let q = params(0.7, 1.3);
        assert_abs_diff_eq!(parisi_functional_p(0.0, &q).unwrap(), (1.3f64.powi(2) + 0.49) / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn solver_anchors() {
        let tap = solve_tap_variational(&params(1.0, 1.0)).unwrap();
        assert_abs_diff_eq!(tap.q, 0.5, epsilon = 1e-8);
        assert_abs_diff_eq!(tap.value, 0.778426, epsilon = 1e-6);
        assert!(!tap.constraint_active);

        let tap = solve_tap_variational(&params(0.3, 0.0)).unwrap();
        assert_eq!(tap.q, 0.0);
        assert_abs_diff_eq!(tap.value, 0.045, epsilon = 1e-15);

        let tap = solve_tap_variational(&params(1.0, 0.0)).unwrap();
        assert_abs_diff_eq!(tap.q, 1.0 - FRAC_1_SQRT_2, epsilon = 1e-8);
        assert_abs_diff_eq!(tap.value, 0.490927, epsilon = 1e-6);
        assert!(tap.constraint_active);

        let par = solve_parisi(&params(1.0, 1.0)).unwrap();
        assert_abs_diff_eq!(par.q, 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(par.value, 0.778426, epsilon = 1e-6);
        let par = solve_parisi(&params(1.0, 0.0)).unwrap();
        assert_abs_diff_eq!(par.q, 1.0 - FRAC_1_SQRT_2, epsilon = 1e-6);
        assert_abs_diff_eq!(par.value, 0.490927, epsilon = 1e-6);
        let par = solve_parisi(&params(0.3, 0.0)).unwrap();
        assert_eq!(par.q, 0.0);
        assert_abs_diff_eq!(par.value, 0.045, epsilon = 1e-15);

        assert!(solve_tap_variational(&params(0.0, 1.0)).is_err());
        assert!(solve_parisi(&params(0.0, 0.0)).is_err());
        assert!(solve_parisi(&params(0.0, 1.0)).is_ok());
        assert!(AsymptoticParams::new(-1.0, 0.0).is_err());
        assert!(AsymptoticParams::new(1.0, f64::NAN).is_err());
    }

    #[test]
    fn tap_equals_parisi_on_grid() {
        for bi in 1..=20 {
            for hi in 0..=6 {
                let p = params(0.1 * bi as f64, 0.25 * hi as f64);
                let b = solve_tap_variational(&p).unwrap();
                let q = solve_parisi(&p).unwrap();
                assert!((b.value - q.value).abs() <= 1e-8, "{p:?}: {b:?} vs {q:?}");
                assert!(p.beta * (1.0 - b.q) <= FRAC_1_SQRT_2 + 1e-12);
            }
        }
    }

    #[test]
    fn single_precision_instance() {
        let p = AsymptoticParams::<f32>::new(1.0, 1.0).unwrap();
        let tap = solve_tap_variational(&p).unwrap();
        assert!((tap.value - 0.778426).abs() < 1e-5);
        assert!((stieltjes_g(2.0f32).unwrap() - 0.585786).abs() < 1e-6);
        assert!(classical_location(0.5f32).unwrap().abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn b_at_zero_is_onsager(beta in 0.0f64..3.0, h in 0.0f64..3.0) {
            let p = params(beta, h);
            prop_assert_eq!(tap_functional_b(0.0, &p).unwrap(), beta * beta / 2.0);
        }

        #[test]
        fn tap_solution_is_plefka_feasible(beta in 0.01f64..4.0, h in 0.0f64..2.0) {
            let p = params(beta, h);
            let c = solve_tap_variational(&p).unwrap();
            prop_assert!(beta * (1.0 - c.q) <= FRAC_1_SQRT_2 + 1e-12);
            prop_assert!(c.q >= 0.0 && c.q < 1.0);
        }

        #[test]
        fn solvers_are_deterministic(beta in 0.05f64..2.5, h in 0.0f64..1.5) {
            let p = params(beta, h);
            prop_assert_eq!(solve_tap_variational(&p).unwrap(), solve_tap_variational(&p).unwrap());
            prop_assert_eq!(solve_parisi(&p).unwrap(), solve_parisi(&p).unwrap());
        }

        #[test]
        fn classical_location_inverts_cdf(u in 0.0f64..=1.0) {
            let x = classical_location(u).unwrap();
            prop_assert!((semicircle_cdf(x) - u).abs() < 1e-11);
        }

        #[test]
        fn stieltjes_is_decreasing(a in 1.415f64..50.0, d in 1e-3f64..10.0) {
            prop_assert!(stieltjes_g(a + d).unwrap() < stieltjes_g(a).unwrap());
        }
    }
}
