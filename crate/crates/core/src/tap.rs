//! Finite-N TAP free energy.
//!
//! ```text
//! H_TAP(m) = β H_N(m) + N m·h + (N/2) log(1 − |m|²) + N (β²/2)(1 − |m|²)²
//! ```
//!
//! with the Plefka condition `β(1 − |m|²) ≤ 1/√2`. Besides the functional
//! itself this module holds its projected-gradient maximizer, the
//! recentering identity and effective field, the coarse ("modified") TAP
//! energy in which the Onsager term is replaced by `F_K`, and the
//! Lagrange solver for the ground state with a field.
//!
//! Optimizers work in the eigenbasis of `S_N`, where `H_N(m)/N = Σ θ_i m_i²`
//! and every step is `O(N)`.

use rayon::prelude::*;

use crate::analytic::{plefka_q_min, solve_tap_variational, AsymptoticParams};
use crate::coarse::CoarseGrid;
use crate::error::{domain, Error, Result};
use crate::linalg::{dot, norm};
use crate::numeric::bisect;
use crate::rmt::{random_unit_vector, rng_stream, FieldVector, GoeSample};

/// Slack in [`check_plefka`].
pub const PLEFKA_TOL: f64 = 1e-12;
/// Largest admissible `|m|`.
pub const RADIUS_CEILING: f64 = 1.0 - 1e-9;
/// Number of random restarts of [`optimize_tap`].
pub const RESTARTS: usize = 20;
/// Iteration cap of a single ascent.
pub const MAX_ASCENT_ITERATIONS: usize = 100_000;
/// Per-spin projected-gradient norm regarded as converged.
pub const CONVERGED_GRADIENT: f64 = 1e-4;
/// Per-spin projected-gradient norm at which an ascent stops early.
pub const TARGET_GRADIENT: f64 = 1e-7;
/// Block count of the modified TAP energy.
pub const DEFAULT_K: usize = 50;
/// Seed-stream offset for optimizer restarts.
const RESTART_STREAM: u64 = 1000;

/// A magnetization with its TAP value and Plefka status.
#[derive(Debug, Clone, PartialEq)]
pub struct TapPoint {
    /// Magnetization in the original coordinates.
    pub m: Vec<f64>,
    pub beta: f64,
    pub field: FieldVector,
    /// `H_TAP(m)`.
    pub value: f64,
    /// `β(1 − |m|²)`.
    pub plefka_beta: f64,
    /// Per-spin projected-gradient norm at `m`.
    pub gradient_norm: f64,
    pub converged: bool,
    /// Index of the restart that produced the point.
    pub restart: usize,
    pub iterations: usize,
}

/// Maximizer of `β Σ θ_i σ_i² + h̃·σ` on the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundState {
    pub lambda_star: f64,
    /// Maximizer in eigenbasis coordinates.
    pub sigma_star: Vec<f64>,
    pub value: f64,
    /// The secular equation had no root above `θ_N` (field nearly
    /// orthogonal to the top eigenvector); the maximizer was completed
    /// along the top eigenvector.
    pub degenerate: bool,
}

fn radius_sq(m: &[f64]) -> f64 {
    dot(m, m)
}

fn check_inside(m: &[f64]) -> Result<f64> {
    let r2 = radius_sq(m);
    if r2 < 1.0 {
        Ok(r2)
    } else {
        domain("|m|", r2.sqrt(), "[0, 1)")
    }
}

fn check_dims(sample: &GoeSample, m: &[f64], field: &FieldVector) -> Result<()> {
    for found in [m.len(), field.len()] {
        if found != sample.n {
            return Err(Error::DimensionMismatch {
                expected: sample.n,
                found,
            });
        }
    }
    Ok(())
}

/// `H_TAP(m)` with `H_N(m) = √N mᵀ S_N m`.
pub fn h_tap(m: &[f64], beta: f64, field: &FieldVector, sample: &GoeSample) -> Result<f64> {
    check_dims(sample, m, field)?;
    let r2 = check_inside(m)?;
    let n = sample.n as f64;
    let rest = 1.0 - r2;
    Ok(beta * sample.hamiltonian(m)
        + n * dot(m, &field.components)
        + 0.5 * n * rest.ln()
        + n * 0.5 * beta * beta * rest * rest)
}

/// `∇H_TAP(m) = β∇H_N(m) + N h − N m (1/(1 − |m|²) + 2β²(1 − |m|²))`.
pub fn grad_h_tap(m: &[f64], beta: f64, field: &FieldVector, sample: &GoeSample) -> Result<Vec<f64>> {
    check_dims(sample, m, field)?;
    let r2 = check_inside(m)?;
    let n = sample.n as f64;
    let rest = 1.0 - r2;
    let radial = n * (1.0 / rest + 2.0 * beta * beta * rest);
    Ok(sample
        .gradient(m)
        .iter()
        .zip(&field.components)
        .zip(m)
        .map(|((g, h), mi)| beta * g + n * h - radial * mi)
        .collect())
}

/// Effective field after recentering at `m`: `h^m = (β/N)∇H_N(m) + h`.
pub fn effective_field(m: &[f64], beta: f64, field: &FieldVector, sample: &GoeSample) -> Result<FieldVector> {
    check_dims(sample, m, field)?;
    check_inside(m)?;
    let n = sample.n as f64;
    Ok(FieldVector::new(
        sample
            .gradient(m)
            .iter()
            .zip(&field.components)
            .map(|(g, h)| beta / n * g + h)
            .collect(),
    ))
}

/// Relative defect of the recentering identity
/// `βH(σ) + Nσ·h = βH(m) + Nm·h + N h^m·σ̂ + βH(σ̂)`, `σ̂ = σ − m`.
pub fn recentering_residual(
    sigma: &[f64],
    m: &[f64],
    beta: f64,
    field: &FieldVector,
    sample: &GoeSample,
) -> Result<f64> {
    check_dims(sample, sigma, field)?;
    let n = sample.n as f64;
    let hm = effective_field(m, beta, field, sample)?;
    let hat: Vec<f64> = sigma.iter().zip(m).map(|(s, mi)| s - mi).collect();
    let lhs = beta * sample.hamiltonian(sigma) + n * dot(sigma, &field.components);
    let rhs = beta * sample.hamiltonian(m)
        + n * dot(m, &field.components)
        + n * dot(&hm.components, &hat)
        + beta * sample.hamiltonian(&hat);
    Ok((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0))
}

/// Plefka's condition `β(1 − |m|²) ≤ 1/√2` up to [`PLEFKA_TOL`].
pub fn check_plefka(m: &[f64], beta: f64) -> bool {
    beta * (1.0 - radius_sq(m)) <= std::f64::consts::FRAC_1_SQRT_2 + PLEFKA_TOL
}

/// Result of one projected ascent.
#[derive(Debug, Clone)]
struct Ascent {
    m: Vec<f64>,
    value: f64,
    gradient_norm: f64,
    iterations: usize,
}

/// Projected gradient ascent with Armijo backtracking on the shell
/// `r_lo ≤ |m| ≤ r_hi`, where Euclidean projection is radial rescaling.
///
/// `objective` returns the per-spin value and gradient, or `None` outside
/// its domain.
fn ascend<F>(mut m: Vec<f64>, r_lo: f64, r_hi: f64, objective: F) -> Ascent
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let project = |v: &mut Vec<f64>| {
        let r = norm(v);
        if r > r_hi {
            v.iter_mut().for_each(|x| *x *= r_hi / r);
        } else if r < r_lo {
            if r == 0.0 {
                let last = v.len() - 1;
                v[last] = r_lo;
            } else {
                v.iter_mut().for_each(|x| *x *= r_lo / r);
            }
        }
    };
    let stationarity = |m: &[f64], g: &[f64]| {
        let r = norm(m);
        let radial = if r > 0.0 { dot(g, m) / r } else { 0.0 };
        let pinned = (r <= r_lo * (1.0 + 1e-12) && radial < 0.0) || (r >= r_hi * (1.0 - 1e-15) && radial > 0.0);
        if pinned {
            (dot(g, g) - radial * radial).max(0.0).sqrt()
        } else {
            norm(g)
        }
    };

    project(&mut m);
    let (mut value, mut grad) = objective(&m).expect("projected start lies in the domain");
    let mut step = 0.1;
    let mut iterations = 0;
    let mut pg = stationarity(&m, &grad);
    while iterations < MAX_ASCENT_ITERATIONS && pg > TARGET_GRADIENT {
        iterations += 1;
        let mut accepted = false;
        while step > 1e-18 {
            let mut trial: Vec<f64> = m.iter().zip(&grad).map(|(x, g)| x + step * g).collect();
            project(&mut trial);
            if let Some((tv, tg)) = objective(&trial) {
                let gain: f64 = grad.iter().zip(trial.iter().zip(&m)).map(|(g, (t, x))| g * (t - x)).sum();
                if tv >= value + 1e-4 * gain && tv >= value {
                    let moved = trial != m;
                    m = trial;
                    value = tv;
                    grad = tg;
                    accepted = moved;
                    step = (step * 2.0).min(1e3);
                    break;
                }
            }
            step *= 0.5;
        }
        pg = stationarity(&m, &grad);
        if !accepted {
            break;
        }
    }
    Ascent {
        m,
        value,
        gradient_norm: pg,
        iterations,
    }
}

/// Per-spin TAP functional in eigen coordinates.
fn tap_objective_eigen(theta: &[f64], h: &[f64], beta: f64, m: &[f64]) -> Option<(f64, Vec<f64>)> {
    let r2 = radius_sq(m);
    if !(r2 < 1.0) {
        return None;
    }
    let rest = 1.0 - r2;
    let energy: f64 = theta.iter().zip(m).map(|(t, x)| t * x * x).sum();
    let value = beta * energy + dot(m, h) + 0.5 * rest.ln() + 0.5 * beta * beta * rest * rest;
    let radial = 1.0 / rest + 2.0 * beta * beta * rest;
    let grad = theta
        .iter()
        .zip(h)
        .zip(m)
        .map(|((t, hi), x)| 2.0 * beta * t * x + hi - radial * x)
        .collect();
    Some((value, grad))
}

/// Radii used to seed the restarts: `0.1` and a band around `√q*`.
fn restart_radii(beta: f64, h: f64) -> [f64; 4] {
    let q = AsymptoticParams::new(beta, h)
        .and_then(|p| solve_tap_variational(&p))
        .map(|c| c.q)
        .unwrap_or(0.0);
    let center = q.sqrt();
    [0.1, (center - 0.1).max(0.05), center.max(0.05), (center + 0.1).min(0.95)]
}

/// Maximizes `H_TAP` under the Plefka condition.
///
/// Projected gradient ascent runs from [`RESTARTS`] seeded starting points
/// in parallel; the constraint set `{|m|² ≥ 1 − 1/(√2β)} ∩ {|m| ≤ 1 − 1e−9}`
/// is a spherical shell, on which projection is radial rescaling. The best
/// restart wins, ties going to the lowest restart index.
pub fn optimize_tap(beta: f64, field: &FieldVector, sample: &GoeSample, seed: u64) -> Result<TapPoint> {
    if !(beta > 0.0) || !beta.is_finite() {
        return domain("beta", beta, "(0, inf)");
    }
    if field.len() != sample.n {
        return Err(Error::DimensionMismatch {
            expected: sample.n,
            found: field.len(),
        });
    }
    let n = sample.n;
    let h_tilde = sample.to_eigenbasis(&field.components);
    let theta = &sample.spectrum;
    let r_lo = plefka_q_min(beta).sqrt();
    let radii = restart_radii(beta, field.magnitude);

    let runs: Vec<Ascent> = (0..RESTARTS)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_stream(seed, RESTART_STREAM + r as u64);
            let mut init = random_unit_vector(&mut rng, n);
            let radius = radii[r % radii.len()];
            init.iter_mut().for_each(|x| *x *= radius);
            ascend(init, r_lo, RADIUS_CEILING, |m| tap_objective_eigen(theta, &h_tilde, beta, m))
        })
        .collect();

    let (restart, best) = runs
        .iter()
        .enumerate()
        .fold(None::<(usize, &Ascent)>, |acc, (i, a)| match acc {
            Some((_, b)) if b.value >= a.value => acc,
            _ => Some((i, a)),
        })
        .expect("at least one restart");
    if runs.iter().all(|a| a.gradient_norm > CONVERGED_GRADIENT) {
        return Err(Error::NonConvergence {
            what: "TAP projected gradient ascent",
            iterations: MAX_ASCENT_ITERATIONS,
        });
    }
    let m = sample.from_eigenbasis(&best.m);
    let r2 = radius_sq(&best.m);
    Ok(TapPoint {
        m,
        beta,
        field: field.clone(),
        value: n as f64 * best.value,
        plefka_beta: beta * (1.0 - r2),
        gradient_norm: best.gradient_norm,
        converged: best.gradient_norm <= CONVERGED_GRADIENT,
        restart,
        iterations: best.iterations,
    })
}

/// `|H_TAP(m*)/N − sup B|` for a field of magnitude `h` in a random
/// direction derived from the sample seed.
pub fn radial_reduction_check(beta: f64, h: f64, sample: &GoeSample) -> Result<f64> {
    let field = FieldVector::random(sample.n, h, sample.seed);
    let point = optimize_tap(beta, &field, sample, sample.seed)?;
    let target = solve_tap_variational(&AsymptoticParams::new(beta, h)?)?;
    Ok((point.value / sample.n as f64 - target.value).abs())
}

/// Local maximum of the modified TAP energy.
#[derive(Debug, Clone, PartialEq)]
pub struct ModifiedTapPoint {
    /// Magnetization in the coordinates of `spectrum`.
    pub m: Vec<f64>,
    /// `H̃^K_TAP(m)`.
    pub value: f64,
    /// Per-spin gradient norm at `m`.
    pub gradient_norm: f64,
    pub iterations: usize,
}

/// Second-order information at a critical point of the modified TAP energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModifiedTapDiagnostic {
    /// Second largest eigenvalue of `A = diag(θ) − λ_K(β(1 − |m|²)) I`.
    pub second_eigenvalue: f64,
    /// `λ_K(β(1 − |m|²))`.
    pub lambda_k: f64,
    /// `β(1 − |m|²)`.
    pub plefka_beta: f64,
    /// The grid's threshold `ε`.
    pub epsilon: f64,
    /// `second_eigenvalue ≤ 0` and `λ_K ≥ √2 − ε`, which forces
    /// `β(1 − |m|²) ≤ 1/√2`.
    pub plefka_implied: bool,
}

fn modified_objective(
    theta: &[f64],
    h: &[f64],
    beta: f64,
    grid: &CoarseGrid<f64>,
    m: &[f64],
) -> Option<(f64, Vec<f64>)> {
    let r2 = radius_sq(m);
    if !(r2 < 1.0) {
        return None;
    }
    let b = beta * (1.0 - r2);
    let lambda = grid.solve_lambda_k(b).ok()?;
    let half = 0.5;
    let f_k = b * lambda - half - half * (2.0 * b).ln() - half * grid.h_k(lambda).ok()?;
    let energy: f64 = theta.iter().zip(m).map(|(t, x)| t * x * x).sum();
    let value = beta * energy + dot(m, h) + half * (1.0 - r2).ln() + f_k;
    let grad = theta
        .iter()
        .zip(h)
        .zip(m)
        .map(|((t, hi), x)| 2.0 * beta * t * x + hi - 2.0 * beta * lambda * x)
        .collect();
    Some((value, grad))
}

/// `H̃^K_TAP(m) = N [β Σ θ_i m_i² + m·h̃ + ½ log(1 − |m|²) + F_K(β(1 − |m|²))]`
/// for a diagonal spectrum `θ`.
pub fn modified_tap_value(m: &[f64], beta: f64, field: &[f64], spectrum: &[f64], grid: &CoarseGrid<f64>) -> Result<f64> {
    check_inside(m)?;
    let (v, _) = modified_objective(spectrum, field, beta, grid, m)
        .ok_or_else(|| Error::Precondition("modified TAP energy undefined at m".into()))?;
    Ok(spectrum.len() as f64 * v)
}

/// `∇H̃^K_TAP(m) = N [2β θ∘m + h̃ − 2β λ_K(β(1 − |m|²)) m]`.
pub fn modified_tap_gradient(
    m: &[f64],
    beta: f64,
    field: &[f64],
    spectrum: &[f64],
    grid: &CoarseGrid<f64>,
) -> Result<Vec<f64>> {
    check_inside(m)?;
    let n = spectrum.len() as f64;
    let (_, g) = modified_objective(spectrum, field, beta, grid, m)
        .ok_or_else(|| Error::Precondition("modified TAP energy undefined at m".into()))?;
    Ok(g.into_iter().map(|x| n * x).collect())
}

/// Gradient ascent on the modified TAP energy over the open unit ball
/// (no Plefka constraint), started from a seeded random point.
pub fn optimize_modified_tap(
    beta: f64,
    field: &[f64],
    spectrum: &[f64],
    grid: &CoarseGrid<f64>,
    seed: u64,
) -> Result<ModifiedTapPoint> {
    if !(beta > 0.0) {
        return domain("beta", beta, "(0, inf)");
    }
    if field.len() != spectrum.len() {
        return Err(Error::DimensionMismatch {
            expected: spectrum.len(),
            found: field.len(),
        });
    }
    let mut rng = rng_stream(seed, RESTART_STREAM);
    let mut init = random_unit_vector(&mut rng, spectrum.len());
    init.iter_mut().for_each(|x| *x *= 0.5);
    let run = ascend(init, 0.0, RADIUS_CEILING, |m| modified_objective(spectrum, field, beta, grid, m));
    Ok(ModifiedTapPoint {
        value: spectrum.len() as f64 * run.value,
        m: run.m,
        gradient_norm: run.gradient_norm,
        iterations: run.iterations,
    })
}

/// Hessian diagnostic at a near-critical point of the modified TAP energy.
///
/// Up to a rank-one term the Hessian is a positive multiple of
/// `A = diag(θ) − λ_K I`, so at a local maximum the second largest
/// eigenvalue `θ_{N−1} − λ_K` of `A` is non-positive.
pub fn modified_tap_local_max_diagnostic(
    m: &[f64],
    beta: f64,
    field: &[f64],
    spectrum: &[f64],
    grid: &CoarseGrid<f64>,
) -> Result<ModifiedTapDiagnostic> {
    let n = spectrum.len();
    if n < 2 {
        return domain("N", n as f64, "[2, inf)");
    }
    let grad = modified_tap_gradient(m, beta, field, spectrum, grid)?;
    let gnorm = norm(&grad);
    if gnorm > 1e-3 * n as f64 {
        return Err(Error::Precondition(format!(
            "gradient norm {gnorm:e} exceeds 1e-3 N at the supplied point"
        )));
    }
    let plefka_beta = beta * (1.0 - radius_sq(m));
    let lambda_k = grid.solve_lambda_k(plefka_beta)?;
    let mut sorted = spectrum.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite spectrum"));
    let second_eigenvalue = sorted[n - 2] - lambda_k;
    let epsilon = grid.plefka_threshold()?;
    Ok(ModifiedTapDiagnostic {
        second_eigenvalue,
        lambda_k,
        plefka_beta,
        epsilon,
        plefka_implied: second_eigenvalue <= 0.0 && lambda_k >= std::f64::consts::SQRT_2 - epsilon,
    })
}

/// Maximizes `β Σ θ_i σ_i² + h̃·σ` over the unit sphere (eigen
/// coordinates).
///
/// Stationarity gives `σ_i(λ) = h̃_i / (2β(λ − θ_i))`; the multiplier solves
/// `Σ σ_i(λ)² = 1` above the top eigenvalue. With no field the maximizer is
/// the top eigenvector. When the field is nearly orthogonal to the top
/// eigenvector the equation has no root above `θ_N`; the maximizer then
/// sits at `λ = θ_N` and is completed along the top eigenvector.
pub fn ground_state_lagrange(spectrum: &[f64], field: &[f64], beta: f64) -> Result<GroundState> {
    let n = spectrum.len();
    if n == 0 || field.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: field.len(),
        });
    }
    if !(beta > 0.0) {
        return domain("beta", beta, "(0, inf)");
    }
    let top_index = (0..n)
        .max_by(|&a, &b| spectrum[a].partial_cmp(&spectrum[b]).expect("finite spectrum"))
        .expect("nonempty");
    let top = spectrum[top_index];
    let value_of = |s: &[f64]| beta * spectrum.iter().zip(s).map(|(t, x)| t * x * x).sum::<f64>() + dot(field, s);

    if field.iter().all(|&h| h == 0.0) {
        let mut sigma = vec![0.0; n];
        sigma[top_index] = 1.0;
        return Ok(GroundState {
            lambda_star: top,
            value: beta * top,
            sigma_star: sigma,
            degenerate: false,
        });
    }

    let sigma_at = |lambda: f64| -> Vec<f64> {
        spectrum
            .iter()
            .zip(field)
            .map(|(t, h)| h / (2.0 * beta * (lambda - t)))
            .collect()
    };
    let excess = |lambda: f64| radius_sq(&sigma_at(lambda)) - 1.0;

    let lo = top + 1e-12;
    if excess(lo) < 0.0 {
        // Hard case: λ* = θ_N and the top coordinate takes the slack.
        let mut sigma: Vec<f64> = spectrum
            .iter()
            .zip(field)
            .enumerate()
            .map(|(i, (t, h))| if i == top_index || *t >= top { 0.0 } else { h / (2.0 * beta * (top - t)) })
            .collect();
        let slack = (1.0 - radius_sq(&sigma)).max(0.0).sqrt();
        sigma[top_index] = if field[top_index] < 0.0 { -slack } else { slack };
        return Ok(GroundState {
            lambda_star: top,
            value: value_of(&sigma),
            sigma_star: sigma,
            degenerate: true,
        });
    }
    let mut hi = top + 1e3;
    while excess(hi) > 0.0 {
        hi = top + 2.0 * (hi - top);
    }
    let lambda = bisect(excess, lo, hi, 0.0);
    let mut sigma = sigma_at(lambda);
    let r = norm(&sigma);
    sigma.iter_mut().for_each(|x| *x /= r);
    Ok(GroundState {
        lambda_star: lambda,
        value: value_of(&sigma),
        sigma_star: sigma,
        degenerate: false,
    })
}

/// Tangential part of the gradient `2βθ∘σ + h̃` at `σ`; zero at a
/// constrained critical point.
pub fn ground_state_stationarity(gs: &GroundState, spectrum: &[f64], field: &[f64], beta: f64) -> f64 {
    let s = &gs.sigma_star;
    let g: Vec<f64> = spectrum
        .iter()
        .zip(field)
        .zip(s)
        .map(|((t, h), x)| 2.0 * beta * t * x + h)
        .collect();
    let c = dot(&g, s);
    g.iter()
        .zip(s)
        .map(|(gi, x)| (gi - c * x).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::classical_spectrum;
    use crate::linalg::Matrix;
    use crate::rmt::{gaussian_vector, sample_goe};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

    fn ball_point(n: usize, radius: f64, seed: u64) -> Vec<f64> {
        let mut rng = rng_stream(seed, 77);
        let mut v = random_unit_vector(&mut rng, n);
        v.iter_mut().for_each(|x| *x *= radius);
        v
    }

    #[test]
    fn h_tap_at_origin() {
        let s = sample_goe(100, 1).unwrap();
        let f = FieldVector::random(100, 0.5, 1);
        let zero = vec![0.0; 100];
        assert_abs_diff_eq!(h_tap(&zero, 0.3, &f, &s).unwrap(), 100.0 * 0.045, epsilon = 1e-12);
        assert_abs_diff_eq!(h_tap(&zero, FRAC_1_SQRT_2, &f, &s).unwrap(), 25.0, epsilon = 1e-12);
        let g = grad_h_tap(&zero, 1.0, &f, &s).unwrap();
        for (gi, hi) in g.iter().zip(&f.components) {
            assert_eq!(*gi, 100.0 * hi);
        }
        let g0 = grad_h_tap(&zero, 1.0, &FieldVector::zeros(100), &s).unwrap();
        assert!(g0.iter().all(|&v| v == 0.0));
        let mut out = zero.clone();
        out[0] = 1.0;
        assert!(h_tap(&out, 1.0, &f, &s).is_err());
        assert!(grad_h_tap(&out, 1.0, &f, &s).is_err());
    }

    #[test]
    fn h_tap_matches_explicit_sum() {
        let n = 30;
        let s = sample_goe(n, 2).unwrap();
        let f = FieldVector::random(n, 0.8, 2);
        let m = ball_point(n, 0.5, 2);
        let mut quad = 0.0;
        for i in 0..n {
            for j in 0..n {
                quad += m[i] * s.matrix[(i, j)] * m[j];
            }
        }
        let nn = n as f64;
        let r2: f64 = m.iter().map(|x| x * x).sum();
        let beta = 1.3;
        let oracle = beta * nn.sqrt() * quad
            + nn * m.iter().zip(&f.components).map(|(a, b)| a * b).sum::<f64>()
            + nn / 2.0 * (1.0 - r2).ln()
            + nn * beta * beta / 2.0 * (1.0 - r2).powi(2);
        assert_abs_diff_eq!(h_tap(&m, beta, &f, &s).unwrap(), oracle, epsilon = 1e-10 * oracle.abs());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..3 {
            let n = 40;
            let s = sample_goe(n, seed).unwrap();
            let f = FieldVector::random(n, 0.7, seed);
            for p in 0..20 {
                let m = ball_point(n, 0.1 + 0.04 * p as f64, seed * 100 + p);
                let beta = 0.4 + 0.05 * p as f64;
                let g = grad_h_tap(&m, beta, &f, &s).unwrap();
                let d = 1e-6;
                let mut fd = vec![0.0; n];
                for i in 0..n {
                    let mut a = m.clone();
                    let mut b = m.clone();
                    a[i] += d;
                    b[i] -= d;
                    fd[i] = (h_tap(&a, beta, &f, &s).unwrap() - h_tap(&b, beta, &f, &s).unwrap()) / (2.0 * d);
                }
                let diff: f64 = g.iter().zip(&fd).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                assert!(diff <= 1e-5 * norm(&g), "seed {seed} point {p}: {diff}");
            }
        }
    }

    #[test]
    fn recentering_identity_and_effective_field() {
        let n = 50;
        let s = sample_goe(n, 3).unwrap();
        let f = FieldVector::random(n, 1.0, 3);
        let zero = vec![0.0; n];
        assert_eq!(effective_field(&zero, 1.0, &f, &s).unwrap().components, f.components);
        let mut rng = rng_stream(3, 5);
        for k in 0..100 {
            let sigma = random_unit_vector(&mut rng, n);
            let m = ball_point(n, 0.6, k);
            assert!(recentering_residual(&sigma, &m, 0.9, &f, &s).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn effective_field_bound() {
        let n = 400;
        let s = sample_goe(n, 4).unwrap();
        let f = FieldVector::random(n, 0.5, 4);
        let beta = 1.0;
        for seed in 0..5 {
            let m = ball_point(n, 0.9, seed);
            let hm = effective_field(&m, beta, &f, &s).unwrap();
            assert!(hm.magnitude <= beta * 2.0 * SQRT_2 * 1.3 + 0.5);
        }
    }

    #[test]
    fn plefka_condition() {
        assert!(check_plefka(&[0.0, 0.0], 0.5));
        assert!(!check_plefka(&[0.0, 0.0], 1.0));
        let r = (1.0 - 1.0 / SQRT_2).sqrt();
        assert!(check_plefka(&[r, 0.0], 1.0));
        assert!(!check_plefka(&[r * 0.99, 0.0], 1.0));
    }

    #[test]
    fn optimizer_high_temperature_origin() {
        let s = sample_goe(100, 5).unwrap();
        let f = FieldVector::zeros(100);
        let p = optimize_tap(0.3, &f, &s, 5).unwrap();
        assert!(norm(&p.m) < 1e-3);
        assert_abs_diff_eq!(p.value / 100.0, 0.045, epsilon = 1e-6);
        assert!(p.converged);
        assert!(check_plefka(&p.m, 0.3));
        assert_abs_diff_eq!(p.plefka_beta, 0.3 * (1.0 - radius_sq(&p.m)), epsilon = 1e-12);
    }

    #[test]
    fn optimizer_matches_radial_solution() {
        let s = sample_goe(200, 6).unwrap();
        let f = FieldVector::random(200, 0.5, 6);
        let p = optimize_tap(1.0, &f, &s, 6).unwrap();
        let target = solve_tap_variational(&AsymptoticParams::new(1.0, 0.5).unwrap()).unwrap();
        assert!((p.value / 200.0 - target.value).abs() <= 0.05);
        assert!(check_plefka(&p.m, 1.0));
        assert_abs_diff_eq!(p.value, h_tap(&p.m, 1.0, &f, &s).unwrap(), epsilon = 1e-8 * p.value.abs());
        assert_eq!(p, optimize_tap(1.0, &f, &s, 6).unwrap());
    }

    #[test]
    fn optimizer_is_rotation_covariant() {
        let n = 60;
        let s = sample_goe(n, 7).unwrap();
        let f = FieldVector::random(n, 0.5, 7);
        let rot = sample_goe(n, 99).unwrap().basis;
        let rotated = rot.matmul(&s.matrix).matmul(&rot.transpose());
        let sym = Matrix::from_fn(n, n, |i, j| 0.5 * (rotated[(i, j)] + rotated[(j, i)]));
        let s2 = GoeSample::from_matrix(sym, 7).unwrap();
        let f2 = FieldVector::new(rot.matvec(&f.components));
        let a = optimize_tap(1.0, &f, &s, 7).unwrap();
        let b = optimize_tap(1.0, &f2, &s2, 7).unwrap();
        assert!((a.value - b.value).abs() <= 1e-6 * n as f64);
        let ra = rot.matvec(&a.m);
        let dist: f64 = ra.iter().zip(&b.m).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(dist <= 1e-3, "{dist}");
    }

    #[test]
    fn modified_gradient_matches_finite_differences() {
        let n = 30;
        let theta = classical_spectrum::<f64>(n);
        let grid = CoarseGrid::counting(2000, 20).unwrap();
        let mut rng = rng_stream(8, 1);
        let h: Vec<f64> = gaussian_vector(&mut rng, n).iter().map(|x| 0.1 * x).collect();
        let m = ball_point(n, 0.6, 8);
        let g = modified_tap_gradient(&m, 1.0, &h, &theta, &grid).unwrap();
        let d = 1e-6;
        for i in 0..n {
            let mut a = m.clone();
            let mut b = m.clone();
            a[i] += d;
            b[i] -= d;
            let fd = (modified_tap_value(&a, 1.0, &h, &theta, &grid).unwrap()
                - modified_tap_value(&b, 1.0, &h, &theta, &grid).unwrap())
                / (2.0 * d);
            assert_abs_diff_eq!(fd, g[i], epsilon = 1e-5 * norm(&g));
        }
    }

    #[test]
    fn modified_tap_local_max_is_plefka() {
        let n = 300;
        let theta = classical_spectrum::<f64>(n);
        let grid = CoarseGrid::counting(10_000, DEFAULT_K).unwrap();
        let h = FieldVector::random(n, 0.5, 9).components;
        let p = optimize_modified_tap(1.0, &h, &theta, &grid, 9).unwrap();
        assert!(p.gradient_norm <= 1e-3);
        let d = modified_tap_local_max_diagnostic(&p.m, 1.0, &h, &theta, &grid).unwrap();
        assert!(d.plefka_implied, "{d:?}");
        assert!(d.plefka_beta <= FRAC_1_SQRT_2);
        assert_abs_diff_eq!(d.second_eigenvalue, theta[n - 2] - d.lambda_k, epsilon = 0.0);

        let zero = vec![0.0; n];
        let hot = modified_tap_local_max_diagnostic(&zero, 0.3, &zero, &theta, &grid).unwrap();
        assert!(hot.lambda_k > SQRT_2);
        assert!(hot.plefka_implied);

        let far = ball_point(n, 0.5, 1);
        assert!(modified_tap_local_max_diagnostic(&far, 1.0, &h, &theta, &grid).is_err());
    }

    #[test]
    fn ground_state_limits() {
        let s = sample_goe(500, 10).unwrap();
        let none = vec![0.0; 500];
        let gs = ground_state_lagrange(&s.spectrum, &none, FRAC_1_SQRT_2).unwrap();
        assert_abs_diff_eq!(gs.value, FRAC_1_SQRT_2 * s.top(), epsilon = 1e-15);
        assert!((gs.value - 1.0).abs() <= 0.1);

        let f = FieldVector::random(500, 1.0, 10);
        let ht = s.to_eigenbasis(&f.components);
        let tiny = ground_state_lagrange(&s.spectrum, &ht, 1e-9).unwrap();
        assert_abs_diff_eq!(tiny.value, 1.0, epsilon = 1e-6);

        let gs = ground_state_lagrange(&s.spectrum, &ht, 0.5).unwrap();
        assert!((gs.value - 1.5f64.sqrt()).abs() <= 0.08);
        assert_abs_diff_eq!(norm(&gs.sigma_star), 1.0, epsilon = 1e-10);
        assert!(ground_state_stationarity(&gs, &s.spectrum, &ht, 0.5) <= 1e-6);
        assert!(gs.lambda_star > s.top());
    }

    #[test]
    fn ground_state_hard_case() {
        // Field orthogonal to the top eigenvector and small.
        let spectrum = vec![-1.0, 0.0, 1.0];
        let field = vec![0.01, 0.02, 0.0];
        let gs = ground_state_lagrange(&spectrum, &field, 1.0).unwrap();
        assert!(gs.degenerate);
        assert_abs_diff_eq!(norm(&gs.sigma_star), 1.0, epsilon = 1e-12);
        assert!(ground_state_stationarity(&gs, &spectrum, &field, 1.0) <= 1e-12);
        // Brute force over the sphere confirms the value.
        let mut best = f64::NEG_INFINITY;
        for a in 0..400 {
            for b in 0..400 {
                let (t, p) = (a as f64 * std::f64::consts::PI / 399.0, b as f64 * 2.0 * std::f64::consts::PI / 400.0);
                let s = [t.sin() * p.cos(), t.sin() * p.sin(), t.cos()];
                let v: f64 = (0..3).map(|i| spectrum[i] * s[i] * s[i] + field[i] * s[i]).sum();
                best = best.max(v);
            }
        }
        assert!(gs.value >= best - 1e-12 && gs.value - best <= 1e-4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn ground_state_is_stationary_unit_vector(
            seed in any::<u64>(), beta in 0.05f64..3.0, h in 0.01f64..2.0
        ) {
            let s = sample_goe(25, seed).unwrap();
            let f = FieldVector::random(25, h, seed);
            let ht = s.to_eigenbasis(&f.components);
            let gs = ground_state_lagrange(&s.spectrum, &ht, beta).unwrap();
            prop_assert!((norm(&gs.sigma_star) - 1.0).abs() <= 1e-10);
            prop_assert!(ground_state_stationarity(&gs, &s.spectrum, &ht, beta) <= 1e-6 * (1.0 + beta));
            // The maximum beats any coordinate direction.
            for i in 0..25 {
                let v = beta * s.spectrum[i] + ht[i].abs();
                prop_assert!(gs.value >= v - 1e-9);
            }
        }

        #[test]
        fn plefka_point_is_feasible(seed in any::<u64>(), beta in 0.1f64..2.5, h in 0.0f64..1.5) {
            let s = sample_goe(20, seed).unwrap();
            let f = FieldVector::random(20, h, seed);
            let p = optimize_tap(beta, &f, &s, seed).unwrap();
            prop_assert!(check_plefka(&p.m, beta));
            prop_assert!(norm(&p.m) < 1.0);
        }
    }
}
