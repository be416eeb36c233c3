//! Coarse-grained spectral free energy.
//!
//! The support `[−√2, √2]` is cut into `K` equal blocks with left endpoints
//! `x_k = −√2 + (k − 1)·2√2/K`. A spectrum is binned into the blocks, block
//! weights are `μ_k = |I_k|/N`, and the block free energy is
//!
//! ```text
//! F_K(β) = β λ_K − 1/2 − log(2β)/2 − h_K(λ_K)/2,   g_K(λ_K) = 2β,
//! g_K(λ) = Σ μ_k / (λ − x_k),   h_K(λ) = Σ μ_k log(λ − x_k),
//! ```
//!
//! which equals the maximum of `β Σ x_k f_k + ½ Σ μ_k log(f_k/μ_k)` over the
//! probability simplex.
//!
//! Blocks that receive no spectral point carry zero weight and drop out of
//! every sum, so a grid stores only its occupied blocks together with their
//! nominal indices.

use crate::analytic::classical_spectrum;
use crate::error::{domain, Error, Result};
use crate::numeric::bisect;
use crate::scalar::Real;

/// Step of the central difference in [`derivative_identity_check`].
pub const DERIVATIVE_STEP: f64 = 1e-5;
/// Iteration budget of the mirror-descent simplex oracle.
pub const MIRROR_ITERATIONS: usize = 100_000;
/// Positivity floor below which the simplex oracle reports failure.
pub const SIMPLEX_FLOOR: f64 = 1e-300;

/// Partition of a spectrum into equally spaced blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseGrid<T> {
    /// Requested number of blocks `K`.
    pub nominal_k: usize,
    /// Number of spectral points that were binned.
    pub n: usize,
    /// Nominal (0-based) index of every occupied block.
    pub block_index: Vec<usize>,
    /// Left endpoints `x_k` of the occupied blocks, ascending.
    pub x: Vec<T>,
    /// Weights `μ_k = |I_k|/N` of the occupied blocks.
    pub mu: Vec<T>,
    /// Block sizes `|I_k|`.
    pub counts: Vec<usize>,
    /// Occupied-block position of each spectral point, in input order.
    pub assignment: Vec<usize>,
}

/// A point `f` of the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexWeights<T> {
    pub f: Vec<T>,
}

/// Outcome of the independent simplex maximization.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexOptimum<T> {
    /// Maximizer found by mirror ascent.
    pub weights: SimplexWeights<T>,
    /// Objective at `weights`.
    pub value: T,
    /// `f_k = μ_k / (2β(λ_K − x_k))`.
    pub closed_form: SimplexWeights<T>,
    /// Objective at `closed_form`.
    pub closed_form_value: T,
    /// Mirror steps taken before the iterate stopped moving.
    pub iterations: usize,
}

/// Block width `2√2/K`.
pub fn block_width<T: Real>(k: usize) -> T {
    T::lit(2.0) * T::SQRT_2() / T::lit(k as f64)
}

/// Left endpoint of nominal block `j` (0-based).
pub fn block_point<T: Real>(j: usize, k: usize) -> T {
    -T::SQRT_2() + T::lit(j as f64) * block_width::<T>(k)
}

/// Nominal block of `theta`: the `j` with `x_j ≤ θ < x_{j+1}`. The last
/// block is closed on the right and points beyond the support are clamped
/// into the outer blocks.
pub fn nominal_block<T: Real>(theta: T, k: usize) -> usize {
    let w = block_width::<T>(k);
    let raw = ((theta + T::SQRT_2()) / w).floor();
    let mut j = if raw <= T::zero() {
        0
    } else {
        raw.to_usize().unwrap_or(k - 1).min(k - 1)
    };
    // Settle rounding at block edges against the endpoints themselves.
    while j > 0 && theta < block_point::<T>(j, k) {
        j -= 1;
    }
    while j + 1 < k && theta >= block_point::<T>(j + 1, k) {
        j += 1;
    }
    j
}

impl<T: Real> CoarseGrid<T> {
    /// Bins the classical locations `θ_{i/N}`, `i = 1..=N`.
    pub fn counting(n: usize, k: usize) -> Result<Self> {
        if k < 1 {
            return domain("K", k as f64, "[1, N]");
        }
        if k > n {
            return domain("K", k as f64, "[1, N]");
        }
        Self::from_spectrum(&classical_spectrum::<T>(n), k)
    }

    /// Bins an arbitrary spectrum, such as the scaled eigenvalues of a sample
    /// or of a minor.
    pub fn from_spectrum(spectrum: &[T], k: usize) -> Result<Self> {
        if k < 1 {
            return domain("K", k as f64, "[1, inf)");
        }
        if spectrum.is_empty() {
            return Err(Error::Precondition("empty spectrum".into()));
        }
        let mut nominal_counts = vec![0usize; k];
        let nominal: Vec<usize> = spectrum
            .iter()
            .map(|&t| {
                let j = nominal_block(t, k);
                nominal_counts[j] += 1;
                j
            })
            .collect();

        let mut position = vec![usize::MAX; k];
        let (mut block_index, mut x, mut mu, mut counts) = (vec![], vec![], vec![], vec![]);
        let nn = T::lit(spectrum.len() as f64);
        for (j, &c) in nominal_counts.iter().enumerate() {
            if c > 0 {
                position[j] = block_index.len();
                block_index.push(j);
                x.push(block_point::<T>(j, k));
                mu.push(T::lit(c as f64) / nn);
                counts.push(c);
            }
        }
        let assignment = nominal.iter().map(|&j| position[j]).collect();
        Ok(Self {
            nominal_k: k,
            n: spectrum.len(),
            block_index,
            x,
            mu,
            counts,
            assignment,
        })
    }

    /// Grid with the nominal points and prescribed positive weights.
    pub fn from_weights(mu: &[T]) -> Result<Self> {
        let k = mu.len();
        if k == 0 {
            return domain("K", 0.0, "[1, inf)");
        }
        if mu.iter().any(|&m| !(m > T::zero())) {
            return Err(Error::Precondition("weights must be positive".into()));
        }
        let total: T = mu.iter().copied().sum();
        if (total - T::one()).abs() > T::lit(1e3) * T::epsilon() {
            return Err(Error::Precondition(format!("weights sum to {total}, not 1")));
        }
        Ok(Self {
            nominal_k: k,
            n: 0,
            block_index: (0..k).collect(),
            x: (0..k).map(|j| block_point::<T>(j, k)).collect(),
            mu: mu.to_vec(),
            counts: vec![],
            assignment: vec![],
        })
    }

    /// Number of occupied blocks.
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Rightmost occupied point `x_K`.
    pub fn top(&self) -> T {
        *self.x.last().expect("grid has at least one block")
    }

    fn g_unchecked(&self, lambda: T) -> T {
        self.x
            .iter()
            .zip(&self.mu)
            .map(|(&x, &m)| m / (lambda - x))
            .sum()
    }

    fn h_unchecked(&self, lambda: T) -> T {
        self.x
            .iter()
            .zip(&self.mu)
            .map(|(&x, &m)| m * (lambda - x).ln())
            .sum()
    }

    /// `g_K(λ) = Σ μ_k/(λ − x_k)` for `λ > x_K`.
    pub fn g_k(&self, lambda: T) -> Result<T> {
        if !(lambda > self.top()) {
            return domain("lambda", lambda.as_f64(), "(x_K, inf)");
        }
        Ok(self.g_unchecked(lambda))
    }

    /// `h_K(λ) = Σ μ_k log(λ − x_k)` for `λ > x_K`.
    pub fn h_k(&self, lambda: T) -> Result<T> {
        if !(lambda > self.top()) {
            return domain("lambda", lambda.as_f64(), "(x_K, inf)");
        }
        Ok(self.h_unchecked(lambda))
    }

    /// The unique `λ_K > x_K` with `g_K(λ_K) = 2β`.
    pub fn solve_lambda_k(&self, beta: T) -> Result<T> {
        if !(beta > T::zero()) || !beta.is_finite() {
            return domain("beta", beta.as_f64(), "(0, inf)");
        }
        let target = T::lit(2.0) * beta;
        let top = self.top();
        let scale = top.abs().max(T::one());
        let mut offset = T::lit(1e-14).max(T::lit(4.0) * T::epsilon() * scale);
        let mut lo = top + offset;
        while self.g_unchecked(lo) < target {
            offset = offset / T::lit(2.0);
            let next = top + offset;
            if next <= top {
                break;
            }
            lo = next;
        }
        let mut hi_offset = T::one();
        let mut hi = top + hi_offset;
        while self.g_unchecked(hi) > target {
            hi_offset = hi_offset * T::lit(2.0);
            hi = top + hi_offset;
            if !hi.is_finite() {
                return Err(Error::NonConvergence {
                    what: "lambda_K upper bracket",
                    iterations: 0,
                });
            }
        }
        Ok(bisect(|l| self.g_unchecked(l) - target, lo, hi, T::zero()))
    }

    /// `F_K(β) = βλ_K − 1/2 − log(2β)/2 − h_K(λ_K)/2`.
    pub fn free_energy_f_k(&self, beta: T) -> Result<T> {
        let lambda = self.solve_lambda_k(beta)?;
        Ok(self.free_energy_at(beta, lambda))
    }

    fn free_energy_at(&self, beta: T, lambda: T) -> T {
        let half = T::lit(0.5);
        beta * lambda - half - half * (T::lit(2.0) * beta).ln() - half * self.h_unchecked(lambda)
    }

    /// Simplex objective `β Σ x_k f_k + ½ Σ μ_k log(f_k/μ_k)`.
    pub fn simplex_objective(&self, beta: T, f: &[T]) -> Result<T> {
        if f.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: f.len(),
            });
        }
        let half = T::lit(0.5);
        Ok(self
            .x
            .iter()
            .zip(&self.mu)
            .zip(f)
            .map(|((&x, &m), &fk)| beta * x * fk + half * m * (fk / m).ln())
            .sum())
    }

    /// Closed-form maximizer `f_k = μ_k / (2β(λ_K − x_k))`.
    pub fn closed_form_weights(&self, beta: T) -> Result<SimplexWeights<T>> {
        let lambda = self.solve_lambda_k(beta)?;
        let two_beta = T::lit(2.0) * beta;
        Ok(SimplexWeights {
            f: self
                .x
                .iter()
                .zip(&self.mu)
                .map(|(&x, &m)| m / (two_beta * (lambda - x)))
                .collect(),
        })
    }

    /// Maximizes the simplex objective by mirror ascent, independently of
    /// the `λ_K` equation.
    ///
    /// The mirror map is the weighted Burg entropy `ψ(f) = −Σ μ_k log f_k`,
    /// under which the objective is 1-strongly concave and 1-smooth on the
    /// simplex. With step `η_t = 1/√t` the dual iterate contracts by
    /// `1 − η_t/2` per step. Iteration stops after [`MIRROR_ITERATIONS`]
    /// steps or once the iterate no longer changes in floating point.
    pub fn simplex_optimum_oracle(&self, beta: T) -> Result<SimplexOptimum<T>> {
        if !(beta > T::zero()) {
            return domain("beta", beta.as_f64(), "(0, inf)");
        }
        let k = self.len();
        let half = T::lit(0.5);
        let floor = T::lit(SIMPLEX_FLOOR).max(T::min_positive_value());
        let mut f = self.mu.clone();
        let mut z = vec![T::zero(); k];
        let mut iterations = 0;
        for t in 1..=MIRROR_ITERATIONS {
            iterations = t;
            let eta = T::one() / T::lit(t as f64).sqrt();
            for j in 0..k {
                let m = self.mu[j];
                let grad = beta * self.x[j] + half * m / f[j];
                z[j] = -m / f[j] + eta * grad;
            }
            let nu = self.normalizing_shift(&z);
            let mut moved = false;
            for j in 0..k {
                let next = self.mu[j] / (nu - z[j]);
                if !(next >= floor) {
                    return Err(Error::SimplexFloor {
                        index: j,
                        value: next.as_f64(),
                    });
                }
                if (next - f[j]).abs() > T::lit(2.0) * T::epsilon() * f[j] {
                    moved = true;
                }
                f[j] = next;
            }
            if !moved {
                break;
            }
        }
        let value = self.simplex_objective(beta, &f)?;
        let closed_form = self.closed_form_weights(beta)?;
        let closed_form_value = self.simplex_objective(beta, &closed_form.f)?;
        Ok(SimplexOptimum {
            weights: SimplexWeights { f },
            value,
            closed_form,
            closed_form_value,
            iterations,
        })
    }

    /// The `ν > max z` with `Σ μ_k/(ν − z_k) = 1`. The left side is convex
    /// and decreasing in `ν`, so Newton's method started left of the root
    /// increases monotonically to it.
    fn normalizing_shift(&self, z: &[T]) -> T {
        let (arg, zmax) = z
            .iter()
            .copied()
            .enumerate()
            .fold((0, T::neg_infinity()), |acc, (j, v)| if v > acc.1 { (j, v) } else { acc });
        let mut nu = zmax + self.mu[arg];
        for _ in 0..200 {
            let (mut phi, mut dphi) = (-T::one(), T::zero());
            for (&m, &zj) in self.mu.iter().zip(z) {
                let r = T::one() / (nu - zj);
                phi = phi + m * r;
                dphi = dphi + m * r * r;
            }
            let step = phi / dphi;
            let next = nu + step;
            if !(next > nu) {
                break;
            }
            nu = next;
            if step <= T::lit(4.0) * T::epsilon() * nu.abs().max(T::one()) {
                break;
            }
        }
        nu
    }

    /// `|F_K′(β) − (λ_K(β) − 1/(2β))|` with `F_K′` a central difference of
    /// step [`DERIVATIVE_STEP`].
    pub fn derivative_identity_check(&self, beta: T) -> Result<T> {
        if !(beta > T::lit(1e-3)) {
            return domain("beta", beta.as_f64(), "(1e-3, inf)");
        }
        let d = T::lit(DERIVATIVE_STEP);
        let fd = (self.free_energy_f_k(beta + d)? - self.free_energy_f_k(beta - d)?) / (T::lit(2.0) * d);
        let lambda = self.solve_lambda_k(beta)?;
        Ok((fd - (lambda - T::one() / (T::lit(2.0) * beta))).abs())
    }

    /// `ε = √2 − λ_K(1/√2)`. Whenever `λ_K(β) ≥ √2 − ε`, `β ≤ 1/√2`.
    pub fn plefka_threshold(&self) -> Result<T> {
        if self.nominal_k < 2 {
            return domain("K", self.nominal_k as f64, "[2, inf)");
        }
        Ok(T::SQRT_2() - self.solve_lambda_k(T::FRAC_1_SQRT_2())?)
    }

    /// `|Σ θ_i σ_i² − Σ x_k σ_[k]²|`, where `σ_[k]²` collects `σ_i²` over the
    /// spectral points falling in nominal block `k`.
    pub fn blocking_error(&self, sigma: &[T], spectrum: &[T]) -> Result<T> {
        if sigma.len() != spectrum.len() {
            return Err(Error::DimensionMismatch {
                expected: spectrum.len(),
                found: sigma.len(),
            });
        }
        let k = self.nominal_k;
        Ok(sigma
            .iter()
            .zip(spectrum)
            .map(|(&s, &t)| (t - block_point::<T>(nominal_block(t, k), k)) * s * s)
            .sum::<T>()
            .abs())
    }
}
