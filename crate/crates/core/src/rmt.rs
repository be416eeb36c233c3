//! GOE sampling and the spectral facts used downstream.
//!
//! A sample is `S_N = (J + Jᵀ)/2` with iid standard Gaussian `J`. Its
//! eigenvalues are stored rescaled, `θ_i = eig_i(S_N)/√N`, so that the
//! Hamiltonian `H_N(σ) = √N σᵀ S_N σ` reads `N Σ θ_i σ̃_i²` in the eigenbasis.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::analytic::{classical_location, classical_spectrum};
use crate::error::{domain, Error, Result};
use crate::linalg::{dot, eigen_symmetric, modified_gram_schmidt, norm, Matrix};

/// Slack allowed in the interlacing inequalities for rounding.
pub const INTERLACING_TOL: f64 = 1e-9;

/// Deterministic generator for `(seed, stream)`. Distinct streams of one
/// seed are independent, which is how one seed drives several consumers.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream used for the matrix entries of [`sample_goe`].
pub const MATRIX_STREAM: u64 = 0;
/// Stream used for random fields.
pub const FIELD_STREAM: u64 = 1;
/// Stream used for random minors.
pub const MINOR_STREAM: u64 = 2;

pub fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Uniform point on the unit sphere of dimension `n`.
pub fn random_unit_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let mut v = gaussian_vector(rng, n);
        let r = norm(&v);
        if r > 0.0 {
            v.iter_mut().for_each(|x| *x /= r);
            return v;
        }
    }
}

/// A GOE matrix with its eigendecomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct GoeSample {
    pub n: usize,
    /// `S_N`, exactly symmetric.
    pub matrix: Matrix<f64>,
    /// `θ_i = eig_i(S_N)/√N`, ascending.
    pub spectrum: Vec<f64>,
    /// Orthogonal matrix of eigenvectors (columns).
    pub basis: Matrix<f64>,
    pub seed: u64,
}

/// The symmetric matrix `(J + Jᵀ)/2` for the given seed, without its
/// eigendecomposition.
pub fn goe_matrix(n: usize, seed: u64) -> Matrix<f64> {
    let mut rng = rng_stream(seed, MATRIX_STREAM);
    let j = Matrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
    Matrix::from_fn(n, n, |a, b| {
        if a == b {
            j[(a, a)]
        } else {
            0.5 * (j[(a, b)] + j[(b, a)])
        }
    })
}

/// Draws `S_N` from `seed` and diagonalizes it.
pub fn sample_goe(n: usize, seed: u64) -> Result<GoeSample> {
    if n < 2 {
        return domain("n", n as f64, "[2, inf)");
    }
    GoeSample::from_matrix(goe_matrix(n, seed), seed)
}

impl GoeSample {
    /// Wraps a given symmetric matrix, e.g. a rotated sample.
    pub fn from_matrix(matrix: Matrix<f64>, seed: u64) -> Result<Self> {
        let n = matrix.rows();
        if !matrix.is_symmetric(1e-12 * matrix.max_abs().max(1.0)) {
            return Err(Error::Precondition("matrix is not symmetric".into()));
        }
        let eig = eigen_symmetric(&matrix)?;
        let root = (n as f64).sqrt();
        Ok(Self {
            n,
            matrix,
            spectrum: eig.values.iter().map(|v| v / root).collect(),
            basis: eig.vectors,
            seed,
        })
    }

    /// Coordinates of `v` in the eigenbasis, `basisᵀ v`.
    pub fn to_eigenbasis(&self, v: &[f64]) -> Vec<f64> {
        self.basis.matvec_t(v)
    }

    /// Inverse of [`GoeSample::to_eigenbasis`].
    pub fn from_eigenbasis(&self, v: &[f64]) -> Vec<f64> {
        self.basis.matvec(v)
    }

    /// `H_N(σ) = √N σᵀ S_N σ`.
    pub fn hamiltonian(&self, sigma: &[f64]) -> f64 {
        (self.n as f64).sqrt() * self.matrix.quadratic_form(sigma)
    }

    /// `∇H_N(σ) = 2√N S_N σ`.
    pub fn gradient(&self, sigma: &[f64]) -> Vec<f64> {
        let c = 2.0 * (self.n as f64).sqrt();
        self.matrix.matvec(sigma).into_iter().map(|v| c * v).collect()
    }

    /// `H_N` evaluated from eigenbasis coordinates, `N Σ θ_i σ̃_i²`.
    pub fn hamiltonian_eigen(&self, sigma_tilde: &[f64]) -> f64 {
        self.n as f64
            * self
                .spectrum
                .iter()
                .zip(sigma_tilde)
                .map(|(t, s)| t * s * s)
                .sum::<f64>()
    }

    /// Largest rescaled eigenvalue `θ_N`.
    pub fn top(&self) -> f64 {
        *self.spectrum.last().expect("nonempty spectrum")
    }
}

/// External field `h_N` with its cached norm.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldVector {
    pub components: Vec<f64>,
    pub magnitude: f64,
}

impl FieldVector {
    pub fn new(components: Vec<f64>) -> Self {
        let magnitude = norm(&components);
        Self {
            components,
            magnitude,
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(vec![0.0; n])
    }

    /// Uniformly random direction scaled to `magnitude`.
    pub fn random(n: usize, magnitude: f64, seed: u64) -> Self {
        let mut rng = rng_stream(seed, FIELD_STREAM);
        let mut v = random_unit_vector(&mut rng, n);
        v.iter_mut().for_each(|x| *x *= magnitude);
        Self {
            components: v,
            magnitude,
        }
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

/// `max_i |θ_i − θ_{i/N}|`.
pub fn rigidity_report(sample: &GoeSample) -> f64 {
    classical_spectrum::<f64>(sample.n)
        .iter()
        .zip(&sample.spectrum)
        .fold(0.0, |m, (c, t)| m.max((c - t).abs()))
}

/// `S` compressed to the orthogonal complement of `directions`, in a basis
/// whose last vectors span the directions. Returns the `(n − d) × (n − d)`
/// leading block.
///
/// Reflectors `P_j = I − τ v vᵀ` send the directions to the trailing
/// coordinate vectors; each is applied as the rank-two update
/// `P S P = S − v wᵀ − w vᵀ` with `p = τ S v`, `w = p − (τ/2)(vᵀp) v`.
pub fn compress_away(matrix: &Matrix<f64>, directions: &[Vec<f64>]) -> Result<Matrix<f64>> {
    let n = matrix.rows();
    let q = modified_gram_schmidt(directions, 1e-12);
    if q.len() != directions.len() {
        return Err(Error::Precondition("directions are linearly dependent".into()));
    }
    if let Some(d) = q.iter().find(|d| d.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: d.len(),
        });
    }
    let mut s = matrix.clone();
    let mut dirs = q;
    let drop = dirs.len();
    for j in 0..drop {
        let target = n - 1 - j;
        let d = dirs[j].clone();
        // Reflector on coordinates 0..=target mapping d to ±e_target.
        let alpha = if d[target] >= 0.0 { -1.0 } else { 1.0 };
        let mut v: Vec<f64> = d.clone();
        v[target] -= alpha;
        for x in v.iter_mut().skip(target + 1) {
            *x = 0.0;
        }
        let vv = dot(&v, &v);
        if vv == 0.0 {
            continue;
        }
        let tau = 2.0 / vv;
        let p: Vec<f64> = s.matvec(&v).into_iter().map(|x| tau * x).collect();
        let kappa = 0.5 * tau * dot(&v, &p);
        let w: Vec<f64> = p.iter().zip(&v).map(|(pi, vi)| pi - kappa * vi).collect();
        for a in 0..n {
            for b in 0..n {
                s[(a, b)] -= v[a] * w[b] + w[a] * v[b];
            }
        }
        for dk in dirs.iter_mut().skip(j + 1) {
            let c = tau * dot(&v, dk);
            for (x, vi) in dk.iter_mut().zip(&v) {
                *x -= c * vi;
            }
        }
    }
    // Restore exact symmetry lost to rounding.
    let m = n - drop;
    Ok(Matrix::from_fn(m, m, |a, b| 0.5 * (s[(a, b)] + s[(b, a)])))
}

/// Rescaled spectrum `a_i` of the compression of `S_N` away from the given
/// orthonormal-izable directions.
pub fn minor_spectrum(sample: &GoeSample, directions: &[Vec<f64>]) -> Result<Vec<f64>> {
    let minor = compress_away(&sample.matrix, directions)?;
    let root = (sample.n as f64).sqrt();
    Ok(eigen_symmetric(&minor)?.values.iter().map(|v| v / root).collect())
}

/// `drop` random orthonormal directions drawn from `seed`.
pub fn random_directions(n: usize, drop: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_stream(seed, MINOR_STREAM);
    let raw: Vec<Vec<f64>> = (0..drop).map(|_| gaussian_vector(&mut rng, n)).collect();
    modified_gram_schmidt(&raw, 1e-12)
}

/// Checks `θ_i ≤ a_i ≤ θ_{i+drop}` for the minor obtained by removing `drop`
/// random directions (drawn from `seed`).
pub fn minor_interlacing_check(sample: &GoeSample, drop: usize, seed: u64) -> Result<bool> {
    if !(1..=2).contains(&drop) {
        return domain("drop", drop as f64, "{1, 2}");
    }
    let a = minor_spectrum(sample, &random_directions(sample.n, drop, seed))?;
    Ok(interlaces(&sample.spectrum, &a, drop))
}

/// `θ_i ≤ a_i ≤ θ_{i+drop}` for every `i`, up to [`INTERLACING_TOL`].
pub fn interlaces(theta: &[f64], a: &[f64], drop: usize) -> bool {
    a.len() + drop == theta.len()
        && a.iter()
            .enumerate()
            .all(|(i, &ai)| theta[i] <= ai + INTERLACING_TOL && ai <= theta[i + drop] + INTERLACING_TOL)
}

/// `#{i : |θ_{i/N}| ≥ √2 − eps}` over the classical locations.
pub fn edge_eigencount(n: usize, eps: f64) -> Result<usize> {
    if !(eps > 0.0 && eps < std::f64::consts::SQRT_2) {
        return domain("eps", eps, "(0, sqrt(2))");
    }
    let cut = std::f64::consts::SQRT_2 - eps;
    Ok((1..=n)
        .filter(|&i| classical_location(i as f64 / n as f64).map_or(false, |t| t.abs() >= cut))
        .count())
}

/// Writes `seed`, `n` (both `u64`) and the spectrum as little-endian `f64`.
pub fn write_spectrum_dump(path: &Path, seed: u64, spectrum: &[f64]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&seed.to_le_bytes())?;
    w.write_all(&(spectrum.len() as u64).to_le_bytes())?;
    for v in spectrum {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}

/// Reads a dump produced by [`write_spectrum_dump`].
pub fn read_spectrum_dump(path: &Path) -> io::Result<(u64, Vec<f64>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let seed = u64::from_le_bytes(word);
    r.read_exact(&mut word)?;
    let n = u64::from_le_bytes(word) as usize;
    let mut spectrum = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut word)?;
        spectrum.push(f64::from_le_bytes(word));
    }
    Ok((seed, spectrum))
}
