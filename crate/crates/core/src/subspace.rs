//! Almost-invariant subspace of the field map `m ↦ β D m + h̃`.
//!
//! In the eigenbasis the gradient map of the diagonal Hamiltonian is
//! `D = diag(2θ_{i/N})`. The subspace `M_N` of dimension `⌊N^{3/4}⌋` is
//! spanned by the edge coordinates `e_j`, `j ∈ J = {j : |θ_{j/N}| ≥ √2 − N^{−1/2}}`,
//! the normalized Krylov iterates `ĥ^k = D^k h̄ / |D^k h̄|` of a regularized
//! field `h̄`, and padding coordinate vectors.
//!
//! The dimension budget is a hard cap: the Krylov sequence is cut when the
//! basis is full. At small `N` the nominal depth `V = ⌈√N (log N)²⌉`
//! exceeds the budget and the cut is what actually bounds the depth.

use crate::error::{domain, Error, Result};
use crate::linalg::{axpy, dot, norm, orthogonalize, scale};
use crate::rmt::{gaussian_vector, rng_stream};

/// Residual norm below which a candidate direction is treated as dependent.
pub const DROP_TOL: f64 = 1e-12;
/// Relative change of the Rayleigh quotient at which power iteration stops.
pub const POWER_TOL: f64 = 1e-10;
/// Power-iteration cap.
pub const POWER_ITERATIONS: usize = 10_000;

/// Orthonormal basis of `M_N` with construction bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantSubspace {
    pub n: usize,
    /// Orthonormal basis vectors (eigenbasis coordinates).
    pub basis: Vec<Vec<f64>>,
    /// `⌊N^{3/4}⌋`.
    pub budget: usize,
    /// Nominal Krylov depth `V = ⌈√N (log N)²⌉`.
    pub depth: usize,
    /// Krylov iterates examined before the budget or depth ran out.
    pub krylov_examined: usize,
    /// Krylov iterates that contributed a new direction.
    pub krylov_kept: usize,
    /// The Krylov sequence was cut by the budget before depth `V`.
    pub truncated: bool,
    /// Edge index set `J` (0-based).
    pub edge_set: Vec<usize>,
    /// Coordinate vectors added to reach the budget.
    pub padding: usize,
    /// `|Π^⊥ ĥ^0|` after construction.
    pub residual: f64,
    /// Growth `|D ĥ^{k−1}|` into the first Krylov iterate left out.
    pub next_growth: f64,
    /// The first Krylov iterate left out, `ĥ^{krylov_examined}`.
    pub next_iterate: Vec<f64>,
}

/// `h̄`: a copy of `h̃` whose last coordinate is pushed out to `±1/N`, keeping
/// its sign (zero goes to `+1/N`), when it is smaller than that in magnitude.
/// The move is at most `1/N`.
pub fn regularize_field(field: &[f64]) -> Vec<f64> {
    let mut out = field.to_vec();
    if let Some(last) = out.last_mut() {
        let floor = 1.0 / field.len() as f64;
        if last.abs() < floor {
            *last = if *last < 0.0 { -floor } else { floor };
        }
    }
    out
}

/// `⌊N^{3/4}⌋` computed exactly.
pub fn dimension_budget(n: usize) -> usize {
    let n3 = (n as u128).pow(3);
    let mut b = (n as f64).powf(0.75).floor() as u128;
    while b.pow(4) > n3 {
        b -= 1;
    }
    while (b + 1).pow(4) <= n3 {
        b += 1;
    }
    b as usize
}

/// `⌈√N (log N)²⌉`.
pub fn krylov_depth(n: usize) -> usize {
    let x = n as f64;
    (x.sqrt() * x.ln().powi(2)).ceil() as usize
}

/// `J = {j : |θ_j| ≥ √2 − N^{−1/2}}`.
pub fn edge_set(spectrum: &[f64]) -> Vec<usize> {
    let cut = std::f64::consts::SQRT_2 - 1.0 / (spectrum.len() as f64).sqrt();
    (0..spectrum.len()).filter(|&j| spectrum[j].abs() >= cut).collect()
}

fn apply_d(spectrum: &[f64], v: &[f64]) -> Vec<f64> {
    spectrum.iter().zip(v).map(|(t, x)| 2.0 * t * x).collect()
}

/// Builds `M_N` for a spectrum (ascending, eigenbasis) and a regularized
/// field.
///
/// Order of construction: the edge coordinates `e_J`, then the Krylov
/// iterates `ĥ^0, ĥ^1, …` (orthonormalized by two-pass modified Gram–Schmidt,
/// dependent ones dropped) until depth `V` or the budget is reached, then
/// coordinate vectors in order of decreasing `|θ_i|` up to the budget.
pub fn build_subspace(spectrum: &[f64], field: &[f64], n: usize) -> Result<InvariantSubspace> {
    if spectrum.len() != n || field.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: if spectrum.len() != n { spectrum.len() } else { field.len() },
        });
    }
    if n < 2 {
        return domain("N", n as f64, "[2, inf)");
    }
    if field[n - 1].abs() < 1.0 / n as f64 {
        return Err(Error::Precondition("field is not regularized (|h_N| < 1/N)".into()));
    }
    let budget = dimension_budget(n);
    let depth = krylov_depth(n);
    let edges = edge_set(spectrum);
    if edges.len() + 1 > budget {
        return Err(Error::SubspaceBudget {
            required: edges.len() + 1,
            budget,
        });
    }

    let mut basis: Vec<Vec<f64>> = edges
        .iter()
        .map(|&j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let mut iterate = field.to_vec();
    scale(1.0 / norm(&iterate), &mut iterate);
    let first = iterate.clone();
    let mut growth = 1.0;
    let (mut examined, mut kept) = (0, 0);
    let mut truncated = false;
    while examined < depth {
        if basis.len() == budget {
            truncated = true;
            break;
        }
        let mut w = iterate.clone();
        let r = orthogonalize(&basis, &mut w);
        if r >= DROP_TOL {
            scale(1.0 / r, &mut w);
            basis.push(w);
            kept += 1;
        }
        examined += 1;
        let next = apply_d(spectrum, &iterate);
        growth = norm(&next);
        iterate = next;
        scale(1.0 / growth, &mut iterate);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        spectrum[b]
            .abs()
            .partial_cmp(&spectrum[a].abs())
            .expect("finite spectrum")
            .then(b.cmp(&a))
    });
    let mut padding = 0;
    for i in order {
        if basis.len() == budget {
            break;
        }
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        let r = orthogonalize(&basis, &mut e);
        if r >= 1e-6 {
            scale(1.0 / r, &mut e);
            basis.push(e);
            padding += 1;
        }
    }

    let mut sub = InvariantSubspace {
        n,
        basis,
        budget,
        depth,
        krylov_examined: examined,
        krylov_kept: kept,
        truncated,
        edge_set: edges,
        padding,
        residual: 0.0,
        next_growth: growth,
        next_iterate: iterate,
    };
    sub.residual = sub.complement_norm(&first);
    Ok(sub)
}

impl InvariantSubspace {
    pub fn dimension(&self) -> usize {
        self.basis.len()
    }

    /// Orthogonal projection onto `M_N`.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for q in &self.basis {
            axpy(dot(q, v), q, &mut out);
        }
        out
    }

    /// Projection onto the orthogonal complement.
    pub fn project_complement(&self, v: &[f64]) -> Vec<f64> {
        let p = self.project(v);
        v.iter().zip(&p).map(|(a, b)| a - b).collect()
    }

    /// `|Π^⊥ v|`.
    pub fn complement_norm(&self, v: &[f64]) -> f64 {
        norm(&self.project_complement(v))
    }

    /// `max_{i,j} |⟨q_i, q_j⟩ − δ_ij|`.
    pub fn orthonormality_error(&self) -> f64 {
        let mut err: f64 = 0.0;
        for (i, a) in self.basis.iter().enumerate() {
            for (j, b) in self.basis.iter().enumerate().take(i + 1) {
                let target = if i == j { 1.0 } else { 0.0 };
                err = err.max((dot(a, b) - target).abs());
            }
        }
        err
    }
}

/// Components of the invariance residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvarianceResidual {
    /// `‖Π^⊥ D Π^M‖`, the operator norm of the leakage of `D` out of `M_N`.
    pub operator_norm: f64,
    /// `|Π^⊥ h̃|`.
    pub field_leakage: f64,
    /// `β · operator_norm + field_leakage`.
    pub total: f64,
    pub power_iterations: usize,
}

/// `sup_{m ∈ M_N, |m| ≤ 1} |Π^⊥(β D m)| + |Π^⊥ h̃|`, the first term computed
/// as the top singular value of `T = Π^⊥ D Π^M` by power iteration on
/// `TᵀT`.
pub fn invariance_residual(
    sub: &InvariantSubspace,
    beta: f64,
    spectrum: &[f64],
    field: &[f64],
) -> Result<InvarianceResidual> {
    let (operator_norm, power_iterations) = leakage_operator_norm(sub, spectrum)?;
    let field_leakage = sub.complement_norm(field);
    Ok(InvarianceResidual {
        operator_norm,
        field_leakage,
        total: beta * operator_norm + field_leakage,
        power_iterations,
    })
}

fn leakage_operator_norm(sub: &InvariantSubspace, spectrum: &[f64]) -> Result<(f64, usize)> {
    let n = sub.n;
    if spectrum.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: spectrum.len(),
        });
    }
    let t = |x: &[f64]| sub.project_complement(&apply_d(spectrum, &sub.project(x)));
    let t_adj = |y: &[f64]| sub.project(&apply_d(spectrum, &sub.project_complement(y)));

    let mut rng = rng_stream(0x5eed, 0);
    let mut x = sub.project(&gaussian_vector(&mut rng, n));
    let start = norm(&x);
    if start == 0.0 {
        return Ok((0.0, 0));
    }
    scale(1.0 / start, &mut x);
    let mut rho = 0.0;
    for it in 1..=POWER_ITERATIONS {
        let y = t(&x);
        let mut z = t_adj(&y);
        let next = dot(&x, &z);
        let zn = norm(&z);
        if zn == 0.0 {
            return Ok((0.0, it));
        }
        scale(1.0 / zn, &mut z);
        x = z;
        if (next - rho).abs() <= POWER_TOL * next.abs() {
            return Ok((next.max(0.0).sqrt(), it));
        }
        rho = next;
    }
    Err(Error::NonConvergence {
        what: "power iteration for the leakage operator norm",
        iterations: POWER_ITERATIONS,
    })
}

/// `|D ĥ^{k−1}| · |Π^⊥ ĥ^k|` for the first Krylov iterate `ĥ^k` left out of
/// the basis: the leakage of the Krylov chain itself.
pub fn krylov_leakage(sub: &InvariantSubspace) -> f64 {
    sub.next_growth * sub.complement_norm(&sub.next_iterate)
}

/// Checks `|Π^{low} D^k v| / |D^k v| ≤ √N |v| |v_N|^{−1} (1 − ε/√2)^k`,
/// where `low` spans the coordinates with `|θ_i| < √2 − ε`.
pub fn iterate_projection_bound_check(spectrum: &[f64], v: &[f64], k: usize, eps: f64) -> Result<bool> {
    let n = spectrum.len();
    if v.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: v.len(),
        });
    }
    let vn = *v.last().ok_or(Error::DimensionMismatch { expected: 1, found: 0 })?;
    if vn == 0.0 {
        return domain("v_N", 0.0, "nonzero");
    }
    if k == 0 {
        return domain("k", 0.0, "[1, inf)");
    }
    if !(eps > 0.0) {
        return domain("eps", eps, "(0, inf)");
    }
    let mut w = v.to_vec();
    for _ in 0..k {
        w = apply_d(spectrum, &w);
        let r = norm(&w);
        scale(1.0 / r, &mut w);
    }
    let cut = std::f64::consts::SQRT_2 - eps;
    let low: f64 = spectrum
        .iter()
        .zip(&w)
        .filter(|(t, _)| t.abs() < cut)
        .map(|(_, x)| x * x)
        .sum::<f64>()
        .sqrt();
    let rhs = (n as f64).sqrt() * norm(v) / vn.abs() * (1.0 - eps / std::f64::consts::SQRT_2).powi(k as i32);
    Ok(low <= rhs)
}
