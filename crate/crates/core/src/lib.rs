//! Numerical toolkit for the TAP–Plefka variational principle of the 2-spin
//! spherical Sherrington–Kirkpatrick model.
//!
//! * [`analytic`]: semicircle law, its Stieltjes and log-potential transforms,
//!   and the one-dimensional TAP–Plefka and Parisi solvers.
//! * [`coarse`]: the coarse-grained spectral free energy `F_K` and its
//!   simplex variational problem.
//! * [`rmt`]: GOE sampling, a symmetric eigensolver and spectral diagnostics.
//! * [`tap`]: the finite-N TAP functional, its projected-gradient maximizer,
//!   the modified (coarse) TAP energy and the ground-state solver.
//! * [`subspace`]: the almost-invariant Krylov subspace of the field map.
//! * [`finite_fe`]: finite-N free-energy estimators (quadrature, saddle point,
//!   Metropolis chains and thermodynamic integration).
//!
//! The deterministic one-dimensional code ([`analytic`], [`coarse`],
//! [`numeric`], [`linalg`]) is generic over [`Real`]; the random-matrix and
//! Monte Carlo layers work in `f64`.

pub mod analytic;
pub mod coarse;
pub mod error;
pub mod finite_fe;
pub mod linalg;
pub mod numeric;
pub mod rmt;
pub mod scalar;
pub mod subspace;
pub mod tap;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision instances of the generic types.
pub type AsymptoticParams = analytic::AsymptoticParams<f64>;
pub type RadialCandidate = analytic::RadialCandidate<f64>;
pub type SemicircleLaw = analytic::SemicircleLaw<f64>;
pub type CoarseGrid = coarse::CoarseGrid<f64>;
pub type SimplexWeights = coarse::SimplexWeights<f64>;
pub type Matrix = linalg::Matrix<f64>;

/// Single-precision instances, mainly for the analytic layer.
pub type AsymptoticParams32 = analytic::AsymptoticParams<f32>;
pub type CoarseGrid32 = coarse::CoarseGrid<f32>;
