//! The experiments: each expands a configuration into grid points, evaluates
//! them on the worker pool and returns a table with a fixed header.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use spherical_tap::analytic::{limiting_free_energy, solve_parisi, solve_tap_variational, AsymptoticParams};
use spherical_tap::coarse::CoarseGrid;
use spherical_tap::finite_fe::{thermo_integrate, ThermoSchedule};
use spherical_tap::rmt::{minor_interlacing_check, rigidity_report, sample_goe, FieldVector, GoeSample};
use spherical_tap::subspace::{build_subspace, invariance_residual, krylov_leakage, regularize_field};
use spherical_tap::tap::{check_plefka, ground_state_lagrange, ground_state_stationarity, optimize_tap};

use crate::config::{Experiment, ExperimentConfig};

/// Largest allowed `|sup B − inf P|` in the asymptotic sweep.
pub const TAP_PARISI_TOL: f64 = 1e-8;
/// Largest allowed simplex gap and derivative-identity residual.
pub const COARSE_TOL: f64 = 1e-6;
/// Largest allowed containment residual of the regularized field.
pub const CONTAINMENT_TOL: f64 = 1e-10;
/// Largest allowed ground-state stationarity residual.
pub const STATIONARITY_TOL: f64 = 1e-6;
/// Points of the thermodynamic-integration grid.
pub const TI_POINTS: usize = 50;
/// Recorded samples per thermodynamic-integration point.
pub const TI_SAMPLES: usize = 20_000;
/// Standard errors tolerated in the convexity check of the free energy.
pub const CONVEXITY_SIGMAS: f64 = 3.0;

pub const ASYMPTOTIC_HEADER: &[&str] = &["beta", "h", "q_tap", "val_tap", "q_parisi", "val_parisi", "abs_diff"];
pub const COARSE_HEADER: &[&str] = &[
    "N",
    "K",
    "beta",
    "f_k",
    "target",
    "abs_err",
    "lambda_k",
    "simplex_value",
    "simplex_gap",
    "derivative_residual",
];
pub const GOE_HEADER: &[&str] = &["N", "seed", "rigidity", "top_eigenvalue", "interlacing_drop1", "interlacing_drop2"];
pub const TAP_HEADER: &[&str] = &[
    "beta",
    "h",
    "N",
    "seed",
    "value_per_spin",
    "target",
    "abs_diff",
    "radius_sq",
    "plefka_beta",
    "gradient_norm",
    "converged",
    "plefka_ok",
];
pub const SUBSPACE_HEADER: &[&str] = &[
    "beta",
    "h",
    "N",
    "seed",
    "dimension",
    "budget",
    "edge_count",
    "krylov_kept",
    "truncated",
    "containment",
    "operator_norm",
    "field_leakage",
    "residual",
    "krylov_leakage",
];
pub const FINITE_FE_HEADER: &[&str] = &[
    "beta",
    "h",
    "N",
    "seed",
    "free_energy",
    "base",
    "target",
    "abs_diff",
    "burn_in",
    "samples_per_point",
    "max_std_error",
    "flagged",
];
pub const GROUND_STATE_HEADER: &[&str] = &[
    "beta",
    "h",
    "N",
    "seed",
    "value",
    "target",
    "abs_diff",
    "lambda_star",
    "stationarity",
    "degenerate",
];

/// Column header of an experiment's CSV.
pub fn header(experiment: Experiment) -> &'static [&'static str] {
    match experiment {
        Experiment::AsymptoticSweep => ASYMPTOTIC_HEADER,
        Experiment::CoarseConvergence => COARSE_HEADER,
        Experiment::GoeDiagnostics => GOE_HEADER,
        Experiment::TapOptimize => TAP_HEADER,
        Experiment::SubspaceResidual => SUBSPACE_HEADER,
        Experiment::FiniteFe => FINITE_FE_HEADER,
        Experiment::GroundState => GROUND_STATE_HEADER,
    }
}

/// Shortest text that parses back to `x`: integers print without a
/// fractional part, very large or small magnitudes in exponent form.
pub fn fmt_float(x: f64) -> String {
    if x.is_finite() && x == x.trunc() && x.abs() < 1e16 {
        format!("{x}")
    } else {
        format!("{x:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(u64),
    Bool(bool),
    Empty,
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Cell::Float(x) => Some(x),
            Cell::Int(i) => Some(i as f64),
            _ => None,
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as u64)
    }
}

impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::Int(x)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::Bool(x)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::Float)
    }
}

/// One grid point. Coordinates an experiment does not use stay zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub beta: f64,
    pub h: f64,
    pub n: usize,
    pub k: usize,
    pub seed: u64,
}

impl Point {
    fn order(&self, other: &Self) -> Ordering {
        self.beta
            .total_cmp(&other.beta)
            .then(self.h.total_cmp(&other.h))
            .then(self.n.cmp(&other.n))
            .then(self.k.cmp(&other.k))
            .then(self.seed.cmp(&other.seed))
    }

    fn label(&self, experiment: Experiment) -> String {
        let mut parts = vec![];
        if experiment != Experiment::GoeDiagnostics {
            parts.push(format!("beta={}", fmt_float(self.beta)));
        }
        if !matches!(experiment, Experiment::CoarseConvergence | Experiment::GoeDiagnostics) {
            parts.push(format!("h={}", fmt_float(self.h)));
        }
        if experiment != Experiment::AsymptoticSweep {
            parts.push(format!("N={}", self.n));
        }
        if experiment == Experiment::CoarseConvergence {
            parts.push(format!("K={}", self.k));
        }
        if experiment.is_stochastic() {
            parts.push(format!("seed={}", self.seed));
        }
        parts.join(" ")
    }
}

/// Output of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: &'static [&'static str],
    pub rows: Vec<Vec<Cell>>,
    /// One message per failed row assertion or numerical error.
    pub failures: Vec<String>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| *h == name)
    }
}

/// Grid points in the deterministic output order (β, h, N, K, seed).
pub fn points(config: &ExperimentConfig) -> Vec<Point> {
    let e = config.experiment;
    let betas: Vec<f64> = if e == Experiment::GoeDiagnostics { vec![0.0] } else { config.beta_grid.clone() };
    let hs: Vec<f64> = if matches!(e, Experiment::CoarseConvergence | Experiment::GoeDiagnostics) {
        vec![0.0]
    } else {
        config.h_grid.clone()
    };
    let ns: Vec<usize> = if e == Experiment::AsymptoticSweep { vec![0] } else { config.n_list.clone() };
    let ks: Vec<usize> = if e == Experiment::CoarseConvergence { config.k_list.clone() } else { vec![0] };
    let seeds: Vec<u64> = if e.is_stochastic() { config.seeds.clone() } else { vec![0] };
    let mut out = vec![];
    for &beta in &betas {
        for &h in &hs {
            for &n in &ns {
                for &k in &ks {
                    for &seed in &seeds {
                        out.push(Point { beta, h, n, k, seed });
                    }
                }
            }
        }
    }
    out.sort_by(|a, b| a.order(b));
    out
}

type RowResult = Result<(Vec<Cell>, Vec<String>), String>;

/// Evaluates every grid point on the current rayon pool. Rows come back in
/// [`points`] order whatever the scheduling.
pub fn run_experiment(config: &ExperimentConfig) -> Table {
    let e = config.experiment;
    let pts = points(config);
    let samples = if e.uses_samples() { goe_samples(&pts) } else { BTreeMap::new() };
    let results: Vec<RowResult> = pts
        .par_iter()
        .map(|p| {
            let sample = samples.get(&(p.n, p.seed)).map(|s| s.as_ref().map_err(Clone::clone));
            evaluate(e, p, sample.transpose()?)
        })
        .collect();
    let mut rows = vec![];
    let mut failures = vec![];
    for (p, r) in pts.iter().zip(results) {
        match r {
            Ok((row, fails)) => {
                failures.extend(fails.into_iter().map(|f| format!("{}: {f}", p.label(e))));
                rows.push(row);
            }
            Err(msg) => failures.push(format!("{}: error: {msg}", p.label(e))),
        }
    }
    Table {
        header: header(e),
        rows,
        failures,
    }
}

type Samples = BTreeMap<(usize, u64), Result<GoeSample, String>>;

/// One GOE sample per distinct `(N, seed)`, shared by the rows that use it.
fn goe_samples(pts: &[Point]) -> Samples {
    let mut keys: Vec<(usize, u64)> = pts.iter().map(|p| (p.n, p.seed)).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.into_par_iter()
        .map(|(n, seed)| ((n, seed), sample_goe(n, seed).map_err(|e| e.to_string())))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

fn evaluate(e: Experiment, p: &Point, sample: Option<&GoeSample>) -> RowResult {
    let sample = || sample.ok_or_else(|| "no GOE sample".to_string());
    match e {
        Experiment::AsymptoticSweep => asymptotic(p),
        Experiment::CoarseConvergence => coarse(p),
        Experiment::GoeDiagnostics => goe(p, sample()?),
        Experiment::TapOptimize => tap(p, sample()?),
        Experiment::SubspaceResidual => subspace(p, sample()?),
        Experiment::FiniteFe => finite_fe(p, sample()?),
        Experiment::GroundState => ground_state(p, sample()?),
    }
}

fn params(p: &Point) -> Result<AsymptoticParams<f64>, String> {
    AsymptoticParams::new(p.beta, p.h).map_err(|e| e.to_string())
}

fn asymptotic(p: &Point) -> RowResult {
    let ps = params(p)?;
    let tap = solve_tap_variational(&ps).map_err(|e| e.to_string())?;
    let par = solve_parisi(&ps).map_err(|e| e.to_string())?;
    let diff = (tap.value - par.value).abs();
    let mut fails = vec![];
    if !(diff <= TAP_PARISI_TOL) {
        fails.push(format!("abs_diff {diff:e} > {TAP_PARISI_TOL:e}"));
    }
    Ok((
        vec![p.beta.into(), p.h.into(), tap.q.into(), tap.value.into(), par.q.into(), par.value.into(), diff.into()],
        fails,
    ))
}

fn coarse(p: &Point) -> RowResult {
    let err = |e: spherical_tap::Error| e.to_string();
    let grid = CoarseGrid::<f64>::counting(p.n, p.k).map_err(err)?;
    let f_k = grid.free_energy_f_k(p.beta).map_err(err)?;
    let target = limiting_free_energy(p.beta).map_err(err)?;
    let lambda = grid.solve_lambda_k(p.beta).map_err(err)?;
    let opt = grid.simplex_optimum_oracle(p.beta).map_err(err)?;
    let gap = (opt.value - f_k).abs();
    let deriv = grid.derivative_identity_check(p.beta).map_err(err)?;
    let mut fails = vec![];
    if !(gap <= COARSE_TOL) {
        fails.push(format!("simplex_gap {gap:e} > {COARSE_TOL:e}"));
    }
    if !(deriv <= COARSE_TOL) {
        fails.push(format!("derivative_residual {deriv:e} > {COARSE_TOL:e}"));
    }
    Ok((
        vec![
            p.n.into(),
            p.k.into(),
            p.beta.into(),
            f_k.into(),
            target.into(),
            (f_k - target).abs().into(),
            lambda.into(),
            opt.value.into(),
            gap.into(),
            deriv.into(),
        ],
        fails,
    ))
}

fn goe(p: &Point, sample: &GoeSample) -> RowResult {
    let err = |e: spherical_tap::Error| e.to_string();
    let one = minor_interlacing_check(sample, 1, p.seed).map_err(err)?;
    let two = minor_interlacing_check(sample, 2, p.seed).map_err(err)?;
    let mut fails = vec![];
    for (drop, ok) in [(1, one), (2, two)] {
        if !ok {
            fails.push(format!("minor dropping {drop} direction(s) does not interlace"));
        }
    }
    Ok((
        vec![
            p.n.into(),
            p.seed.into(),
            rigidity_report(sample).into(),
            sample.top().into(),
            one.into(),
            two.into(),
        ],
        fails,
    ))
}

fn tap(p: &Point, sample: &GoeSample) -> RowResult {
    let err = |e: spherical_tap::Error| e.to_string();
    let field = FieldVector::random(p.n, p.h, p.seed);
    let point = optimize_tap(p.beta, &field, sample, p.seed).map_err(err)?;
    let target = solve_tap_variational(&params(p)?).map_err(err)?.value;
    let per_spin = point.value / p.n as f64;
    let r2: f64 = point.m.iter().map(|x| x * x).sum();
    let plefka = check_plefka(&point.m, p.beta);
    let mut fails = vec![];
    if !plefka {
        fails.push(format!("Plefka condition violated: beta(1 - |m|^2) = {}", point.plefka_beta));
    }
    Ok((
        vec![
            p.beta.into(),
            p.h.into(),
            p.n.into(),
            p.seed.into(),
            per_spin.into(),
            target.into(),
            (per_spin - target).abs().into(),
            r2.into(),
            point.plefka_beta.into(),
            point.gradient_norm.into(),
            point.converged.into(),
            plefka.into(),
        ],
        fails,
    ))
}

fn subspace(p: &Point, sample: &GoeSample) -> RowResult {
    let err = |e: spherical_tap::Error| e.to_string();
    let field = FieldVector::random(p.n, p.h, p.seed);
    let ft = sample.to_eigenbasis(&field.components);
    let sub = build_subspace(&sample.spectrum, &regularize_field(&ft), p.n).map_err(err)?;
    let r = invariance_residual(&sub, p.beta, &sample.spectrum, &ft).map_err(err)?;
    let mut fails = vec![];
    if sub.dimension() != sub.budget {
        fails.push(format!("dimension {} != floor(N^(3/4)) = {}", sub.dimension(), sub.budget));
    }
    if !(sub.residual <= CONTAINMENT_TOL) {
        fails.push(format!("containment {:e} > {CONTAINMENT_TOL:e}", sub.residual));
    }
    Ok((
        vec![
            p.beta.into(),
            p.h.into(),
            p.n.into(),
            p.seed.into(),
            sub.dimension().into(),
            sub.budget.into(),
            sub.edge_set.len().into(),
            sub.krylov_kept.into(),
            sub.truncated.into(),
            sub.residual.into(),
            r.operator_norm.into(),
            r.field_leakage.into(),
            r.total.into(),
            krylov_leakage(&sub).into(),
        ],
        fails,
    ))
}

fn finite_fe(p: &Point, sample: &GoeSample) -> RowResult {
    let err = |e: spherical_tap::Error| e.to_string();
    let field = FieldVector::random(p.n, p.h, p.seed);
    let points = if p.beta == 0.0 { 1 } else { TI_POINTS };
    let schedule = ThermoSchedule::uniform(p.beta, points, TI_SAMPLES).map_err(err)?;
    let r = thermo_integrate(sample, &field, &schedule, p.seed).map_err(err)?;
    let target = if p.beta > 0.0 {
        Some(solve_tap_variational(&params(p)?).map_err(err)?.value)
    } else {
        None
    };
    let mut fails = vec![];
    for j in 1..r.mean_energy.len() {
        let tol = CONVEXITY_SIGMAS * r.std_error[j].hypot(r.std_error[j - 1]);
        if r.mean_energy[j] < r.mean_energy[j - 1] - tol {
            fails.push(format!(
                "convexity: mean energy drops from {} to {} between beta {} and {}",
                r.mean_energy[j - 1],
                r.mean_energy[j],
                r.beta_grid[j - 1],
                r.beta_grid[j]
            ));
        }
    }
    let max_se = r.std_error.iter().copied().fold(0.0, f64::max);
    Ok((
        vec![
            p.beta.into(),
            p.h.into(),
            p.n.into(),
            p.seed.into(),
            r.free_energy.into(),
            r.base.into(),
            target.into(),
            target.map(|t| (r.free_energy - t).abs()).into(),
            r.burn_in.into(),
            r.samples_per_point.into(),
            max_se.into(),
            r.flagged.into(),
        ],
        fails,
    ))
}

fn ground_state(p: &Point, sample: &GoeSample) -> RowResult {
    let err = |e: spherical_tap::Error| e.to_string();
    let field = FieldVector::random(p.n, p.h, p.seed);
    let ft = sample.to_eigenbasis(&field.components);
    let gs = ground_state_lagrange(&sample.spectrum, &ft, p.beta).map_err(err)?;
    let stat = ground_state_stationarity(&gs, &sample.spectrum, &ft, p.beta);
    let target = (p.h * p.h + 2.0 * p.beta * p.beta).sqrt();
    let mut fails = vec![];
    if !(stat <= STATIONARITY_TOL) {
        fails.push(format!("stationarity {stat:e} > {STATIONARITY_TOL:e}"));
    }
    Ok((
        vec![
            p.beta.into(),
            p.h.into(),
            p.n.into(),
            p.seed.into(),
            gs.value.into(),
            target.into(),
            (gs.value - target).abs().into(),
            gs.lambda_star.into(),
            stat.into(),
            gs.degenerate.into(),
        ],
        fails,
    ))
}

/// Columns plotted by the SVG writer: x, y and the columns that split rows
/// into series.
pub fn plot_columns(experiment: Experiment) -> (&'static str, &'static str, &'static [&'static str]) {
    match experiment {
        Experiment::AsymptoticSweep => ("beta", "val_tap", &["h"]),
        Experiment::CoarseConvergence => ("beta", "abs_err", &["N", "K"]),
        Experiment::GoeDiagnostics => ("N", "rigidity", &["seed"]),
        Experiment::TapOptimize => ("beta", "abs_diff", &["h", "N", "seed"]),
        Experiment::SubspaceResidual => ("N", "residual", &["beta", "h", "seed"]),
        Experiment::FiniteFe => ("beta", "free_energy", &["h", "N", "seed"]),
        Experiment::GroundState => ("beta", "value", &["h", "N", "seed"]),
    }
}
