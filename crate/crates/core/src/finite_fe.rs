//! Finite-N free-energy estimators.
//!
//! Everything here works with the uniform probability measure `E` on the
//! unit sphere `S^{N−1}` and the free energy
//! `F_N(β, h) = (1/N) log E exp(β H_N(σ) + N σ·h)`.
//!
//! * exact one-dimensional laws: the density of `σ·v` and the Dirichlet law
//!   of block norms;
//! * `F_N(0, h)` by quadrature along the field direction;
//! * the no-field free energy of a fixed spectrum by steepest descent on its
//!   radial (contour) representation;
//! * Metropolis chains on the sphere and thermodynamic integration in `β`.

use std::io::{self, Write};

use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

use crate::coarse::CoarseGrid;
use crate::error::{domain, Error, Result};
use crate::numeric::{adaptive_simpson, bisect};
use crate::rmt::{gaussian_vector, minor_spectrum, random_unit_vector, rng_stream, FieldVector, GoeSample};

/// Stream of [`rng_stream`] used by [`SphereChain`].
pub const CHAIN_STREAM: u64 = 3;
/// Stream used by [`dirichlet_moment_check`].
pub const DIRICHLET_STREAM: u64 = 4;
/// Acceptance window targeted while adapting the proposal scale.
pub const TARGET_ACCEPTANCE: (f64, f64) = (0.25, 0.40);
/// Acceptance outside this range flags a thermodynamic-integration point.
pub const FLAG_ACCEPTANCE: (f64, f64) = (0.1, 0.6);
/// Largest proposal scale. At this scale a proposal is essentially a fresh
/// uniform point.
pub const MAX_STEP_SCALE: f64 = 10.0;
/// Steps between proposal-scale updates during burn-in.
pub const ADAPT_WINDOW: usize = 100;
/// Floor of the automatic burn-in.
pub const MIN_BURN_IN: usize = 5_000;

/// Log of the density of `σ·v` for `σ ~ E` and a unit `v`.
pub fn log_inner_product_density(x: f64, n: usize) -> Result<f64> {
    if n < 4 {
        return domain("N", n as f64, "[4, inf)");
    }
    if !(x > -1.0 && x < 1.0) {
        return Ok(f64::NEG_INFINITY);
    }
    let nf = n as f64;
    Ok(ln_gamma(nf / 2.0) - ln_gamma((nf - 1.0) / 2.0) - 0.5 * std::f64::consts::PI.ln()
        + 0.5 * (nf - 3.0) * (1.0 - x * x).ln())
}

/// `(1/√π) Γ(N/2)/Γ((N−1)/2) (1 − x²)^{(N−3)/2}` on `(−1, 1)`, zero outside.
pub fn inner_product_density(x: f64, n: usize) -> Result<f64> {
    Ok(log_inner_product_density(x, n)?.exp())
}

/// Block masses `σ_[k]² = Σ_{i ∈ I_k} σ_i²` over the occupied blocks of a
/// grid built from the spectrum that indexes `σ`.
pub fn block_norms(sigma: &[f64], grid: &CoarseGrid<f64>) -> Result<Vec<f64>> {
    if sigma.len() != grid.assignment.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.assignment.len(),
            found: sigma.len(),
        });
    }
    let norm2: f64 = sigma.iter().map(|s| s * s).sum();
    if (norm2 - 1.0).abs() > 1e-10 {
        return Err(Error::Precondition(format!("|sigma|^2 = {norm2}, not 1")));
    }
    let mut out = vec![0.0; grid.len()];
    for (s, &k) in sigma.iter().zip(&grid.assignment) {
        out[k] += s * s;
    }
    Ok(out)
}

/// Moment `E[ρ^r]` of the Beta(`a`, `a0 − a`) marginal of a Dirichlet law.
fn dirichlet_raw_moment(a: f64, a0: f64, r: u32) -> f64 {
    (0..r).map(|j| (a + j as f64) / (a0 + j as f64)).product()
}

/// Largest standardized discrepancy between Monte Carlo first and second
/// moments of the block masses of a uniform `σ` and the
/// Dirichlet(`|I_1|/2, …, |I_K|/2`) values.
///
/// `σ` is a normalized standard Gaussian. The standard errors use the exact
/// Dirichlet variances.
pub fn dirichlet_moment_check(n: usize, grid: &CoarseGrid<f64>, num_samples: usize, seed: u64) -> Result<f64> {
    if grid.n != n || grid.assignment.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: grid.assignment.len(),
        });
    }
    if num_samples < 1000 {
        return domain("num_samples", num_samples as f64, "[1000, inf)");
    }
    let k = grid.len();
    let mut rng = rng_stream(seed, DIRICHLET_STREAM);
    let (mut s1, mut s2) = (vec![0.0; k], vec![0.0; k]);
    let mut rho = vec![0.0; k];
    for _ in 0..num_samples {
        let g = gaussian_vector(&mut rng, n);
        rho.iter_mut().for_each(|r| *r = 0.0);
        for (x, &b) in g.iter().zip(&grid.assignment) {
            rho[b] += x * x;
        }
        let total: f64 = rho.iter().sum();
        for b in 0..k {
            let r = rho[b] / total;
            s1[b] += r;
            s2[b] += r * r;
        }
    }
    let ns = num_samples as f64;
    let a0 = n as f64 / 2.0;
    let mut worst: f64 = 0.0;
    for b in 0..k {
        let a = grid.counts[b] as f64 / 2.0;
        let m1 = dirichlet_raw_moment(a, a0, 1);
        let m2 = dirichlet_raw_moment(a, a0, 2);
        let m4 = dirichlet_raw_moment(a, a0, 4);
        for (sum, mean, var) in [(s1[b], m1, m2 - m1 * m1), (s2[b], m2, m4 - m2 * m2)] {
            let diff = sum / ns - mean;
            let z = if var > 0.0 {
                diff / (var / ns).sqrt()
            } else if diff.abs() <= 1e-12 {
                0.0
            } else {
                f64::INFINITY
            };
            worst = worst.max(z.abs());
        }
    }
    Ok(worst)
}

/// `F_N(0, h) = (1/N) log ∫ density(x) e^{N h x} dx`.
///
/// The integrand is evaluated relative to its maximum at
/// `x* = 2Nh / ((N−3) + √((N−3)² + 4N²h²))` and the integral is split there.
pub fn pure_field_free_energy(n: usize, h: f64) -> Result<f64> {
    if n < 4 {
        return domain("N", n as f64, "[4, inf)");
    }
    if !(h >= 0.0 && h.is_finite()) {
        return domain("h", h, "[0, inf)");
    }
    if h == 0.0 {
        return Ok(0.0);
    }
    let nf = n as f64;
    let m = nf - 3.0;
    let peak = 2.0 * nf * h / (m + (m * m + 4.0 * nf * nf * h * h).sqrt());
    let log_f = |x: f64| log_inner_product_density(x, n).map(|l| l + nf * h * x);
    let top = log_f(peak)?;
    let f = |x: f64| log_f(x).map_or(0.0, |l| (l - top).exp());
    let tol = 1e-13;
    let area = adaptive_simpson(f, -1.0, peak, tol, 256) + adaptive_simpson(f, peak, 1.0, tol, 256);
    Ok((top + area.ln()) / nf)
}

/// Steepest-descent evaluation of `(1/N) log E exp(N Σ a_i σ_i²)` with
/// `a_i = β θ_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaddleEstimate {
    /// Root of `(1/N) Σ 1/(2(t − a_i)) = 1` beyond `max a_i`.
    pub t_star: f64,
    /// `t* − (1/2N) Σ log(2(t* − a_i)) − 1/2`.
    pub leading: f64,
    /// Gaussian fluctuation term around the saddle, `O(log N / N)`.
    pub correction: f64,
    /// Share `1/(2N(t* − max a))` of the saddle sum carried by the top mode.
    /// Values near one mean the saddle is pinned to the edge.
    pub top_mode_share: f64,
}

impl SaddleEstimate {
    pub fn value(&self) -> f64 {
        self.leading + self.correction
    }
}

/// Free energy of `E exp(N β Σ θ_i σ_i²)` for a fixed spectrum.
///
/// With `φ(t) = t − (1/2N) Σ log(t − a_i)` the exact contour representation
/// is `E = Γ(N/2) N^{1−N/2} (2πi)^{−1} ∫ e^{Nφ(t)} dt`, and the saddle point
/// gives
/// `(1/N) log E ≈ leading + ½ log 2 + ½ + (1/N)[log Γ(N/2) + (1 − N/2) log N − ½ log(2πNφ″)]`.
pub fn no_field_saddle_fe(spectrum: &[f64], beta: f64) -> Result<SaddleEstimate> {
    if spectrum.is_empty() {
        return Err(Error::Precondition("empty spectrum".into()));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return domain("beta", beta, "[0, inf)");
    }
    if spectrum.iter().any(|t| !t.is_finite()) {
        return Err(Error::SaddleNotFound);
    }
    let nf = spectrum.len() as f64;
    if beta == 0.0 {
        return Ok(SaddleEstimate {
            t_star: 0.5,
            leading: 0.0,
            correction: 0.0,
            top_mode_share: 1.0 / nf,
        });
    }
    let a: Vec<f64> = spectrum.iter().map(|t| beta * t).collect();
    let amax = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let excess = |t: f64| a.iter().map(|ai| 0.5 / (t - ai)).sum::<f64>() / nf - 1.0;
    // excess ≥ 1 at amax + 1/(4N) and ≤ 0 at amax + 1/2.
    let lo = amax + 0.25 / nf;
    let hi = amax + 0.5;
    if !(excess(lo) > 0.0) {
        return Err(Error::SaddleNotFound);
    }
    let t = bisect(excess, lo, hi, 0.0);
    let leading = t - a.iter().map(|ai| (2.0 * (t - ai)).ln()).sum::<f64>() / (2.0 * nf) - 0.5;
    let phi2 = a.iter().map(|ai| (t - ai).powi(-2)).sum::<f64>() / (2.0 * nf);
    let correction = (ln_gamma(nf / 2.0) + (1.0 - nf / 2.0) * nf.ln()
        - 0.5 * (2.0 * std::f64::consts::PI * nf * phi2).ln())
        / nf
        + 0.5 * std::f64::consts::LN_2
        + 0.5;
    Ok(SaddleEstimate {
        t_star: t,
        leading,
        correction,
        top_mode_share: 0.5 / (nf * (t - amax)),
    })
}

/// No-field free energy of the model restricted to the orthogonal
/// complement of `u` and `v`: the saddle evaluator applied to the rescaled
/// spectrum of the `(N−2)`-dimensional compression of `S_N`.
pub fn restricted_two_slice_fe(sample: &GoeSample, u: &[f64], v: &[f64], beta: f64) -> Result<SaddleEstimate> {
    if !(beta >= 0.0 && beta <= std::f64::consts::FRAC_1_SQRT_2 + 1e-9) {
        return domain("beta", beta, "[0, 1/sqrt(2)]");
    }
    let minor = minor_spectrum(sample, &[u.to_vec(), v.to_vec()])?;
    no_field_saddle_fe(&minor, beta)
}

/// Metropolis state on the unit sphere.
///
/// `state` is expressed in the eigenbasis of the sample the chain is run
/// against, where the Hamiltonian is diagonal.
#[derive(Debug, Clone)]
pub struct SphereChain {
    pub state: Vec<f64>,
    /// Proposal scale `δ` in `σ′ = normalize(σ + δ g)`.
    pub step_scale: f64,
    /// Acceptance rate over the most recent run.
    pub acceptance_rate: f64,
    pub seed: u64,
    pub steps_taken: u64,
    rng: ChaCha8Rng,
}

impl SphereChain {
    /// Chain started at a uniform point, with `δ = 1/√N`.
    pub fn new(n: usize, seed: u64) -> Self {
        let mut rng = rng_stream(seed, CHAIN_STREAM);
        let state = random_unit_vector(&mut rng, n);
        Self {
            state,
            step_scale: 1.0 / (n as f64).sqrt(),
            acceptance_rate: 0.0,
            seed,
            steps_taken: 0,
            rng,
        }
    }

    pub fn len(&self) -> usize {
        self.state.len()
    }

    pub fn is_empty(&self) -> bool {
        self.state.is_empty()
    }
}

/// Gibbs weight `exp(N(β Σ θ_i σ_i² + h̃·σ))` in the eigenbasis.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereTarget {
    pub beta: f64,
    pub theta: Vec<f64>,
    /// Field in eigenbasis coordinates.
    pub field: Vec<f64>,
}

impl SphereTarget {
    pub fn new(sample: &GoeSample, beta: f64, field: &FieldVector) -> Result<Self> {
        if field.len() != sample.n {
            return Err(Error::DimensionMismatch {
                expected: sample.n,
                found: field.len(),
            });
        }
        Self::from_eigen(sample.spectrum.clone(), sample.to_eigenbasis(&field.components), beta)
    }

    pub fn from_eigen(theta: Vec<f64>, field: Vec<f64>, beta: f64) -> Result<Self> {
        if theta.len() != field.len() {
            return Err(Error::DimensionMismatch {
                expected: theta.len(),
                found: field.len(),
            });
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return domain("beta", beta, "[0, inf)");
        }
        Ok(Self { beta, theta, field })
    }

    /// `(H_N(σ)/N, σ·h)`.
    pub fn observables(&self, sigma: &[f64]) -> (f64, f64) {
        let mut e = 0.0;
        let mut f = 0.0;
        for ((s, t), h) in sigma.iter().zip(&self.theta).zip(&self.field) {
            e += t * s * s;
            f += h * s;
        }
        (e, f)
    }

    fn log_weight(&self, obs: (f64, f64)) -> f64 {
        self.theta.len() as f64 * (self.beta * obs.0 + obs.1)
    }
}

/// One recorded step of a chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    pub beta: f64,
    /// `H_N(σ)/N`.
    pub energy_per_spin: f64,
    /// `σ·h_N`.
    pub field_term: f64,
    /// Running acceptance rate of the current run.
    pub acceptance: f64,
}

fn metropolis_step(target: &SphereTarget, chain: &mut SphereChain, current: &mut (f64, f64)) -> bool {
    let n = chain.state.len();
    let g = gaussian_vector(&mut chain.rng, n);
    let mut prop: Vec<f64> = chain.state.iter().zip(&g).map(|(s, x)| s + chain.step_scale * x).collect();
    let r = prop.iter().map(|x| x * x).sum::<f64>().sqrt();
    prop.iter_mut().for_each(|x| *x /= r);
    let obs = target.observables(&prop);
    let delta = target.log_weight(obs) - target.log_weight(*current);
    let u: f64 = rand::Rng::random(&mut chain.rng);
    chain.steps_taken += 1;
    if delta >= 0.0 || u < delta.exp() {
        chain.state = prop;
        *current = obs;
        true
    } else {
        false
    }
}

/// Runs `steps` Metropolis steps while adapting `δ`: every
/// [`ADAPT_WINDOW`] steps the scale shrinks by 0.8 when the window's
/// acceptance is below [`TARGET_ACCEPTANCE`] and grows by 1.25 when above,
/// up to [`MAX_STEP_SCALE`].
pub fn burn_in(target: &SphereTarget, chain: &mut SphereChain, steps: usize) -> Result<()> {
    check_chain(target, chain)?;
    let mut current = target.observables(&chain.state);
    let (mut accepted, mut total) = (0usize, 0usize);
    let mut window = 0usize;
    for step in 1..=steps {
        if metropolis_step(target, chain, &mut current) {
            accepted += 1;
            window += 1;
        }
        total += 1;
        if step % ADAPT_WINDOW == 0 {
            let rate = window as f64 / ADAPT_WINDOW as f64;
            if rate < TARGET_ACCEPTANCE.0 {
                chain.step_scale *= 0.8;
            } else if rate > TARGET_ACCEPTANCE.1 {
                chain.step_scale = (chain.step_scale * 1.25).min(MAX_STEP_SCALE);
            }
            window = 0;
        }
    }
    if total > 0 {
        chain.acceptance_rate = accepted as f64 / total as f64;
    }
    Ok(())
}

/// Runs `steps` Metropolis steps with frozen `δ` and records every state.
pub fn sample_chain(target: &SphereTarget, chain: &mut SphereChain, steps: usize) -> Result<Vec<TraceRow>> {
    check_chain(target, chain)?;
    if steps == 0 {
        return domain("steps", 0.0, "[1, inf)");
    }
    let mut current = target.observables(&chain.state);
    let mut accepted = 0usize;
    let mut trace = Vec::with_capacity(steps);
    for i in 1..=steps {
        if metropolis_step(target, chain, &mut current) {
            accepted += 1;
        }
        trace.push(TraceRow {
            step: chain.steps_taken,
            beta: target.beta,
            energy_per_spin: current.0,
            field_term: current.1,
            acceptance: accepted as f64 / i as f64,
        });
    }
    chain.acceptance_rate = accepted as f64 / steps as f64;
    Ok(trace)
}

fn check_chain(target: &SphereTarget, chain: &SphereChain) -> Result<()> {
    if chain.len() != target.theta.len() {
        return Err(Error::DimensionMismatch {
            expected: target.theta.len(),
            found: chain.len(),
        });
    }
    Ok(())
}

/// Burn-in with adaptation followed by `steps` recorded steps at the Gibbs
/// measure of `(sample, β, field)`.
pub fn mcmc_sphere(
    sample: &GoeSample,
    beta: f64,
    field: &FieldVector,
    chain: &mut SphereChain,
    burn_in_steps: usize,
    steps: usize,
) -> Result<Vec<TraceRow>> {
    let target = SphereTarget::new(sample, beta, field)?;
    burn_in(&target, chain, burn_in_steps)?;
    sample_chain(&target, chain, steps)
}

/// Integrated autocorrelation time `τ = 1 + 2 Σ_{k ≥ 1} ρ_k` with Sokal's
/// self-consistent window (`M ≥ 5τ(M)`), so that the variance of the mean is
/// `Var/n · τ`.
pub fn integrated_autocorrelation(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 1.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = xs.iter().map(|x| x - mean).collect();
    let c0 = c.iter().map(|x| x * x).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return 1.0;
    }
    let mut tau = 1.0;
    for k in 1..n {
        let ck = c[..n - k].iter().zip(&c[k..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        tau += 2.0 * ck / c0;
        if k as f64 >= 5.0 * tau {
            break;
        }
    }
    tau
}

/// Mean and its standard error for a correlated series.
pub fn mean_with_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let tau = integrated_autocorrelation(xs).max(1.0);
    (mean, (var * tau / n).sqrt())
}

/// `β` grid and chain lengths for thermodynamic integration.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermoSchedule {
    /// Strictly ascending, starting at 0.
    pub beta_grid: Vec<f64>,
    pub samples_per_point: usize,
    /// Steps of warm-start equilibration at every grid point. `None` selects
    /// `max(5000, 10 τ)` with `τ` measured on a pilot chain at the last `β`.
    pub burn_in: Option<usize>,
}

impl ThermoSchedule {
    /// `points` equally spaced values from 0 to `beta_final`.
    pub fn uniform(beta_final: f64, points: usize, samples_per_point: usize) -> Result<Self> {
        if points < 1 || (points == 1 && beta_final != 0.0) {
            return domain("points", points as f64, "[2, inf)");
        }
        let beta_grid = if points == 1 {
            vec![0.0]
        } else {
            (0..points)
                .map(|j| beta_final * j as f64 / (points - 1) as f64)
                .collect()
        };
        let s = Self {
            beta_grid,
            samples_per_point,
            burn_in: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match self.beta_grid.first() {
            Some(&b) if b == 0.0 => {}
            Some(&b) => return domain("beta_grid[0]", b, "{0}"),
            None => return Err(Error::Precondition("empty beta grid".into())),
        }
        if self.beta_grid.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(Error::Precondition("beta grid must be strictly ascending".into()));
        }
        if self.samples_per_point < 2 {
            return domain("samples_per_point", self.samples_per_point as f64, "[2, inf)");
        }
        Ok(())
    }
}

/// Outcome of [`thermo_integrate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ThermoResult {
    /// `F_N(β_final, h_N)`.
    pub free_energy: f64,
    /// `F_N(0, h_N)` by quadrature.
    pub base: f64,
    /// Trapezoid of `⟨H_N/N⟩` over the grid.
    pub integral: f64,
    pub beta_grid: Vec<f64>,
    pub mean_energy: Vec<f64>,
    pub std_error: Vec<f64>,
    pub acceptance: Vec<f64>,
    pub step_scale: Vec<f64>,
    pub burn_in: usize,
    pub samples_per_point: usize,
    pub seed: u64,
    /// Some grid point ended with acceptance outside [`FLAG_ACCEPTANCE`]
    /// while its proposal scale could still move.
    pub flagged: bool,
}

/// Thermodynamic integration of `F_N` from `β = 0` along the schedule.
pub fn thermo_integrate(
    sample: &GoeSample,
    field: &FieldVector,
    schedule: &ThermoSchedule,
    seed: u64,
) -> Result<ThermoResult> {
    thermo_integrate_traced(sample, field, schedule, seed, None)
}

/// [`thermo_integrate`] that also streams every recorded step as CSV.
pub fn thermo_integrate_traced(
    sample: &GoeSample,
    field: &FieldVector,
    schedule: &ThermoSchedule,
    seed: u64,
    mut trace_out: Option<&mut dyn Write>,
) -> Result<ThermoResult> {
    schedule.validate()?;
    let n = sample.n;
    let base = pure_field_free_energy(n, field.magnitude)?;
    let field_eigen = sample.to_eigenbasis(&field.components);
    let target_at = |beta: f64| SphereTarget::from_eigen(sample.spectrum.clone(), field_eigen.clone(), beta);

    let burn = match schedule.burn_in {
        Some(b) => b,
        None => {
            let hardest = target_at(*schedule.beta_grid.last().expect("validated"))?;
            let mut pilot = SphereChain::new(n, seed);
            burn_in(&hardest, &mut pilot, MIN_BURN_IN)?;
            let trace = sample_chain(&hardest, &mut pilot, MIN_BURN_IN)?;
            let e: Vec<f64> = trace.iter().map(|r| r.energy_per_spin).collect();
            MIN_BURN_IN.max((10.0 * integrated_autocorrelation(&e)).ceil() as usize)
        }
    };

    if let Some(w) = trace_out.as_deref_mut() {
        write_trace_header(w).map_err(io_error)?;
    }
    let mut chain = SphereChain::new(n, seed);
    let points = schedule.beta_grid.len();
    let (mut mean_energy, mut std_error) = (Vec::with_capacity(points), Vec::with_capacity(points));
    let (mut acceptance, mut step_scale) = (Vec::with_capacity(points), Vec::with_capacity(points));
    let mut flagged = false;
    for &beta in &schedule.beta_grid {
        let target = target_at(beta)?;
        burn_in(&target, &mut chain, burn)?;
        let trace = sample_chain(&target, &mut chain, schedule.samples_per_point)?;
        if let Some(w) = trace_out.as_deref_mut() {
            write_trace_rows(w, &trace).map_err(io_error)?;
        }
        let e: Vec<f64> = trace.iter().map(|r| r.energy_per_spin).collect();
        let (m, se) = mean_with_error(&e);
        let rate = chain.acceptance_rate;
        let pinned = chain.step_scale >= MAX_STEP_SCALE;
        if rate < FLAG_ACCEPTANCE.0 || (rate > FLAG_ACCEPTANCE.1 && !pinned) {
            flagged = true;
        }
        mean_energy.push(m);
        std_error.push(se);
        acceptance.push(rate);
        step_scale.push(chain.step_scale);
    }
    let integral: f64 = schedule
        .beta_grid
        .windows(2)
        .zip(mean_energy.windows(2))
        .map(|(b, e)| 0.5 * (b[1] - b[0]) * (e[0] + e[1]))
        .sum();
    Ok(ThermoResult {
        free_energy: base + integral,
        base,
        integral,
        beta_grid: schedule.beta_grid.clone(),
        mean_energy,
        std_error,
        acceptance,
        step_scale,
        burn_in: burn,
        samples_per_point: schedule.samples_per_point,
        seed,
        flagged,
    })
}

fn io_error(e: io::Error) -> Error {
    Error::Precondition(format!("trace output failed: {e}"))
}

pub fn write_trace_header(w: &mut dyn Write) -> io::Result<()> {
    writeln!(w, "step,beta,energy_per_spin,field_term,acceptance")
}

pub fn write_trace_rows(w: &mut dyn Write, rows: &[TraceRow]) -> io::Result<()> {
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.step, r.beta, r.energy_per_spin, r.field_term, r.acceptance
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{classical_spectrum, solve_tap_variational, AsymptoticParams};
    use crate::numeric::grid_golden_max;
    use crate::rmt::sample_goe;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn integrate_density(n: usize, moment: impl Fn(f64) -> f64) -> f64 {
        adaptive_simpson(
            |x| moment(x) * inner_product_density(x, n).unwrap(),
            -1.0,
            1.0,
            1e-13,
            512,
        )
    }

    #[test]
    fn density_normalization_and_variance() {
        for n in [10, 100, 1000] {
            assert_abs_diff_eq!(integrate_density(n, |_| 1.0), 1.0, epsilon = 1e-10);
            assert_abs_diff_eq!(integrate_density(n, |x| x * x), 1.0 / n as f64, epsilon = 1e-10);
        }
        assert!(inner_product_density(0.5, 3).is_err());
        assert_eq!(inner_product_density(1.5, 10).unwrap(), 0.0);
        assert_eq!(inner_product_density(-1.0, 10).unwrap(), 0.0);
    }

    #[test]
    fn density_matches_sphere_sampling() {
        // E[x⁴] of one coordinate is 3/(N(N+2)).
        let n = 12;
        let m4 = integrate_density(n, |x| x.powi(4));
        assert_abs_diff_eq!(m4, 3.0 / (n * (n + 2)) as f64, epsilon = 1e-12);
    }

    #[test]
    fn block_norm_basics() {
        let theta = classical_spectrum::<f64>(20);
        let one = CoarseGrid::from_spectrum(&theta, 1).unwrap();
        let mut e = vec![0.0; 20];
        e[17] = 1.0;
        assert_eq!(block_norms(&e, &one).unwrap(), vec![1.0]);
        let grid = CoarseGrid::from_spectrum(&theta, 4).unwrap();
        let b = block_norms(&e, &grid).unwrap();
        for (k, v) in b.iter().enumerate() {
            assert_eq!(*v, if k == grid.assignment[17] { 1.0 } else { 0.0 });
        }
        assert!(block_norms(&e[..19], &grid).is_err());
    }

    #[test]
    fn block_norm_means() {
        let n = 60;
        let grid = CoarseGrid::counting(n, 5).unwrap();
        let mut rng = rng_stream(9, 0);
        let draws = 10_000;
        let mut sums = vec![0.0; grid.len()];
        let mut sq = vec![0.0; grid.len()];
        for _ in 0..draws {
            let s = random_unit_vector(&mut rng, n);
            for (k, v) in block_norms(&s, &grid).unwrap().into_iter().enumerate() {
                sums[k] += v;
                sq[k] += v * v;
            }
        }
        for k in 0..grid.len() {
            let mean = sums[k] / draws as f64;
            let var = sq[k] / draws as f64 - mean * mean;
            assert!((mean - grid.mu[k]).abs() <= 3.0 * (var / draws as f64).sqrt());
        }
    }

    #[test]
    fn dirichlet_second_moment_by_sphere_integral() {
        // N = 4: a single coordinate block has ρ = cos²ψ with the S³ polar
        // weight sin²ψ; a two-coordinate block has ρ uniform on [0, 1].
        let num = adaptive_simpson(|p: f64| p.cos().powi(4) * p.sin().powi(2), 0.0, std::f64::consts::PI, 1e-14, 64);
        let den = adaptive_simpson(|p: f64| p.sin().powi(2), 0.0, std::f64::consts::PI, 1e-14, 64);
        assert_abs_diff_eq!(num / den, dirichlet_raw_moment(0.5, 2.0, 2), epsilon = 1e-12);
        assert_abs_diff_eq!(num / den, 1.0 * 3.0 / (4.0 * 6.0), epsilon = 1e-12);
        let uniform = adaptive_simpson(|r: f64| r * r, 0.0, 1.0, 1e-14, 4);
        assert_abs_diff_eq!(uniform, 2.0 * 4.0 / (4.0 * 6.0), epsilon = 1e-12);
        assert_abs_diff_eq!(dirichlet_raw_moment(1.0, 2.0, 2), uniform, epsilon = 1e-12);
    }

    #[test]
    fn dirichlet_check_small() {
        let grid = CoarseGrid::counting(40, 3).unwrap();
        assert!(dirichlet_moment_check(40, &grid, 20_000, 1).unwrap() <= 4.0);
        assert!(dirichlet_moment_check(40, &grid, 10, 1).is_err());
        assert!(dirichlet_moment_check(41, &grid, 2000, 1).is_err());
    }

    #[test]
    fn pure_field_limits() {
        assert_eq!(pure_field_free_energy(100, 0.0).unwrap(), 0.0);
        assert!(pure_field_free_energy(3, 0.1).is_err());
        assert!(pure_field_free_energy(10, -0.1).is_err());
        // Oracle: sup_q {h √q + ½ log(1 − q)}.
        let limit = |h: f64| grid_golden_max(|q: f64| h * q.sqrt() + 0.5 * (1.0 - q).ln(), 0.0, 1.0 - 1e-12, 10_000, 1e-12).value;
        let golden = (5f64.sqrt() - 1.0) / 2.0;
        assert_abs_diff_eq!(limit(1.0), golden + 0.5 * (1.0 - golden * golden).ln(), epsilon = 1e-9);
        assert!((pure_field_free_energy(2000, 1.0).unwrap() - limit(1.0)).abs() <= 0.003);
        assert!((pure_field_free_energy(2000, 0.1).unwrap() - 0.005).abs() <= 0.001);
    }

    #[test]
    fn pure_field_matches_direct_quadrature() {
        // Direct integration of e^{Nh(x−1)}, which stays below one, without
        // locating the peak.
        for (n, h) in [(10, 0.3), (50, 1.0), (6, 2.0)] {
            let nh = n as f64 * h;
            let direct = integrate_density(n, |x| (nh * (x - 1.0)).exp()).ln() / n as f64 + h;
            assert_abs_diff_eq!(pure_field_free_energy(n, h).unwrap(), direct, epsilon = 1e-11);
        }
    }

    fn two_level_exact(n1: usize, n2: usize, a1: f64, a2: f64) -> f64 {
        // ρ = mass on the first level ~ Beta(n1/2, n2/2); substitute ρ = s².
        let n = (n1 + n2) as f64;
        let (p, q) = (n1 as f64 / 2.0, n2 as f64 / 2.0);
        let log_b = ln_gamma(p) + ln_gamma(q) - ln_gamma(p + q);
        let log_f = |s: f64| {
            (2.0f64).ln() + (2.0 * p - 1.0) * s.ln() + (q - 1.0) * (1.0 - s * s).ln() - log_b + n * (a1 - a2) * s * s
        };
        let peak = grid_golden_max(log_f, 1e-9, 1.0 - 1e-9, 20_000, 1e-13);
        let area = adaptive_simpson(|s| (log_f(s) - peak.value).exp(), 0.0, 1.0, 1e-15, 1024);
        a2 + (peak.value + area.ln()) / n
    }

    #[test]
    fn saddle_against_two_level_oracle() {
        for (n1, n2, a1, a2) in [(10, 190, 0.6, 0.1), (40, 160, 0.3, -0.2), (100, 300, 0.5, 0.45)] {
            let mut spectrum = vec![a1; n1];
            spectrum.extend(vec![a2; n2]);
            let est = no_field_saddle_fe(&spectrum, 1.0).unwrap();
            let exact = two_level_exact(n1, n2, a1, a2);
            let n = (n1 + n2) as f64;
            assert!((est.value() - exact).abs() <= 1.0 / (n * n) * 10.0, "{} vs {exact}", est.value());
            assert!((est.value() - exact).abs() < (est.leading - exact).abs());
        }
    }

    #[test]
    fn saddle_constant_spectrum_is_exact() {
        let spectrum = vec![0.3; 100];
        let est = no_field_saddle_fe(&spectrum, 1.0).unwrap();
        assert_abs_diff_eq!(est.leading, 0.3, epsilon = 1e-12);
        // What is left is the Stirling remainder of log Γ(N/2), about 1/(6N²).
        assert_abs_diff_eq!(est.value(), 0.3 + 1.0 / 60_000.0, epsilon = 1e-7);
    }

    #[test]
    fn saddle_classical_spectrum() {
        assert_eq!(no_field_saddle_fe(&classical_spectrum::<f64>(100), 0.0).unwrap().value(), 0.0);
        let small = no_field_saddle_fe(&classical_spectrum::<f64>(500), 1e-4).unwrap().value();
        assert!(small.abs() < 1e-6);
        assert!((no_field_saddle_fe(&classical_spectrum::<f64>(2000), 0.5).unwrap().value() - 0.125).abs() <= 0.005);
        let edge = no_field_saddle_fe(&classical_spectrum::<f64>(2000), std::f64::consts::FRAC_1_SQRT_2).unwrap();
        assert!((edge.value() - 0.25).abs() <= 0.01);
        let mut last = f64::INFINITY;
        for n in [500, 1000, 2000] {
            let err = (no_field_saddle_fe(&classical_spectrum::<f64>(n), 0.5).unwrap().value() - 0.125).abs();
            assert!(err < last);
            last = err;
        }
    }

    #[test]
    fn restricted_slice_on_eigenvectors() {
        let sample = sample_goe(40, 3).unwrap();
        let u = sample.basis.column(39);
        let v = sample.basis.column(10);
        let est = restricted_two_slice_fe(&sample, &u, &v, 0.5).unwrap();
        let rest: Vec<f64> = sample
            .spectrum
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 39 && *i != 10)
            .map(|(_, t)| *t)
            .collect();
        let direct = no_field_saddle_fe(&rest, 0.5).unwrap();
        assert_abs_diff_eq!(est.value(), direct.value(), epsilon = 1e-10);
        assert_eq!(restricted_two_slice_fe(&sample, &u, &v, 0.0).unwrap().value(), 0.0);
        assert!(restricted_two_slice_fe(&sample, &u, &v, 0.8).is_err());
    }

    #[test]
    fn uniform_chain_moments() {
        let n = 20;
        let sample = sample_goe(n, 1).unwrap();
        let mut chain = SphereChain::new(n, 7);
        let trace_len = 100_000;
        let target = SphereTarget::new(&sample, 0.0, &FieldVector::zeros(n)).unwrap();
        burn_in(&target, &mut chain, 2000).unwrap();
        let mut xs = Vec::with_capacity(trace_len);
        let mut sq = Vec::with_capacity(trace_len);
        for _ in 0..trace_len {
            sample_chain(&target, &mut chain, 1).unwrap();
            xs.push(chain.state[0]);
            sq.push(chain.state[0] * chain.state[0]);
        }
        let (m, se) = mean_with_error(&sq);
        assert!((m - 1.0 / n as f64).abs() <= 3.0 * se);

        // Kolmogorov–Smirnov distance against the exact law of σ·e_1.
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut cdf = 0.0;
        let mut prev = -1.0;
        let mut ks: f64 = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            cdf += adaptive_simpson(|t| inner_product_density(t, n).unwrap(), prev, x, 1e-12, 1);
            prev = x;
            let lo = i as f64 / trace_len as f64;
            let hi = (i + 1) as f64 / trace_len as f64;
            ks = ks.max((cdf - lo).abs()).max((cdf - hi).abs());
        }
        assert!(ks <= 0.02, "KS = {ks}");
    }

    #[test]
    fn chains_are_reproducible() {
        let sample = sample_goe(30, 2).unwrap();
        let field = FieldVector::random(30, 0.5, 2);
        let run = || {
            let mut chain = SphereChain::new(30, 11);
            let t = mcmc_sphere(&sample, 0.7, &field, &mut chain, 500, 500).unwrap();
            (t, chain.state)
        };
        assert_eq!(run(), run());
        let (trace, state) = run();
        assert_abs_diff_eq!(state.iter().map(|x| x * x).sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(trace.iter().all(|r| (0.0..=1.0).contains(&r.acceptance)));
    }

    #[test]
    fn adaptation_reaches_target_window() {
        let sample = sample_goe(50, 4).unwrap();
        let target = SphereTarget::new(&sample, 1.0, &FieldVector::random(50, 0.5, 4)).unwrap();
        let mut chain = SphereChain::new(50, 4);
        burn_in(&target, &mut chain, 20_000).unwrap();
        sample_chain(&target, &mut chain, 20_000).unwrap();
        assert!((0.2..=0.45).contains(&chain.acceptance_rate), "{}", chain.acceptance_rate);
    }

    #[test]
    fn autocorrelation_of_ar1() {
        // AR(1) with coefficient φ has τ = (1 + φ)/(1 − φ).
        let phi: f64 = 0.8;
        let mut rng = rng_stream(5, 0);
        let noise = gaussian_vector(&mut rng, 200_000);
        let mut x = 0.0;
        let xs: Vec<f64> = noise
            .iter()
            .map(|e| {
                x = phi * x + e;
                x
            })
            .collect();
        let tau = integrated_autocorrelation(&xs);
        assert!((tau - 9.0).abs() < 0.6, "{tau}");
    }

    #[test]
    fn schedule_validation() {
        let ok = ThermoSchedule::uniform(1.0, 11, 100).unwrap();
        assert_eq!(ok.beta_grid.len(), 11);
        assert_eq!(ok.beta_grid[10], 1.0);
        for grid in [vec![], vec![0.1, 0.2], vec![0.0, 0.2, 0.2]] {
            let s = ThermoSchedule {
                beta_grid: grid,
                samples_per_point: 100,
                burn_in: None,
            };
            assert!(s.validate().is_err());
        }
    }

    #[test]
    fn thermo_empty_integral_is_base() {
        let sample = sample_goe(30, 5).unwrap();
        let field = FieldVector::random(30, 0.8, 5);
        let schedule = ThermoSchedule {
            beta_grid: vec![0.0],
            samples_per_point: 100,
            burn_in: Some(100),
        };
        let r = thermo_integrate(&sample, &field, &schedule, 1).unwrap();
        assert_abs_diff_eq!(r.free_energy, pure_field_free_energy(30, 0.8).unwrap(), epsilon = 1e-10);
    }

    #[test]
    fn thermo_convex_and_traced() {
        let n = 40;
        let sample = sample_goe(n, 6).unwrap();
        let field = FieldVector::random(n, 0.5, 6);
        let mut schedule = ThermoSchedule::uniform(0.8, 9, 4000).unwrap();
        schedule.burn_in = Some(2000);
        let mut csv = Vec::new();
        let r = thermo_integrate_traced(&sample, &field, &schedule, 3, Some(&mut csv)).unwrap();
        for j in 1..r.mean_energy.len() {
            let tol = 3.0 * (r.std_error[j].powi(2) + r.std_error[j - 1].powi(2)).sqrt();
            assert!(r.mean_energy[j] >= r.mean_energy[j - 1] - tol);
        }
        let text = String::from_utf8(csv).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "step,beta,energy_per_spin,field_term,acceptance");
        assert_eq!(lines.count(), 9 * 4000);
        let again = thermo_integrate(&sample, &field, &schedule, 3).unwrap();
        assert_eq!(again, r);
    }

    #[test]
    fn thermo_tracks_asymptotics_loosely() {
        let n = 100;
        let sample = sample_goe(n, 1).unwrap();
        let field = FieldVector::random(n, 0.5, 1);
        let schedule = ThermoSchedule::uniform(0.6, 25, 10_000).unwrap();
        let r = thermo_integrate(&sample, &field, &schedule, 1).unwrap();
        let target = solve_tap_variational(&AsymptoticParams::new(0.6, 0.5).unwrap()).unwrap().value;
        assert!((r.free_energy - target).abs() <= 0.05, "{} vs {target}", r.free_energy);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn density_is_even(x in -0.999f64..0.999, n in 4usize..500) {
            let a = inner_product_density(x, n).unwrap();
            let b = inner_product_density(-x, n).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300));
        }

        #[test]
        fn block_norms_sum_to_one(seed in any::<u64>(), k in 1usize..12) {
            let n = 50;
            let grid = CoarseGrid::counting(n, k).unwrap();
            let s = random_unit_vector(&mut rng_stream(seed, 0), n);
            let b = block_norms(&s, &grid).unwrap();
            prop_assert!(b.iter().all(|&v| v >= 0.0));
            prop_assert!((b.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn pure_field_is_increasing(h in 0.0f64..2.0, dh in 0.01f64..0.5) {
            let a = pure_field_free_energy(200, h).unwrap();
            let b = pure_field_free_energy(200, h + dh).unwrap();
            prop_assert!(b > a);
        }
    }
}
