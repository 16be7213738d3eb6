//! Storage-time decay of the memory efficiency, its least-squares fit, and
//! the coherent-state fidelity benchmark used to decide whether a memory of
//! given efficiency beats classical measure-and-prepare storage.

use core::f64::consts::PI;
use core::fmt;

use alloc::vec::Vec;

/// Efficiency after storage time `t`:
/// `η₀ · exp(-(t/τ_d)²) · exp(-t/τ₀)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayModel {
    /// Efficiency at zero storage time, limited by the optical depth.
    pub eta0: f64,
    /// Atomic diffusion time, µs.
    pub tau_d: f64,
    /// Ground-state decoherence time, µs.
    pub tau0: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelError {
    Eta0OutOfRange,
    NonpositiveTauD,
    NonpositiveTau0,
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelError::Eta0OutOfRange => "eta0 must lie in (0, 1]",
            ModelError::NonpositiveTauD => "tau_d must be positive",
            ModelError::NonpositiveTau0 => "tau0 must be positive",
        })
    }
}

impl DecayModel {
    pub fn new(eta0: f64, tau_d: f64, tau0: f64) -> Result<Self, ModelError> {
        if !(eta0 > 0.0 && eta0 <= 1.0) {
            return Err(ModelError::Eta0OutOfRange);
        }
        if !(tau_d > 0.0) {
            return Err(ModelError::NonpositiveTauD);
        }
        if !(tau0 > 0.0) {
            return Err(ModelError::NonpositiveTau0);
        }
        Ok(DecayModel { eta0, tau_d, tau0 })
    }
}

pub fn decay_efficiency(model: &DecayModel, t: f64) -> f64 {
    let g = t / model.tau_d;
    model.eta0 * (-g * g).exp() * (-t / model.tau0).exp()
}

/// Decay rate `1/(2π τ)` in kHz for a time constant in µs; the number `X` in
/// "2π × X kHz".
pub fn decay_rate_khz(tau_us: f64) -> f64 {
    1e3 / (2.0 * PI * tau_us)
}

/// Inverse of [`decay_rate_khz`].
pub fn time_constant_us(rate_khz: f64) -> f64 {
    1e3 / (2.0 * PI * rate_khz)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayFit {
    pub model: DecayModel,
    /// `sqrt(Σ residual²)`.
    pub residual_norm: f64,
    /// Standard errors of `(η₀, τ_d, τ₀)` from the residual curvature; `None`
    /// when there are no spare degrees of freedom. A fixed `τ_d` has error 0.
    pub std_errors: Option<[f64; 3]>,
    pub iterations: usize,
    pub tau_d_fixed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FitError {
    InsufficientPoints { needed: usize, got: usize },
    Degenerate(&'static str),
    InvalidFixedTauD,
    NotConverged(DecayFit),
}

impl fmt::Display for FitError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FitError::InsufficientPoints { needed, got } => {
                write!(f, "insufficient points: need {needed}, got {got}")
            }
            FitError::Degenerate(why) => write!(f, "degenerate data: {why}"),
            FitError::InvalidFixedTauD => write!(f, "fixed tau_d must be positive and finite"),
            FitError::NotConverged(best) => write!(
                f,
                "fit did not converge (best residual {})",
                best.residual_norm
            ),
        }
    }
}

pub const MAX_ITERATIONS: usize = 200;
pub const STEP_TOLERANCE: f64 = 1e-10;

// Parameters are fitted as (η₀, a = 1/τ_d², b = 1/τ₀), which makes the model
// log-linear and keeps the Jacobian well scaled.
fn model_value(p: &[f64; 3], t: f64) -> f64 {
    p[0] * (-p[1] * t * t - p[2] * t).exp()
}

fn cost(points: &[(f64, f64)], p: &[f64; 3]) -> f64 {
    points
        .iter()
        .map(|&(t, y)| {
            let r = y - model_value(p, t);
            r * r
        })
        .sum()
}

/// Solve the `n × n` system `m x = rhs` (n ≤ 3) by Gaussian elimination with
/// partial pivoting.
fn solve(mut m: [[f64; 3]; 3], mut rhs: [f64; 3], n: usize) -> Option<[f64; 3]> {
    for col in 0..n {
        let pivot = (col..n).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| m[row][k] * x[k]).sum();
        x[row] = (rhs[row] - s) / m[row][row];
    }
    Some(x)
}

/// Free parameter indices into `(η₀, a, b)`.
fn free_indices(fixed_a: bool) -> &'static [usize] {
    if fixed_a {
        &[0, 2]
    } else {
        &[0, 1, 2]
    }
}

/// Log-linear regression of `ln η = ln η₀ - a t² - b t`, each sample
/// weighted by `weight(η)`.
fn log_regression(
    points: &[(f64, f64)],
    fixed_a: Option<f64>,
    weight: impl Fn(f64) -> f64,
) -> Option<[f64; 3]> {
    // Subnormal values have lost relative precision; their logarithm is noise.
    let usable: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(_, y)| y >= f64::MIN_POSITIVE)
        .collect();
    let free = free_indices(fixed_a.is_some());
    if usable.len() < free.len() {
        return None;
    }
    // Regress on t / t_max to keep the normal equations well conditioned.
    let scale = usable.iter().fold(0.0, |m: f64, &(t, _)| m.max(t.abs())).max(1e-300);
    let mut ata = [[0.0; 3]; 3];
    let mut aty = [0.0; 3];
    for &(t, y) in &usable {
        let w = weight(y);
        let s = t / scale;
        let full = [1.0, -s * s, -s];
        let target = y.ln() + fixed_a.map_or(0.0, |a| a * t * t);
        for (r, &i) in free.iter().enumerate() {
            for (c, &j) in free.iter().enumerate() {
                ata[r][c] += w * full[i] * full[j];
            }
            aty[r] += w * full[i] * target;
        }
    }
    let x = solve(ata, aty, free.len())?;
    let mut p = [0.0, fixed_a.unwrap_or(0.0), 0.0];
    for (r, &i) in free.iter().enumerate() {
        p[i] = x[r];
    }
    p[0] = p[0].exp();
    if fixed_a.is_none() {
        p[1] /= scale * scale;
    }
    p[2] /= scale;
    p[1] = p[1].max(0.0);
    p[2] = p[2].max(0.0);
    p.iter().all(|v| v.is_finite()).then_some(p)
}

/// Starting points: a plain log regression, exact for noiseless data, and
/// one weighted by `η²`, which mimics the linear-space residuals when the
/// data are noisy.
fn initial_guesses(points: &[(f64, f64)], fixed_a: Option<f64>) -> Vec<[f64; 3]> {
    [
        log_regression(points, fixed_a, |_| 1.0),
        log_regression(points, fixed_a, |y| y * y),
    ]
    .into_iter()
    .flatten()
    .collect()
}

struct Refined {
    p: [f64; 3],
    cost: f64,
    iterations: usize,
    converged: bool,
}

/// Damped Gauss–Newton from `start` over the `free` parameters.
fn refine(points: &[(f64, f64)], free: &[usize], start: [f64; 3], floor: f64) -> Refined {
    let nfree = free.len();
    let mut p = start;
    let mut current = cost(points, &p);
    let mut lambda = 1e-3;
    let mut converged = current <= floor;
    let mut iterations = 0;
    while !converged && iterations < MAX_ITERATIONS {
        iterations += 1;
        let (jtj, jtr) = normal_equations(points, free, &p);
        let mut accepted = false;
        for _ in 0..60 {
            let mut damped = jtj;
            for k in 0..nfree {
                damped[k][k] += lambda * jtj[k][k].max(1e-300);
            }
            let Some(step) = solve(damped, jtr, nfree) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = p;
            for (a, &i) in free.iter().enumerate() {
                trial[i] += step[a];
            }
            trial[0] = trial[0].max(1e-300);
            trial[1] = trial[1].max(0.0);
            trial[2] = trial[2].max(0.0);
            let trial_cost = cost(points, &trial);
            if trial_cost <= current {
                let scale: f64 = free.iter().map(|&i| p[i] * p[i]).sum::<f64>().sqrt();
                let moved: f64 = free
                    .iter()
                    .map(|&i| (trial[i] - p[i]) * (trial[i] - p[i]))
                    .sum::<f64>()
                    .sqrt();
                p = trial;
                let improved = current - trial_cost;
                current = trial_cost;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                if moved <= STEP_TOLERANCE * scale.max(1e-12) || current <= floor || improved == 0.0 {
                    converged = true;
                }
                break;
            }
            lambda *= 2.0;
        }
        if !accepted {
            // No downhill step at any damping: already at the minimum to
            // working precision.
            converged = true;
        }
    }
    Refined {
        p,
        cost: current,
        iterations,
        converged,
    }
}

fn normal_equations(points: &[(f64, f64)], free: &[usize], p: &[f64; 3]) -> ([[f64; 3]; 3], [f64; 3]) {
    let mut jtj = [[0.0; 3]; 3];
    let mut jtr = [0.0; 3];
    for &(t, y) in points {
        let m = model_value(p, t);
        let e = (-p[1] * t * t - p[2] * t).exp();
        let full = [e, -t * t * m, -t * m];
        let r = y - m;
        for (a, &i) in free.iter().enumerate() {
            for (b, &j) in free.iter().enumerate() {
                jtj[a][b] += full[i] * full[j];
            }
            jtr[a] += full[i] * r;
        }
    }
    (jtj, jtr)
}

fn to_model(p: &[f64; 3]) -> DecayModel {
    DecayModel {
        eta0: p[0],
        tau_d: if p[1] > 0.0 { 1.0 / p[1].sqrt() } else { f64::INFINITY },
        tau0: if p[2] > 0.0 { 1.0 / p[2] } else { f64::INFINITY },
    }
}

/// Least-squares fit of the decay model to `(t, η)` samples by damped
/// Gauss–Newton (Levenberg damping). With `fixed_tau_d` only `η₀` and `τ₀`
/// are fitted.
pub fn fit_decay(points: &[(f64, f64)], fixed_tau_d: Option<f64>) -> Result<DecayFit, FitError> {
    if let Some(tau_d) = fixed_tau_d {
        if !(tau_d > 0.0 && tau_d.is_finite()) {
            return Err(FitError::InvalidFixedTauD);
        }
    }
    let fixed_a = fixed_tau_d.map(|tau| 1.0 / (tau * tau));
    let free = free_indices(fixed_a.is_some());
    let nfree = free.len();
    if points.len() < nfree {
        return Err(FitError::InsufficientPoints {
            needed: nfree,
            got: points.len(),
        });
    }
    if points.iter().any(|&(t, y)| !(t.is_finite() && y.is_finite())) {
        return Err(FitError::Degenerate("non-finite sample"));
    }
    let mut times: Vec<f64> = points.iter().map(|p| p.0).collect();
    times.sort_by(|a, b| a.total_cmp(b));
    times.dedup();
    if times.len() < nfree {
        return Err(FitError::Degenerate("too few distinct times"));
    }
    if points.iter().all(|&(_, y)| y == 0.0) {
        return Err(FitError::Degenerate("all efficiencies are zero"));
    }

    // Residuals at round-off level of the data cannot be improved on, and
    // candidates that reach it are equally good fits.
    let floor = 1e-28 * points.iter().map(|&(_, y)| y * y).sum::<f64>();
    let starts = initial_guesses(points, fixed_a);
    if starts.is_empty() {
        return Err(FitError::Degenerate("no positive efficiencies to initialize from"));
    }
    // The first candidate comes from the plain log regression, the only one
    // informed by samples far down the tail; it wins ties.
    let best = starts
        .into_iter()
        .map(|start| refine(points, free, start, floor))
        .reduce(|best, r| {
            if r.cost < best.cost && best.cost > floor {
                r
            } else {
                best
            }
        })
        .expect("at least one start");
    let Refined {
        p,
        cost: current,
        iterations,
        converged,
    } = best;

    let dof = points.len() as f64 - nfree as f64;
    let (jtj, _) = normal_equations(points, free, &p);
    let std_errors = if dof > 0.0 {
        let s2 = current / dof;
        let mut var = [0.0; 3];
        let mut ok = true;
        for k in 0..nfree {
            let mut e = [0.0; 3];
            e[k] = 1.0;
            match solve(jtj, e, nfree) {
                Some(col) => var[k] = col[k] * s2,
                None => ok = false,
            }
        }
        ok.then(|| {
            let mut out = [0.0; 3];
            for (k, &i) in free.iter().enumerate() {
                let sd = var[k].max(0.0).sqrt();
                out[i] = match i {
                    0 => sd,
                    // τ_d = a^{-1/2}, τ₀ = 1/b.
                    1 => 0.5 * sd * p[1].powf(-1.5),
                    _ => sd / (p[2] * p[2]),
                };
            }
            out
        })
    } else {
        None
    };

    let fit = DecayFit {
        model: to_model(&p),
        residual_norm: current.sqrt(),
        std_errors,
        iterations,
        tau_d_fixed: fixed_a.is_some(),
    };
    if converged {
        Ok(fit)
    } else {
        Err(FitError::NotConverged(fit))
    }
}

/// Coherent state of mean photon number `nbar` stored in a linear memory of
/// efficiency `eta_m`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FidelityPoint {
    pub nbar: f64,
    pub eta_m: f64,
}

/// Fidelity of a linear, noiseless memory: `1 / (1 + n̄(1 - √η_m))`.
pub fn fidelity_bound(point: FidelityPoint) -> f64 {
    1.0 / (1.0 + point.nbar * (1.0 - point.eta_m.sqrt()))
}

/// Best average fidelity of measure-and-prepare storage of coherent states
/// with mean photon number `nbar`: `(n̄ + 1)/(2n̄ + 1)`.
pub fn classical_benchmark(nbar: f64) -> f64 {
    (nbar + 1.0) / (2.0 * nbar + 1.0)
}

/// Classical fidelity limit against which the memory is compared.
pub trait ClassicalBenchmark {
    fn fidelity(&self, nbar: f64) -> f64;
}

/// The coherent-state measure-and-prepare limit, [`classical_benchmark`].
#[derive(Clone, Copy, Debug, Default)]
pub struct CoherentStateBenchmark;

impl ClassicalBenchmark for CoherentStateBenchmark {
    fn fidelity(&self, nbar: f64) -> f64 {
        classical_benchmark(nbar)
    }
}

impl<F: Fn(f64) -> f64> ClassicalBenchmark for F {
    fn fidelity(&self, nbar: f64) -> f64 {
        self(nbar)
    }
}

/// Largest mean photon number for which the memory beats the benchmark.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Capacity {
    Bounded(f64),
    /// Perfect efficiency: the memory wins for every `n̄`.
    Unbounded,
}

impl Capacity {
    pub fn value(&self) -> f64 {
        match self {
            Capacity::Bounded(n) => *n,
            Capacity::Unbounded => f64::INFINITY,
        }
    }
}

pub const CAPACITY_RELATIVE_PRECISION: f64 = 1e-6;

/// Bisection for the largest `n̄` with `fidelity_bound > benchmark`.
pub fn capacity_for_efficiency(eta_m: f64, benchmark: &impl ClassicalBenchmark) -> Capacity {
    if eta_m >= 1.0 {
        return Capacity::Unbounded;
    }
    if eta_m <= 0.0 {
        return Capacity::Bounded(0.0);
    }
    let wins = |n: f64| fidelity_bound(FidelityPoint { nbar: n, eta_m }) > benchmark.fidelity(n);
    let mut hi = 1.0;
    while wins(hi) {
        hi *= 2.0;
        if hi > 1e300 {
            return Capacity::Unbounded;
        }
    }
    let mut lo = 0.0;
    for _ in 0..2000 {
        if hi - lo <= 0.1 * CAPACITY_RELATIVE_PRECISION * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if wins(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo == 0.0 {
        return Capacity::Bounded(0.0);
    }
    Capacity::Bounded(0.5 * (lo + hi))
}

/// Closed form of the capacity against [`classical_benchmark`]:
/// `(1 - x)/x` with `x = 1 - √η_m`.
pub fn capacity_closed_form(eta_m: f64) -> Capacity {
    let x = 1.0 - eta_m.sqrt();
    if x <= 0.0 {
        Capacity::Unbounded
    } else {
        Capacity::Bounded((1.0 - x) / x)
    }
}

/// Capacity of the memory after storage time `t` under `model`.
pub fn quantum_capacity(model: &DecayModel, t: f64) -> Capacity {
    capacity_for_efficiency(decay_efficiency(model, t), &CoherentStateBenchmark)
}
