//! Integration of the coupled coherence/field equations
//!
//! ```text
//! ∂σ/∂t = -(γ₁₂ + iδ(z,t)) σ - i C(t) E
//! ∂E/∂z = -i D(t) σ
//! ```
//!
//! with `C = gΩ_c/Δ`, `D = 𝒩L Ω_c/Δ`, `σ(z,0) = 0` (unless preloaded) and
//! `E(0,t) = E_in(t)`. The field has no time derivative, so at every RK4
//! stage it is rebuilt from the boundary by trapezoidal integration of the
//! coherence along z.
//!
//! The relative sign of the two couplings is the one for which a cw probe is
//! attenuated (Beer-law absorption).

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use num_complex::Complex64 as C64;

use crate::model::{validate, ExperimentConfig, GradientLevel, Level, PhysicsParams, Violation};
use crate::numeric::{adaptive_simpson, integrate_window, trapezoid};

const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ZIntegration {
    #[default]
    Trapezoid,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TimeStepper {
    #[default]
    Rk4,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolverOptions {
    pub z_integration: ZIntegration,
    pub time_stepper: TimeStepper,
    /// Keep `E(z, t)` on the full grid in [`SimulationResult::field_history`].
    pub store_full_field: bool,
    /// Coherence at `t = 0`, one value per z grid point.
    pub initial_coherence: Option<Vec<C64>>,
}

/// Energy bookkeeping of a run. Energies are `∫|E|² dt` in field units.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnergyLedger {
    pub input_energy: f64,
    /// Output energy over `[0, flip]` (the whole window without a flip).
    pub transmitted_energy_before_flip: f64,
    /// Output energy from the end of the flip ramp to `t_end`.
    pub echo_energy_after_flip: f64,
    /// `(D/C) ∫|σ(z, t_end)|² dz`, the energy left in the spin wave.
    pub stored_weighted_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    /// Grid time actually sampled (nearest to the requested one).
    pub time: f64,
    pub coherence: Vec<C64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationResult {
    pub dt: f64,
    pub time_grid: Vec<f64>,
    pub z_grid: Vec<f64>,
    /// `E(z = 1, t)`.
    pub output_field: Vec<C64>,
    /// `E(z = 0, t)`.
    pub input_field: Vec<C64>,
    pub coherence_snapshots: Vec<Snapshot>,
    pub final_coherence: Vec<C64>,
    /// `field_history[n][j] = E(z_j, t_n)` when requested.
    pub field_history: Option<Vec<Vec<C64>>>,
    pub energy_ledger: EnergyLedger,
}

impl SimulationResult {
    pub fn input_power(&self) -> Vec<f64> {
        self.input_field.iter().map(|e| e.norm_sqr()).collect()
    }

    pub fn output_power(&self) -> Vec<f64> {
        self.output_field.iter().map(|e| e.norm_sqr()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SolverError {
    /// The configuration failed validation; nothing was integrated.
    Invalid(Vec<Violation>),
    /// A non-finite coherence appeared at grid point `z_index` while stepping
    /// to time index `t_index`.
    NonFinite { z_index: usize, t_index: usize },
    /// Preloaded coherence does not match the z grid.
    CoherenceLength { expected: usize, got: usize },
    /// cw line evaluated exactly on an undamped, unbroadened resonance.
    UndampedResonance,
}

impl fmt::Display for SolverError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolverError::Invalid(v) => {
                write!(f, "invalid configuration:")?;
                for violation in v {
                    write!(f, " [{violation}]")?;
                }
                Ok(())
            }
            SolverError::NonFinite { z_index, t_index } => write!(
                f,
                "non-finite coherence at z index {z_index}, time index {t_index}"
            ),
            SolverError::CoherenceLength { expected, got } => write!(
                f,
                "initial coherence has {got} points, grid has {expected}"
            ),
            SolverError::UndampedResonance => write!(f, "undamped resonance"),
        }
    }
}

struct Medium<'a> {
    config: &'a ExperimentConfig,
    z_centered: Vec<f64>,
    h: f64,
}

impl Medium<'_> {
    fn physics(&self) -> &PhysicsParams {
        &self.config.physics
    }

    /// Field along z for coherence `sigma`, written into `field`.
    fn field(&self, sigma: &[C64], e_in: C64, d: f64, field: &mut [C64]) {
        let half_h = 0.5 * self.h;
        let mut acc = C64::new(0.0, 0.0);
        field[0] = e_in;
        for j in 1..sigma.len() {
            acc += (sigma[j - 1] + sigma[j]) * half_h;
            field[j] = e_in - I * d * acc;
        }
    }

    /// `∂σ/∂t` for coherence `sigma` at time `t` with the given levels.
    fn derivative(&self, sigma: &[C64], t: f64, grad: GradientLevel, rabi: f64, out: &mut [C64]) {
        let p = self.physics();
        let c = p.signal_coupling(rabi);
        let d = p.field_coupling(rabi);
        let gamma = p.decoherence(rabi);
        let e_in = self.config.input.field(t);
        let half_h = 0.5 * self.h;
        let mut acc = C64::new(0.0, 0.0);
        let mut e = e_in;
        for j in 0..sigma.len() {
            if j > 0 {
                acc += (sigma[j - 1] + sigma[j]) * half_h;
                e = e_in - I * d * acc;
            }
            let delta = grad.detuning(self.z_centered[j] + 0.5);
            out[j] = -C64::new(gamma, delta) * sigma[j] - I * c * e;
        }
    }

    /// `E(1, t)` for coherence `sigma`.
    fn exit_field(&self, sigma: &[C64], t: f64) -> C64 {
        let d = self.physics().field_coupling(self.config.control.at(t));
        let e_in = self.config.input.field(t);
        let n = sigma.len();
        let mut acc = C64::new(0.0, 0.0);
        for j in 1..n {
            acc += sigma[j - 1] + sigma[j];
        }
        e_in - I * d * acc * (0.5 * self.h)
    }
}

struct Rk4Buffers {
    k1: Vec<C64>,
    k2: Vec<C64>,
    k3: Vec<C64>,
    k4: Vec<C64>,
    tmp: Vec<C64>,
}

impl Rk4Buffers {
    fn new(n: usize) -> Self {
        let zero = C64::new(0.0, 0.0);
        Rk4Buffers {
            k1: vec![zero; n],
            k2: vec![zero; n],
            k3: vec![zero; n],
            k4: vec![zero; n],
            tmp: vec![zero; n],
        }
    }
}

/// One RK4 step over `[a, b]`, an interval with no schedule breakpoint inside.
fn rk4_step(medium: &Medium<'_>, sigma: &mut [C64], a: f64, b: f64, buf: &mut Rk4Buffers) {
    let h = b - a;
    let (g0, g1) = medium.config.gradient.piece(a, b);
    let (r0, r1) = medium.config.control.piece(a, b);
    let grad_at = |f: f64| GradientLevel::lerp(g0, g1, f);
    let rabi_at = |f: f64| f64::lerp(r0, r1, f);

    medium.derivative(sigma, a, grad_at(0.0), rabi_at(0.0), &mut buf.k1);
    for ((t, s), k) in buf.tmp.iter_mut().zip(sigma.iter()).zip(&buf.k1) {
        *t = s + k * (0.5 * h);
    }
    medium.derivative(&buf.tmp, a + 0.5 * h, grad_at(0.5), rabi_at(0.5), &mut buf.k2);
    for ((t, s), k) in buf.tmp.iter_mut().zip(sigma.iter()).zip(&buf.k2) {
        *t = s + k * (0.5 * h);
    }
    medium.derivative(&buf.tmp, a + 0.5 * h, grad_at(0.5), rabi_at(0.5), &mut buf.k3);
    for ((t, s), k) in buf.tmp.iter_mut().zip(sigma.iter()).zip(&buf.k3) {
        *t = s + k * h;
    }
    medium.derivative(&buf.tmp, b, grad_at(1.0), rabi_at(1.0), &mut buf.k4);
    let w = h / 6.0;
    for j in 0..sigma.len() {
        sigma[j] += (buf.k1[j] + (buf.k2[j] + buf.k3[j]) * 2.0 + buf.k4[j]) * w;
    }
}

/// Integrate `config` over its window.
///
/// Every time step that straddles a schedule breakpoint (a switch or the end
/// of a ramp) is split there, so the output grid stays uniform while RK4 never
/// steps across a discontinuity.
pub fn integrate(
    config: &ExperimentConfig,
    options: &SolverOptions,
) -> Result<SimulationResult, SolverError> {
    let violations = validate(config);
    if !violations.is_empty() {
        return Err(SolverError::Invalid(violations));
    }
    let nz = config.nz;
    let steps = config.steps();
    let dt = config.effective_dt();
    let h = 1.0 / (nz - 1) as f64;
    let z_grid: Vec<f64> = (0..nz).map(|j| j as f64 * h).collect();
    let medium = Medium {
        config,
        z_centered: z_grid.iter().map(|z| z - 0.5).collect(),
        h,
    };

    let mut sigma = match &options.initial_coherence {
        Some(init) if init.len() != nz => {
            return Err(SolverError::CoherenceLength {
                expected: nz,
                got: init.len(),
            })
        }
        Some(init) => init.clone(),
        None => vec![C64::new(0.0, 0.0); nz],
    };

    let mut breakpoints: Vec<f64> = config
        .gradient
        .breakpoints()
        .into_iter()
        .chain(config.control.breakpoints())
        .filter(|&t| t > 0.0 && t < config.t_end)
        .collect();
    breakpoints.sort_by(|a, b| a.total_cmp(b));
    breakpoints.dedup();

    let mut snapshot_slots: Vec<(usize, usize)> = config
        .snapshot_times
        .iter()
        .enumerate()
        .map(|(k, &t)| (k, ((t / dt).round() as usize).min(steps)))
        .collect();
    snapshot_slots.sort_by_key(|&(_, n)| n);
    let mut snapshots: Vec<Option<Snapshot>> = vec![None; config.snapshot_times.len()];
    let mut next_snapshot = 0;
    let mut take_snapshots = |n: usize, sigma: &[C64], snapshots: &mut Vec<Option<Snapshot>>| {
        while next_snapshot < snapshot_slots.len() && snapshot_slots[next_snapshot].1 == n {
            let (k, _) = snapshot_slots[next_snapshot];
            snapshots[k] = Some(Snapshot {
                time: n as f64 * dt,
                coherence: sigma.to_vec(),
            });
            next_snapshot += 1;
        }
    };

    let mut time_grid = Vec::with_capacity(steps + 1);
    let mut input_field = Vec::with_capacity(steps + 1);
    let mut output_field = Vec::with_capacity(steps + 1);
    let mut history = options.store_full_field.then(|| Vec::with_capacity(steps + 1));
    let mut field_buf = vec![C64::new(0.0, 0.0); nz];

    let mut record = |t: f64, sigma: &[C64], history: &mut Option<Vec<Vec<C64>>>| {
        time_grid.push(t);
        input_field.push(config.input.field(t));
        output_field.push(medium.exit_field(sigma, t));
        if let Some(hist) = history.as_mut() {
            let d = config.physics.field_coupling(config.control.at(t));
            medium.field(sigma, config.input.field(t), d, &mut field_buf);
            hist.push(field_buf.clone());
        }
    };

    record(0.0, &sigma, &mut history);
    take_snapshots(0, &sigma, &mut snapshots);

    let mut buf = Rk4Buffers::new(nz);
    let mut bp = 0;
    for n in 0..steps {
        let t0 = n as f64 * dt;
        let t1 = if n + 1 == steps { config.t_end } else { (n + 1) as f64 * dt };
        let mut a = t0;
        while bp < breakpoints.len() && breakpoints[bp] <= a {
            bp += 1;
        }
        while bp < breakpoints.len() && breakpoints[bp] < t1 {
            let b = breakpoints[bp];
            if b - a > 1e-12 * dt {
                rk4_step(&medium, &mut sigma, a, b, &mut buf);
                a = b;
            }
            bp += 1;
        }
        rk4_step(&medium, &mut sigma, a, t1, &mut buf);

        let norm: f64 = sigma.iter().map(|s| s.re.abs() + s.im.abs()).sum();
        if !norm.is_finite() {
            let z_index = sigma
                .iter()
                .position(|s| !(s.re.is_finite() && s.im.is_finite()))
                .unwrap_or(0);
            return Err(SolverError::NonFinite {
                z_index,
                t_index: n + 1,
            });
        }
        record(t1, &sigma, &mut history);
        take_snapshots(n + 1, &sigma, &mut snapshots);
    }

    let power_in: Vec<f64> = input_field.iter().map(|e| e.norm_sqr()).collect();
    let power_out: Vec<f64> = output_field.iter().map(|e| e.norm_sqr()).collect();
    let (transmitted, echo) = match (config.flip_time, config.flip_completion()) {
        (Some(flip), Some(done)) => (
            integrate_window(&power_out, dt, 0.0, flip),
            integrate_window(&power_out, dt, done, config.t_end),
        ),
        _ => (trapezoid(&power_out, dt), 0.0),
    };
    let spin: Vec<f64> = sigma.iter().map(|s| s.norm_sqr()).collect();
    let stored = if config.physics.g_coupling > 0.0 {
        config.physics.coupling_ratio() * trapezoid(&spin, h)
    } else {
        0.0
    };

    Ok(SimulationResult {
        dt,
        time_grid,
        z_grid,
        output_field,
        input_field,
        coherence_snapshots: snapshots.into_iter().flatten().collect(),
        final_coherence: sigma,
        field_history: history,
        energy_ledger: EnergyLedger {
            input_energy: trapezoid(&power_in, dt),
            transmitted_energy_before_flip: transmitted,
            echo_energy_after_flip: echo,
            stored_weighted_norm: stored,
        },
    })
}

/// `∫₀¹ γ / (γ² + (δ̄ - slope·(z - ½))²) dz`, the steady-state absorption
/// integral of a linearly broadened line.
fn line_integral(gamma: f64, slope: f64, detuning: f64) -> Result<f64, SolverError> {
    if gamma == 0.0 {
        if slope == 0.0 {
            return if detuning == 0.0 {
                Err(SolverError::UndampedResonance)
            } else {
                Ok(0.0)
            };
        }
        // Lorentzian collapses to π δ(·): only the resonant slice absorbs.
        let z_res = 0.5 + detuning / slope;
        let weight = if z_res > 0.0 && z_res < 1.0 {
            1.0
        } else if z_res == 0.0 || z_res == 1.0 {
            0.5
        } else {
            0.0
        };
        return Ok(weight * core::f64::consts::PI / slope.abs());
    }
    let f = |z: f64| {
        let x = detuning - slope * (z - 0.5);
        gamma / (gamma * gamma + x * x)
    };
    let scale = if slope == 0.0 {
        f(0.5)
    } else {
        (core::f64::consts::PI / slope.abs()).min(1.0 / gamma)
    };
    let tol = 1e-12 * scale;
    let z_res = if slope == 0.0 { -1.0 } else { 0.5 + detuning / slope };
    let total = if z_res > 0.0 && z_res < 1.0 {
        adaptive_simpson(&f, 0.0, z_res, 0.5 * tol) + adaptive_simpson(&f, z_res, 1.0, 0.5 * tol)
    } else {
        adaptive_simpson(&f, 0.0, 1.0, tol)
    };
    Ok(total)
}

/// Intensity transmission `|E(1)/E(0)|²` of a cw probe at two-photon
/// detuning `two_photon_detuning` from the line center, for a line broadened
/// by `slope` with the control at `rabi`.
pub fn steady_state_transmission(
    physics: &PhysicsParams,
    rabi: f64,
    slope: f64,
    two_photon_detuning: f64,
) -> Result<f64, SolverError> {
    let cd = physics.signal_coupling(rabi) * physics.field_coupling(rabi);
    if cd == 0.0 {
        return Ok(1.0);
    }
    let gamma = physics.decoherence(rabi);
    let integral = line_integral(gamma, slope, two_photon_detuning)?;
    Ok((-2.0 * cd * integral).exp().clamp(0.0, 1.0))
}

/// Absorbed fraction at line center. Its square bounds the recall
/// efficiency set by the optical depth.
pub fn absorbed_fraction(physics: &PhysicsParams, rabi: f64, slope: f64) -> Result<f64, SolverError> {
    Ok(1.0 - steady_state_transmission(physics, rabi, slope, 0.0)?)
}

/// Recall efficiency bound `A²` set by the optical depth.
pub fn recall_efficiency_bound(
    physics: &PhysicsParams,
    rabi: f64,
    slope: f64,
) -> Result<f64, SolverError> {
    let a = absorbed_fraction(physics, rabi, slope)?;
    Ok(a * a)
}
