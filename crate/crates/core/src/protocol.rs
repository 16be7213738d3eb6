//! Storage and recall scenarios on top of the solver, and the observables
//! extracted from their output: efficiency, echo timing and width, spectral
//! centroid, delay-bandwidth product and heterodyne beat traces.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use num_complex::Complex64 as C64;

use crate::model::{ExperimentConfig, GradientLevel, PulseTrain};
use crate::numeric::{dominant_frequency, integrate_window, parabolic_offset, spectral_centroid, trapezoid};
use crate::solver::{integrate, SimulationResult, SolverError, SolverOptions};

/// Echo peaks must exceed this fraction of the input peak power.
pub const ECHO_DETECTION_THRESHOLD: f64 = 1e-4;
/// Below this fraction of the input peak power the run has no echo at all.
pub const NO_ECHO_THRESHOLD: f64 = 1e-6;
/// Minimum separation of detected echoes, in input pulse widths.
pub const ECHO_SEPARATION: f64 = 0.5;
/// Half-width of the spectral window around an echo, in echo widths.
pub const SPECTRAL_WINDOW: f64 = 3.0;

#[derive(Clone, Debug, PartialEq)]
pub enum ProtocolError {
    Solver(SolverError),
    Precondition(String),
    ZeroInputEnergy,
    MissingEcho,
    Undersampled { lo_offset: f64, dt: f64 },
}

impl From<SolverError> for ProtocolError {
    fn from(e: SolverError) -> Self {
        ProtocolError::Solver(e)
    }
}

impl fmt::Display for ProtocolError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProtocolError::Solver(e) => write!(f, "{e}"),
            ProtocolError::Precondition(why) => write!(f, "scenario precondition failed: {why}"),
            ProtocolError::ZeroInputEnergy => write!(f, "input pulse carries no energy; efficiency undefined"),
            ProtocolError::MissingEcho => write!(f, "no echo detected"),
            ProtocolError::Undersampled { lo_offset, dt } => write!(
                f,
                "local oscillator offset {lo_offset} rad/us is not resolvable with dt = {dt} us"
            ),
        }
    }
}

/// Observables of one storage/recall run.
#[derive(Clone, Debug, PartialEq)]
pub struct EchoReport {
    /// Echo-window energy over input energy.
    pub efficiency: f64,
    /// Peak time of the strongest echo, µs.
    pub echo_center: f64,
    /// Full 1/e² intensity width of the strongest echo, µs.
    pub echo_e2_width: f64,
    /// Input peak to echo peak, µs.
    pub storage_time_peak_to_peak: f64,
    /// Power-weighted mean frequency of the echo, rad/µs.
    pub spectral_centroid: f64,
    pub input_spectral_centroid: f64,
    /// Frequency resolution `2π / window` of the echo spectrum, rad/µs.
    pub spectral_resolution: f64,
    pub dbp: f64,
    /// Detected echo peak times in time order.
    pub echo_order: Vec<f64>,
    /// Efficiency carried by each detected echo; sums to `efficiency`.
    pub echo_efficiencies: Vec<f64>,
    pub expected_echoes: usize,
    pub no_echo: bool,
    pub input_peak_time: f64,
    pub first_input_center: f64,
    pub input_e2_width: f64,
    /// `[flip completion, t_end]`.
    pub echo_window: (f64, f64),
}

impl EchoReport {
    pub fn all_echoes_found(&self) -> bool {
        self.echo_order.len() >= self.expected_echoes
    }
}

/// A finished scenario: the configuration actually integrated, its raw
/// output, and the derived report.
#[derive(Clone, Debug)]
pub struct EchoRun {
    pub config: ExperimentConfig,
    pub simulation: SimulationResult,
    pub report: EchoReport,
}

/// Control field handling during the storage interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ControlGate {
    AlwaysOn,
    /// Control off from the end of the input pulse (center plus one width)
    /// until `reenable`, µs.
    OffDuringStorage { reenable: f64 },
}

/// `∫_window |E_echo|² dt / ∫ |E_in|² dt` on a uniform grid of spacing `dt`
/// starting at `t = 0`.
pub fn efficiency(
    input: &[C64],
    echo: &[C64],
    dt: f64,
    window: (f64, f64),
) -> Result<f64, ProtocolError> {
    let p_in: Vec<f64> = input.iter().map(|e| e.norm_sqr()).collect();
    let e_in = trapezoid(&p_in, dt);
    if !(e_in > 0.0) {
        return Err(ProtocolError::ZeroInputEnergy);
    }
    let p_out: Vec<f64> = echo.iter().map(|e| e.norm_sqr()).collect();
    Ok(integrate_window(&p_out, dt, window.0, window.1) / e_in)
}

fn argmax_from(p: &[f64], from: usize) -> Option<usize> {
    (from..p.len()).fold(None, |best: Option<usize>, k| match best {
        Some(b) if p[b] >= p[k] => Some(b),
        _ => Some(k),
    })
}

fn refined_time(p: &[f64], k: usize, dt: f64) -> f64 {
    let shift = if k > 0 && k + 1 < p.len() {
        parabolic_offset(p[k - 1], p[k], p[k + 1])
    } else {
        0.0
    };
    (k as f64 + shift) * dt
}

/// Full width between the 1/e² points around the peak at index `k`.
fn e2_width(p: &[f64], k: usize, dt: f64) -> f64 {
    let level = p[k] * (-2.0f64).exp();
    let mut left = 0.0;
    let mut j = k;
    while j > 0 && p[j - 1] >= level {
        j -= 1;
    }
    if j > 0 {
        let (a, b) = (p[j - 1], p[j]);
        left = (j - 1) as f64 + (level - a) / (b - a);
    }
    let mut right = (p.len() - 1) as f64;
    let mut j = k;
    while j + 1 < p.len() && p[j + 1] >= level {
        j += 1;
    }
    if j + 1 < p.len() {
        let (a, b) = (p[j], p[j + 1]);
        right = j as f64 + (a - level) / (a - b);
    }
    (right - left) * dt
}

#[derive(Clone, Copy, Debug)]
struct Peak {
    index: usize,
    time: f64,
    power: f64,
}

/// Local maxima of `p` after `from` (µs) above `threshold`, at least
/// `min_sep` apart. Within a cluster closer than `min_sep` the strongest
/// peak survives; on a tie the earliest.
fn detect_peaks(p: &[f64], dt: f64, from: f64, threshold: f64, min_sep: f64) -> Vec<Peak> {
    let k0 = ((from / dt).ceil() as usize).max(1);
    let mut out: Vec<Peak> = Vec::new();
    for k in k0..p.len().saturating_sub(1) {
        if !(p[k] > threshold && p[k] > p[k - 1] && p[k] >= p[k + 1]) {
            continue;
        }
        let cand = Peak {
            index: k,
            time: refined_time(p, k, dt),
            power: p[k],
        };
        match out.last_mut() {
            Some(last) if cand.time - last.time < min_sep => {
                if cand.power > last.power {
                    *last = cand;
                }
            }
            _ => out.push(cand),
        }
    }
    out
}

fn centroid_in(field: &[C64], dt: f64, lo: f64, hi: f64) -> (f64, f64) {
    let n = field.len();
    let a = ((lo / dt).floor().max(0.0) as usize).min(n.saturating_sub(1));
    let b = ((hi / dt).ceil().max(0.0) as usize).min(n.saturating_sub(1));
    if b <= a + 1 {
        return (0.0, f64::INFINITY);
    }
    let slice = &field[a..=b];
    let resolution = 2.0 * core::f64::consts::PI / ((b - a) as f64 * dt);
    (spectral_centroid(slice, dt).unwrap_or(0.0), resolution)
}

/// Derive an [`EchoReport`] from a finished simulation of `config`.
pub fn analyze(config: &ExperimentConfig, sim: &SimulationResult) -> Result<EchoReport, ProtocolError> {
    let dt = sim.dt;
    let window_start = config
        .flip_completion()
        .ok_or_else(|| ProtocolError::Precondition("scenario has no gradient flip".into()))?;
    let first = config
        .input
        .pulses
        .first()
        .ok_or_else(|| ProtocolError::Precondition("no input pulse".into()))?;
    let width_in = first.e2_width;

    let p_in = sim.input_power();
    let p_out = sim.output_power();
    let e_in = trapezoid(&p_in, dt);
    if !(e_in > 0.0) {
        return Err(ProtocolError::ZeroInputEnergy);
    }
    let efficiency = integrate_window(&p_out, dt, window_start, config.t_end) / e_in;

    let k_in = argmax_from(&p_in, 0).unwrap_or(0);
    let peak_in = p_in[k_in];
    let input_peak_time = refined_time(&p_in, k_in, dt);

    let k_window = ((window_start / dt).ceil() as usize).min(p_out.len() - 1);
    let k_max = argmax_from(&p_out, k_window).unwrap_or(k_window);
    let no_echo = p_out[k_max] < NO_ECHO_THRESHOLD * peak_in;

    let peaks = detect_peaks(
        &p_out,
        dt,
        window_start,
        ECHO_DETECTION_THRESHOLD * peak_in,
        ECHO_SEPARATION * width_in,
    );
    let strongest = peaks
        .iter()
        .fold(None, |best: Option<&Peak>, p| match best {
            Some(b) if b.power >= p.power => Some(b),
            _ => Some(p),
        })
        .copied()
        .unwrap_or(Peak {
            index: k_max,
            time: refined_time(&p_out, k_max, dt),
            power: p_out[k_max],
        });
    let echo_center = strongest.time;
    let echo_e2_width = if strongest.power > 0.0 {
        e2_width(&p_out, strongest.index, dt)
    } else {
        0.0
    };

    let (spectral_centroid, spectral_resolution) = centroid_in(
        &sim.output_field,
        dt,
        (echo_center - SPECTRAL_WINDOW * echo_e2_width).max(window_start),
        echo_center + SPECTRAL_WINDOW * echo_e2_width,
    );
    let last_center = config.input.pulses.iter().map(|p| p.center).fold(first.center, f64::max);
    let (input_spectral_centroid, _) = centroid_in(
        &sim.input_field,
        dt,
        first.center - SPECTRAL_WINDOW * width_in,
        last_center + SPECTRAL_WINDOW * width_in,
    );

    // Split the echo window at the power minima between neighbouring echoes.
    let mut edges = Vec::with_capacity(peaks.len() + 1);
    edges.push(window_start);
    for pair in peaks.windows(2) {
        let (a, b) = (pair[0].index, pair[1].index);
        let k_min = (a..=b).fold(a, |m, k| if p_out[k] < p_out[m] { k } else { m });
        edges.push(k_min as f64 * dt);
    }
    edges.push(config.t_end);
    let echo_efficiencies = if peaks.is_empty() {
        Vec::new()
    } else {
        edges
            .windows(2)
            .map(|w| integrate_window(&p_out, dt, w[0], w[1]) / e_in)
            .collect()
    };

    let echo_order: Vec<f64> = peaks.iter().map(|p| p.time).collect();
    let expected_echoes = config.input.len();
    let storage_time_peak_to_peak = echo_center - input_peak_time;
    let mut report = EchoReport {
        efficiency,
        echo_center,
        echo_e2_width,
        storage_time_peak_to_peak,
        spectral_centroid,
        input_spectral_centroid,
        spectral_resolution,
        dbp: f64::NAN,
        echo_order,
        echo_efficiencies,
        expected_echoes,
        no_echo,
        input_peak_time,
        first_input_center: first.center,
        input_e2_width: width_in,
        echo_window: (window_start, config.t_end),
    };
    report.dbp = delay_bandwidth_product(&report).unwrap_or(f64::NAN);
    Ok(report)
}

fn run(config: ExperimentConfig) -> Result<EchoRun, ProtocolError> {
    let simulation = integrate(&config, &SolverOptions::default())?;
    let report = analyze(&config, &simulation)?;
    Ok(EchoRun {
        config,
        simulation,
        report,
    })
}

fn require_flip(config: &ExperimentConfig) -> Result<f64, ProtocolError> {
    config
        .flip_time
        .ok_or_else(|| ProtocolError::Precondition("scenario has no gradient flip".into()))
}

fn require_single_pulse(config: &ExperimentConfig) -> Result<(), ProtocolError> {
    if config.input.len() != 1 {
        return Err(ProtocolError::Precondition(format!(
            "expected a single input pulse, found {}",
            config.input.len()
        )));
    }
    if config.input.pulses[0].amplitude == 0.0 {
        return Err(ProtocolError::ZeroInputEnergy);
    }
    Ok(())
}

/// `config` with the control switched off between the end of the input and
/// the gate's re-enable time.
pub fn gated_config(config: &ExperimentConfig, gate: ControlGate) -> Result<ExperimentConfig, ProtocolError> {
    let ControlGate::OffDuringStorage { reenable } = gate else {
        return Ok(config.clone());
    };
    let off = config
        .input
        .pulses
        .iter()
        .map(|p| p.center + p.e2_width)
        .fold(f64::NEG_INFINITY, f64::max);
    if !(reenable > off && reenable <= config.t_end) {
        return Err(ProtocolError::Precondition(format!(
            "control re-enable time {reenable} must lie in ({off}, {}]",
            config.t_end
        )));
    }
    let mut out = config.clone();
    out.control = config.control.with_override(off, reenable, 0.0);
    Ok(out)
}

/// Single-pulse storage and recall with one gradient flip.
pub fn run_storage_recall(config: &ExperimentConfig, gate: ControlGate) -> Result<EchoRun, ProtocolError> {
    require_flip(config)?;
    require_single_pulse(config)?;
    run(gated_config(config, gate)?)
}

/// Gradient level in force just before the flip.
fn storage_level(config: &ExperimentConfig, flip: f64) -> GradientLevel {
    config
        .gradient
        .segments()
        .iter()
        .rev()
        .find(|s| s.start < flip)
        .map_or(GradientLevel::new(0.0, 0.0), |s| s.level)
}

/// `config` with every recall segment's slope set to `-ratio` times the
/// storage slope.
pub fn scaled_recall_config(config: &ExperimentConfig, ratio: f64) -> Result<ExperimentConfig, ProtocolError> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(ProtocolError::Precondition(format!(
            "recall slope ratio must be positive, got {ratio}"
        )));
    }
    let flip = require_flip(config)?;
    let storage = storage_level(config, flip);
    let mut out = config.clone();
    out.gradient = config.gradient.map_levels(|seg| {
        if seg.start >= flip {
            GradientLevel {
                slope: -ratio * storage.slope,
                ..seg.level
            }
        } else {
            seg.level
        }
    });
    Ok(out)
}

/// Recall through a gradient `ratio` times steeper than the storage one. The
/// echo is compressed in time by `ratio`.
pub fn run_bandwidth_scaled_recall(
    config: &ExperimentConfig,
    ratio: f64,
    gate: ControlGate,
) -> Result<EchoRun, ProtocolError> {
    require_single_pulse(config)?;
    let scaled = scaled_recall_config(config, ratio)?;
    run(gated_config(&scaled, gate)?)
}

/// `config` with the two-photon detuning offset set to `offset` on every
/// recall segment.
pub fn shifted_recall_config(config: &ExperimentConfig, offset: f64) -> Result<ExperimentConfig, ProtocolError> {
    let flip = require_flip(config)?;
    let mut out = config.clone();
    out.gradient = config.gradient.map_levels(|seg| {
        if seg.start >= flip {
            GradientLevel {
                offset,
                ..seg.level
            }
        } else {
            seg.level
        }
    });
    Ok(out)
}

/// Recall with an added two-photon offset: the echo carrier moves by
/// `offset`.
pub fn run_frequency_shift(
    config: &ExperimentConfig,
    offset: f64,
    gate: ControlGate,
) -> Result<EchoRun, ProtocolError> {
    require_single_pulse(config)?;
    let shifted = shifted_recall_config(config, offset)?;
    run(gated_config(&shifted, gate)?)
}

/// Store the first `n` pulses of the configured train and recall them with
/// a single flip.
pub fn run_multi_pulse(config: &ExperimentConfig, n: usize) -> Result<EchoRun, ProtocolError> {
    require_flip(config)?;
    if n == 0 || config.input.len() < n {
        return Err(ProtocolError::Precondition(format!(
            "need 1 ≤ n ≤ {} pulses, got n = {n}",
            config.input.len()
        )));
    }
    let mut cfg = config.clone();
    cfg.input = PulseTrain::new(config.input.pulses[..n].to_vec());
    if cfg.input.pulses.iter().all(|p| p.amplitude == 0.0) {
        return Err(ProtocolError::ZeroInputEnergy);
    }
    run(cfg)
}

/// Storage delay over pulse width. Single pulse: peak-to-peak storage time
/// over the input width. Train: last echo center minus first input center,
/// over the single-pulse width.
pub fn delay_bandwidth_product(report: &EchoReport) -> Result<f64, ProtocolError> {
    if report.no_echo {
        return Err(ProtocolError::MissingEcho);
    }
    if report.expected_echoes <= 1 {
        return Ok(report.storage_time_peak_to_peak / report.input_e2_width);
    }
    let last = report.echo_order.last().ok_or(ProtocolError::MissingEcho)?;
    Ok((last - report.first_input_center) / report.input_e2_width)
}

/// Heterodyne trace `|E(t) + A·e^{-i ω_LO t}|²` with `A = max|E|`, for
/// samples at `t_k = k·dt`.
pub fn heterodyne_beat(echo: &[C64], dt: f64, lo_offset: f64) -> Result<Vec<f64>, ProtocolError> {
    if lo_offset.abs() * dt > core::f64::consts::PI {
        return Err(ProtocolError::Undersampled { lo_offset, dt });
    }
    let amp = echo.iter().fold(0.0, |m: f64, e| m.max(e.norm()));
    Ok(echo
        .iter()
        .enumerate()
        .map(|(k, e)| (e + C64::from_polar(amp, -lo_offset * k as f64 * dt)).norm_sqr())
        .collect())
}

/// Interference part `|s + r|² - |s|² - |r|² = 2 Re(s r*)` of two fields on
/// the same grid.
pub fn interference_term(signal: &[C64], reference: &[C64]) -> Vec<f64> {
    signal
        .iter()
        .zip(reference)
        .map(|(s, r)| 2.0 * (s * r.conj()).re)
        .collect()
}

/// Beat frequency (rad/µs) of a fringe trace.
pub fn fringe_frequency(trace: &[f64], dt: f64) -> Option<f64> {
    dominant_frequency(trace, dt)
}

/// Recall efficiency for each control Rabi frequency. Every nonzero control
/// level of `config` is replaced by the swept value; gated intervals stay off.
pub fn control_power_sweep(
    config: &ExperimentConfig,
    rabi_values: &[f64],
    gate: ControlGate,
) -> Result<Vec<(f64, f64)>, ProtocolError> {
    require_flip(config)?;
    require_single_pulse(config)?;
    rabi_values
        .iter()
        .map(|&rabi| {
            let mut cfg = config.clone();
            cfg.control = config
                .control
                .map_levels(|seg| if seg.level > 0.0 { rabi } else { seg.level });
            let cfg = gated_config(&cfg, gate)?;
            run(cfg).map(|r| (rabi, r.report.efficiency))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ControlSchedule, GradientSchedule, PhysicsParams, Pulse};
    use alloc::vec;

    fn config() -> ExperimentConfig {
        let t_end = 12.0;
        ExperimentConfig {
            physics: PhysicsParams {
                g_coupling: 1.0,
                linear_density: 30.0,
                detuning_delta: 100.0,
                gamma_12: 0.0,
                scattering_coeff: 0.0,
            },
            gradient: GradientSchedule::switched(
                &[(0.0, GradientLevel::new(32.0, 0.0)), (5.0, GradientLevel::new(-32.0, 0.0))],
                t_end,
            ),
            control: ControlSchedule::constant(40.0, t_end),
            input: PulseTrain::single(Pulse::new(3.0, 2.0, 1.0)),
            nz: 128,
            dt: 0.005,
            t_end,
            flip_time: Some(5.0),
            snapshot_times: vec![],
        }
    }

    #[test]
    fn efficiency_normalization() {
        let dt = 0.01;
        let input: Vec<C64> = (0..1000)
            .map(|k| Pulse::new(3.0, 2.0, 1.0).field(k as f64 * dt))
            .collect();
        assert!((efficiency(&input, &input, dt, (0.0, 10.0)).unwrap() - 1.0).abs() < 1e-12);
        let half: Vec<C64> = input.iter().map(|e| e * 0.5).collect();
        assert!((efficiency(&input, &half, dt, (0.0, 10.0)).unwrap() - 0.25).abs() < 1e-12);
        let zero = vec![C64::new(0.0, 0.0); 1000];
        assert_eq!(efficiency(&zero, &input, dt, (0.0, 10.0)), Err(ProtocolError::ZeroInputEnergy));
    }

    #[test]
    fn zero_amplitude_pulse_is_an_error() {
        let mut c = config();
        c.input.pulses[0].amplitude = 0.0;
        assert_eq!(
            run_storage_recall(&c, ControlGate::AlwaysOn).unwrap_err(),
            ProtocolError::ZeroInputEnergy
        );
    }

    #[test]
    fn peak_detection_merges_close_maxima() {
        let dt = 0.1;
        let p: Vec<f64> = (0..200)
            .map(|k| {
                let t = k as f64 * dt;
                (-(t - 5.0) * (t - 5.0)).exp() + 0.8 * (-(t - 5.6) * (t - 5.6) * 20.0).exp()
                    + (-(t - 12.0) * (t - 12.0)).exp()
            })
            .collect();
        let peaks = detect_peaks(&p, dt, 0.0, 1e-3, 1.0);
        assert_eq!(peaks.len(), 2);
        assert!((peaks[1].time - 12.0).abs() < 0.05);
    }

    #[test]
    fn e2_width_of_gaussian() {
        let dt = 0.001;
        let pulse = Pulse::new(5.0, 2.0, 1.0);
        let p: Vec<f64> = (0..10_000).map(|k| pulse.field(k as f64 * dt).norm_sqr()).collect();
        assert!((e2_width(&p, 5000, dt) - 2.0).abs() < 1e-4);
    }

    #[test]
    fn heterodyne_of_silence_is_flat() {
        let trace = heterodyne_beat(&vec![C64::new(0.0, 0.0); 50], 0.01, 3.0).unwrap();
        assert!(trace.iter().all(|&x| x == 0.0));
        assert!(matches!(
            heterodyne_beat(&[C64::new(1.0, 0.0)], 1.0, 4.0),
            Err(ProtocolError::Undersampled { .. })
        ));
    }

    #[test]
    fn gate_needs_room() {
        let c = config();
        assert!(gated_config(&c, ControlGate::OffDuringStorage { reenable: 4.0 }).is_err());
        let g = gated_config(&c, ControlGate::OffDuringStorage { reenable: 6.0 }).unwrap();
        assert_eq!(g.control.at(5.5), 0.0);
        assert_eq!(g.control.at(4.9), 40.0);
        assert_eq!(g.control.at(6.0), 40.0);
    }

    #[test]
    fn recall_transforms_touch_only_recall_segments() {
        let c = config();
        let s = scaled_recall_config(&c, 2.0).unwrap();
        assert_eq!(s.gradient.at(1.0).slope, 32.0);
        assert_eq!(s.gradient.at(6.0).slope, -64.0);
        let f = shifted_recall_config(&c, 3.0).unwrap();
        assert_eq!(f.gradient.at(1.0).offset, 0.0);
        assert_eq!(f.gradient.at(6.0).offset, 3.0);
        assert!(scaled_recall_config(&c, 0.0).is_err());
    }
}
