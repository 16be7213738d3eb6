//! The work behind each subcommand. Every command computes all of its tables
//! first and only then writes them, so a failure leaves no files behind.

use std::fmt;
use std::path::Path;

use gem_core::analysis::decay_rate_khz;
use gem_core::numeric::fourier;
use gem_core::protocol::{
    gated_config, heterodyne_beat, interference_term, fringe_frequency, run_multi_pulse,
    run_storage_recall, scaled_recall_config, shifted_recall_config, ControlGate,
};
use gem_core::{
    fit_decay, quantum_capacity, stable_time_step, steady_state_transmission, Capacity,
    DecayModel, EchoRun, FitError, ProtocolError, SolverError,
};
use rayon::prelude::*;

use crate::output::{commit, number, Table};
use crate::presets;
use crate::scenario::{self, parse_scenario, ConfigError, Kind, Scenario};

/// A failed command. Each kind maps to one exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad input: parse errors, invalid configurations, failed
    /// preconditions. Exit code 2.
    Invalid(String),
    /// The integration or analysis broke down. Exit code 3.
    Numerical(String),
    /// Reading or writing files failed. Exit code 1.
    Io(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Invalid(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Invalid(m) => write!(f, "invalid input:\n{m}"),
            Failure::Numerical(m) => write!(f, "numerical failure: {m}"),
            Failure::Io(e) => write!(f, "io error: {e:#}"),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

impl From<ProtocolError> for Failure {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::Solver(SolverError::Invalid(_))
            | ProtocolError::Precondition(_)
            | ProtocolError::ZeroInputEnergy
            | ProtocolError::Undersampled { .. } => Failure::Invalid(e.to_string()),
            ProtocolError::Solver(_) | ProtocolError::MissingEcho => Failure::Numerical(e.to_string()),
        }
    }
}

impl From<SolverError> for Failure {
    fn from(e: SolverError) -> Self {
        ProtocolError::Solver(e).into()
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Invalid(msg.into())
}

/// Reads a scenario from a file, or from the shipped presets when no file
/// of that name exists.
pub fn load(source: &str) -> Result<Scenario, Failure> {
    let path = Path::new(source);
    let text = if path.exists() {
        std::fs::read_to_string(path)
            .map_err(|e| Failure::Io(anyhow::Error::new(e).context(format!("reading {source}"))))?
    } else if let Some(text) = presets::get(source) {
        text.to_string()
    } else {
        return Err(Failure::Io(anyhow::anyhow!(
            "{source}: no such file or preset (presets: {})",
            presets::NAMES.join(", ")
        )));
    };
    parse_scenario(&text).map_err(|errors| {
        let lines: Vec<String> = errors.iter().map(|e| format!("{source}: {e}")).collect();
        invalid(lines.join("\n"))
    })
}

/// Quantities a sweep can vary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    /// Peak-to-peak storage time, µs. Moves the flip to `t_c + value/2`.
    StorageTime,
    /// Control Rabi frequency on every segment where the control is on.
    ControlRabi,
    RecallSlopeRatio,
    /// Two-photon offset of the recall gradient.
    Offset,
}

impl SweepParam {
    pub const ALL: [SweepParam; 4] = [
        SweepParam::StorageTime,
        SweepParam::ControlRabi,
        SweepParam::RecallSlopeRatio,
        SweepParam::Offset,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SweepParam::StorageTime => "storage_time",
            SweepParam::ControlRabi => "control_rabi",
            SweepParam::RecallSlopeRatio => "recall_slope_ratio",
            SweepParam::Offset => "offset",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|p| p.as_str() == name)
    }

    /// Parses a comma-separated value list in the parameter's units.
    pub fn parse_values(&self, text: &str) -> Result<Vec<f64>, Failure> {
        let parsed = match self {
            SweepParam::StorageTime => scenario::parse_times(text),
            SweepParam::ControlRabi | SweepParam::Offset => scenario::parse_frequencies(text),
            SweepParam::RecallSlopeRatio => scenario::parse_plain(text),
        };
        parsed.map_err(|e| invalid(format!("--values: {e}")))
    }

    fn apply(&self, value: f64) -> Overrides {
        let mut o = Overrides::default();
        match self {
            SweepParam::StorageTime => o.storage_time = Some(value),
            SweepParam::ControlRabi => o.control_rabi = Some(value),
            SweepParam::RecallSlopeRatio => o.slope_ratio = Some(value),
            SweepParam::Offset => o.offset = Some(value),
        }
        o
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Overrides {
    pub storage_time: Option<f64>,
    pub control_rabi: Option<f64>,
    pub slope_ratio: Option<f64>,
    pub offset: Option<f64>,
    /// Time step to use in place of the automatic one.
    pub dt: Option<f64>,
}

fn with_storage_time(scenario: &Scenario, storage: f64) -> Result<Scenario, Failure> {
    let flip = scenario
        .flip_time()
        .ok_or_else(|| invalid("storage_time needs a gradient flip"))?;
    let tc = scenario
        .pulses
        .as_ref()
        .and_then(|p| p.centers.first().copied())
        .ok_or_else(|| invalid("storage_time needs an input pulse"))?;
    let target = tc + 0.5 * storage;
    let shift = target - flip;
    let mut out = scenario.clone();
    let later = |ts: &mut Vec<f64>| {
        for t in ts.iter_mut().filter(|t| **t >= flip) {
            *t += shift;
        }
    };
    if let Some(g) = out.gradient.as_mut() {
        later(&mut g.starts);
    }
    if let Some(c) = out.control.as_mut() {
        later(&mut c.starts);
    }
    if let Some(r) = out.recall.as_mut() {
        r.flip_time = r.flip_time.map(|_| target);
        r.control_reenable = r.control_reenable.map(|t| t + shift);
    }
    if let Some(g) = out.grid.as_mut() {
        g.t_end += 2.0 * shift;
    }
    Ok(out)
}

fn gate(scenario: &Scenario) -> ControlGate {
    let recall = scenario.recall();
    if recall.control_off == Some(true) {
        let reenable = recall
            .control_reenable
            .or_else(|| scenario.flip_time())
            .unwrap_or(f64::NAN);
        ControlGate::OffDuringStorage { reenable }
    } else {
        ControlGate::AlwaysOn
    }
}

/// One storage/recall run of `scenario` with `overrides` applied.
pub fn experiment(scenario: &Scenario, overrides: Overrides) -> Result<EchoRun, Failure> {
    let sc = match overrides.storage_time {
        Some(v) => with_storage_time(scenario, v)?,
        None => scenario.clone(),
    };
    let kind = sc.kind();
    let recall = sc.recall();
    let mut cfg = sc.to_config()?;
    if let Some(rabi) = overrides.control_rabi {
        if !(rabi >= 0.0 && rabi.is_finite()) {
            return Err(invalid(format!("control Rabi frequency must be non-negative, got {rabi}")));
        }
        cfg.control = cfg
            .control
            .map_levels(|seg| if seg.level > 0.0 { rabi } else { seg.level });
    }
    let ratio = overrides
        .slope_ratio
        .or_else(|| (kind == Kind::BandwidthScaled).then(|| recall.slope_ratio.unwrap_or(1.0)));
    if let Some(r) = ratio {
        cfg = scaled_recall_config(&cfg, r)?;
    }
    let offset = overrides
        .offset
        .or_else(|| (kind == Kind::FrequencyShift).then(|| recall.offset.unwrap_or(0.0)));
    if let Some(o) = offset {
        cfg = shifted_recall_config(&cfg, o)?;
    }
    if let Some(dt) = overrides.dt {
        cfg.dt = dt;
    } else if sc.grid.as_ref().is_some_and(|g| g.dt.is_none()) {
        cfg.dt = stable_time_step(&cfg.physics, &cfg.gradient, &cfg.control);
    }
    let gate = gate(&sc);
    let run = if kind == Kind::MultiPulse {
        let gated = gated_config(&cfg, gate)?;
        let n = recall.pulse_count.unwrap_or(gated.input.len());
        run_multi_pulse(&gated, n)?
    } else {
        run_storage_recall(&cfg, gate)?
    };
    Ok(run)
}

/// `(value, efficiency, echo_center, echo_width)` per value, in input order.
pub fn sweep_rows(
    scenario: &Scenario,
    param: SweepParam,
    values: &[f64],
    jobs: Option<usize>,
) -> Result<Vec<[f64; 4]>, Failure> {
    let one = |&v: &f64| {
        experiment(scenario, param.apply(v)).map(|run| {
            let r = run.report;
            [v, r.efficiency, r.echo_center, r.echo_e2_width]
        })
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Failure::Io(anyhow::Error::new(e).context("starting worker threads")))?;
    pool.install(|| values.par_iter().map(one).collect())
}

fn sweep_table(rows: &[[f64; 4]]) -> Table {
    let mut t = Table::new("sweep.csv", &["value", "efficiency", "echo_center_us", "echo_width_us"]);
    for row in rows {
        t.numbers(row);
    }
    t
}

pub fn sweep(
    scenario: &Scenario,
    param: SweepParam,
    values: &[f64],
    jobs: Option<usize>,
    out: &Path,
) -> Result<(), Failure> {
    if !scenario.kind().is_time_domain() {
        return Err(invalid(format!(
            "scenario kind `{}` cannot be swept",
            scenario.kind().as_str()
        )));
    }
    let rows = sweep_rows(scenario, param, values, jobs)?;
    write(out, vec![sweep_table(&rows)])
}

fn write(out: &Path, tables: Vec<Table>) -> Result<(), Failure> {
    commit(out, tables).map(|_| ()).map_err(Failure::Io)
}

fn timeseries(run: &EchoRun) -> Table {
    let sim = &run.simulation;
    let mut t = Table::new(
        "timeseries.csv",
        &["t_us", "re_in", "im_in", "re_out", "im_out", "power_in", "power_out"],
    );
    for ((time, e_in), e_out) in sim.time_grid.iter().zip(&sim.input_field).zip(&sim.output_field) {
        t.numbers(&[*time, e_in.re, e_in.im, e_out.re, e_out.im, e_in.norm_sqr(), e_out.norm_sqr()]);
    }
    t
}

fn report(run: &EchoRun) -> Table {
    let r = &run.report;
    let mut t = Table::new(
        "report.csv",
        &["efficiency", "echo_center_us", "echo_width_us", "storage_us", "centroid_rad_per_us", "dbp"],
    );
    t.numbers(&[
        r.efficiency,
        r.echo_center,
        r.echo_e2_width,
        r.storage_time_peak_to_peak,
        r.spectral_centroid,
        r.dbp,
    ]);
    t
}

/// Power spectrum of the output field inside the echo window.
fn echo_spectrum(run: &EchoRun) -> Table {
    let sim = &run.simulation;
    let dt = sim.dt;
    let k0 = ((run.report.echo_window.0 / dt).ceil() as usize).min(sim.output_field.len());
    let window = &sim.output_field[k0..];
    let half = run.config.gradient.max_abs_detuning() + 8.0 / run.report.input_e2_width;
    let step = 2.0 * std::f64::consts::PI / ((window.len().max(1)) as f64 * dt) / 4.0;
    let n = ((2.0 * half / step).ceil() as usize + 1).clamp(2, 8192);
    let freqs: Vec<f64> = (0..n)
        .map(|k| -half + 2.0 * half * k as f64 / (n - 1) as f64)
        .collect();
    let amps = fourier(window, k0 as f64 * dt, dt, &freqs);
    let mut t = Table::new("spectrum.csv", &["freq_rad_per_us", "power"]);
    for (w, a) in freqs.iter().zip(&amps) {
        t.numbers(&[*w, a.norm_sqr()]);
    }
    t
}

fn snapshots(run: &EchoRun) -> Table {
    let sim = &run.simulation;
    let mut t = Table::new("snapshots.csv", &["z", "re_sigma", "im_sigma", "t_us"]);
    for snap in &sim.coherence_snapshots {
        for (z, s) in sim.z_grid.iter().zip(&snap.coherence) {
            t.numbers(&[*z, s.re, s.im, snap.time]);
        }
    }
    t
}

fn heterodyne(run: &EchoRun, lo: f64) -> Result<Table, Failure> {
    let sim = &run.simulation;
    let beat = heterodyne_beat(&sim.output_field, sim.dt, lo)?;
    let mut t = Table::new("heterodyne.csv", &["t_us", "power"]);
    for (time, p) in sim.time_grid.iter().zip(&beat) {
        t.numbers(&[*time, *p]);
    }
    Ok(t)
}

fn echoes(run: &EchoRun) -> Table {
    let r = &run.report;
    let mut t = Table::new("echoes.csv", &["echo_center_us", "efficiency"]);
    for (c, e) in r.echo_order.iter().zip(&r.echo_efficiencies) {
        t.numbers(&[*c, *e]);
    }
    t
}

/// Fringes between the shifted echo and an unshifted reference recall.
fn shift_tables(shifted: &EchoRun, reference: &EchoRun, offset: f64) -> Vec<Table> {
    let dt = shifted.simulation.dt;
    let fringes = interference_term(&shifted.simulation.output_field, &reference.simulation.output_field);
    let k0 = ((shifted.report.echo_window.0 / dt).ceil() as usize).min(fringes.len());
    let beat = fringe_frequency(&fringes[k0..], dt).unwrap_or(f64::NAN);
    let mut trace = Table::new("fringes.csv", &["t_us", "interference"]);
    for (time, f) in shifted.simulation.time_grid.iter().zip(&fringes) {
        trace.numbers(&[*time, *f]);
    }
    let mut summary = Table::new(
        "shift.csv",
        &[
            "offset_rad_per_us",
            "centroid_shift_rad_per_us",
            "resolution_rad_per_us",
            "fringe_rad_per_us",
        ],
    );
    summary.numbers(&[
        offset,
        shifted.report.spectral_centroid - reference.report.spectral_centroid,
        shifted.report.spectral_resolution,
        beat,
    ]);
    vec![trace, summary]
}

fn absorption_table(scenario: &Scenario) -> Result<Table, Failure> {
    let physics = scenario.physics_params()?;
    let rabi = scenario.peak_rabi();
    let slope = scenario.storage_slope();
    let analysis = scenario.analysis.clone().unwrap_or_default();
    let span = analysis.detuning_span.unwrap_or(slope.abs());
    let points = analysis.points.unwrap_or(801);
    if !(span > 0.0 && span.is_finite()) || points < 2 {
        return Err(invalid("absorption spectrum needs a positive detuning span and at least 2 points"));
    }
    let transmission = |slope: f64, d: f64| match steady_state_transmission(&physics, rabi, slope, d) {
        Ok(t) => Ok(t),
        // An undamped, unbroadened line is opaque exactly on resonance.
        Err(SolverError::UndampedResonance) => Ok(0.0),
        Err(e) => Err(Failure::from(e)),
    };
    let mut t = Table::new(
        "absorption.csv",
        &["detuning_rad_per_us", "transmission_broadened", "transmission_unbroadened"],
    );
    for k in 0..points {
        let d = -span + 2.0 * span * k as f64 / (points - 1) as f64;
        t.numbers(&[d, transmission(slope, d)?, transmission(0.0, d)?]);
    }
    Ok(t)
}

pub fn spectrum(scenario: &Scenario, out: &Path) -> Result<(), Failure> {
    let table = absorption_table(scenario)?;
    write(out, vec![table])
}

pub struct CapacityArgs {
    pub eta0: f64,
    pub tau_d: f64,
    pub tau0: f64,
    pub t_max: f64,
    pub points: usize,
}

fn capacity_table(args: &CapacityArgs) -> Result<Table, Failure> {
    let model = DecayModel::new(args.eta0, args.tau_d, args.tau0).map_err(|e| invalid(e.to_string()))?;
    if !(args.t_max > 0.0 && args.t_max.is_finite()) {
        return Err(invalid(format!("t_max must be positive, got {}", args.t_max)));
    }
    if args.points < 2 {
        return Err(invalid(format!("need at least 2 points, got {}", args.points)));
    }
    let mut t = Table::new("capacity.csv", &["t_us", "eta_m", "nbar_max"]);
    for k in 0..args.points {
        let time = args.t_max * k as f64 / (args.points - 1) as f64;
        let eta = gem_core::decay_efficiency(&model, time);
        let nbar = match quantum_capacity(&model, time) {
            Capacity::Bounded(n) => number(n),
            Capacity::Unbounded => "unbounded".to_string(),
        };
        t.row([number(time), number(eta), nbar]);
    }
    Ok(t)
}

pub fn capacity(args: &CapacityArgs, out: &Path) -> Result<(), Failure> {
    let table = capacity_table(args)?;
    write(out, vec![table])
}

fn capacity_args(scenario: &Scenario) -> Result<CapacityArgs, Failure> {
    let a = scenario.analysis.clone().unwrap_or_default();
    let need = |v: Option<f64>, key: &str| v.ok_or_else(|| invalid(format!("[analysis] needs `{key}`")));
    Ok(CapacityArgs {
        eta0: need(a.eta0, "eta0")?,
        tau_d: need(a.tau_d, "tau_d")?,
        tau0: need(a.tau0, "tau0")?,
        t_max: need(a.t_max, "t_max")?,
        points: a.points.ok_or_else(|| invalid("[analysis] needs `points`"))?,
    })
}

/// `(t, η)` samples from a CSV with header `t_us,eta`.
pub fn read_efficiency_csv(text: &str) -> Result<Vec<(f64, f64)>, Failure> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| invalid(format!("line 1: {e}")))?
        .clone();
    if header.iter().collect::<Vec<_>>() != ["t_us", "eta"] {
        return Err(invalid(format!(
            "line 1: expected header `t_us,eta`, found `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut points = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            invalid(format!("line {line}: {e}"))
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |k: usize| -> Result<f64, Failure> {
            let raw = record.get(k).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| invalid(format!("line {line}: `{raw}` is not a finite number")))
        };
        points.push((field(0)?, field(1)?));
    }
    Ok(points)
}

fn fit_table(points: &[(f64, f64)], fixed_tau_d: Option<f64>) -> Result<Table, Failure> {
    let fit = match fit_decay(points, fixed_tau_d) {
        Ok(fit) => fit,
        Err(FitError::NotConverged(best)) => {
            return Err(Failure::Numerical(format!(
                "fit did not converge (best residual {})",
                best.residual_norm
            )))
        }
        Err(e) => return Err(invalid(e.to_string())),
    };
    let m = fit.model;
    let mut t = Table::new(
        "fit.csv",
        &[
            "eta0",
            "tau_d_us",
            "tau0_us",
            "residual_norm",
            "rate_2pi_khz",
            "diffusion_rate_2pi_khz",
            "tau_d_fixed",
            "eta0_stderr",
            "tau_d_stderr_us",
            "tau0_stderr_us",
        ],
    );
    let mut row = vec![
        number(m.eta0),
        number(m.tau_d),
        number(m.tau0),
        number(fit.residual_norm),
        number(decay_rate_khz(m.tau0)),
        number(decay_rate_khz(m.tau_d)),
        fit.tau_d_fixed.to_string(),
    ];
    match fit.std_errors {
        Some(errs) => row.extend(errs.iter().map(|&e| number(e))),
        None => row.extend(std::iter::repeat(String::new()).take(3)),
    }
    t.row(row);
    Ok(t)
}

pub fn fit(csv_path: &Path, fixed_tau_d: Option<f64>, out: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(csv_path).map_err(|e| {
        Failure::Io(anyhow::Error::new(e).context(format!("reading {}", csv_path.display())))
    })?;
    let points = read_efficiency_csv(&text)?;
    let table = fit_table(&points, fixed_tau_d)?;
    write(out, vec![table])
}

/// Runs a scenario according to its kind and writes its tables.
pub fn run(scenario: &Scenario, out: &Path) -> Result<(), Failure> {
    let tables = match scenario.kind() {
        Kind::Capacity => vec![capacity_table(&capacity_args(scenario)?)?],
        Kind::Spectrum => vec![absorption_table(scenario)?],
        Kind::ControlPower => {
            let values = scenario
                .analysis
                .as_ref()
                .and_then(|a| a.rabi_values.clone())
                .ok_or_else(|| invalid("kind control_power needs `rabi_values` in [analysis]"))?;
            let rows = sweep_rows(scenario, SweepParam::ControlRabi, &values, None)?;
            vec![sweep_table(&rows)]
        }
        kind => {
            let run = experiment(scenario, Overrides::default())?;
            let mut tables = vec![timeseries(&run), report(&run)];
            let output = scenario.output.clone().unwrap_or_default();
            if output.spectrum == Some(true) {
                tables.push(echo_spectrum(&run));
            }
            if !run.simulation.coherence_snapshots.is_empty() {
                tables.push(snapshots(&run));
            }
            if let Some(lo) = output.heterodyne_lo {
                tables.push(heterodyne(&run, lo)?);
            }
            if kind == Kind::MultiPulse {
                tables.push(echoes(&run));
            }
            if kind == Kind::FrequencyShift {
                // Same time grid as the shifted run so the fields line up.
                let reference = experiment(
                    scenario,
                    Overrides {
                        offset: Some(0.0),
                        dt: Some(run.config.dt),
                        ..Overrides::default()
                    },
                )?;
                let offset = scenario.recall().offset.unwrap_or(0.0);
                tables.extend(shift_tables(&run, &reference, offset));
            }
            tables
        }
    };
    write(out, tables)
}

/// Checks a scenario without running it. Returns a one-line summary.
pub fn validate(scenario: &Scenario) -> Result<String, Failure> {
    let kind = scenario.kind();
    match kind {
        Kind::Capacity => {
            let a = capacity_args(scenario)?;
            capacity_table(&CapacityArgs { points: 2, ..a })?;
            Ok(format!("ok: {}", kind.as_str()))
        }
        Kind::Spectrum => {
            scenario.physics_params()?;
            Ok(format!("ok: {}", kind.as_str()))
        }
        _ => {
            let cfg = scenario.to_config()?;
            Ok(format!(
                "ok: {} ({} pulses, nz {}, dt {} us, {} steps)",
                kind.as_str(),
                cfg.input.len(),
                cfg.nz,
                number(cfg.effective_dt()),
                cfg.steps()
            ))
        }
    }
}
