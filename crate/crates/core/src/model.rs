//! Domain types for a gradient echo memory run.
//!
//! Units: time in microseconds, every rate and angular frequency in rad/µs.
//! The cell coordinate `z` is normalized to `[0, 1]`; the cell length is
//! folded into [`PhysicsParams::linear_density`].

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use num_complex::Complex64 as C64;

/// Atomic and optical constants of the effective two-level (Raman) medium.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhysicsParams {
    /// Atom-light coupling `g`, rad/µs.
    pub g_coupling: f64,
    /// Effective linear atomic density times cell length, rad/µs.
    pub linear_density: f64,
    /// One-photon detuning `Δ` from the excited state, rad/µs.
    pub detuning_delta: f64,
    /// Intrinsic ground-state decoherence rate, rad/µs.
    pub gamma_12: f64,
    /// Control-induced scattering coefficient `κ` (µs/rad): the total
    /// decoherence is `gamma_12 + κ Ω_c²`.
    pub scattering_coeff: f64,
}

impl PhysicsParams {
    /// Raman coupling of the field into the coherence, `C = g Ω_c / Δ`.
    pub fn signal_coupling(&self, rabi: f64) -> f64 {
        self.g_coupling * rabi / self.detuning_delta
    }

    /// Raman coupling of the coherence back into the field, `D = 𝒩L Ω_c / Δ`.
    pub fn field_coupling(&self, rabi: f64) -> f64 {
        self.linear_density * rabi / self.detuning_delta
    }

    /// Ground-state decoherence while the control runs at `rabi`.
    pub fn decoherence(&self, rabi: f64) -> f64 {
        self.gamma_12 + self.scattering_coeff * rabi * rabi
    }

    /// Time-independent ratio `D / C = 𝒩L / g`.
    pub fn coupling_ratio(&self) -> f64 {
        self.linear_density / self.g_coupling
    }

    /// Dimensionless absorption strength of a line broadened by `slope`:
    /// `β = C D / |slope|`, so a cw probe inside the line is transmitted
    /// with `exp(-2πβ)`.
    pub fn beta(&self, rabi: f64, slope: f64) -> f64 {
        self.signal_coupling(rabi) * self.field_coupling(rabi) / slope.abs()
    }

    /// Scattering coefficient that makes the total decoherence equal
    /// `gamma_total` when the control runs at `rabi`.
    pub fn calibrated_scattering(&self, gamma_total: f64, rabi: f64) -> f64 {
        (gamma_total - self.gamma_12) / (rabi * rabi)
    }
}

/// Effective atom-light coupling of the far-detuned Raman transition,
/// `g' = g Ω_c / Δ`.
pub fn effective_coupling(physics: &PhysicsParams, rabi: f64) -> f64 {
    physics.signal_coupling(rabi)
}

/// A value that a schedule can hold and interpolate across a ramp.
pub trait Level: Copy + fmt::Debug + PartialEq {
    fn lerp(from: Self, to: Self, frac: f64) -> Self;
}

impl Level for f64 {
    fn lerp(from: f64, to: f64, frac: f64) -> f64 {
        from + (to - from) * frac
    }
}

/// Gradient state: two-photon detuning `slope·(z - ½) + offset`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientLevel {
    /// Detuning difference between the cell exit and entrance, rad/µs.
    pub slope: f64,
    /// Detuning at the cell center, rad/µs.
    pub offset: f64,
}

impl GradientLevel {
    pub fn new(slope: f64, offset: f64) -> Self {
        GradientLevel { slope, offset }
    }

    pub fn detuning(&self, z: f64) -> f64 {
        self.slope * (z - 0.5) + self.offset
    }

    /// Largest `|δ(z)|` over the cell.
    pub fn max_abs_detuning(&self) -> f64 {
        self.offset.abs() + 0.5 * self.slope.abs()
    }
}

impl Level for GradientLevel {
    fn lerp(from: Self, to: Self, frac: f64) -> Self {
        GradientLevel {
            slope: f64::lerp(from.slope, to.slope, frac),
            offset: f64::lerp(from.offset, to.offset, frac),
        }
    }
}

/// One time interval of a schedule. The level is reached linearly over
/// `ramp` µs starting at `start`, coming from the previous segment's level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment<L> {
    pub start: f64,
    pub end: f64,
    pub level: L,
    pub ramp: f64,
}

impl<L> Segment<L> {
    pub fn new(start: f64, end: f64, level: L) -> Self {
        Segment {
            start,
            end,
            level,
            ramp: 0.0,
        }
    }

    pub fn with_ramp(mut self, ramp: f64) -> Self {
        self.ramp = ramp;
        self
    }
}

/// Piecewise-linear-in-time schedule built from contiguous segments.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule<L> {
    segments: Vec<Segment<L>>,
}

pub type GradientSchedule = Schedule<GradientLevel>;
pub type ControlSchedule = Schedule<f64>;

impl<L: Level> Schedule<L> {
    pub fn new(segments: Vec<Segment<L>>) -> Self {
        Schedule { segments }
    }

    /// A single segment holding `level` over `[0, t_end]`.
    pub fn constant(level: L, t_end: f64) -> Self {
        Schedule::new(alloc::vec![Segment::new(0.0, t_end, level)])
    }

    /// Instantaneous switches: `levels[k] = (start, level)`, with the last
    /// segment running to `t_end`.
    pub fn switched(levels: &[(f64, L)], t_end: f64) -> Self {
        let segments = levels
            .iter()
            .enumerate()
            .map(|(k, &(start, level))| {
                let end = levels.get(k + 1).map_or(t_end, |next| next.0);
                Segment::new(start, end, level)
            })
            .collect();
        Schedule::new(segments)
    }

    pub fn segments(&self) -> &[Segment<L>] {
        &self.segments
    }

    pub fn segments_mut(&mut self) -> &mut [Segment<L>] {
        &mut self.segments
    }

    pub fn into_segments(self) -> Vec<Segment<L>> {
        self.segments
    }

    fn segment_index(&self, t: f64) -> usize {
        // Segment whose [start, end) contains t; clamped at both ends.
        match self
            .segments
            .iter()
            .rposition(|seg| seg.start <= t)
        {
            Some(k) => k,
            None => 0,
        }
    }

    fn level_in_segment(&self, k: usize, t: f64) -> L {
        let seg = &self.segments[k];
        if k > 0 && seg.ramp > 0.0 && t < seg.start + seg.ramp {
            let prev = self.segments[k - 1].level;
            L::lerp(prev, seg.level, (t - seg.start) / seg.ramp)
        } else {
            seg.level
        }
    }

    /// Schedule value at `t`. At a boundary the later segment applies.
    pub fn at(&self, t: f64) -> L {
        self.level_in_segment(self.segment_index(t), t)
    }

    /// Linear piece valid across `[lo, hi]`, an interval that contains no
    /// breakpoint in its interior. Returns the one-sided limits at both ends.
    pub fn piece(&self, lo: f64, hi: f64) -> (L, L) {
        let mid = 0.5 * (lo + hi);
        let k = self.segment_index(mid);
        let seg = &self.segments[k];
        if k > 0 && seg.ramp > 0.0 && mid < seg.start + seg.ramp {
            let prev = self.segments[k - 1].level;
            let f = |t: f64| L::lerp(prev, seg.level, (t - seg.start) / seg.ramp);
            (f(lo), f(hi))
        } else {
            (seg.level, seg.level)
        }
    }

    /// Times at which the schedule is not smooth: segment starts and
    /// ramp ends.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.segments.len());
        for (k, seg) in self.segments.iter().enumerate() {
            if k > 0 {
                out.push(seg.start);
                if seg.ramp > 0.0 {
                    out.push(seg.start + seg.ramp);
                }
            }
        }
        out
    }

    pub fn start(&self) -> f64 {
        self.segments.first().map_or(0.0, |s| s.start)
    }

    pub fn end(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.end)
    }

    /// Replace the levels over `[t0, t1)` with `level`, switching
    /// instantaneously at both edges. A ramp cut by the override is dropped.
    pub fn with_override(&self, t0: f64, t1: f64, level: L) -> Self {
        let mut before = Vec::new();
        let mut after = Vec::new();
        for seg in &self.segments {
            if seg.start < t0 {
                let mut piece = *seg;
                piece.end = seg.end.min(t0);
                if piece.start + piece.ramp > piece.end {
                    piece.ramp = 0.0;
                }
                before.push(piece);
            }
            if seg.end > t1 {
                let mut piece = *seg;
                if seg.start < t1 {
                    piece.start = t1;
                    piece.ramp = 0.0;
                }
                after.push(piece);
            }
        }
        before.push(Segment::new(t0, t1, level));
        before.extend(after);
        Schedule::new(before)
    }

    pub fn map_levels(&self, mut f: impl FnMut(&Segment<L>) -> L) -> Self {
        Schedule::new(
            self.segments
                .iter()
                .map(|seg| Segment {
                    level: f(seg),
                    ..*seg
                })
                .collect(),
        )
    }
}

impl ControlSchedule {
    pub fn max_rabi(&self) -> f64 {
        self.segments
            .iter()
            .fold(0.0, |acc: f64, seg| acc.max(seg.level.abs()))
    }
}

impl GradientSchedule {
    pub fn max_abs_detuning(&self) -> f64 {
        self.segments
            .iter()
            .fold(0.0, |acc: f64, seg| acc.max(seg.level.max_abs_detuning()))
    }
}

/// Gaussian input pulse.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pulse {
    /// Peak time, µs.
    pub center: f64,
    /// Full width between the 1/e² points of the intensity, µs.
    pub e2_width: f64,
    /// Peak field amplitude.
    pub amplitude: f64,
    /// Carrier offset from two-photon resonance, rad/µs. The envelope is
    /// multiplied by `exp(-i·carrier·t)`, so a positive carrier is resonant
    /// with atoms of positive two-photon detuning.
    pub carrier: f64,
}

impl Pulse {
    pub fn new(center: f64, e2_width: f64, amplitude: f64) -> Self {
        Pulse {
            center,
            e2_width,
            amplitude,
            carrier: 0.0,
        }
    }

    pub fn with_carrier(mut self, carrier: f64) -> Self {
        self.carrier = carrier;
        self
    }

    fn half_width(&self) -> f64 {
        0.5 * self.e2_width
    }

    pub fn field(&self, t: f64) -> C64 {
        let w = self.half_width();
        let x = (t - self.center) / w;
        let x2 = x * x;
        if x2 > 50.0 {
            return C64::new(0.0, 0.0);
        }
        let env = self.amplitude * (-x2).exp();
        C64::from_polar(env, -self.carrier * t)
    }

    /// `∫|E|² dt` over the whole real line.
    pub fn energy(&self) -> f64 {
        self.amplitude * self.amplitude * self.half_width() * (core::f64::consts::PI / 2.0).sqrt()
    }

    /// Fraction of the pulse energy inside `[t0, t1]`.
    pub fn energy_fraction_within(&self, t0: f64, t1: f64) -> f64 {
        // Intensity is a normal density with standard deviation w/2.
        let scale = self.half_width() / core::f64::consts::SQRT_2;
        let a = (t0 - self.center) / scale;
        let b = (t1 - self.center) / scale;
        0.5 * (libm::erf(b) - libm::erf(a))
    }
}

/// Coherent sum of Gaussian pulses at the cell entrance.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PulseTrain {
    pub pulses: Vec<Pulse>,
}

impl PulseTrain {
    pub fn new(pulses: Vec<Pulse>) -> Self {
        PulseTrain { pulses }
    }

    pub fn single(pulse: Pulse) -> Self {
        PulseTrain::new(alloc::vec![pulse])
    }

    /// `count` copies of `first` spaced by `spacing`.
    pub fn uniform(first: Pulse, count: usize, spacing: f64) -> Self {
        PulseTrain::new(
            (0..count)
                .map(|k| Pulse {
                    center: first.center + k as f64 * spacing,
                    ..first
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.pulses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pulses.is_empty()
    }

    pub fn field(&self, t: f64) -> C64 {
        self.pulses
            .iter()
            .fold(C64::new(0.0, 0.0), |acc, p| acc + p.field(t))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        PulseTrain::new(
            self.pulses
                .iter()
                .map(|p| Pulse {
                    amplitude: p.amplitude * factor,
                    ..*p
                })
                .collect(),
        )
    }
}

/// Everything one simulated run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub physics: PhysicsParams,
    pub gradient: GradientSchedule,
    pub control: ControlSchedule,
    pub input: PulseTrain,
    /// Number of z grid points including both cell faces.
    pub nz: usize,
    /// Time step, µs.
    pub dt: f64,
    /// End of the simulation window, µs (the window starts at 0).
    pub t_end: f64,
    /// Instant of the gradient reversal, when there is one.
    pub flip_time: Option<f64>,
    pub snapshot_times: Vec<f64>,
}

/// Bound on `dt·|γ + iδ|` enforced by [`validate`].
pub const STABILITY_LIMIT: f64 = 0.5;

/// Safety factor applied by [`stable_time_step`] on top of the limit.
pub const STABILITY_MARGIN: f64 = 4.0;

/// Time step meeting the stability guard with [`STABILITY_MARGIN`]. The
/// Raman coupling is included as well since it sets the other fast rate of
/// the coupled system (the Volterra operator of the z integral has norm 2/π).
pub fn stable_time_step(
    physics: &PhysicsParams,
    gradient: &GradientSchedule,
    control: &ControlSchedule,
) -> f64 {
    let rabi = control.max_rabi();
    let gamma = physics.decoherence(rabi);
    let delta = gradient.max_abs_detuning();
    let guard = (gamma * gamma + delta * delta).sqrt();
    let coupling = 2.0 / core::f64::consts::PI
        * (physics.signal_coupling(rabi) * physics.field_coupling(rabi)).abs();
    let rate = guard.max(coupling).max(1e-9);
    STABILITY_LIMIT / (STABILITY_MARGIN * rate)
}

impl ExperimentConfig {
    /// Number of time steps covering `[0, t_end]`.
    pub fn steps(&self) -> usize {
        let n = self.t_end / self.dt;
        let rounded = n.round();
        if (n - rounded).abs() < 1e-9 * n.max(1.0) {
            rounded as usize
        } else {
            n.ceil() as usize
        }
    }

    /// Time step actually used: `t_end / steps`, never above `dt`.
    pub fn effective_dt(&self) -> f64 {
        self.t_end / self.steps() as f64
    }

    /// When the gradient reaches its recall level: the flip plus the ramp
    /// of the segment starting at the flip.
    pub fn flip_completion(&self) -> Option<f64> {
        let flip = self.flip_time?;
        let ramp = self
            .gradient
            .segments()
            .iter()
            .find(|s| s.start == flip)
            .map_or(0.0, |s| s.ramp);
        Some(flip + ramp)
    }

    /// Largest decoherence rate reached by the control schedule.
    pub fn max_decoherence(&self) -> f64 {
        self.physics.decoherence(self.control.max_rabi())
    }
}

/// Machine-readable kind of a configuration problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ViolationCode {
    NonpositiveTimeStep,
    NonpositiveWindow,
    GridTooSmall,
    NonFiniteParameter,
    NegativeRate,
    NonpositiveDetuning,
    EmptySchedule,
    ScheduleGap,
    ScheduleOverlap,
    ScheduleCoverage,
    InvalidRamp,
    NegativeRabi,
    NoInputPulses,
    NonpositivePulseWidth,
    PulseOutsideWindow,
    StabilityGuard,
    FlipNotAtBoundary,
    SnapshotOutsideWindow,
}

impl ViolationCode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ViolationCode::NonpositiveTimeStep => "nonpositive_time_step",
            ViolationCode::NonpositiveWindow => "nonpositive_window",
            ViolationCode::GridTooSmall => "grid_too_small",
            ViolationCode::NonFiniteParameter => "non_finite_parameter",
            ViolationCode::NegativeRate => "negative_rate",
            ViolationCode::NonpositiveDetuning => "nonpositive_detuning",
            ViolationCode::EmptySchedule => "empty_schedule",
            ViolationCode::ScheduleGap => "schedule_gap",
            ViolationCode::ScheduleOverlap => "schedule_overlap",
            ViolationCode::ScheduleCoverage => "schedule_coverage",
            ViolationCode::InvalidRamp => "invalid_ramp",
            ViolationCode::NegativeRabi => "negative_rabi",
            ViolationCode::NoInputPulses => "no_input_pulses",
            ViolationCode::NonpositivePulseWidth => "nonpositive_pulse_width",
            ViolationCode::PulseOutsideWindow => "pulse_outside_window",
            ViolationCode::StabilityGuard => "stability_guard",
            ViolationCode::FlipNotAtBoundary => "flip_not_at_boundary",
            ViolationCode::SnapshotOutsideWindow => "snapshot_outside_window",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub code: ViolationCode,
    pub message: String,
}

impl Violation {
    fn new(code: ViolationCode, message: String) -> Self {
        Violation { code, message }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code.as_str(), self.message)
    }
}

/// Minimum fraction of every pulse's energy that must fall inside the window.
pub const PULSE_ENERGY_INSIDE: f64 = 0.9999;

/// Check every invariant of `config`. Returns an empty list when valid.
pub fn validate(config: &ExperimentConfig) -> Vec<Violation> {
    use ViolationCode::*;
    let mut out = Vec::new();
    let mut push = |code, message: String| out.push(Violation::new(code, message));

    let p = &config.physics;
    let rates = [
        ("g_coupling", p.g_coupling),
        ("linear_density", p.linear_density),
        ("gamma_12", p.gamma_12),
        ("scattering_coeff", p.scattering_coeff),
    ];
    for (name, value) in rates {
        if !value.is_finite() {
            push(NonFiniteParameter, format!("{name} is not finite"));
        } else if value < 0.0 {
            push(NegativeRate, format!("{name} is negative ({value})"));
        }
    }
    if !p.detuning_delta.is_finite() {
        push(NonFiniteParameter, "detuning_delta is not finite".into());
    } else if p.detuning_delta <= 0.0 {
        push(
            NonpositiveDetuning,
            format!("one-photon detuning must be positive ({})", p.detuning_delta),
        );
    }

    let dt_ok = config.dt.is_finite() && config.dt > 0.0;
    if !dt_ok {
        push(NonpositiveTimeStep, format!("nonpositive time step ({})", config.dt));
    }
    let window_ok = config.t_end.is_finite() && config.t_end > 0.0;
    if !window_ok {
        push(
            NonpositiveWindow,
            format!("nonpositive simulation window ({})", config.t_end),
        );
    }
    if config.nz < 2 {
        push(
            GridTooSmall,
            format!("z grid needs at least 2 points (got {})", config.nz),
        );
    }

    check_schedule(
        "gradient",
        config.gradient.segments(),
        config.t_end,
        |l: &GradientLevel| l.slope.is_finite() && l.offset.is_finite(),
        &mut push,
    );
    check_schedule(
        "control",
        config.control.segments(),
        config.t_end,
        |l: &f64| l.is_finite(),
        &mut push,
    );
    for seg in config.control.segments() {
        if seg.level < 0.0 {
            push(
                NegativeRabi,
                format!("control Rabi frequency is negative ({}) at t = {}", seg.level, seg.start),
            );
        }
    }

    if config.input.is_empty() {
        push(NoInputPulses, "input pulse train is empty".into());
    }
    for (k, pulse) in config.input.pulses.iter().enumerate() {
        let finite = pulse.center.is_finite()
            && pulse.e2_width.is_finite()
            && pulse.amplitude.is_finite()
            && pulse.carrier.is_finite();
        if !finite {
            push(NonFiniteParameter, format!("pulse {k} has a non-finite field"));
            continue;
        }
        if pulse.e2_width <= 0.0 {
            push(
                NonpositivePulseWidth,
                format!("pulse {k} width must be positive ({})", pulse.e2_width),
            );
            continue;
        }
        if window_ok && pulse.energy_fraction_within(0.0, config.t_end) < PULSE_ENERGY_INSIDE {
            push(
                PulseOutsideWindow,
                format!("pulse {k} centered at {} leaks energy outside [0, {}]", pulse.center, config.t_end),
            );
        }
    }

    if dt_ok {
        let gamma = config.max_decoherence();
        let delta = config.gradient.max_abs_detuning();
        let rate = (gamma * gamma + delta * delta).sqrt();
        if config.dt * rate > STABILITY_LIMIT {
            push(
                StabilityGuard,
                format!(
                    "dt·max|γ + iδ| = {} exceeds {}",
                    config.dt * rate,
                    STABILITY_LIMIT
                ),
            );
        }
    }

    if let Some(flip) = config.flip_time {
        let is_boundary = config
            .gradient
            .segments()
            .iter()
            .skip(1)
            .any(|seg| seg.start == flip);
        if !is_boundary {
            push(
                FlipNotAtBoundary,
                format!("flip time {flip} is not a gradient segment boundary"),
            );
        }
    }

    for &t in &config.snapshot_times {
        if !(t.is_finite() && t >= 0.0 && t <= config.t_end) {
            push(
                SnapshotOutsideWindow,
                format!("snapshot time {t} outside [0, {}]", config.t_end),
            );
        }
    }

    out
}

fn check_schedule<L>(
    name: &str,
    segments: &[Segment<L>],
    t_end: f64,
    level_finite: impl Fn(&L) -> bool,
    push: &mut impl FnMut(ViolationCode, String),
) {
    use ViolationCode::*;
    let Some(first) = segments.first() else {
        push(EmptySchedule, format!("{name} schedule has no segments"));
        return;
    };
    let tol = 1e-9 * t_end.abs().max(1.0);
    if (first.start - 0.0).abs() > tol {
        push(
            ScheduleCoverage,
            format!("{name} schedule starts at {} instead of 0", first.start),
        );
    }
    if first.ramp != 0.0 {
        push(
            InvalidRamp,
            format!("{name} schedule: first segment cannot ramp"),
        );
    }
    let last = &segments[segments.len() - 1];
    if t_end.is_finite() && last.end + tol < t_end {
        push(
            ScheduleCoverage,
            format!("{name} schedule ends at {} before the window end {t_end}", last.end),
        );
    }
    for (k, seg) in segments.iter().enumerate() {
        if !(seg.start.is_finite() && seg.end.is_finite() && seg.ramp.is_finite())
            || !level_finite(&seg.level)
        {
            push(
                NonFiniteParameter,
                format!("{name} segment {k} has a non-finite field"),
            );
            continue;
        }
        if seg.end <= seg.start {
            push(
                ScheduleOverlap,
                format!("{name} segment {k} is empty or reversed ({} to {})", seg.start, seg.end),
            );
        }
        if seg.ramp < 0.0 || seg.ramp > seg.end - seg.start {
            push(
                InvalidRamp,
                format!("{name} segment {k} ramp {} does not fit the segment", seg.ramp),
            );
        }
        if k > 0 {
            let prev_end = segments[k - 1].end;
            if seg.start > prev_end + tol {
                push(
                    ScheduleGap,
                    format!("{name} schedule gap between {prev_end} and {}", seg.start),
                );
            } else if seg.start + tol < prev_end {
                push(
                    ScheduleOverlap,
                    format!("{name} schedule overlap: segment {k} starts at {} before {prev_end}", seg.start),
                );
            }
        }
    }
}
