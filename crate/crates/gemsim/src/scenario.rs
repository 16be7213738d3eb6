//! Scenario files: `[section]` headers followed by `key = value` lines.
//!
//! Frequencies are stored in rad/µs and times in µs. On input a frequency may
//! carry a unit (`Hz`, `kHz`, `MHz`, `GHz`, read as ordinary frequency and
//! multiplied by 2π, or `rad/us`) and a `2pi*` prefix marking the number as
//! ordinary frequency. Times accept `ns`, `us`, `ms` and `s`. The renderer
//! writes bare numbers in the stored units, so parsing a rendered scenario
//! gives back the same values bit for bit.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt::{self, Write as _};

use gem_core::{
    stable_time_step, validate, ControlSchedule, ExperimentConfig, GradientLevel, GradientSchedule,
    PhysicsParams, Pulse, PulseTrain, Segment, Violation,
};

#[derive(Clone, Debug, PartialEq)]
pub struct ParseError {
    /// 1-based line number, when the problem belongs to a line.
    pub line: Option<usize>,
    pub message: String,
}

impl ParseError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        ParseError {
            line: Some(line),
            message: message.into(),
        }
    }

    fn general(message: impl Into<String>) -> Self {
        ParseError {
            line: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    StorageRecall,
    BandwidthScaled,
    FrequencyShift,
    MultiPulse,
    ControlPower,
    Spectrum,
    Capacity,
}

impl Kind {
    const ALL: [Kind; 7] = [
        Kind::StorageRecall,
        Kind::BandwidthScaled,
        Kind::FrequencyShift,
        Kind::MultiPulse,
        Kind::ControlPower,
        Kind::Spectrum,
        Kind::Capacity,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Kind::StorageRecall => "storage_recall",
            Kind::BandwidthScaled => "bandwidth_scaled",
            Kind::FrequencyShift => "frequency_shift",
            Kind::MultiPulse => "multi_pulse",
            Kind::ControlPower => "control_power",
            Kind::Spectrum => "spectrum",
            Kind::Capacity => "capacity",
        }
    }

    pub fn is_time_domain(&self) -> bool {
        !matches!(self, Kind::Spectrum | Kind::Capacity)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Grid {
    pub nz: usize,
    /// Time step; chosen from the stability guard when absent.
    pub dt: Option<f64>,
    pub t_end: f64,
    pub snapshot_times: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Physics {
    pub g: f64,
    pub linear_density: Option<f64>,
    /// Optical depth `2πβ` of the storage line at the peak control Rabi
    /// frequency; sets the linear density when that is not given.
    pub depth: Option<f64>,
    pub detuning: f64,
    pub gamma_12: Option<f64>,
    pub scattering: Option<f64>,
    /// Total decoherence with the control at its peak; calibrates the
    /// scattering coefficient.
    pub gamma_on: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradient {
    pub starts: Vec<f64>,
    pub slopes: Vec<f64>,
    pub offsets: Option<Vec<f64>>,
    pub ramps: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Control {
    pub starts: Vec<f64>,
    pub rabi: Vec<f64>,
    pub ramps: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Pulses {
    pub centers: Vec<f64>,
    pub widths: Vec<f64>,
    pub amplitudes: Option<Vec<f64>>,
    pub carriers: Option<Vec<f64>>,
    /// With `count`, `centers` holds the first center of a uniform train.
    pub count: Option<usize>,
    pub spacing: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Recall {
    pub kind: Kind,
    pub flip_time: Option<f64>,
    pub slope_ratio: Option<f64>,
    pub offset: Option<f64>,
    pub control_off: Option<bool>,
    pub control_reenable: Option<f64>,
    pub pulse_count: Option<usize>,
}

impl Default for Recall {
    fn default() -> Self {
        Recall {
            kind: Kind::StorageRecall,
            flip_time: None,
            slope_ratio: None,
            offset: None,
            control_off: None,
            control_reenable: None,
            pulse_count: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Analysis {
    pub eta0: Option<f64>,
    pub tau_d: Option<f64>,
    pub tau0: Option<f64>,
    pub t_max: Option<f64>,
    pub points: Option<usize>,
    pub detuning_span: Option<f64>,
    pub rabi_values: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Output {
    pub spectrum: Option<bool>,
    pub heterodyne_lo: Option<f64>,
}

/// A parsed scenario. Sections that a scenario kind does not use may be
/// absent.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Scenario {
    pub grid: Option<Grid>,
    pub physics: Option<Physics>,
    pub gradient: Option<Gradient>,
    pub control: Option<Control>,
    pub pulses: Option<Pulses>,
    pub recall: Option<Recall>,
    pub analysis: Option<Analysis>,
    pub output: Option<Output>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Quantity {
    Frequency,
    Time,
    Plain,
}

fn parse_number(text: &str, quantity: Quantity) -> Result<f64, String> {
    let mut s = text.trim();
    let mut angular = false;
    for prefix in ["2pi*", "2π*"] {
        if let Some(rest) = s.strip_prefix(prefix) {
            if quantity != Quantity::Frequency {
                return Err(format!("`{prefix}` only applies to frequencies: `{text}`"));
            }
            angular = true;
            s = rest.trim_start();
        }
    }
    let split = s
        .char_indices()
        .find(|&(i, c)| {
            // Exponents such as 1e-3 stay with the number.
            let exponent = matches!(c, 'e' | 'E')
                && i > 0
                && s[i + 1..].starts_with(|d: char| d.is_ascii_digit() || d == '-' || d == '+');
            (c.is_alphabetic() || c == 'µ') && !exponent
        })
        .map_or(s.len(), |(i, _)| i);
    let (num, unit) = s.split_at(split);
    let value: f64 = num
        .trim()
        .parse()
        .map_err(|_| format!("expected a number, found `{text}`"))?;
    if !value.is_finite() {
        return Err(format!("`{text}` is not finite"));
    }
    let unit = unit.trim();
    let scale = match (quantity, unit) {
        (_, "") => None,
        (Quantity::Frequency, "Hz") => Some(1e-6),
        (Quantity::Frequency, "kHz") => Some(1e-3),
        (Quantity::Frequency, "MHz") => Some(1.0),
        (Quantity::Frequency, "GHz") => Some(1e3),
        (Quantity::Frequency, "rad/us" | "rad/µs") => {
            if angular {
                return Err(format!("`2pi*` cannot combine with rad/us: `{text}`"));
            }
            return Ok(value);
        }
        (Quantity::Time, "ns") => Some(1e-3),
        (Quantity::Time, "us" | "µs") => Some(1.0),
        (Quantity::Time, "ms") => Some(1e3),
        (Quantity::Time, "s") => Some(1e6),
        (_, other) => return Err(format!("unit `{other}` not allowed here: `{text}`")),
    };
    Ok(match (quantity, scale) {
        (Quantity::Frequency, Some(scale)) => 2.0 * PI * value * scale,
        (_, Some(scale)) => value * scale,
        (_, None) if angular => 2.0 * PI * value,
        (_, None) => value,
    })
}

fn parse_list(text: &str, quantity: Quantity) -> Result<Vec<f64>, String> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    text.split(',').map(|item| parse_number(item, quantity)).collect()
}

/// Comma-separated times, µs.
pub fn parse_times(text: &str) -> Result<Vec<f64>, String> {
    parse_list(text, Quantity::Time)
}

/// Comma-separated frequencies, rad/µs.
pub fn parse_frequencies(text: &str) -> Result<Vec<f64>, String> {
    parse_list(text, Quantity::Frequency)
}

/// Comma-separated dimensionless numbers.
pub fn parse_plain(text: &str) -> Result<Vec<f64>, String> {
    parse_list(text, Quantity::Plain)
}

struct Entry {
    key: String,
    value: String,
    line: usize,
}

struct RawSection {
    name: String,
    line: usize,
    entries: Vec<Entry>,
}

fn split_sections(text: &str, errors: &mut Vec<ParseError>) -> Vec<RawSection> {
    let mut sections: Vec<RawSection> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(inner) = content.strip_prefix('[') {
            let Some(name) = inner.strip_suffix(']') else {
                errors.push(ParseError::at(line, format!("malformed section header `{content}`")));
                continue;
            };
            let name = name.trim().to_string();
            if !SECTIONS.contains(&name.as_str()) {
                errors.push(ParseError::at(line, format!("unknown section [{name}]")));
            } else if sections.iter().any(|s| s.name == name) {
                errors.push(ParseError::at(line, format!("duplicate section [{name}]")));
            }
            sections.push(RawSection {
                name,
                line,
                entries: Vec::new(),
            });
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            errors.push(ParseError::at(line, format!("expected `key = value`, found `{content}`")));
            continue;
        };
        let key = key.trim().to_string();
        let Some(section) = sections.last_mut() else {
            errors.push(ParseError::at(line, format!("key `{key}` appears before any section")));
            continue;
        };
        if let Some(first) = section.entries.iter().find(|e| e.key == key) {
            errors.push(ParseError::at(
                line,
                format!("duplicate key `{key}` in [{}] (first set on line {})", section.name, first.line),
            ));
            continue;
        }
        section.entries.push(Entry {
            key,
            value: value.trim().to_string(),
            line,
        });
    }
    sections
}

const SECTIONS: [&str; 8] = [
    "grid", "physics", "gradient", "control", "pulses", "recall", "analysis", "output",
];

/// Typed access to one section; remembers which keys were read so the rest
/// can be reported as unknown.
struct Reader<'a> {
    section: &'a RawSection,
    used: BTreeSet<&'static str>,
    errors: &'a mut Vec<ParseError>,
}

impl<'a> Reader<'a> {
    fn new(section: &'a RawSection, errors: &'a mut Vec<ParseError>) -> Self {
        Reader {
            section,
            used: BTreeSet::new(),
            errors,
        }
    }

    fn entry(&mut self, key: &'static str) -> Option<&'a Entry> {
        self.used.insert(key);
        self.section.entries.iter().find(|e| e.key == key)
    }

    fn missing(&mut self, key: &str) {
        self.errors.push(ParseError::at(
            self.section.line,
            format!("missing key `{key}` in [{}]", self.section.name),
        ));
    }

    fn convert<T>(&mut self, key: &'static str, f: impl FnOnce(&str) -> Result<T, String>) -> Option<T> {
        let entry = self.entry(key)?;
        match f(&entry.value) {
            Ok(v) => Some(v),
            Err(e) => {
                self.errors.push(ParseError::at(entry.line, format!("{key}: {e}")));
                None
            }
        }
    }

    fn number(&mut self, key: &'static str, q: Quantity) -> Option<f64> {
        self.convert(key, |v| parse_number(v, q))
    }

    fn list(&mut self, key: &'static str, q: Quantity) -> Option<Vec<f64>> {
        self.convert(key, |v| parse_list(v, q))
    }

    fn integer(&mut self, key: &'static str) -> Option<usize> {
        self.convert(key, |v| {
            v.parse::<usize>()
                .map_err(|_| format!("expected a non-negative integer, found `{v}`"))
        })
    }

    fn boolean(&mut self, key: &'static str) -> Option<bool> {
        self.convert(key, |v| match v {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(format!("expected true or false, found `{v}`")),
        })
    }

    fn required<T>(&mut self, key: &'static str, value: Option<T>) -> T
    where
        T: Default,
    {
        if value.is_none() && !self.section.entries.iter().any(|e| e.key == key) {
            self.missing(key);
        }
        value.unwrap_or_default()
    }

    fn finish(self) {
        for entry in &self.section.entries {
            if !self.used.contains(entry.key.as_str()) {
                self.errors.push(ParseError::at(
                    entry.line,
                    format!("unknown key `{}` in [{}]", entry.key, self.section.name),
                ));
            }
        }
    }
}

fn read_grid(r: &mut Reader) -> Grid {
    let nz = r.integer("nz");
    let t_end = r.number("t_end", Quantity::Time);
    Grid {
        nz: r.required("nz", nz),
        dt: r.number("dt", Quantity::Time),
        t_end: r.required("t_end", t_end),
        snapshot_times: r.list("snapshot_times", Quantity::Time),
    }
}

fn read_physics(r: &mut Reader) -> Physics {
    let g = r.number("g", Quantity::Frequency);
    let detuning = r.number("detuning", Quantity::Frequency);
    let physics = Physics {
        g: r.required("g", g),
        linear_density: r.number("linear_density", Quantity::Frequency),
        depth: r.number("depth", Quantity::Plain),
        detuning: r.required("detuning", detuning),
        gamma_12: r.number("gamma_12", Quantity::Frequency),
        scattering: r.number("scattering", Quantity::Plain),
        gamma_on: r.number("gamma_on", Quantity::Frequency),
    };
    let has = |key: &str| r.section.entries.iter().any(|e| e.key == key);
    let line = r.section.line;
    match (has("linear_density"), has("depth")) {
        (true, true) => r.errors.push(ParseError::at(
            line,
            "[physics] sets both `linear_density` and `depth`; give one",
        )),
        (false, false) => r.missing("linear_density` or `depth"),
        _ => {}
    }
    if has("scattering") && has("gamma_on") {
        r.errors.push(ParseError::at(
            line,
            "[physics] sets both `scattering` and `gamma_on`; give one",
        ));
    }
    physics
}

fn read_gradient(r: &mut Reader) -> Gradient {
    let starts = r.list("starts", Quantity::Time);
    // `slope` is accepted for a single value.
    let slopes = match (r.list("slopes", Quantity::Frequency), r.list("slope", Quantity::Frequency)) {
        (Some(_), Some(_)) => {
            let line = r.section.line;
            r.errors.push(ParseError::at(line, "[gradient] sets both `slope` and `slopes`"));
            None
        }
        (Some(s), None) => Some(s),
        (None, Some(s)) if s.len() == 1 => Some(s),
        (None, Some(_)) => {
            let line = r.entry("slope").map_or(r.section.line, |e| e.line);
            r.errors.push(ParseError::at(line, "`slope` takes one value; use `slopes` for a list"));
            None
        }
        (None, None) => {
            r.missing("slopes");
            None
        }
    };
    Gradient {
        starts: starts.unwrap_or_else(|| {
            r.missing("starts");
            Vec::new()
        }),
        slopes: slopes.unwrap_or_default(),
        offsets: r.list("offsets", Quantity::Frequency),
        ramps: r.list("ramps", Quantity::Time),
    }
}

fn read_control(r: &mut Reader) -> Control {
    let starts = r.list("starts", Quantity::Time);
    let rabi = r.list("rabi", Quantity::Frequency);
    Control {
        starts: r.required("starts", starts),
        rabi: r.required("rabi", rabi),
        ramps: r.list("ramps", Quantity::Time),
    }
}

fn read_pulses(r: &mut Reader) -> Pulses {
    let centers = r.list("centers", Quantity::Time);
    let widths = r.list("widths", Quantity::Time);
    Pulses {
        centers: r.required("centers", centers),
        widths: r.required("widths", widths),
        amplitudes: r.list("amplitudes", Quantity::Plain),
        carriers: r.list("carriers", Quantity::Frequency),
        count: r.integer("count"),
        spacing: r.number("spacing", Quantity::Time),
    }
}

fn read_recall(r: &mut Reader) -> Recall {
    let kind = r.convert("kind", |v| {
        Kind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == v)
            .ok_or_else(|| {
                let names: Vec<&str> = Kind::ALL.iter().map(|k| k.as_str()).collect();
                format!("unknown kind `{v}` (expected one of {})", names.join(", "))
            })
    });
    Recall {
        kind: kind.unwrap_or(Kind::StorageRecall),
        flip_time: r.number("flip_time", Quantity::Time),
        slope_ratio: r.number("slope_ratio", Quantity::Plain),
        offset: r.number("offset", Quantity::Frequency),
        control_off: r.boolean("control_off"),
        control_reenable: r.number("control_reenable", Quantity::Time),
        pulse_count: r.integer("pulse_count"),
    }
}

fn read_analysis(r: &mut Reader) -> Analysis {
    Analysis {
        eta0: r.number("eta0", Quantity::Plain),
        tau_d: r.number("tau_d", Quantity::Time),
        tau0: r.number("tau0", Quantity::Time),
        t_max: r.number("t_max", Quantity::Time),
        points: r.integer("points"),
        detuning_span: r.number("detuning_span", Quantity::Frequency),
        rabi_values: r.list("rabi_values", Quantity::Frequency),
    }
}

fn read_output(r: &mut Reader) -> Output {
    Output {
        spectrum: r.boolean("spectrum"),
        heterodyne_lo: r.number("heterodyne_lo", Quantity::Frequency),
    }
}

/// Parse scenario text. Every problem found is reported, each with its line
/// number when it has one.
pub fn parse_scenario(text: &str) -> Result<Scenario, Vec<ParseError>> {
    let mut errors = Vec::new();
    let sections = split_sections(text, &mut errors);
    let mut scenario = Scenario::default();
    for section in &sections {
        let mut r = Reader::new(section, &mut errors);
        match section.name.as_str() {
            "grid" => scenario.grid = Some(read_grid(&mut r)),
            "physics" => scenario.physics = Some(read_physics(&mut r)),
            "gradient" => scenario.gradient = Some(read_gradient(&mut r)),
            "control" => scenario.control = Some(read_control(&mut r)),
            "pulses" => scenario.pulses = Some(read_pulses(&mut r)),
            "recall" => scenario.recall = Some(read_recall(&mut r)),
            "analysis" => scenario.analysis = Some(read_analysis(&mut r)),
            "output" => scenario.output = Some(read_output(&mut r)),
            _ => continue,
        }
        r.finish();
    }

    let kind = scenario.kind();
    let mut required: Vec<(&str, bool)> = Vec::new();
    match kind {
        Kind::Capacity => required.push(("analysis", scenario.analysis.is_some())),
        Kind::Spectrum => {
            required.push(("physics", scenario.physics.is_some()));
            required.push(("gradient", scenario.gradient.is_some()));
            required.push(("control", scenario.control.is_some()));
        }
        _ => {
            required.push(("physics", scenario.physics.is_some()));
            required.push(("grid", scenario.grid.is_some()));
            required.push(("gradient", scenario.gradient.is_some()));
            required.push(("control", scenario.control.is_some()));
            required.push(("pulses", scenario.pulses.is_some()));
        }
    }
    for (name, present) in required {
        if !present {
            errors.push(ParseError::general(format!("missing required section [{name}]")));
        }
    }
    if errors.is_empty() {
        Ok(scenario)
    } else {
        errors.sort_by_key(|e| e.line.unwrap_or(usize::MAX));
        Err(errors)
    }
}

fn push_number(out: &mut String, key: &str, value: Option<f64>) {
    if let Some(v) = value {
        let _ = writeln!(out, "{key} = {v}");
    }
}

fn push_list(out: &mut String, key: &str, values: Option<&[f64]>) {
    if let Some(values) = values {
        let items: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{key} = {}", items.join(", "));
    }
}

fn push_display(out: &mut String, key: &str, value: Option<impl fmt::Display>) {
    if let Some(v) = value {
        let _ = writeln!(out, "{key} = {v}");
    }
}

/// Scenario text that parses back to `scenario` exactly. Frequencies are
/// written in rad/µs and times in µs.
pub fn render(scenario: &Scenario) -> String {
    let mut out = String::new();
    if let Some(g) = &scenario.grid {
        out.push_str("[grid]\n");
        push_display(&mut out, "nz", Some(g.nz));
        push_number(&mut out, "dt", g.dt);
        push_number(&mut out, "t_end", Some(g.t_end));
        push_list(&mut out, "snapshot_times", g.snapshot_times.as_deref());
        out.push('\n');
    }
    if let Some(p) = &scenario.physics {
        out.push_str("[physics]\n");
        push_number(&mut out, "g", Some(p.g));
        push_number(&mut out, "linear_density", p.linear_density);
        push_number(&mut out, "depth", p.depth);
        push_number(&mut out, "detuning", Some(p.detuning));
        push_number(&mut out, "gamma_12", p.gamma_12);
        push_number(&mut out, "scattering", p.scattering);
        push_number(&mut out, "gamma_on", p.gamma_on);
        out.push('\n');
    }
    if let Some(g) = &scenario.gradient {
        out.push_str("[gradient]\n");
        push_list(&mut out, "starts", Some(&g.starts));
        push_list(&mut out, "slopes", Some(&g.slopes));
        push_list(&mut out, "offsets", g.offsets.as_deref());
        push_list(&mut out, "ramps", g.ramps.as_deref());
        out.push('\n');
    }
    if let Some(c) = &scenario.control {
        out.push_str("[control]\n");
        push_list(&mut out, "starts", Some(&c.starts));
        push_list(&mut out, "rabi", Some(&c.rabi));
        push_list(&mut out, "ramps", c.ramps.as_deref());
        out.push('\n');
    }
    if let Some(p) = &scenario.pulses {
        out.push_str("[pulses]\n");
        push_list(&mut out, "centers", Some(&p.centers));
        push_list(&mut out, "widths", Some(&p.widths));
        push_list(&mut out, "amplitudes", p.amplitudes.as_deref());
        push_list(&mut out, "carriers", p.carriers.as_deref());
        push_display(&mut out, "count", p.count);
        push_number(&mut out, "spacing", p.spacing);
        out.push('\n');
    }
    if let Some(r) = &scenario.recall {
        out.push_str("[recall]\n");
        push_display(&mut out, "kind", Some(r.kind.as_str()));
        push_number(&mut out, "flip_time", r.flip_time);
        push_number(&mut out, "slope_ratio", r.slope_ratio);
        push_number(&mut out, "offset", r.offset);
        push_display(&mut out, "control_off", r.control_off);
        push_number(&mut out, "control_reenable", r.control_reenable);
        push_display(&mut out, "pulse_count", r.pulse_count);
        out.push('\n');
    }
    if let Some(a) = &scenario.analysis {
        out.push_str("[analysis]\n");
        push_number(&mut out, "eta0", a.eta0);
        push_number(&mut out, "tau_d", a.tau_d);
        push_number(&mut out, "tau0", a.tau0);
        push_number(&mut out, "t_max", a.t_max);
        push_display(&mut out, "points", a.points);
        push_number(&mut out, "detuning_span", a.detuning_span);
        push_list(&mut out, "rabi_values", a.rabi_values.as_deref());
        out.push('\n');
    }
    if let Some(o) = &scenario.output {
        out.push_str("[output]\n");
        push_display(&mut out, "spectrum", o.spectrum);
        push_number(&mut out, "heterodyne_lo", o.heterodyne_lo);
        out.push('\n');
    }
    out
}

/// Why a parsed scenario does not describe a runnable experiment.
#[derive(Clone, Debug, PartialEq)]
pub enum ConfigError {
    Scenario(Vec<String>),
    Invalid(Vec<Violation>),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lines: Vec<String> = match self {
            ConfigError::Scenario(msgs) => msgs.clone(),
            ConfigError::Invalid(v) => v.iter().map(|v| v.to_string()).collect(),
        };
        write!(f, "{}", lines.join("\n"))
    }
}

fn broadcast(name: &str, values: Option<&[f64]>, n: usize, default: f64, problems: &mut Vec<String>) -> Vec<f64> {
    match values {
        None => vec![default; n],
        Some([v]) => vec![*v; n],
        Some(v) if v.len() == n => v.to_vec(),
        Some(v) => {
            problems.push(format!("{name} has {} entries, expected 1 or {n}", v.len()));
            vec![default; n]
        }
    }
}

impl Scenario {
    pub fn kind(&self) -> Kind {
        self.recall.as_ref().map_or(Kind::StorageRecall, |r| r.kind)
    }

    pub fn recall(&self) -> Recall {
        self.recall.clone().unwrap_or_default()
    }

    fn gradient_schedule(&self, t_end: f64, problems: &mut Vec<String>) -> GradientSchedule {
        let Some(g) = &self.gradient else {
            return GradientSchedule::new(Vec::new());
        };
        let n = g.starts.len();
        if g.slopes.len() != n {
            problems.push(format!("gradient has {n} starts but {} slopes", g.slopes.len()));
        }
        let offsets = broadcast("gradient offsets", g.offsets.as_deref(), n, 0.0, problems);
        let ramps = broadcast("gradient ramps", g.ramps.as_deref(), n, 0.0, problems);
        GradientSchedule::new(
            (0..n.min(g.slopes.len()))
                .map(|k| {
                    let end = g.starts.get(k + 1).copied().unwrap_or(t_end);
                    Segment::new(g.starts[k], end, GradientLevel::new(g.slopes[k], offsets[k])).with_ramp(ramps[k])
                })
                .collect(),
        )
    }

    fn control_schedule(&self, t_end: f64, problems: &mut Vec<String>) -> ControlSchedule {
        let Some(c) = &self.control else {
            return ControlSchedule::new(Vec::new());
        };
        let n = c.starts.len();
        if c.rabi.len() != n {
            problems.push(format!("control has {n} starts but {} rabi values", c.rabi.len()));
        }
        let ramps = broadcast("control ramps", c.ramps.as_deref(), n, 0.0, problems);
        ControlSchedule::new(
            (0..n.min(c.rabi.len()))
                .map(|k| {
                    let end = c.starts.get(k + 1).copied().unwrap_or(t_end);
                    Segment::new(c.starts[k], end, c.rabi[k]).with_ramp(ramps[k])
                })
                .collect(),
        )
    }

    fn pulse_train(&self, problems: &mut Vec<String>) -> PulseTrain {
        let Some(p) = &self.pulses else {
            return PulseTrain::new(Vec::new());
        };
        if let Some(count) = p.count {
            if p.centers.len() != 1 {
                problems.push("a uniform train (`count`) takes exactly one center".into());
                return PulseTrain::new(Vec::new());
            }
            let Some(spacing) = p.spacing else {
                problems.push("a uniform train (`count`) needs `spacing`".into());
                return PulseTrain::new(Vec::new());
            };
            let width = p.widths.first().copied().unwrap_or(0.0);
            let amp = p.amplitudes.as_ref().and_then(|a| a.first().copied()).unwrap_or(1.0);
            let carrier = p.carriers.as_ref().and_then(|c| c.first().copied()).unwrap_or(0.0);
            for (name, len) in [
                ("widths", p.widths.len()),
                ("amplitudes", p.amplitudes.as_ref().map_or(1, Vec::len)),
                ("carriers", p.carriers.as_ref().map_or(1, Vec::len)),
            ] {
                if len != 1 {
                    problems.push(format!("a uniform train takes a single value for {name}"));
                }
            }
            return PulseTrain::uniform(
                Pulse::new(p.centers[0], width, amp).with_carrier(carrier),
                count,
                spacing,
            );
        }
        if p.spacing.is_some() {
            problems.push("`spacing` needs `count`".into());
        }
        let n = p.centers.len();
        let widths = broadcast("widths", Some(&p.widths), n, 0.0, problems);
        let amps = broadcast("amplitudes", p.amplitudes.as_deref(), n, 1.0, problems);
        let carriers = broadcast("carriers", p.carriers.as_deref(), n, 0.0, problems);
        PulseTrain::new(
            (0..n)
                .map(|k| Pulse::new(p.centers[k], widths[k], amps[k]).with_carrier(carriers[k]))
                .collect(),
        )
    }

    /// Storage slope: the slope of the first gradient segment.
    pub fn storage_slope(&self) -> f64 {
        self.gradient
            .as_ref()
            .and_then(|g| g.slopes.first().copied())
            .unwrap_or(0.0)
    }

    /// Peak control Rabi frequency.
    pub fn peak_rabi(&self) -> f64 {
        self.control
            .as_ref()
            .map_or(0.0, |c| c.rabi.iter().fold(0.0, |m: f64, r| m.max(r.abs())))
    }

    /// Physical constants with the linear density and scattering resolved.
    pub fn physics_params(&self) -> Result<PhysicsParams, ConfigError> {
        let p = self
            .physics
            .as_ref()
            .ok_or_else(|| ConfigError::Scenario(vec!["missing required section [physics]".into()]))?;
        let mut problems = Vec::new();
        let rabi = self.peak_rabi();
        let slope = self.storage_slope();
        let linear_density = match (p.linear_density, p.depth) {
            (Some(n), _) => n,
            (None, Some(depth)) => {
                if rabi == 0.0 || p.g == 0.0 {
                    problems.push("`depth` needs a nonzero control Rabi frequency and coupling g".into());
                    0.0
                } else {
                    // 2πβ = 2π C D / |slope| with C = gΩ/Δ, D = 𝒩LΩ/Δ.
                    let cd = depth * slope.abs() / (2.0 * PI);
                    cd * p.detuning * p.detuning / (p.g * rabi * rabi)
                }
            }
            (None, None) => 0.0,
        };
        let gamma_12 = p.gamma_12.unwrap_or(0.0);
        let scattering = match (p.scattering, p.gamma_on) {
            (Some(k), _) => k,
            (None, Some(total)) => {
                if rabi == 0.0 {
                    problems.push("`gamma_on` needs a nonzero control Rabi frequency".into());
                    0.0
                } else {
                    (total - gamma_12) / (rabi * rabi)
                }
            }
            (None, None) => 0.0,
        };
        if !problems.is_empty() {
            return Err(ConfigError::Scenario(problems));
        }
        Ok(PhysicsParams {
            g_coupling: p.g,
            linear_density,
            detuning_delta: p.detuning,
            gamma_12,
            scattering_coeff: scattering,
        })
    }

    /// The flip time: given explicitly, or the first gradient switch that
    /// changes the sign of the slope.
    pub fn flip_time(&self) -> Option<f64> {
        if let Some(t) = self.recall.as_ref().and_then(|r| r.flip_time) {
            return Some(t);
        }
        let g = self.gradient.as_ref()?;
        let first = *g.slopes.first()?;
        g.slopes
            .iter()
            .zip(&g.starts)
            .find(|(s, _)| s.signum() != first.signum() && **s != 0.0)
            .map(|(_, &t)| t)
    }

    /// The experiment described by the scenario, checked by
    /// [`gem_core::validate`].
    pub fn to_config(&self) -> Result<ExperimentConfig, ConfigError> {
        let kind = self.kind();
        if !kind.is_time_domain() {
            return Err(ConfigError::Scenario(vec![format!(
                "scenario kind `{}` does not describe a time-domain run",
                kind.as_str()
            )]));
        }
        let physics = self.physics_params()?;
        let mut problems = Vec::new();
        let grid = self.grid.clone().unwrap_or_default();
        let gradient = self.gradient_schedule(grid.t_end, &mut problems);
        let control = self.control_schedule(grid.t_end, &mut problems);
        let input = self.pulse_train(&mut problems);
        if !problems.is_empty() {
            return Err(ConfigError::Scenario(problems));
        }
        let dt = grid
            .dt
            .unwrap_or_else(|| stable_time_step(&physics, &gradient, &control));
        let config = ExperimentConfig {
            physics,
            gradient,
            control,
            input,
            nz: grid.nz,
            dt,
            t_end: grid.t_end,
            flip_time: self.flip_time(),
            snapshot_times: grid.snapshot_times.clone().unwrap_or_default(),
        };
        let violations = validate(&config);
        if violations.is_empty() {
            Ok(config)
        } else {
            Err(ConfigError::Invalid(violations))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn units_convert_to_angular_microsecond_units() {
        let f = |s| parse_number(s, Quantity::Frequency).unwrap();
        assert!((f("300 kHz") - 2.0 * PI * 0.3).abs() < 1e-15);
        assert!((f("2pi*300 kHz") - 2.0 * PI * 0.3).abs() < 1e-15);
        assert!((f("2pi*0.3") - 2.0 * PI * 0.3).abs() < 1e-15);
        assert_eq!(f("1.5"), 1.5);
        assert_eq!(f("1.5 rad/us"), 1.5);
        assert!((f("3.5kHz") - 2.0 * PI * 0.0035).abs() < 1e-15);
        assert!((f("1e-3 MHz") - 2.0 * PI * 1e-3).abs() < 1e-18);
        let t = |s| parse_number(s, Quantity::Time).unwrap();
        assert_eq!(t("3.7 us"), 3.7);
        assert_eq!(t("2 ms"), 2000.0);
        assert!((t("500 ns") - 0.5).abs() < 1e-15);
        assert!(parse_number("3 kHz", Quantity::Time).is_err());
        assert!(parse_number("2pi*3", Quantity::Time).is_err());
        assert!(parse_number("3 us", Quantity::Plain).is_err());
        assert!(parse_number("fast", Quantity::Plain).is_err());
        assert!(parse_number("inf", Quantity::Plain).is_err());
    }

    #[test]
    fn empty_file_needs_physics() {
        let errs = parse_scenario("").unwrap_err();
        assert_eq!(errs[0].message, "missing required section [physics]");
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let text = "[physics]\ng = 1\ng = 2\nbogus = 3\n[grid\nnz 4\n";
        let errs = parse_scenario(text).unwrap_err();
        let lines: Vec<Option<usize>> = errs.iter().map(|e| e.line).collect();
        assert!(lines.contains(&Some(3)));
        assert!(lines.contains(&Some(4)));
        assert!(lines.contains(&Some(5)));
        assert!(lines.contains(&Some(6)));
        assert!(errs.iter().any(|e| e.message.contains("duplicate key `g`")));
        assert!(errs.iter().any(|e| e.message.contains("unknown key `bogus`")));
    }

    #[test]
    fn comments_and_booleans() {
        let text = "[recall] # trailing\nkind = capacity # comment\ncontrol_off = true\n[analysis]\neta0 = 0.9\n";
        let s = parse_scenario(text).unwrap();
        assert_eq!(s.kind(), Kind::Capacity);
        assert_eq!(s.recall.unwrap().control_off, Some(true));
        assert!(parse_scenario("[recall]\nkind = capacity\ncontrol_off = yes\n[analysis]\n").is_err());
    }

    #[test]
    fn slope_with_unit() {
        let text = "[gradient]\nstarts = 0\nslope = 300 kHz\n";
        let errs = parse_scenario(text).unwrap_err();
        assert!(errs.iter().all(|e| !e.message.contains("slopes")));
        let full = format!("[recall]\nkind = spectrum\n[physics]\ng = 1\ndepth = 1\ndetuning = 100\n{text}[control]\nstarts = 0\nrabi = 1\n");
        let s = parse_scenario(&full).unwrap();
        assert!((s.storage_slope() - 2.0 * PI * 0.3).abs() < 1e-15);
    }
}
