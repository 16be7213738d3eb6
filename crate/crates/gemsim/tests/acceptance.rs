//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::Path;
use std::time::{Duration, Instant};

use gem_core::analysis::{
    capacity_closed_form, capacity_for_efficiency, decay_rate_khz, time_constant_us,
    CoherentStateBenchmark,
};
use gem_core::{integrate, Complex64, DecayModel, PulseTrain, Pulse, SolverOptions};
use gemsim::commands::{self, experiment, CapacityArgs, Overrides, SweepParam};
use gemsim::output::number;
use gemsim::{parse_scenario, Scenario};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Single 2 µs pulse centered at `center` in a 6 MHz line, C = D, control
/// always on; the gradient flips at `flip`.
fn single_pulse(depth: f64, gamma: f64, flip: f64, t_end: f64, nz: usize, dt: Option<f64>) -> Scenario {
    let dt_line = dt.map_or(String::new(), |dt| format!("dt = {dt}\n"));
    let text = format!(
        "[grid]\nnz = {nz}\nt_end = {t_end}\n{dt_line}\
         [physics]\ng = 157.7\ndepth = {depth}\ndetuning = 3 GHz\ngamma_12 = {gamma}\n\
         [gradient]\nstarts = 0, {flip}\nslopes = 6 MHz, -6 MHz\n\
         [control]\nstarts = 0\nrabi = 100 MHz\n\
         [pulses]\ncenters = 4\nwidths = 2\n"
    );
    parse_scenario(&text).expect("test scenario parses")
}

fn preset(name: &str) -> Scenario {
    commands::load(name).expect("preset loads")
}

fn depth_law(depth: f64) -> f64 {
    let a = 1.0 - (-depth).exp();
    a * a
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).expect("csv exists");
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn energy(field: &[Complex64], dt: f64) -> f64 {
    let p: Vec<f64> = field.iter().map(|e| e.norm_sqr()).collect();
    gem_core::numeric::trapezoid(&p, dt)
}

fn depth_limit() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for depth in [0.3, 1.0, 2.0, 5.0] {
        let run = experiment(&single_pulse(depth, 0.0, 8.0, 18.0, 256, None), Overrides::default()).unwrap();
        let want = depth_law(depth);
        let err = (run.report.efficiency - want).abs();
        pass &= err < 0.02;
        lines.push(format!("2πβ={depth}: {:.4} vs {:.4}", run.report.efficiency, want));
    }
    // The 99% absorption point in the 2 µs geometry, without decoherence.
    let mut sc = preset("paper_fig2b");
    let physics = sc.physics.as_mut().unwrap();
    physics.gamma_12 = None;
    physics.depth = Some(100f64.ln());
    let eta = experiment(&sc, Overrides::default()).unwrap().report.efficiency;
    // Quoted to 0.1%: "0.99² = 98%".
    let rounded = (eta * 1000.0).round() / 1000.0;
    pass &= (0.95..=0.98).contains(&rounded);
    lines.push(format!("99% absorption: {eta:.5} (≈{rounded:.3})"));
    outcome(pass, lines.join("; "))
}

fn fig2b() -> Outcome {
    let run = experiment(&preset("paper_fig2b"), Overrides::default()).unwrap();
    let r = &run.report;
    outcome(
        (0.80..=0.92).contains(&r.efficiency),
        format!("efficiency {:.4}, storage {:.3} us", r.efficiency, r.storage_time_peak_to_peak),
    )
}

/// First-order free-induction response at sample `k`.
fn free_induction(cd: f64, slope: f64, flip: f64, times: &[f64], input: &[Complex64], k: usize) -> Complex64 {
    let h = times[1] - times[0];
    let t = times[k];
    let sinc = |x: f64| if x.abs() < 1e-12 { 1.0 } else { x.sin() / x };
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..=k {
        let tp = times[j];
        let before = (t.min(flip) - tp).max(0.0);
        let after = (t - tp.max(flip)).max(0.0);
        let w = if j == 0 || j == k { 0.5 } else { 1.0 };
        acc += input[j] * (sinc(slope * (before - after) / 2.0) * h * w);
    }
    input[k] - acc * cd
}

fn echo_timing() -> Outcome {
    let mut pass = true;
    let mut worst: f64 = 0.0;
    for depth in [0.05, 0.3, 1.0, 2.0, 4.0, 6.0] {
        let run = experiment(&single_pulse(depth, 0.0, 8.0, 18.0, 256, None), Overrides::default()).unwrap();
        let err = (run.report.echo_center - 12.0).abs();
        pass &= err < run.simulation.dt;
        worst = worst.max(err / run.simulation.dt);
    }
    let sc = single_pulse(0.01, 0.0, 8.0, 18.0, 512, None);
    let cfg = sc.to_config().unwrap();
    let sim = integrate(&cfg, &SolverOptions::default()).unwrap();
    let rabi = sc.peak_rabi();
    let cd = cfg.physics.signal_coupling(rabi) * cfg.physics.field_coupling(rabi);
    let (mut num, mut den) = (0.0, 0.0);
    for (k, &t) in sim.time_grid.iter().enumerate() {
        if t < 8.5 {
            continue;
        }
        let want = free_induction(cd, sc.storage_slope(), 8.0, &sim.time_grid, &sim.input_field, k);
        num += (sim.output_field[k] - want).norm_sqr();
        den += want.norm_sqr();
    }
    let rms = (num / den).sqrt();
    pass &= rms < 0.02;
    outcome(
        pass,
        format!("worst center offset {worst:.2} dt; oracle rms {:.2}% at 2πβ=0.01", 100.0 * rms),
    )
}

fn frequency_shift() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    commands::run(&preset("paper_fig3b_shift"), dir.path()).unwrap();
    let row = &read_csv(&dir.path().join("shift.csv"))[0];
    let v: Vec<f64> = row.iter().map(|s| s.parse().unwrap()).collect();
    let (offset, shift, resolution, fringe) = (v[0], v[1], v[2], v[3]);
    outcome(
        (shift - offset).abs() < resolution && (fringe - offset).abs() < resolution,
        format!(
            "centroid shift {shift:.4}, fringes {fringe:.3}, expected {offset:.4} ± {resolution:.3} rad/us"
        ),
    )
}

fn compression() -> Outcome {
    let rows = commands::sweep_rows(&preset("paper_fig2b"), SweepParam::RecallSlopeRatio, &[1.0, 2.0], None).unwrap();
    let ratio = rows[1][3] / rows[0][3];
    outcome((ratio - 0.5).abs() < 0.05, format!("width ratio {ratio:.4} at r = 2"))
}

fn multi_pulse() -> Outcome {
    let run = experiment(&preset("paper_fig3a_20pulse"), Overrides::default()).unwrap();
    let r = &run.report;
    let echoes = r.echo_order.len();
    outcome(
        echoes == 20 && r.all_echoes_found() && (0.005..=0.08).contains(&r.efficiency) && (30.0..=50.0).contains(&r.dbp),
        format!("{echoes} echoes, efficiency {:.2}%, DBP {:.1}", 100.0 * r.efficiency, r.dbp),
    )
}

fn fit_through_cli(model: (f64, f64, f64), fixed: Option<f64>) -> [f64; 5] {
    let (eta0, tau_d, tau0) = model;
    let m = DecayModel::new(eta0, tau_d, tau0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("t_us,eta\n");
    for k in 0..12 {
        let t = 3.0 * tau0 * k as f64 / 11.0;
        csv.push_str(&format!("{},{}\n", number(t), number(gem_core::decay_efficiency(&m, t))));
    }
    let data = dir.path().join("data.csv");
    std::fs::write(&data, csv).unwrap();
    commands::fit(&data, fixed, dir.path()).unwrap();
    let row = &read_csv(&dir.path().join("fit.csv"))[0];
    let f = |k: usize| row[k].parse::<f64>().unwrap();
    [f(0), f(1), f(2), f(3), f(4)]
}

fn decay_fit() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut cases = vec![(0.9, 22.0, 7.0)];
    for eta0 in [0.1, 0.55, 1.0] {
        for tau_d in [5.0, 30.0, 100.0] {
            for tau0 in [1.0, 10.0, 100.0] {
                cases.push((eta0, tau_d, tau0));
            }
        }
    }
    for &(eta0, tau_d, tau0) in &cases {
        let got = fit_through_cli((eta0, tau_d, tau0), None);
        for (g, w) in got.iter().zip([eta0, tau_d, tau0]) {
            worst = worst.max(((g - w) / w).abs());
        }
    }
    let fast = time_constant_us(40.0);
    let slow = time_constant_us(2.6);
    let exact = decay_rate_khz(fast) == 40.0 && (decay_rate_khz(slow) - 2.6).abs() <= 4.0 * f64::EPSILON * 2.6;
    let fixed = fit_through_cli((0.9, 22.0, slow), Some(22.0));
    let rate_ok = ((fixed[4] - 2.6) / 2.6).abs() < 5e-3 && ((fixed[2] - slow) / slow).abs() < 5e-3;
    outcome(
        worst < 5e-3 && exact && rate_ok && (fast - 4.0).abs() < 0.05 && (slow - 61.0).abs() < 0.5,
        format!(
            "worst relative error {:.1e} over {} models; 2π×40 kHz ↔ {fast:.3} us, 2π×2.6 kHz ↔ {slow:.2} us; fixed-τ_d fit rate {:.4} kHz",
            worst,
            cases.len(),
            fixed[4]
        ),
    )
}

fn capacity() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let args = CapacityArgs {
        eta0: 0.98,
        tau_d: 22.0,
        tau0: 60.0,
        t_max: 30.0,
        points: 301,
    };
    commands::capacity(&args, dir.path()).unwrap();
    let rows = read_csv(&dir.path().join("capacity.csv"));
    let at = |t: f64| {
        let row = rows
            .iter()
            .min_by(|a, b| {
                let da = (a[0].parse::<f64>().unwrap() - t).abs();
                let db = (b[0].parse::<f64>().unwrap() - t).abs();
                da.total_cmp(&db)
            })
            .unwrap();
        row[2].parse::<f64>().unwrap()
    };
    let (n6, n21) = (at(6.0), at(21.0));
    let mut worst: f64 = 0.0;
    for k in 1..200 {
        let eta = k as f64 / 200.0;
        let a = capacity_for_efficiency(eta, &CoherentStateBenchmark).value();
        let b = capacity_closed_form(eta).value();
        worst = worst.max(((a - b) / b).abs());
    }
    outcome(
        (8.5..=11.5).contains(&n6) && (0.8..=1.4).contains(&n21) && worst <= 1e-6,
        format!("n̄(6 us) = {n6:.3}, n̄(21 us) = {n21:.3}, bisection vs closed form {worst:.1e}"),
    )
}

fn properties() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;

    // Linearity: scaling and superposition.
    let base = single_pulse(2.0, 0.02, 8.0, 18.0, 256, None).to_config().unwrap();
    let opts = SolverOptions::default();
    let one = integrate(&base, &opts).unwrap();
    let peak = one.output_field.iter().map(|e| e.norm()).fold(0.0, f64::max);
    let mut scaled = base.clone();
    scaled.input = base.input.scaled(3.5);
    let three = integrate(&scaled, &opts).unwrap();
    let second = Pulse::new(6.0, 1.5, 0.4).with_carrier(1.2);
    let mut only = base.clone();
    only.input = PulseTrain::single(second);
    let mut both = base.clone();
    both.input = PulseTrain::new(vec![base.input.pulses[0], second]);
    let s = integrate(&only, &opts).unwrap();
    let sum = integrate(&both, &opts).unwrap();
    let mut lin: f64 = 0.0;
    for k in 0..one.output_field.len() {
        lin = lin.max((three.output_field[k] - one.output_field[k] * 3.5).norm() / (3.5 * peak));
        lin = lin.max((sum.output_field[k] - one.output_field[k] - s.output_field[k]).norm() / peak);
    }
    pass &= lin < 1e-12;
    notes.push(format!("linearity {lin:.1e}"));

    // Energy balance without decoherence, with part of the excitation left
    // in the medium.
    let mut balance: f64 = 0.0;
    for (depth, t_end) in [(1.0, 18.0), (3.0, 12.3), (5.0, 11.0)] {
        let cfg = single_pulse(depth, 0.0, 8.0, t_end, 256, None).to_config().unwrap();
        let sim = integrate(&cfg, &opts).unwrap();
        let e_in = energy(&sim.input_field, sim.dt);
        let lost = e_in - energy(&sim.output_field, sim.dt);
        balance = balance.max((lost - sim.energy_ledger.stored_weighted_norm).abs() / e_in);
    }
    pass &= balance < 5e-3;
    notes.push(format!("energy balance {:.2}%", 100.0 * balance));

    // Passivity with decoherence.
    let mut passive = true;
    for gamma in [0.01, 0.1, 1.0] {
        let cfg = single_pulse(3.0, gamma, 8.0, 18.0, 256, None).to_config().unwrap();
        let sim = integrate(&cfg, &opts).unwrap();
        passive &= energy(&sim.output_field, sim.dt) + sim.energy_ledger.stored_weighted_norm
            < energy(&sim.input_field, sim.dt);
    }
    pass &= passive;
    notes.push(format!("passive {passive}"));

    // Grid refinement.
    let coarse = single_pulse(4.0, 0.02, 8.0, 18.0, 512, None);
    let dt = coarse.to_config().unwrap().dt;
    let fine = single_pulse(4.0, 0.02, 8.0, 18.0, 1024, Some(dt / 2.0));
    let a = experiment(&coarse, Overrides::default()).unwrap().report.efficiency;
    let b = experiment(&fine, Overrides::default()).unwrap().report.efficiency;
    let change = ((a - b) / b).abs();
    pass &= change < 1e-3;
    notes.push(format!("refinement change {change:.1e}"));

    outcome(pass, notes.join(", "))
}

fn main() {
    let criteria: [(&str, u64, fn() -> Outcome); 9] = [
        ("1 depth-limited efficiency", 5 * 60, depth_limit),
        ("2 2 us pulse at 99% absorption", 60, fig2b),
        ("3 echo timing and weak-echo oracle", 120, echo_timing),
        ("4 frequency-shifted recall", 60, frequency_shift),
        ("5 compressed recall", 60, compression),
        ("6 twenty-pulse train", 300, multi_pulse),
        ("7 decay fit", 10, decay_fit),
        ("8 capacity", 10, capacity),
        ("9 solver properties", 300, properties),
    ];
    let mut failures = 0;
    for (name, limit, check) in criteria {
        let start = Instant::now();
        let result = std::panic::catch_unwind(check);
        let elapsed = start.elapsed();
        let (pass, detail) = match result {
            Ok(o) => (o.pass, o.detail),
            Err(_) => (false, "panicked".to_string()),
        };
        let in_time = elapsed <= Duration::from_secs(limit);
        let ok = pass && in_time;
        if !ok {
            failures += 1;
        }
        println!(
            "{} criterion {name}: {detail} [{:.2} s{}]",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            if in_time { "" } else { ", over time limit" }
        );
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
