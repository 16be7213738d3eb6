mod common;

use std::f64::consts::PI;

use common::{depth_law, Setup};
use gem_core::numeric::trapezoid;
use gem_core::protocol::{run_storage_recall, ControlGate};
use gem_core::solver::{integrate, SolverOptions};
use gem_core::{steady_state_transmission, Complex64, PulseTrain, Pulse};

fn energy(field: &[Complex64], dt: f64) -> f64 {
    let p: Vec<f64> = field.iter().map(|e| e.norm_sqr()).collect();
    trapezoid(&p, dt)
}

/// First-order response of the medium: the input minus the free-induction
/// field radiated by the coherence it drives, with the sign of the detuning
/// reversed after the flip.
fn free_induction_oracle(setup: &Setup, times: &[f64], input: &[Complex64], k: usize) -> Complex64 {
    let physics = setup.physics();
    let cd = physics.signal_coupling(common::RABI) * physics.field_coupling(common::RABI);
    let h = times[1] - times[0];
    let t = times[k];
    let sinc = |x: f64| if x.abs() < 1e-12 { 1.0 } else { x.sin() / x };
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..=k {
        let tp = times[j];
        let before = (t.min(setup.flip) - tp).max(0.0);
        let after = (t - tp.max(setup.flip)).max(0.0);
        let phase = setup.slope * (before - after);
        let w = if j == 0 || j == k { 0.5 } else { 1.0 };
        acc += input[j] * (sinc(phase / 2.0) * h * w);
    }
    input[k] - acc * cd
}

#[test]
fn recall_efficiency_follows_depth_law() {
    for depth in [0.3, 1.0, 2.0, 5.0] {
        let setup = Setup { depth, ..Setup::default() };
        let run = run_storage_recall(&setup.config(), ControlGate::AlwaysOn).unwrap();
        let want = depth_law(depth);
        assert!(
            (run.report.efficiency - want).abs() < 2e-3,
            "depth {depth}: {} vs {want}",
            run.report.efficiency
        );
    }
}

#[test]
fn echo_returns_at_mirror_time() {
    for depth in [0.05, 0.3, 1.0, 3.0, 6.0] {
        let setup = Setup { depth, ..Setup::default() };
        let run = run_storage_recall(&setup.config(), ControlGate::AlwaysOn).unwrap();
        let dt = run.simulation.dt;
        let err = (run.report.echo_center - setup.echo_time()).abs();
        assert!(err < dt, "depth {depth}: off by {err} with dt {dt}");
        assert!((run.report.echo_e2_width - setup.width).abs() < 0.01);
    }
}

#[test]
fn weak_echo_matches_free_induction_oracle() {
    let setup = Setup { depth: 0.01, ..Setup::default() };
    let sim = integrate(&setup.config(), &SolverOptions::default()).unwrap();
    let (mut num, mut den) = (0.0, 0.0);
    for (k, &t) in sim.time_grid.iter().enumerate() {
        if t < setup.flip + 0.5 {
            continue;
        }
        let want = free_induction_oracle(&setup, &sim.time_grid, &sim.input_field, k);
        num += (sim.output_field[k] - want).norm_sqr();
        den += want.norm_sqr();
    }
    let rms = (num / den).sqrt();
    assert!(rms < 0.02, "relative rms {rms}");
}

#[test]
fn energy_balances_without_decoherence() {
    // Partial recall: part of the excitation is still in the spin wave at
    // the end of the window.
    for (depth, tail) in [(1.0, 6.0), (3.0, 0.3), (5.0, -1.0)] {
        let setup = Setup { depth, tail, ..Setup::default() };
        let sim = integrate(&setup.config(), &SolverOptions::default()).unwrap();
        let e_in = energy(&sim.input_field, sim.dt);
        let e_out = energy(&sim.output_field, sim.dt);
        let stored = sim.energy_ledger.stored_weighted_norm;
        let lost = e_in - e_out;
        assert!(stored > 0.0);
        assert!(
            (lost - stored).abs() < 5e-3 * e_in,
            "depth {depth}: lost {lost}, stored {stored}"
        );
    }
}

#[test]
fn decoherence_makes_the_medium_passive() {
    for gamma in [0.01, 0.1, 1.0] {
        let setup = Setup { depth: 3.0, gamma, ..Setup::default() };
        let sim = integrate(&setup.config(), &SolverOptions::default()).unwrap();
        let e_in = energy(&sim.input_field, sim.dt);
        let e_out = energy(&sim.output_field, sim.dt);
        assert!(e_out + sim.energy_ledger.stored_weighted_norm < e_in);
    }
    let lossless = Setup { depth: 3.0, ..Setup::default() };
    let lossy = Setup { gamma: 0.05, ..lossless.clone() };
    let a = run_storage_recall(&lossless.config(), ControlGate::AlwaysOn).unwrap();
    let b = run_storage_recall(&lossy.config(), ControlGate::AlwaysOn).unwrap();
    assert!(b.report.efficiency < a.report.efficiency);
}

#[test]
fn response_is_linear_in_the_input() {
    let setup = Setup { depth: 2.0, gamma: 0.02, ..Setup::default() };
    let base = setup.config();
    let one = integrate(&base, &SolverOptions::default()).unwrap();

    let mut scaled = base.clone();
    scaled.input = base.input.scaled(3.5);
    let three = integrate(&scaled, &SolverOptions::default()).unwrap();
    let peak = one.output_field.iter().map(|e| e.norm()).fold(0.0, f64::max);
    for (a, b) in one.output_field.iter().zip(&three.output_field) {
        assert!((b - a * 3.5).norm() <= 1e-12 * 3.5 * peak);
    }

    let second = Pulse::new(6.0, 1.5, 0.4).with_carrier(1.2);
    let mut only_second = base.clone();
    only_second.input = PulseTrain::single(second);
    let mut both = base.clone();
    both.input = PulseTrain::new(vec![base.input.pulses[0], second]);
    let s = integrate(&only_second, &SolverOptions::default()).unwrap();
    let sum = integrate(&both, &SolverOptions::default()).unwrap();
    for k in 0..sum.output_field.len() {
        let dev = (sum.output_field[k] - one.output_field[k] - s.output_field[k]).norm();
        assert!(dev <= 1e-12 * peak, "index {k}: {dev}");
    }
}

#[test]
fn efficiency_converges_under_refinement() {
    let coarse = Setup { depth: 4.0, gamma: 0.02, ..Setup::default() };
    let dt = coarse.config().dt;
    let fine = Setup { nz: 2 * coarse.nz, dt: Some(dt / 2.0), ..coarse.clone() };
    let a = run_storage_recall(&coarse.config(), ControlGate::AlwaysOn).unwrap().report.efficiency;
    let b = run_storage_recall(&fine.config(), ControlGate::AlwaysOn).unwrap().report.efficiency;
    assert!(((a - b) / b).abs() < 1e-3, "{a} vs {b}");
}

#[test]
fn long_pulse_sees_the_steady_state_line() {
    // A pulse much longer than the inverse line width probes the cw line.
    for (depth, gamma) in [(1.0, 0.0), (2.0, 0.5), (3.0, 3.0)] {
        let setup = Setup {
            depth,
            gamma,
            width: 12.0,
            center: 20.0,
            flip: 40.0,
            // Window ends at the unused flip time, 40 µs.
            tail: -20.0,
            ..Setup::default()
        };
        let mut config = setup.config();
        config.flip_time = None;
        config.gradient = gem_core::GradientSchedule::constant(
            gem_core::GradientLevel::new(setup.slope, 0.0),
            config.t_end,
        );
        let sim = integrate(&config, &SolverOptions::default()).unwrap();
        let got = energy(&sim.output_field, sim.dt) / energy(&sim.input_field, sim.dt);
        let want = steady_state_transmission(&setup.physics(), common::RABI, setup.slope, 0.0).unwrap();
        assert!((got - want).abs() < 0.02 * want.max(0.05), "depth {depth}, gamma {gamma}: {got} vs {want}");
    }
}

#[test]
fn line_transmission_inside_broad_line() {
    let setup = Setup { depth: 2.0 * PI * 0.7, ..Setup::default() };
    let t = steady_state_transmission(&setup.physics(), common::RABI, setup.slope, 3.0).unwrap();
    assert!((t - (-2.0 * PI * 0.7f64).exp()).abs() < 1e-12);
}
