#![allow(dead_code)]

use std::f64::consts::PI;

use gem_core::{
    stable_time_step, ControlSchedule, ExperimentConfig, GradientLevel, GradientSchedule,
    PhysicsParams, Pulse, PulseTrain,
};

pub const RABI: f64 = 2.0 * PI * 100.0;
pub const DELTA: f64 = 2.0 * PI * 3000.0;

/// Single-pulse storage and recall in a symmetric line: C = D, the gradient
/// flips sign at `flip`.
#[derive(Clone, Debug)]
pub struct Setup {
    /// Optical depth of the broadened line, `2πβ`.
    pub depth: f64,
    pub gamma: f64,
    /// Gradient slope, rad/µs per unit z.
    pub slope: f64,
    pub width: f64,
    pub center: f64,
    pub flip: f64,
    pub tail: f64,
    pub nz: usize,
    pub dt: Option<f64>,
}

impl Default for Setup {
    fn default() -> Self {
        Setup {
            depth: 2.0,
            gamma: 0.0,
            slope: 2.0 * PI * 6.0,
            width: 2.0,
            center: 4.0,
            flip: 8.0,
            tail: 6.0,
            nz: 512,
            dt: None,
        }
    }
}

impl Setup {
    pub fn physics(&self) -> PhysicsParams {
        let cd = self.depth * self.slope / (2.0 * PI);
        let g = cd.sqrt() * DELTA / RABI;
        PhysicsParams {
            g_coupling: g,
            linear_density: g,
            detuning_delta: DELTA,
            gamma_12: self.gamma,
            scattering_coeff: 0.0,
        }
    }

    pub fn echo_time(&self) -> f64 {
        2.0 * self.flip - self.center
    }

    pub fn t_end(&self) -> f64 {
        self.echo_time() + self.tail
    }

    pub fn config(&self) -> ExperimentConfig {
        let t_end = self.t_end();
        let physics = self.physics();
        let gradient = GradientSchedule::switched(
            &[
                (0.0, GradientLevel::new(self.slope, 0.0)),
                (self.flip, GradientLevel::new(-self.slope, 0.0)),
            ],
            t_end,
        );
        let control = ControlSchedule::constant(RABI, t_end);
        let dt = self
            .dt
            .unwrap_or_else(|| stable_time_step(&physics, &gradient, &control));
        ExperimentConfig {
            physics,
            gradient,
            control,
            input: PulseTrain::single(Pulse::new(self.center, self.width, 1.0)),
            nz: self.nz,
            dt,
            t_end,
            flip_time: Some(self.flip),
            snapshot_times: Vec::new(),
        }
    }
}

/// `(1 - e^{-2πβ})²`.
pub fn depth_law(depth: f64) -> f64 {
    let a = 1.0 - (-depth).exp();
    a * a
}
