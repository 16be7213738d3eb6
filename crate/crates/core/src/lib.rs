//! Simulation and analysis core for Λ-type gradient echo memory.
//!
//! A weak signal and a strong control field drive a far-detuned Raman
//! transition between two ground states. A detuning gradient along the cell
//! spreads the signal spectrum over the length of the cell; reversing the
//! gradient rephases the stored spin wave and an echo leaves the cell in the
//! forward direction.
//!
//! * [`model`]: parameters, schedules, pulses and configuration checks.
//! * [`solver`]: RK4 integration of the coupled coherence/field equations and
//!   the steady-state absorption line.
//! * [`protocol`]: storage/recall scenarios and echo observables.
//! * [`analysis`]: efficiency decay model, its least-squares fit and the
//!   coherent-state fidelity benchmark.
//!
//! The crate is `no_std` and only needs an allocator.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod model;
pub mod numeric;
pub mod protocol;
pub mod solver;

pub use num_complex::Complex64;

pub use analysis::{
    classical_benchmark, decay_efficiency, fidelity_bound, fit_decay, quantum_capacity, Capacity,
    DecayFit, DecayModel, FitError, FidelityPoint,
};
pub use model::{
    effective_coupling, stable_time_step, validate, ControlSchedule, ExperimentConfig,
    GradientLevel, GradientSchedule, PhysicsParams, Pulse, PulseTrain, Segment, Violation,
    ViolationCode,
};
pub use protocol::{EchoReport, EchoRun, ProtocolError};
pub use solver::{
    absorbed_fraction, integrate, steady_state_transmission, SimulationResult, SolverError,
    SolverOptions,
};
