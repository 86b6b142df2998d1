//! Depolarizing-noise mitigation with noise-estimation circuits.
//!
//! The pipeline: build a target circuit, derive an estimation circuit that
//! shares its CNOT structure but ideally returns `|0…0⟩`, randomize both with
//! Pauli twirling, fold CNOTs to amplify noise, simulate, unfold readout
//! errors, divide the target expectation by the estimated fidelity `1 − p`,
//! and extrapolate the corrected values to zero noise.
//!
//! - [`circuit`]: gate/circuit IR, Pauli strings and observables
//! - [`simulator`]: density-matrix and state-vector simulation, sampling
//! - [`transforms`]: randomized compiling, folding, estimation circuits
//! - [`mitigation`]: unfolding, fidelity, correction, extrapolation
//! - [`xx_model`]: the XX-chain workload and its reference values
//! - [`experiment`]: the seeded sweep, persistence and result tables

pub mod circuit;
pub mod experiment;
pub(crate) mod kernels;
pub mod linalg;
pub mod mitigation;
pub mod simulator;
pub mod transforms;
pub mod xx_model;

pub use circuit::{Circuit, CircuitError, Gate, Observable, OneQubitGate, Pauli, PauliString};
pub use experiment::{ExperimentConfig, ResultTable, RunError};
pub use mitigation::{ConfusionMatrix, Estimate, FidelityMode, MitigationError, QubitConfusion};
pub use simulator::{CountHistogram, DensityMatrix, NoiseModel, SimError, StateVector};
pub use transforms::{FoldFactor, TwirlAssignment, TWIRL_TABLE};
pub use xx_model::{HalfStepBonds, ModelError, ModelParams};
