//! Behavioral simulator for perceptrons whose inputs are PWM duty cycles.
//!
//! A weighted adder is a bank of binary-weighted driver cells sharing one
//! RC output node. Its periodic-steady-state average encodes the weighted
//! sum of the input duty cycles as a fraction of the supply. This crate
//! builds those circuits, solves the node exactly (linear devices) or by
//! implicit integration (square-law devices), and provides the closed-form
//! predictions the simulation is checked against.

pub mod analysis;
pub mod config;
pub mod device;
pub mod experiments;
pub mod netlist;
pub mod plot;
pub mod signal;
pub mod solver;

pub use analysis::{divider_prediction, eq2_prediction, perceptron_output, PredictionReport};
pub use device::{Branch, BranchState, CellGeometry, DeviceModel, LinearSwitchModel, SquareLawModel};
pub use netlist::{build_inverter, build_weighted_adder, AdderConfig, CellKind, Netlist};
pub use signal::{edge_schedule, hyperperiod, Frequency, Level, PwmSpec};
pub use solver::{periodic_steady_state, transient, SolverMode, SolverOptions, SteadyStateResult};
