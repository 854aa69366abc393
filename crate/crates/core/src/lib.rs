//! Simulation and analysis of truck platoons driven by linear bilateral
//! car-following control.

pub mod controllers;
pub mod dynamics;
pub mod error;
pub mod integrator;
pub mod io;
pub mod metrics;
pub mod model;
pub mod plot;
pub mod profile;
pub mod simulator;
pub mod stability;
pub mod tuner;

pub use error::{Error, Result, Violation};
pub use integrator::Termination;
pub use model::{
    ControlGains, LastTruckPolicy, ModelKind, PlatoonScenario, PowertrainParams, TimeGapPolicy, TruckParams,
    TruckState,
};
pub use simulator::{run_platoon, run_platoon_with, RunOptions, SimulationTrace};
pub use stability::{
    gap_error_gain, local_conditions, local_jacobian, string_stability_check, FrequencyGrid, GapErrorParams,
    LocalStabilityReport, StringStabilityReport,
};
pub use tuner::{ga_optimize, GAConfig, TuningReport};
