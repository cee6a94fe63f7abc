//! Scenario registry, experiment configuration, and Monte Carlo drivers.

pub mod config;
pub mod runs;
pub mod scenarios;

pub use config::ExperimentConfig;
pub use runs::{
    run_commutator_decay, run_convergence, run_noise_demo, run_oracle_compare, run_scenario,
    run_uniqueness, run_weakcheck, ConvRow, NoiseRow, OracleRow, ScenarioRunOutput, UniqRow,
};
pub use scenarios::{Scenario, ScenarioSpec};
