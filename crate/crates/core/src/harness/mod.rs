//! Scenario runner, sweeps and artifact output.

mod config;
mod run;

use thiserror::Error;

pub use config::{Protocol, ScenarioConfig, Timing, TopologySource};
pub use run::{
    emit_outputs, run_scenario, sweep, write_channels_per_step, write_sweep, RunReport, ScenarioRun, SweepGrid,
    SweepRow,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Net(#[from] crate::netmodel::NetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
