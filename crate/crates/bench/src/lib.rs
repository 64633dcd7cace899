//! Benchmark harness for the alembic bridge.
//!
//! [`run_scenario`] times the send, compute and receive phases of a routine
//! at the client; [`transfer_experiment`] counts row messages for two shapes
//! of equal volume across batch sizes.

pub mod harness;
pub mod oracle;
pub mod report;
pub mod scenario;
pub mod transfer;

pub use harness::{
    local_server, run_scenario, Phases, RepFailure, Repetition, Summary, Target, TimingReport,
};
pub use report::{format_gb, format_report, format_reports, format_transfer, parse_csv, Format};
pub use scenario::{BatchSpec, Routine, Scenario};
pub use transfer::{
    predicted_frames, transfer_experiment, Shape, TransferConfig, TransferReport, TransferRun,
};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("report: {0}")]
    Report(String),
    #[error(transparent)]
    Bridge(#[from] alembic::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
