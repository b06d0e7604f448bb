//! Sweep orchestration, configuration, file formats, and reports.

pub mod config;
pub mod correlate;
pub mod io;
pub mod report;
pub mod sweep;

pub use config::{Branch, DataSource, InitSource, PrivacyTarget, SweepConfig};
pub use report::{read_report, write_report, DiagnosticProfile, DiagnosticRecord, RecordOutcome};
pub use sweep::{pretrain, run_sweep};
