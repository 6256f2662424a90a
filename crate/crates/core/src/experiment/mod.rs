//! Configured runs, cross-seed aggregation and plots.

pub mod aggregate;
pub mod config;
pub mod plot;
pub mod runner;

pub use aggregate::{aggregate, load_records, render, Stat, Summary, SummaryRow};
pub use config::{preset, EncoderKind, Preset, RunConfig, PRESETS};
pub use plot::plot_anytime;
pub use runner::{load_dataset, run, run_seed, RunOptions, RunRecord, RunReport, SeedOutcome};
