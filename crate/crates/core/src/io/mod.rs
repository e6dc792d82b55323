//! Files in and out: datasets, CSV reports, SVG plots and experiment configs.

pub mod config;
pub mod csv;
pub mod dataset;
pub mod runner;
pub mod svg;

pub use config::ExperimentConfig;
pub use csv::CsvReport;
pub use dataset::{load_dataset, save_dataset, DatasetFormat};

/// 17 significant digits, enough to round-trip any f64 exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}
