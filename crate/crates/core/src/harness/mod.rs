//! Experiment configuration, multi-seed runs, metrics CSVs, plots and the
//! verification suite.

mod config;
mod experiment;
mod plot;
mod suite;

pub use config::{EnvironmentConfig, ExperimentConfig};
pub use experiment::{
    area_under_curve, moving_average, read_csv, run_experiment, run_seed, run_seeds, seed_csv_path, summarize, write_csv,
    ExperimentResult, MetricsRow, SeedRun, SummaryRow,
};
pub use plot::{find_summaries, plot_dir, render_svg};
pub use suite::{gae_oracle_gap, verify_all, CheckResult, Suite, VerifyConfig, VerifyReport};

pub use crate::rnd::bonus_count_ratio as bonus_ratio_diagnostic;
