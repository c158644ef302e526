//! Online tuning of (worker count, batch size): a Gaussian process with an
//! RBF plus white-noise kernel models throughput over the configuration grid
//! and Expected Improvement picks the next configuration to measure.

mod acquisition;
mod gp;
mod space;
mod tune;

pub use acquisition::{expected_improvement, next_config, XI};
pub use gp::{fit, fit_or_constant, fit_with_hyper, hyper_grid, log_marginal_likelihood, GprModel, Hyper};
pub use space::{Config, Observation, SearchSpace};
pub use tune::{tune_loop, Measurer, SyntheticSurface, TraceRow, TuneOptions, TuneResult};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TunerError {
    #[error("degenerate training data: {0}")]
    DegenerateData(String),
    #[error("service unreachable: {0}")]
    ServiceUnreachable(String),
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
}
