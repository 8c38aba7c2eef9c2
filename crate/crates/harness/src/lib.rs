//! Scenario registry, configuration files, metric-table caching, study
//! orchestration and report emission for `fcalc-core`.

pub mod cache;
pub mod config;
pub mod report;
pub mod scenario;
pub mod studies;

pub use report::{combined_exit_code, Check, Report};
pub use scenario::{builtin, resolve, Scenario, BUILTIN_NAMES};
pub use studies::{run_and_write, run_study, Context, Study};
