//! Scenario description, metrics, CSV output and the built-in experiment
//! suite.

pub mod metrics;
pub mod output;
pub mod scenario;
pub mod suite;

pub use metrics::{format_ratio, ratio, TenantMetrics, WindowSample};
pub use scenario::{EngineOptions, Scenario};
pub use suite::{builtin, scenario_suite, Builtin, Cell};
