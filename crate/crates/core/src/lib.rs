//! Deterministic discrete-event simulator and traffic shaper for multi-tenant
//! accelerator I/O over a PCIe-like host link.

pub mod engine;
pub mod error;
pub mod fabric;
pub mod harness;
pub mod model;
pub mod ring;
pub mod shaper;
pub mod sim;
pub mod time;

pub use error::{Error, Result};
pub use harness::{Scenario, TenantMetrics};
pub use model::*;
pub use sim::{run, run_with, CompletionRecord, Conservation, RunOptions, RunOutput, RunSummary};
pub use time::{BitRate, SimTime};
