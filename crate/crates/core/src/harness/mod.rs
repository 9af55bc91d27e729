//! Scenario loading, the closed-loop simulator and result export.

pub mod record;
pub mod scenario;
pub mod sim;

pub use record::{export, ExportError, ExportFormat, RunRecord, StepSample};
pub use scenario::{apply_overrides, load_scenario, preset, Scenario, ScenarioConfig, ScenarioError, PRESETS};
pub use sim::{run, run_with, SimError};
