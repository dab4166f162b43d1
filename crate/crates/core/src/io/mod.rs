//! Scenario files, solution and report files, and plot tables.

pub mod config;
pub mod export;
pub mod plot;

pub use config::{load_scenario, parse_scenario, ScenarioConfig};
pub use export::{export_solution, import_solution, SolutionSidecar};
pub use plot::{emit_plot_data, PlotKind, PlotSource};
