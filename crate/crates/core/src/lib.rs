pub mod baselines;
pub mod cli;
pub mod constraints;
pub mod error;
pub mod io;
pub mod nlp;
pub mod solver;
pub mod tracking;
pub mod transcription;
pub mod vehicle;

pub use error::{Error, Result};

/// Version tag written into every exported file.
pub const SCHEMA_VERSION: &str = "1";

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/vehicle-models.md")]
    mod vehicle_models {}
    #[doc = include_str!("../../../book/src/progress-variables.md")]
    mod progress_variables {}
    #[doc = include_str!("../../../book/src/solving.md")]
    mod solving {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/tracking.md")]
    mod tracking {}
    #[doc = include_str!("../../../book/src/files-and-cli.md")]
    mod files_and_cli {}
}
