//! Generic sparse nonlinear programming: problem representation, an
//! interior-point solver and KKT diagnostics.

mod kkt;
pub mod ipm;
pub mod problem;
mod skyline;

pub use ipm::{IpmOptions, IpmResult, IpmStatus, IterationRecord, Multipliers};
pub use problem::{BlockFunction, ConstraintBlock, ConstraintClass, NlpProblem, QuadraticTerm, SparsityPattern};
