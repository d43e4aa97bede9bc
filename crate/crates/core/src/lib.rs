//! Numerical laboratory for differential Harnack inequalities of a nonlinear heat equation
//! coupled to geometric flows of metrics on flat tori.

pub mod error;
pub mod flows;
pub mod geometry;
pub mod grid;
pub mod harnack;
pub mod heat;
pub mod runner;
pub mod scenario;
pub mod timefn;
pub mod verify;

pub use error::{Error, Result};
pub use flows::{run_flow, FlowSpec, FlowTrajectory, MetricState, Variant};
pub use grid::{PeriodicGrid, ScalarField, SymTensorField, Variance, VectorField};
pub use harnack::{check_theorem, CheckTolerances, HarnackReport, TheoremId, Verdict};
pub use heat::{solve_backward_heat, HeatParams, HeatSolution, TerminalProfile};
pub use runner::{run, RunConfig, RunOptions, Stage};
pub use scenario::Scenario;
pub use timefn::TimeFn;
