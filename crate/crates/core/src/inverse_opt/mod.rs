//! Budgeted minimization of predicted risk over the directly changeable
//! features.

pub mod cost;
pub mod project;

pub use cost::{cost_value, BudgetSpec, Bounds, CostModel};
pub use project::project;
pub mod optimize;
pub use optimize::{
    optimize, optimize_from, sweep_budget, CompositeObjective, FeatureChange, Recommendation,
    SolverOptions, TrajectoryPoint,
};
