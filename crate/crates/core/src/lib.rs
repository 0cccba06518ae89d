//! Exact and simulated analysis of a two-class processor-sharing cell in
//! which class-2 users are mobile and leave at a per-user rate.

pub mod ctmc;
pub mod fixed_point;
pub mod htlab;
pub mod models;
pub mod report;
pub mod simulate;
pub mod stats;

pub use ctmc::{CtmcError, LatticeState, RateModel, TruncatedDistribution, TruncationBox, TruncationOptions};
pub use fixed_point::{FixedPointError, FixedPointOptions, FixedPointSolution};
pub use htlab::{HtError, HtOptions, LambdaSweepRow, RhoSweepRow, RowStatus, ThetaZeroRow};
pub use models::{ConstrainedParams, CouplingParams, FreeParams, ModelError, Stability};
pub use simulate::{SimConfig, SimError};
pub use stats::Estimate;
