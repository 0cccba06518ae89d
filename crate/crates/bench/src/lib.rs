//! Criterion benchmarks for the exact solvers and the simulators live in
//! `benches/`. This crate exposes the parameter sets they share.

use mobps_core::{CouplingParams, FreeParams};

/// Moderately loaded free model with mobile class 2.
pub fn free_params() -> FreeParams {
    FreeParams::new(0.5, 3.0, 0.0, 1.0, 1.0).expect("stable parameters")
}

pub fn coupling_params() -> CouplingParams {
    CouplingParams::new(free_params(), 0.1).expect("valid coupling")
}
