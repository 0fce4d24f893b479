//! Alternating optimization of weighted sum rate for near-field integrated
//! sensing and communication with movable antennas.

pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod harness;
pub mod linalg;
pub mod lp;
pub mod metrics;
pub mod positions;
pub mod subsolver;
pub mod zf;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use geometry::{GainConvention, Placement, Scenario, System, Vec3};
pub use harness::{run_preset, run_trial, ExperimentConfig, Format, Preset, PresetOutput, Profile, ResultRow, Scheme};
pub use lp::{run_lp, AlgoParams, PositionMode, RunOutcome};
pub use metrics::{LpState, TraceRecord, ZfState};
pub use zf::run_zf;
