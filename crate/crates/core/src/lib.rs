//! Weighted sum-rate maximization for downlink hybrid RSMA-NOMA, with pure
//! NOMA and pure RSMA baselines, solved by successive convex approximation.
//!
//! The numerical core is generic over [`Scalar`] (`f32`/`f64`); the aliases
//! at the crate root fix the scalar to `f64`, which is what the experiment
//! harness and CLI use.

pub mod driver;
pub mod error;
pub mod experiment;
mod linalg;
pub mod oracle;
pub mod program;
pub mod rate;
pub mod scalar;
pub mod scenario;
pub mod solver;
pub mod transform;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use scenario::{Mode, ScenarioConfig};

pub type ChannelRealization = scenario::ChannelRealization<f64>;
pub type Allocation = rate::Allocation<f64>;
pub type RateBreakdown = rate::RateBreakdown<f64>;
pub type ConvexProgram = program::ConvexProgram<f64>;
pub type SolverOutcome = solver::SolverOutcome<f64>;
pub type SubproblemSpec = transform::SubproblemSpec<f64>;
pub type SolveReport = driver::SolveReport<f64>;

pub type ChannelRealization32 = scenario::ChannelRealization<f32>;
pub type Allocation32 = rate::Allocation<f32>;
pub type ConvexProgram32 = program::ConvexProgram<f32>;
