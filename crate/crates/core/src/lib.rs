//! Jacobian inverse-dynamics laboratory.
//!
//! A planar N-joint "finger" is simulated and rendered; dense image-space
//! Jacobian fields are learned from self-play transitions with a joint
//! forward/inverse loss; actions are recovered from optical flow by
//! ridge-regularized least squares; and the whole stack runs inside a
//! receding-horizon visual controller.

pub mod config;
pub mod control;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod field;
pub mod flow;
pub mod inversion;
pub mod kinematics;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod plot;
pub mod render;

pub use error::{Error, Result};
