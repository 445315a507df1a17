//! Multi-fish tracking on binary foreground masks with per-target particle
//! filters, a hybrid distance/turn motion model, an ellipse appearance model
//! and joint linking of targets whose blobs merge and split.

pub mod appearance;
pub mod cli;
pub mod config;
pub mod detection;
pub mod error;
pub mod eval;
pub mod filter;
pub mod frames;
pub mod linking;
pub mod mask;
pub mod motion;
pub mod records;
pub mod simulator;
pub mod stats;
pub mod tracker;
pub mod types;

pub use error::{Error, Result};
pub use filter::{FilterConfig, ParticleFilter, StepParams, StepReport};
pub use mask::FrameMask;
pub use motion::{MotionModel, MotionParams};
pub use types::{DistanceState, Ellipse, Observation, Particle, TargetState};
