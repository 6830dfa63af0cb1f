//! pillarlab: a self-contained laboratory for teacher -> student
//! pseudo-label training of pillar-based LiDAR object detectors on
//! deterministic synthetic scenes.

mod codec;
pub mod distill;
pub mod error;
pub mod geom;
pub mod metrics;
pub mod net;
pub mod orchestrator;
pub mod pillars;
pub mod seed;
pub mod store;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
