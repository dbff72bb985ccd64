//! 4D radar odometry with local point completion, context-aware
//! inter-frame association and clip-window state-space pose refinement.
//!
//! Module map:
//!
//! * [`diff`]: reverse-mode differentiation engine hosting every learnable block
//! * [`geom`]: quaternion / SE(3) algebra, trajectories and segment error metrics
//! * [`pointops`]: FPS, ball query, kNN and the set-abstraction backbone
//! * [`lcm`]: offset-based local completion
//! * [`cam`]: hierarchical context-aware association
//! * [`com`]: clip window, state-space scan, bi-directional blocks, pose head and loss
//! * [`dataio`]: frame files, filtering, augmentation and the synthetic scene generator
//! * [`harness`]: model wiring, training, inference, ICP baseline, evaluation and plots

pub mod cam;
pub mod com;
pub mod dataio;
pub mod diff;
pub mod error;
pub mod geom;
pub mod harness;
pub mod lcm;
pub mod par;
pub mod pointops;

pub use error::{Error, Result};
