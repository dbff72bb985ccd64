//! Clip-window state refinement: the window, the state-space scan, the
//! bidirectional blocks, the pose head and the training loss.

mod refine;
mod ssm;
mod window;

pub use refine::{
    init_loss_weights, pose_loss, reverse_rows, weighted_sum, BiBlock, LossTerms, PoolState,
    PoseHead, PoseOutput, LOSS_W_Q, LOSS_W_T,
};
pub use ssm::{Ssm, SsmValues, MAX_SPECTRAL_RADIUS};
pub use window::StateWindow;
