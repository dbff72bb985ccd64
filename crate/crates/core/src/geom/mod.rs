//! Rigid-body algebra, trajectories and the segment error metric.

mod pose;
mod rpe;
mod trajectory;

pub use pose::{
    cross, dist2_3, dist3, dot3, norm3, quat_normalize, relative_pose, sub3, Pose, Quat, Vec3,
};
pub use rpe::{rpe_rmse, LengthError, RpeResult, STANDARD_LENGTHS};
pub use trajectory::Trajectory;
