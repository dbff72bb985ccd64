use serde::{Deserialize, Serialize};

use super::pose::relative_pose;
use super::trajectory::Trajectory;
use crate::error::{Error, Result};

/// Segment lengths used by the standard odometry benchmark, meters.
pub const STANDARD_LENGTHS: [f64; 8] = [20.0, 40.0, 60.0, 80.0, 100.0, 120.0, 140.0, 160.0];

/// RMSE of segment errors for one segment length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthError {
    pub length: f64,
    /// m/m
    pub t_rel: f64,
    /// deg/m
    pub r_rel: f64,
    pub segments: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RpeResult {
    /// Mean over evaluable lengths of the per-length translational RMSE, m/m.
    pub t_rel: f64,
    /// Mean over evaluable lengths of the per-length rotational RMSE, deg/m.
    pub r_rel: f64,
    pub per_length: Vec<LengthError>,
}

/// Segment-based relative pose error.
///
/// Every frame is a segment start. The segment end is the first frame whose
/// cumulative ground-truth distance reaches `start + length`. Errors are
/// normalized by the ground-truth distance actually covered by the segment
/// (at least `length`). The rotation error angle is `2 atan2(|v|, |w|)` of
/// the error quaternion, in degrees.
pub fn rpe_rmse(gt: &Trajectory, pred: &Trajectory, lengths: &[f64]) -> Result<RpeResult> {
    if gt.len() != pred.len() {
        return Err(Error::invalid(format!(
            "frame count mismatch: gt {} vs pred {}",
            gt.len(),
            pred.len()
        )));
    }
    let dist = &gt.cumulative_length;
    let mut per_length = Vec::new();
    for &len in lengths {
        let mut t_sq = 0.0;
        let mut r_sq = 0.0;
        let mut n = 0usize;
        let mut end = 0usize;
        for start in 0..gt.len() {
            let target = dist[start] + len;
            // `dist` is non-decreasing, so the end index only moves forward.
            end = end.max(start + 1);
            while end < gt.len() && dist[end] < target {
                end += 1;
            }
            if end >= gt.len() {
                break;
            }
            let covered = dist[end] - dist[start];
            let dg = relative_pose(&gt.poses[start], &gt.poses[end]);
            let dp = relative_pose(&pred.poses[start], &pred.poses[end]);
            let e = relative_pose(&dg, &dp);
            let te = e.translation_norm() / covered;
            let re = e.rotation_angle().to_degrees() / covered;
            t_sq += te * te;
            r_sq += re * re;
            n += 1;
        }
        if n > 0 {
            per_length.push(LengthError {
                length: len,
                t_rel: (t_sq / n as f64).sqrt(),
                r_rel: (r_sq / n as f64).sqrt(),
                segments: n,
            });
        }
    }
    if per_length.is_empty() {
        return Err(Error::NoEvaluableSegments);
    }
    let k = per_length.len() as f64;
    Ok(RpeResult {
        t_rel: per_length.iter().map(|l| l.t_rel).sum::<f64>() / k,
        r_rel: per_length.iter().map(|l| l.r_rel).sum::<f64>() / k,
        per_length,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Pose, Quat};

    fn line(n: usize, step: f64) -> Trajectory {
        Trajectory::from_poses((0..n).map(|i| Pose::planar(i as f64 * step, 0.0, 0.0)).collect())
    }

    #[test]
    fn identical_trajectories_have_zero_error() {
        let rel = vec![Pose::planar(1.0, 0.05, 0.02); 200];
        let gt = Trajectory::from_relative(Pose::IDENTITY, &rel);
        let r = rpe_rmse(&gt, &gt, &STANDARD_LENGTHS).unwrap();
        assert_eq!((r.t_rel, r.r_rel), (0.0, 0.0));
        assert!(!r.per_length.is_empty());
    }

    #[test]
    fn scaled_straight_line() {
        // Poses at 0, 50, 100 m; prediction stretched by 1%.
        let gt = line(3, 50.0);
        let pred = Trajectory::from_poses(
            gt.poses
                .iter()
                .map(|p| Pose::from_translation([p.t[0] * 1.01, 0.0, 0.0]))
                .collect(),
        );
        let r = rpe_rmse(&gt, &pred, &[20.0]).unwrap();
        assert!((r.t_rel - 0.01).abs() < 1e-12, "{}", r.t_rel);
        assert_eq!(r.r_rel, 0.0);
        assert_eq!(r.per_length[0].segments, 2);
    }

    #[test]
    fn too_short_is_an_error() {
        let gt = line(5, 1.0);
        assert!(matches!(
            rpe_rmse(&gt, &gt, &[20.0]),
            Err(Error::NoEvaluableSegments)
        ));
    }

    #[test]
    fn endpoint_is_first_frame_reaching_length() {
        // Steps of 0.7 m: the 20 m segment from frame 0 ends at frame 29 (20.3 m).
        let gt = line(40, 0.7);
        let mut pred = gt.clone();
        pred.poses[29].t[1] += 0.203;
        let r = rpe_rmse(&gt, &pred, &[20.0]).unwrap();
        // Segment 0 -> 29 sees 0.203 m lateral error over 20.3 m. Other segments
        // touching frame 29 as an end: none except start 0.
        let per = &r.per_length[0];
        assert_eq!(per.segments, 40 - 29);
        let expected = ((0.01f64).powi(2) / per.segments as f64).sqrt();
        assert!((per.t_rel - expected).abs() < 1e-9, "{} vs {expected}", per.t_rel);
    }

    #[test]
    fn rotation_error_uses_axis_angle() {
        let gt = line(3, 50.0);
        let mut pred = gt.clone();
        for p in pred.poses.iter_mut().skip(1) {
            p.q = Quat::from_yaw(1f64.to_radians());
        }
        let r = rpe_rmse(&gt, &pred, &[20.0]).unwrap();
        // Segment 0->1 has 1 degree over 50 m; segment 1->2 has none.
        let expected = ((1.0f64 / 50.0).powi(2) / 2.0).sqrt();
        assert!((r.r_rel - expected).abs() < 1e-12);
    }
}
