use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dataio::Frame;
use crate::error::{Error, Result};
use crate::geom::{dist2_3, Pose, Quat, Trajectory, Vec3};
use crate::par::{self, ExecMode};
use crate::pointops::knn;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Stop once an iteration moves the estimate by less than this
    /// (meters plus radians).
    pub tolerance: f64,
    /// Nearest neighbors farther than this are not used, meters.
    pub max_correspondence: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        IcpConfig {
            max_iterations: 30,
            tolerance: 1e-6,
            max_correspondence: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IcpResult {
    /// Maps `source` points into the `target` frame.
    pub pose: Pose,
    pub iterations: usize,
    pub converged: bool,
    /// Fewer than three correspondences; `pose` is the identity.
    pub degenerate: bool,
    /// RMS correspondence distance at the final estimate, meters.
    pub rmse: f64,
}

/// Least-squares rigid transform taking `a[i]` onto `b[i]`.
pub fn kabsch(a: &[Vec3], b: &[Vec3]) -> Result<Pose> {
    if a.len() != b.len() || a.len() < 3 {
        return Err(Error::invalid(format!(
            "alignment needs at least 3 matched pairs, got {} / {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let centroid = |p: &[Vec3]| {
        p.iter()
            .fold(Vector3::zeros(), |acc: Vector3<f64>, x| acc + Vector3::from(*x))
            / n
    };
    let ca = centroid(a);
    let cb = centroid(b);
    let mut h = Matrix3::zeros();
    for (x, y) in a.iter().zip(b) {
        h += (Vector3::from(*x) - ca) * (Vector3::from(*y) - cb).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let t = cb - r * ca;
    let m = [
        [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
        [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
        [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
    ];
    Pose::new(Quat::from_matrix(&m)?, [t[0], t[1], t[2]])
}

/// Point-to-point ICP from `init`.
pub fn icp_pair(source: &[Vec3], target: &[Vec3], init: Pose, cfg: &IcpConfig) -> IcpResult {
    let max_d2 = cfg.max_correspondence * cfg.max_correspondence;
    let degenerate = IcpResult {
        pose: Pose::IDENTITY,
        iterations: 0,
        converged: false,
        degenerate: true,
        rmse: f64::NAN,
    };
    if source.len() < 3 || target.is_empty() {
        return degenerate;
    }
    let matches = |pose: &Pose| -> (Vec<Vec3>, Vec<Vec3>, f64) {
        let moved: Vec<Vec3> = source.iter().map(|&p| pose.apply(p)).collect();
        let nn = knn(&moved, target, 1, ExecMode::Sequential).expect("non-empty target");
        let (mut a, mut b, mut sq) = (Vec::new(), Vec::new(), 0.0);
        for (i, &j) in nn.iter().enumerate() {
            let d2 = dist2_3(moved[i], target[j]);
            if d2 <= max_d2 {
                a.push(source[i]);
                b.push(target[j]);
                sq += d2;
            }
        }
        let rmse = if a.is_empty() { f64::NAN } else { (sq / a.len() as f64).sqrt() };
        (a, b, rmse)
    };
    let mut pose = init;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iterations {
        let (a, b, _) = matches(&pose);
        let Ok(next) = kabsch(&a, &b) else {
            return IcpResult {
                iterations,
                ..degenerate
            };
        };
        iterations += 1;
        let delta = pose.relative_to(&next);
        pose = next;
        if delta.translation_norm() + delta.rotation_angle() < cfg.tolerance {
            converged = true;
            break;
        }
    }
    let (_, _, rmse) = matches(&pose);
    IcpResult {
        pose,
        iterations,
        converged,
        degenerate: false,
        rmse,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IcpTrajectory {
    pub trajectory: Trajectory,
    /// One entry per pair; `true` where identity motion was substituted.
    pub flags: Vec<bool>,
}

fn coords(f: &Frame) -> Vec<Vec3> {
    f.points.iter().map(|p| [p.x, p.y, p.z]).collect()
}

/// Frame-to-frame ICP odometry; each pair starts from the previous motion.
pub fn icp_baseline(frames: &[Frame], cfg: &IcpConfig) -> Result<IcpTrajectory> {
    if frames.len() < 2 {
        return Err(Error::invalid("ICP baseline needs at least two frames"));
    }
    let clouds: Vec<Vec<Vec3>> = frames.iter().map(coords).collect();
    let mut rel = Vec::with_capacity(frames.len() - 1);
    let mut flags = Vec::with_capacity(frames.len() - 1);
    let mut guess = Pose::IDENTITY;
    for w in clouds.windows(2) {
        let r = icp_pair(&w[1], &w[0], guess, cfg);
        if r.degenerate {
            log::warn!("ICP: degenerate correspondence set, identity substituted");
        } else {
            guess = r.pose;
        }
        flags.push(r.degenerate);
        rel.push(r.pose);
    }
    let mut trajectory = Trajectory::from_relative(Pose::IDENTITY, &rel);
    trajectory.frame_ids = frames.iter().map(|f| f.id).collect();
    Ok(IcpTrajectory { trajectory, flags })
}

/// [`icp_baseline`] over several sequences.
pub fn icp_many(seqs: &[&[Frame]], cfg: &IcpConfig, mode: ExecMode) -> Result<Vec<IcpTrajectory>> {
    par::map_slice(mode, seqs, |f| icp_baseline(f, cfg))
        .into_iter()
        .collect()
}
