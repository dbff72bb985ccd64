use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::frame::Frame;
use crate::error::{Error, Result};
use crate::geom::{Pose, Quat, Trajectory};

pub const DEFAULT_FOV_HALF_ANGLE_DEG: f64 = 32.0;
pub const DEFAULT_HEIGHT_BOUNDS: (f64, f64) = (-3.0, 3.0);

/// Ordered frames of one drive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    pub name: String,
    pub frames: Vec<Frame>,
}

impl Sequence {
    pub fn has_gt(&self) -> bool {
        !self.frames.is_empty() && self.frames.iter().all(|f| f.gt_pose.is_some())
    }

    pub fn gt_trajectory(&self) -> Result<Trajectory> {
        let poses = self
            .frames
            .iter()
            .map(|f| {
                f.gt_pose
                    .ok_or_else(|| Error::invalid(format!("frame {} has no ground truth", f.id)))
            })
            .collect::<Result<Vec<_>>>()?;
        let ids = self.frames.iter().map(|f| f.id).collect();
        Ok(Trajectory::with_ids(poses, ids))
    }

    /// Ground-truth motion from each frame to the next.
    pub fn gt_relative(&self) -> Result<Vec<Pose>> {
        Ok(self.gt_trajectory()?.relative_poses())
    }
}

/// On-disk description of a sequence (TOML).
///
/// ```toml
/// sequence = "00"
/// frames = ["frames/000000.csv", "frames/000001.csv"]
/// poses = "poses.txt"        # empty or absent: no ground truth
/// fov_half_angle_deg = 32.0
/// height_min = -3.0
/// height_max = 3.0
/// ```
///
/// Relative paths resolve against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub sequence: String,
    pub frames: Vec<PathBuf>,
    #[serde(default)]
    pub poses: Option<PathBuf>,
    #[serde(default = "default_fov")]
    pub fov_half_angle_deg: f64,
    #[serde(default = "default_hmin")]
    pub height_min: f64,
    #[serde(default = "default_hmax")]
    pub height_max: f64,
}

fn default_fov() -> f64 {
    DEFAULT_FOV_HALF_ANGLE_DEG
}
fn default_hmin() -> f64 {
    DEFAULT_HEIGHT_BOUNDS.0
}
fn default_hmax() -> f64 {
    DEFAULT_HEIGHT_BOUNDS.1
}

impl SequenceManifest {
    pub fn read(path: &Path) -> Result<Self> {
        crate::error::read_toml(path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn height_bounds(&self) -> (f64, f64) {
        (self.height_min, self.height_max)
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_owned()
    } else {
        base.join(p)
    }
}

/// Loads every frame listed in a manifest, attaching poses when present.
pub fn load_sequence(manifest_path: &Path) -> Result<Sequence> {
    let m = SequenceManifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut frames = m
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| Frame::load(i as u64, &resolve(base, f)))
        .collect::<Result<Vec<_>>>()?;
    if let Some(p) = m.poses.as_ref().filter(|p| !p.as_os_str().is_empty()) {
        let p = resolve(base, p);
        let traj = Trajectory::load_kitti(&p)?;
        if traj.len() != frames.len() {
            return Err(Error::invalid(format!(
                "{}: {} poses for {} frames",
                p.display(),
                traj.len(),
                frames.len()
            )));
        }
        for (f, pose) in frames.iter_mut().zip(traj.poses) {
            f.gt_pose = Some(pose);
        }
    }
    frames.sort_by_key(|f| f.id);
    Ok(Sequence {
        name: m.sequence,
        frames,
    })
}

/// Writes frames (CSV or binary by `ext`), poses and a manifest into `dir`.
pub fn write_sequence(seq: &Sequence, dir: &Path, ext: &str) -> Result<PathBuf> {
    let fdir = dir.join("frames");
    std::fs::create_dir_all(&fdir)?;
    let mut names = Vec::with_capacity(seq.frames.len());
    for f in &seq.frames {
        let rel = PathBuf::from("frames").join(format!("{:06}.{ext}", f.id));
        f.save(&dir.join(&rel))?;
        names.push(rel);
    }
    let poses = if seq.has_gt() {
        let p = PathBuf::from("poses.txt");
        seq.gt_trajectory()?.save_kitti(&dir.join(&p))?;
        Some(p)
    } else {
        None
    };
    let m = SequenceManifest {
        sequence: seq.name.clone(),
        frames: names,
        poses,
        fov_half_angle_deg: DEFAULT_FOV_HALF_ANGLE_DEG,
        height_min: DEFAULT_HEIGHT_BOUNDS.0,
        height_max: DEFAULT_HEIGHT_BOUNDS.1,
    };
    let path = dir.join("manifest.toml");
    m.write(&path)?;
    Ok(path)
}

/// Keeps points with `z` inside the closed height bounds and azimuth
/// `|atan2(y, x)|` within the half field of view.
pub fn filter_points(frame: &Frame, fov_half_angle_deg: f64, height: (f64, f64)) -> Result<Frame> {
    if !(fov_half_angle_deg > 0.0 && fov_half_angle_deg <= 90.0) {
        return Err(Error::invalid(format!(
            "fov half-angle {fov_half_angle_deg} outside (0, 90]"
        )));
    }
    let fov = fov_half_angle_deg.to_radians();
    let points: Vec<_> = frame
        .points
        .iter()
        .filter(|p| p.z >= height.0 && p.z <= height.1 && p.y.atan2(p.x).abs() <= fov)
        .copied()
        .collect();
    if points.is_empty() {
        return Err(Error::FrameRejected {
            id: frame.id,
            reason: "no points survive filtering".into(),
        });
    }
    Ok(Frame {
        id: frame.id,
        points,
        gt_pose: frame.gt_pose,
    })
}

/// Reverses a sequence in time.
///
/// Frames are reordered last-to-first and renumbered, absolute poses are
/// re-anchored so the new first frame sits at the identity (which inverts
/// every per-pair relative pose), and radial velocities change sign.
pub fn augment_flip(seq: &Sequence) -> Result<Sequence> {
    if !seq.has_gt() {
        return Err(Error::invalid("flip needs ground-truth poses"));
    }
    let anchor = seq.frames.last().and_then(|f| f.gt_pose).expect("has gt").inverse();
    let frames = seq
        .frames
        .iter()
        .rev()
        .enumerate()
        .map(|(i, f)| Frame {
            id: i as u64,
            points: f
                .points
                .iter()
                .map(|p| super::RadarPoint { rrv: -p.rrv, ..*p })
                .collect(),
            gt_pose: f.gt_pose.map(|p| anchor.compose(&p)),
        })
        .collect();
    Ok(Sequence {
        name: format!("{}-flip", seq.name),
        frames,
    })
}

/// Standard deviations used by [`augment_jitter`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JitterConfig {
    /// Per-axis point offset, meters.
    pub point_sigma: f64,
    /// Per-axis pose translation offset, meters.
    pub pose_sigma_m: f64,
    /// Per-axis pose rotation offset, degrees.
    pub pose_sigma_deg: f64,
}

impl Default for JitterConfig {
    fn default() -> Self {
        JitterConfig {
            point_sigma: 0.02,
            pose_sigma_m: 0.02,
            pose_sigma_deg: 0.2,
        }
    }
}

/// Random rigid transform with per-axis Gaussian translation and rotation vector.
pub fn random_rigid<R: Rng>(rng: &mut R, sigma_m: f64, sigma_deg: f64) -> Pose {
    let nt = Normal::new(0.0, sigma_m.max(0.0)).expect("sigma >= 0");
    let nr = Normal::new(0.0, sigma_deg.max(0.0).to_radians()).expect("sigma >= 0");
    let t = [nt.sample(rng), nt.sample(rng), nt.sample(rng)];
    let w = [nr.sample(rng), nr.sample(rng), nr.sample(rng)];
    let angle = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    Pose {
        q: Quat::from_axis_angle(w, angle),
        t,
    }
}

/// Gaussian point offsets plus a consistent random perturbation of the
/// sensor pose.
///
/// The ground-truth pose becomes `gt * delta` and the points are re-expressed
/// in the perturbed sensor frame (`delta^-1 * p`), so data and label stay in
/// agreement. Radial velocities are frame-independent and untouched.
pub fn augment_jitter<R: Rng>(
    frame: &Frame,
    gt: &Pose,
    cfg: &JitterConfig,
    rng: &mut R,
) -> (Frame, Pose) {
    if cfg.point_sigma == 0.0 && cfg.pose_sigma_m == 0.0 && cfg.pose_sigma_deg == 0.0 {
        return (frame.clone(), *gt);
    }
    let delta = random_rigid(rng, cfg.pose_sigma_m, cfg.pose_sigma_deg);
    let inv = delta.inverse();
    let np = Normal::new(0.0, cfg.point_sigma.max(0.0)).expect("sigma >= 0");
    let points = frame
        .points
        .iter()
        .map(|p| {
            let q = inv.apply([
                p.x + np.sample(rng),
                p.y + np.sample(rng),
                p.z + np.sample(rng),
            ]);
            super::RadarPoint {
                x: q[0],
                y: q[1],
                z: q[2],
                ..*p
            }
        })
        .collect();
    (
        Frame {
            id: frame.id,
            points,
            gt_pose: frame.gt_pose.map(|g| g.compose(&delta)),
        },
        gt.compose(&delta),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::RadarPoint;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pt(x: f64, y: f64, z: f64) -> RadarPoint {
        RadarPoint {
            x,
            y,
            z,
            rcs: 0.0,
            rrv: 1.0,
        }
    }

    #[test]
    fn height_bound_is_closed() {
        let f = Frame::new(0, vec![pt(5.0, 0.0, 3.0), pt(5.0, 0.0, 3.01), pt(5.0, 0.0, -3.0)]);
        let out = filter_points(&f, 32.0, (-3.0, 3.0)).unwrap();
        assert_eq!(out.points.len(), 2);
        assert_eq!(out.points[0].z, 3.0);
    }

    #[test]
    fn fov_and_rejection() {
        let f = Frame::new(3, vec![pt(1.0, 1.0, 0.0), pt(-1.0, 0.0, 0.0)]);
        assert!(matches!(
            filter_points(&f, 30.0, (-3.0, 3.0)),
            Err(Error::FrameRejected { id: 3, .. })
        ));
        assert_eq!(filter_points(&f, 45.0, (-3.0, 3.0)).unwrap().len(), 1);
        assert!(filter_points(&f, 0.0, (-3.0, 3.0)).is_err());
    }

    fn two_frame_forward() -> Sequence {
        let mut a = Frame::new(0, vec![pt(10.0, 0.0, 0.0)]);
        a.gt_pose = Some(Pose::IDENTITY);
        let mut b = Frame::new(1, vec![pt(9.0, 0.0, 0.0)]);
        b.gt_pose = Some(Pose::from_translation([1.0, 0.0, 0.0]));
        Sequence {
            name: "s".into(),
            frames: vec![a, b],
        }
    }

    #[test]
    fn flip_inverts_forward_translation() {
        let s = two_frame_forward();
        let f = augment_flip(&s).unwrap();
        let rel = f.gt_relative().unwrap();
        assert!(rel[0].approx_eq(&Pose::from_translation([-1.0, 0.0, 0.0]), 1e-15));
        assert_eq!(f.frames[0].points[0].x, 9.0);
        assert_eq!(f.frames[0].points[0].rrv, -1.0);
        assert_eq!(f.frames[0].gt_pose, Some(Pose::IDENTITY));
    }

    #[test]
    fn flip_is_an_involution() {
        let s = two_frame_forward();
        let ff = augment_flip(&augment_flip(&s).unwrap()).unwrap();
        for (a, b) in ff.frames.iter().zip(&s.frames) {
            assert_eq!(a.points, b.points);
            assert!(a.gt_pose.unwrap().approx_eq(&b.gt_pose.unwrap(), 1e-15));
        }
    }

    #[test]
    fn zero_jitter_is_identity() {
        let s = two_frame_forward();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = JitterConfig {
            point_sigma: 0.0,
            pose_sigma_m: 0.0,
            pose_sigma_deg: 0.0,
        };
        let (f, g) = augment_jitter(&s.frames[1], &s.frames[1].gt_pose.unwrap(), &cfg, &mut rng);
        assert_eq!(f, s.frames[1]);
        assert_eq!(g, s.frames[1].gt_pose.unwrap());
    }

    #[test]
    fn jitter_is_seeded_and_keeps_world_points_fixed() {
        let s = two_frame_forward();
        let cfg = JitterConfig {
            point_sigma: 0.0,
            ..Default::default()
        };
        let gt = s.frames[1].gt_pose.unwrap();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            augment_jitter(&s.frames[1], &gt, &cfg, &mut rng)
        };
        assert_eq!(run(5), run(5));
        let (f, g) = run(5);
        // Without point noise the world position of every point is unchanged.
        let w0 = gt.apply(s.frames[1].points[0].xyz());
        let w1 = g.apply(f.points[0].xyz());
        for i in 0..3 {
            assert!((w0[i] - w1[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn jitter_statistics_match_targets() {
        let cfg = JitterConfig {
            point_sigma: 0.05,
            pose_sigma_m: 0.1,
            pose_sigma_deg: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let frame = Frame::new(0, vec![pt(0.0, 0.0, 0.0); 1]);
        let n = 10_000;
        let (mut tx, mut px) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let (f, g) = augment_jitter(&frame, &Pose::IDENTITY, &cfg, &mut rng);
            tx.push(g.t[0]);
            // With zero rotation the point offset is point noise minus pose offset.
            px.push(f.points[0].x + g.t[0]);
        }
        let sd = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
        };
        assert!((sd(&tx) / 0.1 - 1.0).abs() < 0.1, "{}", sd(&tx));
        assert!((sd(&px) / 0.05 - 1.0).abs() < 0.1, "{}", sd(&px));
    }

    #[test]
    fn manifest_round_trip_and_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = two_frame_forward();
        s.frames.push({
            let mut f = Frame::new(2, vec![pt(8.0, 0.5, 0.25)]);
            f.gt_pose = Some(Pose::from_translation([2.0, 0.0, 0.0]));
            f
        });
        let mpath = write_sequence(&s, dir.path(), "csv").unwrap();
        let back = load_sequence(&mpath).unwrap();
        assert_eq!(back.frames.len(), 3);
        for (a, b) in back.frames.iter().zip(&s.frames) {
            assert_eq!(a.points, b.points);
            assert!(a.gt_pose.unwrap().approx_eq(&b.gt_pose.unwrap(), 1e-12));
        }
        // Drop a pose line.
        let ppath = dir.path().join("poses.txt");
        let text = std::fs::read_to_string(&ppath).unwrap();
        let short: Vec<&str> = text.lines().take(2).collect();
        std::fs::write(&ppath, short.join("\n")).unwrap();
        assert!(load_sequence(&mpath).is_err());
        // No poses: inference mode.
        let mut m = SequenceManifest::read(&mpath).unwrap();
        m.poses = None;
        m.write(&mpath).unwrap();
        let back = load_sequence(&mpath).unwrap();
        assert!(back.frames.iter().all(|f| f.gt_pose.is_none()));
    }
}
