use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pose::{dist3, Pose};
use crate::error::{Error, Result};

/// Ordered chain of absolute poses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
    pub frame_ids: Vec<u64>,
    /// Distance travelled up to each index, meters.
    pub cumulative_length: Vec<f64>,
}

impl Trajectory {
    /// Wraps absolute poses, numbering frames `0..n`.
    pub fn from_poses(poses: Vec<Pose>) -> Self {
        let ids = (0..poses.len() as u64).collect();
        Self::with_ids(poses, ids)
    }

    pub fn with_ids(poses: Vec<Pose>, frame_ids: Vec<u64>) -> Self {
        let mut cumulative_length = Vec::with_capacity(poses.len());
        let mut acc = 0.0;
        for (i, p) in poses.iter().enumerate() {
            if i > 0 {
                acc += dist3(poses[i - 1].t, p.t);
            }
            cumulative_length.push(acc);
        }
        Trajectory {
            poses,
            frame_ids,
            cumulative_length,
        }
    }

    /// Chains relative motions starting at `start`.
    pub fn from_relative(start: Pose, rel: &[Pose]) -> Self {
        let mut poses = Vec::with_capacity(rel.len() + 1);
        poses.push(start);
        for r in rel {
            let last = *poses.last().expect("non-empty");
            poses.push(last.compose(r));
        }
        Self::from_poses(poses)
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        self.cumulative_length.last().copied().unwrap_or(0.0)
    }

    /// Motion from each frame to the next.
    pub fn relative_poses(&self) -> Vec<Pose> {
        self.poses
            .windows(2)
            .map(|w| w[0].relative_to(&w[1]))
            .collect()
    }

    /// Applies `t` on the left of every pose.
    pub fn transformed(&self, t: &Pose) -> Self {
        Trajectory::with_ids(
            self.poses.iter().map(|p| t.compose(p)).collect(),
            self.frame_ids.clone(),
        )
    }

    /// Writes KITTI odometry pose lines (row-major 3x4, space-separated).
    pub fn write_kitti<W: Write>(&self, mut w: W) -> Result<()> {
        for p in &self.poses {
            let m = p.to_matrix34();
            let line: Vec<String> = m.iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn read_kitti<R: BufRead>(r: R, path: &Path) -> Result<Self> {
        let mut poses = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    path: path.to_owned(),
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            let m: [f64; 12] = vals.try_into().map_err(|v: Vec<f64>| Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                msg: format!("expected 12 values, got {}", v.len()),
            })?;
            let p = Pose::from_matrix34(&m).map_err(|e| Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            poses.push(p);
        }
        Ok(Trajectory::from_poses(poses))
    }

    pub fn save_kitti(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_kitti(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_kitti(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_kitti(std::io::BufReader::new(f), path)
    }
}
