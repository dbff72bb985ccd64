//! Hierarchical context-aware association between two completed clouds.
//!
//! Each source point is matched to its `k` nearest target points. The
//! normalized differences feed a per-pair embedding that blends a
//! feature-similarity branch and a displacement branch through a learnable
//! `β`. The per-pair terms are then arranged along the x, y and z axes,
//! balanced by a gated state-space scan and aggregated with inverse-distance
//! weights. A fine scale uses every point, a coarse scale `w` sampled points.

mod branch;

pub use branch::{
    axis_sort, normalize_diffs, Balance, MatchBranch, MatchGroups, PairTerms, Similarity,
    DISTANCE_FLOOR, NORM_EPS,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::nn::Activation;
use crate::diff::{Graph, ParamStore, Value};
use crate::error::{Error, Result};
use crate::par::ExecMode;
use crate::pointops::{fps, CloudVar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CamConfig {
    pub channels: usize,
    pub k_fine: usize,
    pub k_coarse: usize,
    /// Points sampled per cloud for the coarse scale.
    pub w: usize,
    /// Multiplier applied to coordinates before they enter an MLP.
    pub coord_scale: f64,
    pub similarity: Similarity,
    pub activation: Activation,
    pub dense_ssm: bool,
}

impl Default for CamConfig {
    fn default() -> Self {
        CamConfig {
            channels: 64,
            k_fine: 8,
            k_coarse: 8,
            w: 64,
            coord_scale: 0.1,
            similarity: Similarity::Channel,
            activation: Activation::Relu,
            dense_ssm: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Cam {
    pub cfg: CamConfig,
    pub fine: MatchBranch,
    pub coarse: MatchBranch,
}

impl Cam {
    pub fn init<R: Rng>(store: &mut ParamStore, rng: &mut R, path: &str, cfg: &CamConfig) -> Result<Self> {
        if cfg.w == 0 || cfg.k_fine == 0 || cfg.k_coarse == 0 {
            return Err(Error::Config("cam sizes must be positive".into()));
        }
        Ok(Cam {
            cfg: cfg.clone(),
            fine: MatchBranch::init(store, rng, &format!("{path}.fine"), cfg, cfg.k_fine)?,
            coarse: MatchBranch::init(store, rng, &format!("{path}.coarse"), cfg, cfg.k_coarse)?,
        })
    }

    /// Correlation features `G`: one row per point of `q1` followed by one
    /// row per coarse sample.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        q1: &CloudVar,
        q2: &CloudVar,
        mode: ExecMode,
    ) -> Result<Value> {
        if self.cfg.w > q1.len() || self.cfg.w > q2.len() {
            return Err(Error::invalid(format!(
                "coarse sample count {} exceeds cloud sizes {} / {}",
                self.cfg.w,
                q1.len(),
                q2.len()
            )));
        }
        let fine = self.fine.forward(g, store, q1, q2, mode)?;
        let r1 = q1.select(g, &fps(&q1.xyz, self.cfg.w)?)?;
        let r2 = q2.select(g, &fps(&q2.xyz, self.cfg.w)?)?;
        let coarse = self.coarse.forward(g, store, &r1, &r2, mode)?;
        g.concat_rows(&[fine, coarse])
    }
}
