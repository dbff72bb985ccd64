//! Offset-based local completion.
//!
//! For `m` anchors picked by farthest point sampling, each anchor's ball
//! neighborhood yields a feature offset `Δf = MLP(f − maxpool F)` and a
//! geometric offset `Δx̂ = x − mean X`. A gate `α ∈ (0, 1)` computed from
//! layer-normalized projections of `Δf` and `f` scales the geometric offset,
//! and the synthetic point `{x + αΔx̂, f + Δf}` is appended to the cloud.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::nn::{Activation, LayerNorm, Mlp};
use crate::diff::{Graph, ParamStore, Value};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::par::ExecMode;
use crate::pointops::{ball_query_batch, coords_tensor, fps, CloudVar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LcmConfig {
    /// Synthetic points per frame.
    pub m: usize,
    pub radius: f64,
    pub k: usize,
    pub channels: usize,
    pub activation: Activation,
}

impl Default for LcmConfig {
    fn default() -> Self {
        LcmConfig {
            m: 64,
            radius: 3.0,
            k: 8,
            channels: 64,
            activation: Activation::Relu,
        }
    }
}

/// Anchor neighborhoods gathered on a tape.
#[derive(Clone, Debug)]
pub struct AnchorRegions {
    pub anchors: Vec<usize>,
    /// Flattened `anchors.len() * k` neighbor indices into the source cloud.
    pub neighbors: Vec<usize>,
    pub k: usize,
    /// Anchors whose ball held no point and fell back to the global nearest.
    pub fallbacks: usize,
}

/// Gate and offsets of the last completion, for inspection.
#[derive(Clone, Debug)]
pub struct CompletionTrace {
    pub regions: AnchorRegions,
    /// `[m, 1]`
    pub alpha: Value,
    /// `[m, 3]`
    pub offset_hat: Value,
    /// `[m, 3]`
    pub offset: Value,
}

#[derive(Clone, Debug)]
pub struct Lcm {
    pub cfg: LcmConfig,
    delta: Mlp,
    ln_q: LayerNorm,
    ln_k: LayerNorm,
    w_q: String,
    w_k: String,
}

/// `x − mean(X)` computed directly.
pub fn offset_hat(x: Vec3, neighbors: &[Vec3]) -> Vec3 {
    let n = neighbors.len() as f64;
    let mut m = [0.0; 3];
    for p in neighbors {
        for a in 0..3 {
            m[a] += p[a];
        }
    }
    [x[0] - m[0] / n, x[1] - m[1] / n, x[2] - m[2] / n]
}

impl Lcm {
    pub fn init<R: Rng>(store: &mut ParamStore, rng: &mut R, path: &str, cfg: &LcmConfig) -> Result<Self> {
        if cfg.k == 0 || cfg.channels == 0 || !(cfg.radius > 0.0) {
            return Err(Error::Config("lcm sizes must be positive".into()));
        }
        let c = cfg.channels;
        let delta = Mlp::init(store, rng, &format!("{path}.delta"), &[c, c, c], cfg.activation)?;
        let ln_q = LayerNorm::init(store, &format!("{path}.ln_q"), c)?;
        let ln_k = LayerNorm::init(store, &format!("{path}.ln_k"), c)?;
        let w_q = format!("{path}.w_q");
        let w_k = format!("{path}.w_k");
        let std = 1.0 / (c as f64).sqrt();
        store.insert_normal(rng, &w_q, &[c, c], std)?;
        store.insert_normal(rng, &w_k, &[c, c], std)?;
        Ok(Lcm {
            cfg: cfg.clone(),
            delta,
            ln_q,
            ln_k,
            w_q,
            w_k,
        })
    }

    /// Anchors by farthest point sampling and their ball neighborhoods.
    pub fn regions(&self, xyz: &[Vec3], mode: ExecMode) -> Result<AnchorRegions> {
        if self.cfg.m > xyz.len() {
            return Err(Error::invalid(format!(
                "completion: m = {} exceeds {} points",
                self.cfg.m,
                xyz.len()
            )));
        }
        let anchors = fps(xyz, self.cfg.m)?;
        let centers: Vec<Vec3> = anchors.iter().map(|&i| xyz[i]).collect();
        let (neighbors, fallbacks) = ball_query_batch(&centers, xyz, self.cfg.radius, self.cfg.k, mode)?;
        Ok(AnchorRegions {
            anchors,
            neighbors,
            k: self.cfg.k,
            fallbacks,
        })
    }

    /// `(Δf, Δx̂)` for every anchor: `[m, C]` and `[m, 3]`.
    pub fn region_stats(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        cloud: &CloudVar,
        regions: &AnchorRegions,
    ) -> Result<(Value, Value)> {
        let f_i = g.gather_rows(cloud.feats, &regions.anchors)?;
        let f_n = g.gather_rows(cloud.feats, &regions.neighbors)?;
        let pooled = g.group_max(f_n, regions.k)?;
        let diff = g.sub(f_i, pooled)?;
        let df = self.delta.forward(g, store, diff)?;
        let x_i = g.gather_rows(cloud.coords, &regions.anchors)?;
        let x_n = g.gather_rows(cloud.coords, &regions.neighbors)?;
        let mean = g.group_mean(x_n, regions.k)?;
        let dx_hat = g.sub(x_i, mean)?;
        Ok((df, dx_hat))
    }

    /// Gated offset `αΔx̂` and the gate `α`, `[m, 3]` and `[m, 1]`.
    pub fn offset_attention(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        df: Value,
        f: Value,
        dx_hat: Value,
    ) -> Result<(Value, Value)> {
        let c = self.cfg.channels as f64;
        let nq = self.ln_q.forward(g, store, df)?;
        let nk = self.ln_k.forward(g, store, f)?;
        let wq = g.param(store, &self.w_q)?;
        let wk = g.param(store, &self.w_k)?;
        let q = g.matmul(nq, wq)?;
        let k = g.matmul(nk, wk)?;
        let qk = g.mul(q, k)?;
        let s = g.sum_cols(qk);
        let s = g.scale(s, 1.0 / c.sqrt());
        let alpha = g.sigmoid(s);
        let dx = g.mul(dx_hat, alpha)?;
        Ok((dx, alpha))
    }

    /// Appends `m` synthetic points to `cloud`; the first `n` rows are the
    /// input rows unchanged.
    pub fn complete(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        cloud: &CloudVar,
        mode: ExecMode,
    ) -> Result<(CloudVar, CompletionTrace)> {
        let regions = self.regions(&cloud.xyz, mode)?;
        let (df, dx_hat) = self.region_stats(g, store, cloud, &regions)?;
        let f_i = g.gather_rows(cloud.feats, &regions.anchors)?;
        let (dx, alpha) = self.offset_attention(g, store, df, f_i, dx_hat)?;
        let x_i = g.gather_rows(cloud.coords, &regions.anchors)?;
        let new_x = g.add(x_i, dx)?;
        let new_f = g.add(f_i, df)?;
        let coords = g.concat_rows(&[cloud.coords, new_x])?;
        let feats = g.concat_rows(&[cloud.feats, new_f])?;
        let mut xyz = cloud.xyz.clone();
        xyz.extend(g.value(new_x).data().chunks(3).map(|r| [r[0], r[1], r[2]]));
        let mut aux = cloud.aux.clone();
        aux.extend(regions.anchors.iter().map(|&i| cloud.aux[i]));
        if xyz.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("completed coordinates".into()));
        }
        Ok((
            CloudVar {
                xyz,
                coords,
                feats,
                aux,
            },
            CompletionTrace {
                regions,
                alpha,
                offset_hat: dx_hat,
                offset: dx,
            },
        ))
    }
}

/// Convenience for tests and tools: a constant cloud from raw coordinates and features.
pub fn constant_cloud(g: &mut Graph, xyz: &[Vec3], feats: crate::diff::Tensor) -> Result<CloudVar> {
    if feats.rows() != xyz.len() {
        return Err(Error::shape("constant_cloud", format!("{} points, feats {:?}", xyz.len(), feats.shape())));
    }
    let coords = g.constant(coords_tensor(xyz));
    let feats = g.constant(feats);
    Ok(CloudVar {
        xyz: xyz.to_vec(),
        coords,
        feats,
        aux: vec![[0.0, 0.0]; xyz.len()],
    })
}
