use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::search::{ball_query_batch, fps};
use crate::dataio::Frame;
use crate::diff::nn::{Activation, Mlp};
use crate::diff::{Graph, ParamStore, Tensor, Value};
use crate::error::{Error, Result};
use crate::geom::{norm3, Vec3};
use crate::par::ExecMode;

/// Frames with fewer points are rejected before encoding.
pub const MIN_FRAME_POINTS: usize = 8;

/// Per-channel `[mean, std]` of the raw radar attributes, stored with the
/// parameters but never trained.
pub const STATS_RCS: &str = "stats/rcs";
pub const STATS_RRV: &str = "stats/rrv";

/// Points with per-point features, detached from any tape.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatCloud {
    pub coords: Vec<Vec3>,
    /// `[n, C]`
    pub feats: Tensor,
    /// `(rcs, rrv)` per point; synthetic points inherit their anchor's values.
    pub aux: Vec<[f64; 2]>,
}

impl FeatCloud {
    pub fn new(coords: Vec<Vec3>, feats: Tensor, aux: Vec<[f64; 2]>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if feats.rank() != 2 || feats.rows() != coords.len() || aux.len() != coords.len() {
            return Err(Error::shape(
                "feat_cloud",
                format!("{} coords, feats {:?}, {} aux", coords.len(), feats.shape(), aux.len()),
            ));
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cloud coordinates".into()));
        }
        Ok(FeatCloud { coords, feats, aux })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.feats.cols()
    }

    /// Puts the cloud on a tape; coordinates become constants and features
    /// become constants or variables.
    pub fn to_graph(&self, g: &mut Graph, trainable_feats: bool) -> CloudVar {
        let coords = g.constant(coords_tensor(&self.coords));
        let feats = if trainable_feats {
            g.variable(self.feats.clone())
        } else {
            g.constant(self.feats.clone())
        };
        CloudVar {
            xyz: self.coords.clone(),
            coords,
            feats,
            aux: self.aux.clone(),
        }
    }
}

/// A cloud living on a tape.
///
/// `xyz` mirrors the numeric value of `coords` and drives neighbor searches.
#[derive(Clone, Debug)]
pub struct CloudVar {
    pub xyz: Vec<Vec3>,
    /// `[n, 3]`, meters
    pub coords: Value,
    /// `[n, C]`
    pub feats: Value,
    pub aux: Vec<[f64; 2]>,
}

impl CloudVar {
    pub fn len(&self) -> usize {
        self.xyz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xyz.is_empty()
    }

    pub fn detach(&self, g: &Graph) -> Result<FeatCloud> {
        FeatCloud::new(self.xyz.clone(), g.value(self.feats).clone(), self.aux.clone())
    }

    /// Row subset of the cloud; gradients flow back through the gather.
    pub fn select(&self, g: &mut Graph, idx: &[usize]) -> Result<CloudVar> {
        Ok(CloudVar {
            xyz: idx.iter().map(|&i| self.xyz[i]).collect(),
            coords: g.gather_rows(self.coords, idx)?,
            feats: g.gather_rows(self.feats, idx)?,
            aux: idx.iter().map(|&i| self.aux[i]).collect(),
        })
    }
}

pub fn coords_tensor(xyz: &[Vec3]) -> Tensor {
    Tensor::from_vec(&[xyz.len(), 3], xyz.iter().flatten().copied().collect())
        .expect("n x 3 layout")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    /// Points kept per frame.
    pub n_points: usize,
    pub channels: usize,
    /// Grouping radius of each set-abstraction level, meters.
    pub radii: [f64; 2],
    /// Neighbors per group.
    pub k: usize,
    /// Range normalizer for the absolute-position input, meters.
    pub max_range: f64,
    pub activation: Activation,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            n_points: 256,
            channels: 64,
            radii: [2.0, 4.0],
            k: 16,
            max_range: 50.0,
            activation: Activation::Relu,
        }
    }
}

const RAW_FEATS: usize = 6;

/// Two-level set-abstraction encoder.
///
/// Level 1 groups the raw frame around the sampled points and embeds
/// `relative xyz / r ⊕ rcs ⊕ rrv ⊕ unit ray ⊕ range`; level 2 regroups the
/// sampled points and embeds `relative xyz / r ⊕ level-1 feature`. Each level
/// is a two-layer per-point MLP followed by a max over the group.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    sa1: Mlp,
    sa2: Mlp,
}

impl Backbone {
    pub fn init<R: Rng>(store: &mut ParamStore, rng: &mut R, path: &str, cfg: &BackboneConfig) -> Result<Self> {
        if cfg.n_points == 0 || cfg.k == 0 || cfg.channels == 0 {
            return Err(Error::Config("backbone sizes must be positive".into()));
        }
        let c = cfg.channels;
        let sa1 = Mlp::init(store, rng, &format!("{path}.sa1"), &[3 + RAW_FEATS, c, c], cfg.activation)?;
        let sa2 = Mlp::init(store, rng, &format!("{path}.sa2"), &[3 + c, c, c], cfg.activation)?;
        for p in [STATS_RCS, STATS_RRV] {
            if !store.contains(p) {
                store.insert(p, Tensor::from_vec(&[2], vec![0.0, 1.0])?, false)?;
            }
        }
        Ok(Backbone {
            cfg: cfg.clone(),
            sa1,
            sa2,
        })
    }

    /// Indices of the `n_points` kept points: farthest point sampling when the
    /// frame is large enough, otherwise every point plus uniform draws with
    /// replacement (seeded by the frame id).
    pub fn sample_indices(&self, frame: &Frame) -> Result<Vec<usize>> {
        let n = frame.len();
        if n < MIN_FRAME_POINTS {
            return Err(Error::FrameRejected {
                id: frame.id,
                reason: format!("{n} points, need {MIN_FRAME_POINTS}"),
            });
        }
        let want = self.cfg.n_points;
        if n >= want {
            return fps(&frame.xyz(), want);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(frame.id ^ 0x5eed_f00d);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.extend((n..want).map(|_| rng.random_range(0..n)));
        Ok(idx)
    }

    fn standardize(store: &ParamStore, path: &str, v: f64) -> Result<f64> {
        let s = store.value(path)?.data();
        Ok((v - s[0]) / s[1].max(1e-9))
    }

    fn level(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        mlp: &Mlp,
        per_point: Value,
        centers: &[Vec3],
        points: &[Vec3],
        radius: f64,
        mode: ExecMode,
    ) -> Result<Value> {
        let k = self.cfg.k;
        let (idx, _) = ball_query_batch(centers, points, radius, k, mode)?;
        let mut rel = Vec::with_capacity(idx.len() * 3);
        for (r, &j) in idx.iter().enumerate() {
            let c = centers[r / k];
            let p = points[j];
            rel.extend((0..3).map(|a| (p[a] - c[a]) / radius));
        }
        let rel = g.constant(Tensor::from_vec(&[idx.len(), 3], rel)?);
        let first = &mlp.layers[0];
        let width = first.fan_in;
        let proj = first.forward_partial(g, store, per_point, 3..width)?;
        let proj = g.gather_rows(proj, &idx)?;
        let rel_proj = first.forward_partial(g, store, rel, 0..3)?;
        let h = g.add(proj, rel_proj)?;
        let b = first.bias(g, store)?;
        let h = g.add(h, b)?;
        let h = mlp.forward_tail(g, store, h)?;
        let h = mlp.act.apply(g, h);
        g.group_max(h, k)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, frame: &Frame, mode: ExecMode) -> Result<CloudVar> {
        let keep = self.sample_indices(frame)?;
        let raw = frame.xyz();
        let mut feats = Vec::with_capacity(frame.len() * RAW_FEATS);
        for p in &frame.points {
            let r = norm3(p.xyz()).max(1e-9);
            feats.push(Self::standardize(store, STATS_RCS, p.rcs)?);
            feats.push(Self::standardize(store, STATS_RRV, p.rrv)?);
            feats.extend([p.x / r, p.y / r, p.z / r, r / self.cfg.max_range]);
        }
        let raw_feats = g.constant(Tensor::from_vec(&[frame.len(), RAW_FEATS], feats)?);
        let centers: Vec<Vec3> = keep.iter().map(|&i| raw[i]).collect();
        let f1 = self.level(g, store, &self.sa1, raw_feats, &centers, &raw, self.cfg.radii[0], mode)?;
        let f2 = self.level(g, store, &self.sa2, f1, &centers, &centers, self.cfg.radii[1], mode)?;
        let coords = g.constant(coords_tensor(&centers));
        Ok(CloudVar {
            aux: keep
                .iter()
                .map(|&i| [frame.points[i].rcs, frame.points[i].rrv])
                .collect(),
            xyz: centers,
            coords,
            feats: f2,
        })
    }
}

/// Encodes a frame outside of training.
pub fn encode_backbone(bb: &Backbone, store: &ParamStore, frame: &Frame, mode: ExecMode) -> Result<FeatCloud> {
    let mut g = Graph::new();
    let c = bb.forward(&mut g, store, frame, mode)?;
    c.detach(&g)
}

/// Sets the attribute standardization statistics from training frames.
pub fn fit_input_stats<'a>(store: &mut ParamStore, frames: impl IntoIterator<Item = &'a Frame>) -> Result<()> {
    let (mut n, mut s) = (0usize, [[0.0f64; 2]; 2]);
    for f in frames {
        for p in &f.points {
            n += 1;
            s[0][0] += p.rcs;
            s[0][1] += p.rcs * p.rcs;
            s[1][0] += p.rrv;
            s[1][1] += p.rrv * p.rrv;
        }
    }
    if n == 0 {
        return Err(Error::EmptyCloud);
    }
    for (path, [a, b]) in [(STATS_RCS, s[0]), (STATS_RRV, s[1])] {
        let mean = a / n as f64;
        let std = (b / n as f64 - mean * mean).max(0.0).sqrt().max(1e-6);
        let t = Tensor::from_vec(&[2], vec![mean, std])?;
        if store.contains(path) {
            store.set_value(path, t)?;
        } else {
            store.insert(path, t, false)?;
        }
    }
    Ok(())
}
