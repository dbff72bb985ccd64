use rand::Rng;
use serde::{Deserialize, Serialize};

use super::CamConfig;
use crate::com::Ssm;
use crate::diff::nn::{Linear, Mlp};
use crate::diff::{Graph, ParamStore, Tensor, Value};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::par::ExecMode;
use crate::pointops::{knn, CloudVar};

/// Stabilizer added to the deviation before dividing.
pub const NORM_EPS: f64 = 1e-6;
/// Smallest distance used by the inverse-distance weights, meters.
pub const DISTANCE_FLOOR: f64 = 1e-3;

/// How a feature pair enters the similarity branch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    /// Channel-wise product `f_i ⊙ f_ij`.
    #[default]
    Channel,
    /// Cosine similarity, a single scalar per pair.
    Cosine,
}

/// Source-to-target neighbor groups with their joint deviation.
#[derive(Clone, Debug)]
pub struct MatchGroups {
    pub k: usize,
    /// `n * k` target indices, nearest first per source point.
    pub neighbors: Vec<usize>,
    /// `n * k` source indices (each source repeated `k` times).
    pub sources: Vec<usize>,
    /// `[n, 3 + C]` scaled coordinates and features of the source points.
    pub src_q: Value,
    /// `[m, 3 + C]`
    pub tgt_q: Value,
    /// Root-mean-square of every `q_i − q_ij` entry.
    pub sigma: Value,
    /// `1 / (σ + ε)`
    pub inv: Value,
}

impl MatchGroups {
    /// Explicit normalized differences `(q_i − q_ij) / (σ + ε)`, `[n * k, 3 + C]`.
    pub fn d(&self, g: &mut Graph) -> Result<Value> {
        let a = g.gather_rows(self.src_q, &self.sources)?;
        let b = g.gather_rows(self.tgt_q, &self.neighbors)?;
        let diff = g.sub(a, b)?;
        g.mul(diff, self.inv)
    }
}

fn joint(g: &mut Graph, cloud: &CloudVar, coord_scale: f64) -> Result<Value> {
    let x = g.scale(cloud.coords, coord_scale);
    g.concat_cols(&[x, cloud.feats])
}

/// Finds `k` target neighbors for every source point and the deviation
/// `σ = sqrt(mean((q_i − q_ij)²))` over all groups and channels.
pub fn normalize_diffs(
    g: &mut Graph,
    src: &CloudVar,
    tgt: &CloudVar,
    k: usize,
    coord_scale: f64,
    mode: ExecMode,
) -> Result<MatchGroups> {
    if src.is_empty() || tgt.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let neighbors = knn(&src.xyz, &tgt.xyz, k, mode)?;
    let sources: Vec<usize> = (0..src.len()).flat_map(|i| std::iter::repeat_n(i, k)).collect();
    let src_q = joint(g, src, coord_scale)?;
    let tgt_q = joint(g, tgt, coord_scale)?;
    let a = g.gather_rows(src_q, &sources)?;
    let b = g.gather_rows(tgt_q, &neighbors)?;
    let diff = g.sub(a, b)?;
    let sq = g.square(diff);
    let ms = g.mean(sq);
    let sigma = g.sqrt(ms);
    let se = g.add_const(sigma, NORM_EPS);
    let inv = g.recip(se);
    Ok(MatchGroups {
        k,
        neighbors,
        sources,
        src_q,
        tgt_q,
        sigma,
        inv,
    })
}

/// Three stable sorts of `0..k` by the x, y and z coordinate, concatenated.
pub fn axis_sort(coords: &[Vec3]) -> Vec<usize> {
    let mut out = Vec::with_capacity(3 * coords.len());
    for axis in 0..3 {
        let mut idx: Vec<usize> = (0..coords.len()).collect();
        idx.sort_by(|&a, &b| coords[a][axis].total_cmp(&coords[b][axis]));
        out.extend(idx);
    }
    out
}

/// Per-pair quantities of the registration step, `[n * k, C]` each.
#[derive(Clone, Copy, Debug)]
pub struct PairTerms {
    pub h: Value,
    pub w_f: Value,
    pub w_d: Value,
}

/// Gated linear unit around a state-space scan.
///
/// `y = S(x W_in) ⊙ silu(x W_gate)` along each sequence, then `y W_out`.
#[derive(Clone, Debug)]
pub struct Balance {
    pub in_proj: Linear,
    pub gate: Linear,
    pub ssm: Ssm,
    pub out_proj: Linear,
}

impl Balance {
    pub fn init<R: Rng>(store: &mut ParamStore, rng: &mut R, path: &str, c: usize, dense: bool) -> Result<Self> {
        Ok(Balance {
            in_proj: Linear::init(store, rng, &format!("{path}.in"), c, c)?,
            gate: Linear::init(store, rng, &format!("{path}.gate"), c, c)?,
            ssm: Ssm::init(store, &format!("{path}.ssm"), c, dense)?,
            out_proj: Linear::init(store, rng, &format!("{path}.out"), c, c)?,
        })
    }

    /// Gated scan output before the output projection.
    ///
    /// `items` holds one row per element; `order` lists `n_seq * len` item
    /// rows forming `n_seq` sequences of length `len`.
    pub fn gated(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        items: Value,
        order: &[usize],
        n_seq: usize,
        len: usize,
    ) -> Result<Value> {
        let c = g.value(items).cols();
        if order.len() != n_seq * len {
            return Err(Error::shape("balance", format!("{} entries for {n_seq} x {len}", order.len())));
        }
        let u = self.in_proj.forward(g, store, items)?;
        let u = g.gather_rows(u, order)?;
        let u = g.reshape(u, &[n_seq, len, c])?;
        let y = self.ssm.scan(g, store, u)?;
        let y = g.reshape(y, &[n_seq * len, c])?;
        let z = self.gate.forward(g, store, items)?;
        let z = g.silu(z);
        let z = g.gather_rows(z, order)?;
        g.mul(y, z)
    }

    pub fn project(&self, g: &mut Graph, store: &ParamStore, y: Value) -> Result<Value> {
        self.out_proj.forward(g, store, y)
    }

    /// Balances one `[len, C]` sequence.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, seq: Value) -> Result<Value> {
        let len = g.value(seq).rows();
        let order: Vec<usize> = (0..len).collect();
        let y = self.gated(g, store, seq, &order, 1, len)?;
        self.project(g, store, y)
    }
}

/// One matching scale.
#[derive(Clone, Debug)]
pub struct MatchBranch {
    pub k: usize,
    pub coord_scale: f64,
    pub similarity: Similarity,
    h: Mlp,
    w_d: Mlp,
    w_f: Mlp,
    pub beta: String,
    pub balance: Balance,
    agg: Mlp,
}

impl MatchBranch {
    pub fn init<R: Rng>(store: &mut ParamStore, rng: &mut R, path: &str, cfg: &CamConfig, k: usize) -> Result<Self> {
        let c = cfg.channels;
        let d = 3 + c;
        let act = cfg.activation;
        let sim_in = match cfg.similarity {
            Similarity::Channel => c,
            Similarity::Cosine => 1,
        };
        let beta = format!("{path}.beta");
        store.insert(&beta, Tensor::scalar(0.0), true)?;
        Ok(MatchBranch {
            k,
            coord_scale: cfg.coord_scale,
            similarity: cfg.similarity,
            h: Mlp::init(store, rng, &format!("{path}.h"), &[3 * d, c, c], act)?,
            w_d: Mlp::init(store, rng, &format!("{path}.wd"), &[3, c, c], act)?,
            w_f: Mlp::init(store, rng, &format!("{path}.wf"), &[sim_in, c, c], act)?,
            beta,
            balance: Balance::init(store, rng, &format!("{path}.balance"), c, cfg.dense_ssm)?,
            agg: Mlp::init(store, rng, &format!("{path}.agg"), &[2 * c, c, c], act)?,
        })
    }

    /// `h = MLP(d ⊕ q_i ⊕ q_ij)`, `w_d = MLP(x_i − x_ij)`, `w_f = MLP(sim(f_i, f_ij))`.
    ///
    /// The first layer of `h` is applied per point and gathered, which is
    /// exact because `d` is linear in `q_i` and `q_ij`.
    pub fn pair_terms(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        groups: &MatchGroups,
        src: &CloudVar,
        tgt: &CloudVar,
    ) -> Result<PairTerms> {
        let first = &self.h.layers[0];
        let d = first.fan_in / 3;
        let ps = first.forward_partial(g, store, groups.src_q, 0..d)?;
        let pt = first.forward_partial(g, store, groups.tgt_q, 0..d)?;
        let ps = g.gather_rows(ps, &groups.sources)?;
        let pt = g.gather_rows(pt, &groups.neighbors)?;
        let dp = g.sub(ps, pt)?;
        let dp = g.mul(dp, groups.inv)?;
        let qi = first.forward_partial(g, store, groups.src_q, d..2 * d)?;
        let qi = g.gather_rows(qi, &groups.sources)?;
        let qj = first.forward_partial(g, store, groups.tgt_q, 2 * d..3 * d)?;
        let qj = g.gather_rows(qj, &groups.neighbors)?;
        let h1 = g.add(dp, qi)?;
        let h1 = g.add(h1, qj)?;
        let b = first.bias(g, store)?;
        let h1 = g.add(h1, b)?;
        let h = self.h.forward_tail(g, store, h1)?;

        let xi = g.gather_rows(src.coords, &groups.sources)?;
        let xj = g.gather_rows(tgt.coords, &groups.neighbors)?;
        let dx = g.sub(xi, xj)?;
        let dx = g.scale(dx, self.coord_scale);
        let w_d = self.w_d.forward(g, store, dx)?;

        let fi = g.gather_rows(src.feats, &groups.sources)?;
        let fj = g.gather_rows(tgt.feats, &groups.neighbors)?;
        let prod = g.mul(fi, fj)?;
        let sim = match self.similarity {
            Similarity::Channel => prod,
            Similarity::Cosine => {
                let dot = g.sum_cols(prod);
                let ni = g.row_norm(fi);
                let nj = g.row_norm(fj);
                let den = g.mul(ni, nj)?;
                let den = g.clamp_min(den, 1e-12);
                g.div(dot, den)?
            }
        };
        let w_f = self.w_f.forward(g, store, sim)?;
        Ok(PairTerms { h, w_f, w_d })
    }

    /// `β` squashed into `(0, 1)`.
    pub fn beta(&self, g: &mut Graph, store: &ParamStore) -> Result<Value> {
        let raw = g.param(store, &self.beta)?;
        Ok(g.sigmoid(raw))
    }

    /// Per-pair terms `β h⊙w_f + (1−β) h⊙w_d` and their per-source sums.
    pub fn register(&self, g: &mut Graph, terms: &PairTerms, beta: Value) -> Result<(Value, Value)> {
        let a = g.mul(terms.h, terms.w_f)?;
        let b = g.mul(terms.h, terms.w_d)?;
        let a = g.mul(a, beta)?;
        let nb = g.neg(beta);
        let one_minus = g.add_const(nb, 1.0);
        let b = g.mul(b, one_minus)?;
        let pairs = g.add(a, b)?;
        let sums = g.group_sum(pairs, self.k)?;
        Ok((pairs, sums))
    }

    /// Axis-sorted sequences of pair rows, `n * 3k` entries.
    pub fn sequence_order(&self, groups: &MatchGroups, tgt: &CloudVar) -> Vec<usize> {
        let k = self.k;
        let n = groups.sources.len() / k;
        let mut order = Vec::with_capacity(n * 3 * k);
        for i in 0..n {
            let pts: Vec<Vec3> = groups.neighbors[i * k..(i + 1) * k]
                .iter()
                .map(|&j| tgt.xyz[j])
                .collect();
            order.extend(axis_sort(&pts).into_iter().map(|s| i * k + s));
        }
        order
    }

    /// Normalized inverse-distance weights `[n * 3k, 1]` of the sequence entries.
    pub fn distance_weights(
        &self,
        g: &mut Graph,
        groups: &MatchGroups,
        src: &CloudVar,
        tgt: &CloudVar,
        order: &[usize],
    ) -> Result<Value> {
        let len = 3 * self.k;
        let si: Vec<usize> = order.iter().map(|&p| groups.sources[p]).collect();
        let tj: Vec<usize> = order.iter().map(|&p| groups.neighbors[p]).collect();
        let xi = g.gather_rows(src.coords, &si)?;
        let xj = g.gather_rows(tgt.coords, &tj)?;
        let dx = g.sub(xi, xj)?;
        let dist = g.row_norm(dx);
        let dist = g.clamp_min(dist, DISTANCE_FLOOR);
        let w = g.recip(dist);
        let total = g.group_sum(w, len)?;
        let n = order.len() / len;
        let rep: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, len)).collect();
        let total = g.gather_rows(total, &rep)?;
        g.div(w, total)
    }

    /// Correlation embeddings `[n, C]` for every source point.
    ///
    /// The output projection of the balance block is applied once to the
    /// weighted sum of the gated entries; the weights sum to one, so this
    /// equals projecting every entry first.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        src: &CloudVar,
        tgt: &CloudVar,
        mode: ExecMode,
    ) -> Result<Value> {
        let groups = normalize_diffs(g, src, tgt, self.k, self.coord_scale, mode)?;
        let terms = self.pair_terms(g, store, &groups, src, tgt)?;
        let beta = self.beta(g, store)?;
        let (pairs, e) = self.register(g, &terms, beta)?;
        let order = self.sequence_order(&groups, tgt);
        let len = 3 * self.k;
        let n = src.len();
        let y = self.balance.gated(g, store, pairs, &order, n, len)?;
        let w = self.distance_weights(g, &groups, src, tgt, &order)?;
        let yw = g.mul(y, w)?;
        let pooled = g.group_sum(yw, len)?;
        let pooled = self.balance.project(g, store, pooled)?;
        let cat = g.concat_cols(&[pooled, e])?;
        self.agg.forward(g, store, cat)
    }
}
