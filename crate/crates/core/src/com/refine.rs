use rand::Rng;

use super::ssm::Ssm;
use crate::diff::nn::{Activation, LayerNorm, Mlp};
use crate::diff::{Graph, ParamStore, Tensor, Value};
use crate::error::{Error, Result};
use crate::geom::{Pose, Quat};

/// Column-wise max over the correlation rows followed by an MLP.
#[derive(Clone, Debug)]
pub struct PoolState {
    mlp: Mlp,
}

impl PoolState {
    pub fn init<R: Rng>(store: &mut ParamStore, rng: &mut R, path: &str, c: usize, act: Activation) -> Result<Self> {
        Ok(PoolState {
            mlp: Mlp::init(store, rng, path, &[c, c, c], act)?,
        })
    }

    /// `[rows, C] -> [1, C]`
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, corr: Value) -> Result<Value> {
        let p = g.col_max(corr)?;
        self.mlp.forward(g, store, p)
    }
}

/// Reverses the row order of a `[t, c]` value.
pub fn reverse_rows(g: &mut Graph, x: Value) -> Result<Value> {
    let t = g.value(x).rows();
    let idx: Vec<usize> = (0..t).rev().collect();
    g.gather_rows(x, &idx)
}

/// Bidirectional state-space block with a residual MLP.
///
/// `Ĝ = S_f(LN G) + R(S_b(R(LN G)))` with `R` the row reversal, then
/// `G' = MLP(LN Ĝ) + Ĝ`.
#[derive(Clone, Debug)]
pub struct BiBlock {
    ln_in: LayerNorm,
    pub fwd: Ssm,
    pub bwd: Ssm,
    ln_mid: LayerNorm,
    mlp: Mlp,
}

impl BiBlock {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        path: &str,
        c: usize,
        dense: bool,
        act: Activation,
    ) -> Result<Self> {
        Ok(BiBlock {
            ln_in: LayerNorm::init(store, &format!("{path}.ln_in"), c)?,
            fwd: Ssm::init(store, &format!("{path}.fwd"), c, dense)?,
            bwd: Ssm::init(store, &format!("{path}.bwd"), c, dense)?,
            ln_mid: LayerNorm::init(store, &format!("{path}.ln_mid"), c)?,
            mlp: Mlp::init(store, rng, &format!("{path}.mlp"), &[c, c, c], act)?,
        })
    }

    /// Swaps the roles of the two scan directions.
    pub fn swapped(&self) -> Self {
        BiBlock {
            fwd: self.bwd.clone(),
            bwd: self.fwd.clone(),
            ..self.clone()
        }
    }

    /// `[t, C] -> [t, C]`
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Value) -> Result<Value> {
        let n = self.ln_in.forward(g, store, x)?;
        let a = self.fwd.scan(g, store, n)?;
        let r = reverse_rows(g, n)?;
        let b = self.bwd.scan(g, store, r)?;
        let b = reverse_rows(g, b)?;
        let gh = g.add(a, b)?;
        let m = self.ln_mid.forward(g, store, gh)?;
        let m = self.mlp.forward(g, store, m)?;
        g.add(m, gh)
    }

    pub fn ssms(&self) -> [&Ssm; 2] {
        [&self.fwd, &self.bwd]
    }
}

/// Two MLP heads on the newest window state.
#[derive(Clone, Debug)]
pub struct PoseHead {
    ln: LayerNorm,
    q: Mlp,
    t: Mlp,
}

/// Raw head outputs.
#[derive(Clone, Copy, Debug)]
pub struct PoseOutput {
    /// `[1, 4]`, before normalization
    pub q: Value,
    /// `[1, 3]`, meters
    pub t: Value,
}

impl PoseHead {
    /// Both heads read the layer-normalized state. Output weights start at
    /// zero, so the initial motion is the identity.
    pub fn init<R: Rng>(store: &mut ParamStore, rng: &mut R, path: &str, c: usize, act: Activation) -> Result<Self> {
        let ln = LayerNorm::init(store, &format!("{path}.ln"), c)?;
        let q = Mlp::init(store, rng, &format!("{path}.q"), &[c, c, 4], act)?;
        let t = Mlp::init(store, rng, &format!("{path}.t"), &[c, c, 3], act)?;
        for head in [&q, &t] {
            let last = head.layers.last().expect("two layers");
            let w = store.get_mut(&last.weight)?;
            w.value.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        let qb = &q.layers.last().expect("two layers").bias;
        store.set_value(qb, Tensor::from_vec(&[4], vec![1.0, 0.0, 0.0, 0.0])?)?;
        Ok(PoseHead { ln, q, t })
    }

    /// Reads the last row of the refined window.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, window: Value) -> Result<PoseOutput> {
        let rows = g.value(window).rows();
        if rows == 0 {
            return Err(Error::invalid("pose head needs a non-empty window"));
        }
        let last = g.slice_rows(window, rows - 1, rows)?;
        let last = self.ln.forward(g, store, last)?;
        Ok(PoseOutput {
            q: self.q.forward(g, store, last)?,
            t: self.t.forward(g, store, last)?,
        })
    }
}

impl PoseOutput {
    pub fn pose(&self, g: &Graph) -> Result<Pose> {
        let q = g.value(self.q).data();
        let t = g.value(self.t).data();
        Pose::new(Quat::new(q[0], q[1], q[2], q[3]), [t[0], t[1], t[2]])
    }
}

pub const LOSS_W_Q: &str = "loss.w_q";
pub const LOSS_W_T: &str = "loss.w_t";

/// Registers the learnable loss balancing weights.
pub fn init_loss_weights(store: &mut ParamStore, w_q: f64, w_t: f64) -> Result<()> {
    store.insert(LOSS_W_Q, Tensor::scalar(w_q), true)?;
    store.insert(LOSS_W_T, Tensor::scalar(w_t), true)
}

#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Value,
    /// quaternion residual norm
    pub l_q: Value,
    /// translation residual norm, meters
    pub l_t: Value,
}

/// `L = L_q e^{-w_q} + w_q + L_t e^{-w_t} + w_t`.
///
/// `L_q` compares the raw head output with the ground truth flipped onto the
/// predicted hemisphere; normalization happens only when a pose is emitted.
pub fn pose_loss(g: &mut Graph, store: &ParamStore, pred: &PoseOutput, gt: &Pose) -> Result<LossTerms> {
    let qv = g.value(pred.q).data();
    let mut gq = gt.q.to_array();
    if qv.iter().zip(&gq).map(|(a, b)| a * b).sum::<f64>() < 0.0 {
        gq.iter_mut().for_each(|x| *x = -*x);
    }
    let gq = g.constant(Tensor::from_vec(&[1, 4], gq.to_vec())?);
    let gt_t = g.constant(Tensor::from_vec(&[1, 3], gt.t.to_vec())?);
    let dq = g.sub(pred.q, gq)?;
    let l_q = g.row_norm(dq);
    let dt = g.sub(pred.t, gt_t)?;
    let l_t = g.row_norm(dt);
    let w_q = g.param(store, LOSS_W_Q)?;
    let w_t = g.param(store, LOSS_W_T)?;
    let total = weighted_sum(g, l_q, l_t, w_q, w_t)?;
    Ok(LossTerms { total, l_q, l_t })
}

/// The balancing formula on already-computed residual norms.
pub fn weighted_sum(g: &mut Graph, l_q: Value, l_t: Value, w_q: Value, w_t: Value) -> Result<Value> {
    let nq = g.neg(w_q);
    let eq = g.exp(nq);
    let nt = g.neg(w_t);
    let et = g.exp(nt);
    let a = g.mul(l_q, eq)?;
    let b = g.mul(l_t, et)?;
    let s = g.add(a, b)?;
    let s = g.add(s, w_q)?;
    let s = g.add(s, w_t)?;
    let s = g.sum(s);
    Ok(s)
}
