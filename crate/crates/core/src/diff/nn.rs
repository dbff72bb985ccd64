//! Small layer library on top of the tape.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Value};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::Result;

/// Hidden-layer nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Silu,
    Tanh,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Value) -> Value {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Silu => g.silu(x),
            Activation::Tanh => g.tanh(x),
        }
    }
}

/// Affine map `x W + b` with `W: [fan_in, fan_out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: String,
    pub bias: String,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Registers He-initialized weights and a zero bias under `path`.
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        path: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Result<Self> {
        let weight = format!("{path}.w");
        let bias = format!("{path}.b");
        store.insert_normal(rng, &weight, &[fan_in, fan_out], (2.0 / fan_in as f64).sqrt())?;
        store.insert(&bias, Tensor::zeros(&[fan_out]), true)?;
        Ok(Linear {
            weight,
            bias,
            fan_in,
            fan_out,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Value) -> Result<Value> {
        let w = g.param(store, &self.weight)?;
        let b = g.param(store, &self.bias)?;
        let y = g.matmul(x, w)?;
        g.add(y, b)
    }

    /// `x W[rows]` for a contiguous block of input rows of the weight, without bias.
    ///
    /// Used to apply the first layer of an MLP to one part of a concatenated
    /// input: `[a | b] W = a W_a + b W_b`.
    pub fn forward_partial(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Value,
        rows: std::ops::Range<usize>,
    ) -> Result<Value> {
        let w = g.param(store, &self.weight)?;
        let wp = g.slice_rows(w, rows.start, rows.end)?;
        g.matmul(x, wp)
    }

    pub fn bias(&self, g: &mut Graph, store: &ParamStore) -> Result<Value> {
        g.param(store, &self.bias)
    }
}

/// Stack of [`Linear`] layers with an activation between them (none after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub act: Activation,
}

impl Mlp {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        path: &str,
        dims: &[usize],
        act: Activation,
    ) -> Result<Self> {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| Linear::init(store, rng, &format!("{path}.{i}"), d[0], d[1]))
            .collect::<Result<_>>()?;
        Ok(Mlp { layers, act })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Value) -> Result<Value> {
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            if i > 0 {
                h = self.act.apply(g, h);
            }
            h = l.forward(g, store, h)?;
        }
        Ok(h)
    }

    /// Runs every layer after the first on a precomputed first-layer output.
    pub fn forward_tail(&self, g: &mut Graph, store: &ParamStore, first: Value) -> Result<Value> {
        let mut h = first;
        for l in &self.layers[1..] {
            h = self.act.apply(g, h);
            h = l.forward(g, store, h)?;
        }
        Ok(h)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }
}

/// Layer normalization with learnable gain and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: String,
    pub beta: String,
    pub eps: f64,
}

impl LayerNorm {
    pub fn init(store: &mut ParamStore, path: &str, dim: usize) -> Result<Self> {
        let gamma = format!("{path}.gamma");
        let beta = format!("{path}.beta");
        store.insert(&gamma, Tensor::filled(&[dim], 1.0), true)?;
        store.insert(&beta, Tensor::zeros(&[dim]), true)?;
        Ok(LayerNorm {
            gamma,
            beta,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Value) -> Result<Value> {
        let n = g.layer_norm(x, self.eps);
        let ga = g.param(store, &self.gamma)?;
        let be = g.param(store, &self.beta)?;
        let y = g.mul(n, ga)?;
        g.add(y, be)
    }
}
