use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CAOR";
const VERSION: u32 = 1;

/// One named parameter with its gradient and Adam moment slots.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub m: Tensor,
    pub v: Tensor,
    /// Frozen entries (input statistics) are stored and checkpointed but
    /// never updated.
    pub trainable: bool,
}

impl Param {
    fn new(value: Tensor, trainable: bool) -> Self {
        let z = Tensor::zeros(value.shape());
        Param {
            grad: z.clone(),
            m: z.clone(),
            v: z,
            value,
            trainable,
        }
    }
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Path-keyed parameter collection. Iteration order is lexicographic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: &str, value: Tensor, trainable: bool) -> Result<()> {
        if self.params.contains_key(path) {
            return Err(Error::DuplicateParam(path.to_owned()));
        }
        self.params
            .insert(path.to_owned(), Param::new(value, trainable));
        Ok(())
    }

    /// Inserts a trainable tensor drawn from `N(0, std^2)`.
    pub fn insert_normal<R: Rng>(
        &mut self,
        rng: &mut R,
        path: &str,
        shape: &[usize],
        std: f64,
    ) -> Result<()> {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        self.insert(path, Tensor::from_vec(shape, data)?, true)
    }

    pub fn get(&self, path: &str) -> Result<&Param> {
        self.params
            .get(path)
            .ok_or_else(|| Error::UnknownParam(path.to_owned()))
    }

    pub fn get_mut(&mut self, path: &str) -> Result<&mut Param> {
        self.params
            .get_mut(path)
            .ok_or_else(|| Error::UnknownParam(path.to_owned()))
    }

    pub fn value(&self, path: &str) -> Result<&Tensor> {
        Ok(&self.get(path)?.value)
    }

    pub fn set_value(&mut self, path: &str, value: Tensor) -> Result<()> {
        let p = self.get_mut(path)?;
        if p.value.shape() != value.shape() {
            return Err(Error::shape(
                "set_value",
                format!("{path}: {:?} vs {:?}", p.value.shape(), value.shape()),
            ));
        }
        p.value = value;
        Ok(())
    }

    pub fn contains(&self, path: &str) -> bool {
        self.params.contains_key(path)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn paths(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    /// Number of scalar trainable entries.
    pub fn num_trainable(&self) -> usize {
        self.params
            .values()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn zero_grads(&mut self) {
        self.params.values_mut().for_each(|p| p.grad.fill(0.0));
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .values()
            .map(|p| p.grad.data().iter().map(|g| g * g).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn param_norm(&self) -> f64 {
        self.params
            .values()
            .map(|p| p.value.data().iter().map(|g| g * g).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their global norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let n = self.grad_norm();
        if n > max_norm && n > 0.0 {
            let s = max_norm / n;
            for p in self.params.values_mut() {
                p.grad.data_mut().iter_mut().for_each(|g| *g *= s);
            }
        }
        n
    }

    /// One bias-corrected Adam update over every trainable parameter.
    pub fn adam_step(&mut self, lr: f64, cfg: Adam) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for p in self.params.values_mut().filter(|p| p.trainable) {
            let g = p.grad.data();
            let m = p.m.data_mut();
            for (mi, &gi) in m.iter_mut().zip(g) {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            }
            let v = p.v.data_mut();
            for (vi, &gi) in v.iter_mut().zip(g) {
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            }
            let (m, v) = (p.m.data(), p.v.data());
            for ((w, &mi), &vi) in p.value.data_mut().iter_mut().zip(m).zip(v) {
                *w -= lr * (mi / bc1) / ((vi / bc2).sqrt() + cfg.eps);
            }
        }
    }

    /// Serializes parameter values in the `CAOR` checkpoint layout.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for (path, p) in &self.params {
            let bytes = path.as_bytes();
            w.write_all(&(bytes.len() as u32).to_le_bytes())?;
            w.write_all(bytes)?;
            let shape = p.value.shape();
            w.write_all(&(shape.len() as u32).to_le_bytes())?;
            for &d in shape {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for &v in p.value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a checkpoint. Every entry is marked trainable except those
    /// under the `stats/` prefix.
    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = read_u32(&mut r)?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            let path = String::from_utf8(buf)
                .map_err(|e| Error::Checkpoint(format!("path not utf-8: {e}")))?;
            let rank = read_u32(&mut r)? as usize;
            if rank > super::tensor::MAX_RANK {
                return Err(Error::Checkpoint(format!("{path}: rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u32(&mut r)? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            let mut b = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            let trainable = !path.starts_with("stats/");
            store.insert(&path, Tensor::from_vec(&shape, data)?, trainable)?;
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_checkpoint(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_checkpoint(std::io::BufReader::new(f))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
