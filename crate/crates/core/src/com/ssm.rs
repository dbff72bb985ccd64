use nalgebra::DMatrix;

use crate::diff::{Graph, ParamStore, Tensor, Value};
use crate::error::{Error, Result};

/// Largest admissible spectral radius of the state matrix.
pub const MAX_SPECTRAL_RADIUS: f64 = 0.999;

/// Discretized linear state-space layer `h_t = A h_{t-1} + B u_t`, `y_t = C h_t`.
///
/// Every input channel is an independent scalar sequence driving its own
/// `hidden`-dimensional state; `A`, `B` and `C` are shared by all channels.
/// The layer is therefore a causal convolution with the scalar kernel
/// `K_τ = C A^τ B`.
#[derive(Clone, Debug)]
pub struct Ssm {
    pub a: String,
    pub b: String,
    pub c: String,
    pub hidden: usize,
    /// Full `A` matrix instead of a diagonal.
    pub dense: bool,
}

/// Numeric copy of the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmValues {
    /// `[hidden]` (diagonal) or `[hidden, hidden]`
    pub a: Tensor,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub dense: bool,
}

impl Ssm {
    pub fn init(store: &mut ParamStore, path: &str, hidden: usize, dense: bool) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Config("ssm hidden size must be positive".into()));
        }
        let diag: Vec<f64> = (0..hidden)
            .map(|k| {
                if hidden == 1 {
                    0.5
                } else {
                    0.1 + 0.8 * k as f64 / (hidden - 1) as f64
                }
            })
            .collect();
        let a = if dense {
            let mut m = Tensor::zeros(&[hidden, hidden]);
            for (k, &d) in diag.iter().enumerate() {
                m.data_mut()[k * hidden + k] = d;
            }
            m
        } else {
            Tensor::from_vec(&[hidden], diag)?
        };
        let s = Ssm {
            a: format!("{path}.a"),
            b: format!("{path}.b"),
            c: format!("{path}.c"),
            hidden,
            dense,
        };
        store.insert(&s.a, a, true)?;
        store.insert(&s.b, Tensor::filled(&[hidden], 1.0), true)?;
        store.insert(&s.c, Tensor::filled(&[hidden], 1.0 / hidden as f64), true)?;
        Ok(s)
    }

    pub fn values(&self, store: &ParamStore) -> Result<SsmValues> {
        Ok(SsmValues {
            a: store.value(&self.a)?.clone(),
            b: store.value(&self.b)?.data().to_vec(),
            c: store.value(&self.c)?.data().to_vec(),
            dense: self.dense,
        })
    }

    /// `[1, taps]` kernel `K_τ = C A^τ B` on the tape.
    pub fn kernel(&self, g: &mut Graph, store: &ParamStore, taps: usize) -> Result<Value> {
        let a = g.param(store, &self.a)?;
        let b = g.param(store, &self.b)?;
        let c = g.param(store, &self.c)?;
        let mut ks = Vec::with_capacity(taps);
        if self.dense {
            let h = self.hidden;
            let c_row = g.reshape(c, &[1, h])?;
            let mut v = g.reshape(b, &[h, 1])?;
            for tau in 0..taps {
                if tau > 0 {
                    v = g.matmul(a, v)?;
                }
                ks.push(g.matmul(c_row, v)?);
            }
        } else {
            let mut p = g.mul(c, b)?;
            for tau in 0..taps {
                if tau > 0 {
                    p = g.mul(p, a)?;
                }
                ks.push(g.sum(p));
            }
        }
        g.concat_cols(&ks)
    }

    /// Runs the layer over `[t, c]` or `[s, t, c]` inputs with zero initial state.
    pub fn scan(&self, g: &mut Graph, store: &ParamStore, u: Value) -> Result<Value> {
        let shape = g.shape(u);
        if shape.len() < 2 {
            return Err(Error::shape("ssm_scan", format!("{shape:?}")));
        }
        let t = shape[shape.len() - 2];
        let k = self.kernel(g, store, t)?;
        g.causal_conv(u, k)
    }

    /// Rescales `A` so its spectral radius is at most [`MAX_SPECTRAL_RADIUS`].
    /// Returns the radius before the projection.
    pub fn clamp_spectral_radius(&self, store: &mut ParamStore) -> Result<f64> {
        let p = store.get_mut(&self.a)?;
        let d = p.value.data_mut();
        if self.dense {
            let h = self.hidden;
            let m = DMatrix::from_row_slice(h, h, d);
            let rho = m
                .complex_eigenvalues()
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
            if rho > MAX_SPECTRAL_RADIUS {
                let s = MAX_SPECTRAL_RADIUS / rho;
                d.iter_mut().for_each(|x| *x *= s);
            }
            Ok(rho)
        } else {
            let rho = d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            d.iter_mut()
                .for_each(|x| *x = x.clamp(-MAX_SPECTRAL_RADIUS, MAX_SPECTRAL_RADIUS));
            Ok(rho)
        }
    }
}

impl SsmValues {
    fn hidden(&self) -> usize {
        self.b.len()
    }

    fn apply_a(&self, h: &[f64]) -> Vec<f64> {
        let n = self.hidden();
        let a = self.a.data();
        if self.dense {
            (0..n)
                .map(|r| (0..n).map(|k| a[r * n + k] * h[k]).sum())
                .collect()
        } else {
            h.iter().zip(a).map(|(x, d)| x * d).collect()
        }
    }

    /// Step-by-step evaluation of the recurrence over a `[t, c]` sequence.
    pub fn scan_recursive(&self, u: &Tensor) -> Result<Tensor> {
        if u.rank() != 2 {
            return Err(Error::shape("ssm_scan", format!("{:?}", u.shape())));
        }
        let (t, ch) = (u.rows(), u.cols());
        let mut out = Tensor::zeros(u.shape());
        for c in 0..ch {
            let mut h = vec![0.0; self.hidden()];
            for s in 0..t {
                let x = u.at(s, c);
                h = self.apply_a(&h);
                for (hk, bk) in h.iter_mut().zip(&self.b) {
                    *hk += bk * x;
                }
                out.data_mut()[s * ch + c] = h.iter().zip(&self.c).map(|(a, b)| a * b).sum();
            }
        }
        Ok(out)
    }

    /// The convolution kernel computed numerically.
    pub fn kernel(&self, taps: usize) -> Vec<f64> {
        let mut v = self.b.clone();
        (0..taps)
            .map(|tau| {
                if tau > 0 {
                    v = self.apply_a(&v);
                }
                v.iter().zip(&self.c).map(|(a, b)| a * b).sum()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_ssm(rng: &mut ChaCha8Rng, dense: bool) -> (ParamStore, Ssm) {
        let mut store = ParamStore::new();
        let s = Ssm::init(&mut store, "s", 4, dense).unwrap();
        for p in [&s.a, &s.b, &s.c] {
            let v = store.get_mut(p).unwrap();
            v.value.data_mut().iter_mut().for_each(|x| *x = rng.random_range(-0.9..0.9));
        }
        (store, s)
    }

    #[test]
    fn kernel_and_recursion_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for dense in [false, true] {
            let (store, s) = random_ssm(&mut rng, dense);
            let u = Tensor::from_vec(&[5, 3], (0..15).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let mut g = Graph::new();
            let uv = g.constant(u.clone());
            let y = s.scan(&mut g, &store, uv).unwrap();
            let r = s.values(&store).unwrap().scan_recursive(&u).unwrap();
            assert!(g.value(y).max_abs_diff(&r) <= 1e-12);
        }
    }

    #[test]
    fn single_step_is_cb_times_input() {
        let mut store = ParamStore::new();
        let s = Ssm::init(&mut store, "s", 3, false).unwrap();
        let v = s.values(&store).unwrap();
        let cb: f64 = v.b.iter().zip(&v.c).map(|(a, b)| a * b).sum();
        let u = Tensor::from_rows(&[vec![2.0, -1.0]]).unwrap();
        let y = v.scan_recursive(&u).unwrap();
        assert_eq!(y.data(), &[2.0 * cb, -cb]);
    }

    #[test]
    fn zero_state_matrix_is_memoryless() {
        let mut store = ParamStore::new();
        let s = Ssm::init(&mut store, "s", 3, false).unwrap();
        store.set_value(&s.a, Tensor::zeros(&[3])).unwrap();
        let v = s.values(&store).unwrap();
        let k = v.kernel(4);
        assert_eq!(&k[1..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn spectral_clamp() {
        let mut store = ParamStore::new();
        let s = Ssm::init(&mut store, "s", 2, true).unwrap();
        // Rotation-like matrix with complex eigenvalues of modulus 1.5.
        store
            .set_value(&s.a, Tensor::from_vec(&[2, 2], vec![0.0, -1.5, 1.5, 0.0]).unwrap())
            .unwrap();
        let rho = s.clamp_spectral_radius(&mut store).unwrap();
        assert!((rho - 1.5).abs() < 1e-12);
        let m = store.value(&s.a).unwrap().data().to_vec();
        let after = DMatrix::from_row_slice(2, 2, &m)
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        assert!((after - MAX_SPECTRAL_RADIUS).abs() < 1e-12);

        let d = Ssm::init(&mut store, "d", 2, false).unwrap();
        store.set_value(&d.a, Tensor::from_vec(&[2], vec![1.2, -3.0]).unwrap()).unwrap();
        d.clamp_spectral_radius(&mut store).unwrap();
        assert_eq!(store.value(&d.a).unwrap().data(), &[0.999, -0.999]);
    }
}
