use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Value};
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::par::{self, ExecMode};

/// Which coordinates a finite-difference check visits.
#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Step for the central difference.
    pub h: f64,
    /// Number of coordinates sampled without replacement (all if larger).
    pub samples: usize,
    pub seed: u64,
    /// Restrict to parameters whose path starts with this prefix.
    pub prefix: Option<String>,
    pub mode: ExecMode,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-5,
            samples: 64,
            seed: 0,
            prefix: None,
            mode: ExecMode::from_features(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CoordCheck {
    pub path: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords: Vec<CoordCheck>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&CoordCheck> {
        self.coords
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

fn eval<F>(f: &F, store: &ParamStore) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Value>,
{
    let mut g = Graph::new();
    let root = f(&mut g, store)?;
    let v = g.value(root);
    if v.len() != 1 {
        return Err(Error::NonScalarRoot(v.shape().to_vec()));
    }
    let v = v.item();
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("objective evaluated to {v}")));
    }
    Ok(v)
}

/// Compares tape gradients of a scalar objective with central differences.
///
/// The relative error of a coordinate is
/// `|analytic - numeric| / max(1e-8, |numeric|)`; the report carries the
/// maximum over all sampled coordinates.
pub fn finite_diff_check<F>(
    store: &ParamStore,
    opts: &GradCheckOptions,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Value> + Sync,
{
    if opts.h <= 0.0 {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut g = Graph::new();
    let root = f(&mut g, store)?;
    if !g.value(root).is_finite() {
        return Err(Error::NonFinite("objective".into()));
    }
    g.backward(root)?;
    let mut analytic_store = store.clone();
    analytic_store.zero_grads();
    g.accumulate_param_grads(&mut analytic_store)?;

    let mut coords = Vec::new();
    for (path, p) in store.iter() {
        if !p.trainable || opts.prefix.as_deref().is_some_and(|pre| !path.starts_with(pre)) {
            continue;
        }
        coords.extend((0..p.value.len()).map(|i| (path.to_owned(), i)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let chosen: Vec<(String, usize)> = if coords.len() <= opts.samples {
        coords
    } else {
        let mut idx = sample(&mut rng, coords.len(), opts.samples).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| coords[i].clone()).collect()
    };

    let results = par::map_slice(opts.mode, &chosen, |(path, i)| -> Result<CoordCheck> {
        let mut s = store.clone();
        let orig = s.value(path)?.data()[*i];
        s.get_mut(path)?.value.data_mut()[*i] = orig + opts.h;
        let fp = eval(&f, &s)?;
        s.get_mut(path)?.value.data_mut()[*i] = orig - opts.h;
        let fm = eval(&f, &s)?;
        let numeric = (fp - fm) / (2.0 * opts.h);
        let analytic = analytic_store.get(path)?.grad.data()[*i];
        let rel_error = (analytic - numeric).abs() / numeric.abs().max(1e-8);
        Ok(CoordCheck {
            path: path.clone(),
            index: *i,
            analytic,
            numeric,
            rel_error,
        })
    });
    let coords: Vec<CoordCheck> = results.into_iter().collect::<Result<_>>()?;
    let max_rel_error = coords.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_error,
        coords,
    })
}
