use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::model::Model;
use crate::com::StateWindow;
use crate::dataio::Frame;
use crate::diff::{Graph, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::geom::{Pose, Trajectory};
use crate::par::ExecMode;
use crate::pointops::FeatCloud;

/// Outcome for one adjacent frame pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    /// Pair index (frames `t`, `t + 1`).
    pub t: u64,
    pub pose: Pose,
    /// Identity motion was substituted.
    pub skipped: bool,
    pub reason: Option<String>,
    pub millis: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    pub trajectory: Trajectory,
    pub pairs: Vec<PairRecord>,
}

impl Inference {
    pub fn skipped(&self) -> usize {
        self.pairs.iter().filter(|p| p.skipped).count()
    }

    pub fn mean_millis(&self) -> f64 {
        if self.pairs.is_empty() {
            return 0.0;
        }
        self.pairs.iter().map(|p| p.millis).sum::<f64>() / self.pairs.len() as f64
    }
}

/// Streaming odometry over one sequence. Frames must arrive in order; the
/// clip window lives here, so independent sessions can run concurrently.
pub struct Session<'a> {
    model: &'a Model,
    store: &'a ParamStore,
    mode: ExecMode,
    window: StateWindow<Tensor>,
    prev: Option<std::result::Result<FeatCloud, String>>,
    t: u64,
}

impl<'a> Session<'a> {
    pub fn new(model: &'a Model, store: &'a ParamStore, mode: ExecMode) -> Result<Self> {
        Ok(Session {
            model,
            store,
            mode,
            window: StateWindow::new(model.cfg.window)?,
            prev: None,
            t: 0,
        })
    }

    fn encode(&self, frame: &Frame) -> std::result::Result<FeatCloud, String> {
        let prepared = self.model.prepare(frame).map_err(|e| e.to_string())?;
        let mut g = Graph::new();
        let q = self
            .model
            .encode(&mut g, self.store, &prepared, self.mode)
            .map_err(|e| e.to_string())?;
        q.detach(&g).map_err(|e| e.to_string())
    }

    /// Number of states currently held in the clip window.
    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    /// Feeds the next frame. Returns the motion from the previous frame, or
    /// `None` for the first frame.
    pub fn push(&mut self, frame: &Frame) -> Result<Option<PairRecord>> {
        let start = Instant::now();
        let cur = self.encode(frame);
        let Some(prev) = self.prev.replace(cur) else {
            return Ok(None);
        };
        let cur = self.prev.as_ref().expect("just set");
        let t = self.t;
        self.t += 1;
        let (q1, q2) = match (&prev, cur) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => {
                log::warn!("pair {t}: skipped, {e}");
                self.window.skip(t)?;
                return Ok(Some(PairRecord {
                    t,
                    pose: Pose::IDENTITY,
                    skipped: true,
                    reason: Some(e.clone()),
                    millis: start.elapsed().as_secs_f64() * 1e3,
                }));
            }
        };
        let mut g = Graph::new();
        let c1 = q1.to_graph(&mut g, false);
        let c2 = q2.to_graph(&mut g, false);
        let s = self.model.pair_state(&mut g, self.store, &c1, &c2, self.mode)?;
        self.window.update(t, g.value(s).clone())?;
        let states: Vec<_> = self
            .window
            .states()
            .iter()
            .map(|s| g.constant(s.clone()))
            .collect();
        let out = self.model.refine(&mut g, self.store, &states)?;
        let pose = out
            .pose(&g)
            .map_err(|e| Error::NonFinite(format!("pair {t}: {e}")))?;
        if !pose.t.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite(format!("pair {t}: translation {:?}", pose.t)));
        }
        Ok(Some(PairRecord {
            t,
            pose,
            skipped: false,
            reason: None,
            millis: start.elapsed().as_secs_f64() * 1e3,
        }))
    }
}

/// Runs a fresh session over `frames` and chains the motions into a
/// trajectory starting at the identity.
pub fn infer_sequence(model: &Model, store: &ParamStore, frames: &[Frame], mode: ExecMode) -> Result<Inference> {
    if frames.len() < 2 {
        return Err(Error::invalid("inference needs at least two frames"));
    }
    let mut session = Session::new(model, store, mode)?;
    let mut pairs = Vec::with_capacity(frames.len() - 1);
    for f in frames {
        if let Some(p) = session.push(f)? {
            pairs.push(p);
        }
    }
    let rel: Vec<Pose> = pairs.iter().map(|p| p.pose).collect();
    let mut trajectory = Trajectory::from_relative(Pose::IDENTITY, &rel);
    trajectory.frame_ids = frames.iter().map(|f| f.id).collect();
    Ok(Inference { trajectory, pairs })
}
