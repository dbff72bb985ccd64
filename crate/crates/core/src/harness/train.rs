use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::model::Model;
use crate::com::pose_loss;
use crate::dataio::{augment_flip, augment_jitter, Frame, Sequence};
use crate::diff::{Adam, Graph, ParamStore, Value};
use crate::error::{Error, Result};
use crate::geom::Pose;
use crate::par::ExecMode;
use crate::pointops::fit_input_stats;

/// Summary of one training epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// One-based.
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub l_q: f64,
    pub l_t: f64,
    pub w_q: f64,
    pub w_t: f64,
    pub windows: usize,
    pub skipped_windows: usize,
    pub grad_norm: f64,
    pub seconds: f64,
}

/// Everything written next to the checkpoints.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config: TrainConfig,
    pub sequences: Vec<String>,
    pub epochs: Vec<EpochLog>,
    pub version: String,
}

/// Losses of one clip window, averaged over its frame pairs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowStats {
    pub loss: f64,
    pub l_q: f64,
    pub l_t: f64,
    pub pairs: usize,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: Model,
    pub store: ParamStore,
    pub mode: ExecMode,
    rng: ChaCha8Rng,
    pending: usize,
}

pub struct TrainOutcome {
    pub model: Model,
    pub store: ParamStore,
    pub log: Vec<EpochLog>,
}

impl Trainer {
    /// Initializes the network and fits the input statistics on `seqs`.
    pub fn new(cfg: &TrainConfig, seqs: &[Sequence]) -> Result<Self> {
        cfg.validate()?;
        let (model, mut store) = Model::init(&cfg.model, cfg.seed, cfg.w_q_init, cfg.w_t_init)?;
        if !seqs.is_empty() {
            fit_input_stats(&mut store, seqs.iter().flat_map(|s| s.frames.iter()))?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        Ok(Trainer {
            cfg: cfg.clone(),
            model,
            store,
            mode: ExecMode::from_features(),
            rng,
            pending: 0,
        })
    }

    /// Mean loss over the consecutive pairs of `frames` (one clip window).
    ///
    /// Each frame is encoded once; the state of pair `j` joins the window
    /// and the refined window predicts motion `rel[j]`.
    pub fn window_loss(&self, g: &mut Graph, frames: &[Frame], rel: &[Pose]) -> Result<(Value, WindowStats)> {
        if frames.len() != rel.len() + 1 || rel.is_empty() {
            return Err(Error::invalid(format!(
                "{} frames for {} relative poses",
                frames.len(),
                rel.len()
            )));
        }
        let clouds = frames
            .iter()
            .map(|f| self.model.encode(g, &self.store, f, self.mode))
            .collect::<Result<Vec<_>>>()?;
        let mut states = Vec::with_capacity(rel.len());
        let mut terms = Vec::with_capacity(rel.len());
        let (mut lq, mut lt) = (0.0, 0.0);
        for (j, gt) in rel.iter().enumerate() {
            states.push(self.model.pair_state(g, &self.store, &clouds[j], &clouds[j + 1], self.mode)?);
            let out = self.model.refine(g, &self.store, &states)?;
            let l = pose_loss(g, &self.store, &out, gt)?;
            lq += g.value(l.l_q).item();
            lt += g.value(l.l_t).item();
            terms.push(l.total);
        }
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = g.add(total, t)?;
        }
        let n = rel.len() as f64;
        let total = g.scale(total, 1.0 / n);
        let loss = g.value(total).item();
        Ok((
            total,
            WindowStats {
                loss,
                l_q: lq / n,
                l_t: lt / n,
                pairs: rel.len(),
            },
        ))
    }

    fn diagnostic(&self, what: &str) -> Error {
        Error::Diverged(format!(
            "{what}; parameter norm {:.6e}, gradient norm {:.6e}, step {}",
            self.store.param_norm(),
            self.store.grad_norm(),
            self.store.step_count()
        ))
    }

    /// Backpropagates one window and adds its gradients to the store.
    pub fn accumulate(&mut self, frames: &[Frame], rel: &[Pose]) -> Result<WindowStats> {
        let mut g = Graph::new();
        let (total, stats) = self.window_loss(&mut g, frames, rel)?;
        if !stats.loss.is_finite() {
            return Err(self.diagnostic(&format!("non-finite loss {}", stats.loss)));
        }
        let root = g.scale(total, 1.0 / self.cfg.batch_size as f64);
        g.backward(root)?;
        g.accumulate_param_grads(&mut self.store)?;
        self.pending += 1;
        Ok(stats)
    }

    /// Applies the accumulated gradients; returns their norm.
    pub fn step(&mut self, lr: f64) -> Result<f64> {
        let norm = match self.cfg.grad_clip {
            Some(c) => self.store.clip_grad_norm(c),
            None => self.store.grad_norm(),
        };
        if !norm.is_finite() {
            return Err(self.diagnostic("non-finite gradient"));
        }
        self.store.adam_step(lr, Adam::default());
        self.model.clamp_state_matrices(&mut self.store)?;
        self.store.zero_grads();
        self.pending = 0;
        Ok(norm)
    }

    /// One pass over every training sequence. Pairs inside a clip window
    /// are always consecutive; the windows themselves are visited in
    /// sequence order or shuffled, per `shuffle_windows`.
    pub fn epoch(&mut self, epoch: usize, seqs: &[Sequence]) -> Result<EpochLog> {
        let start = Instant::now();
        let lr = self.cfg.lr_at(epoch);
        let l = self.cfg.model.window;
        let (mut loss, mut lq, mut lt, mut pairs) = (0.0, 0.0, 0.0, 0usize);
        let (mut windows, mut skipped) = (0usize, 0usize);
        let (mut gsum, mut steps) = (0.0, 0usize);
        let mut batch: Vec<(Vec<Frame>, Vec<Pose>)> = Vec::new();
        for seq in seqs {
            let seq = if self.cfg.augment_flip && self.rng.random_bool(0.5) {
                augment_flip(seq)?
            } else {
                seq.clone()
            };
            let mut frames: Vec<Option<Frame>> = Vec::with_capacity(seq.frames.len());
            let mut gts: Vec<Pose> = Vec::with_capacity(seq.frames.len());
            for f in &seq.frames {
                let gt = f
                    .gt_pose
                    .ok_or_else(|| Error::invalid(format!("{}: frame {} lacks ground truth", seq.name, f.id)))?;
                let (f, gt) = if self.cfg.augment_jitter {
                    augment_jitter(f, &gt, &self.cfg.jitter, &mut self.rng)
                } else {
                    (f.clone(), gt)
                };
                frames.push(self.model.prepare(&f).ok());
                gts.push(gt);
            }
            let n_pairs = frames.len().saturating_sub(1);
            for t0 in (0..n_pairs).step_by(l) {
                let t1 = (t0 + l).min(n_pairs);
                let window: Option<Vec<Frame>> = frames[t0..=t1].iter().cloned().collect();
                let Some(window) = window else {
                    skipped += 1;
                    log::warn!("{}: skipping window at pair {t0} (rejected frame)", seq.name);
                    continue;
                };
                let rel: Vec<Pose> = (t0..t1).map(|t| gts[t].relative_to(&gts[t + 1])).collect();
                batch.push((window, rel));
            }
        }
        if self.cfg.shuffle_windows {
            batch.shuffle(&mut self.rng);
        }
        for (window, rel) in &batch {
            let s = self.accumulate(window, rel)?;
            let k = s.pairs as f64;
            loss += s.loss * k;
            lq += s.l_q * k;
            lt += s.l_t * k;
            pairs += s.pairs;
            windows += 1;
            if self.pending == self.cfg.batch_size {
                gsum += self.step(lr)?;
                steps += 1;
            }
        }
        if self.pending > 0 {
            gsum += self.step(lr)?;
            steps += 1;
        }
        if pairs == 0 {
            return Err(Error::invalid("no trainable frame pairs"));
        }
        let n = pairs as f64;
        let log = EpochLog {
            epoch: epoch + 1,
            lr,
            loss: loss / n,
            l_q: lq / n,
            l_t: lt / n,
            w_q: self.store.value(crate::com::LOSS_W_Q)?.item(),
            w_t: self.store.value(crate::com::LOSS_W_T)?.item(),
            windows,
            skipped_windows: skipped,
            grad_norm: gsum / steps.max(1) as f64,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {} lr {:.3e} loss {:.5} l_q {:.5} l_t {:.5} ({:.1}s)",
            log.epoch,
            log.lr,
            log.loss,
            log.l_q,
            log.l_t,
            log.seconds
        );
        Ok(log)
    }
}

pub fn checkpoint_path(out_dir: &Path, epoch: usize) -> PathBuf {
    out_dir.join("checkpoints").join(format!("epoch_{epoch:03}.ckpt"))
}

/// Trains on `seqs`, writing a checkpoint and the run metadata after every
/// epoch when `out_dir` is given.
pub fn train(cfg: &TrainConfig, seqs: &[Sequence], out_dir: Option<&Path>) -> Result<TrainOutcome> {
    train_with(cfg, seqs, out_dir, |_, _, _| true)
}

/// Like [`train`], calling `on_epoch` after every epoch; returning `false`
/// stops training.
pub fn train_with(
    cfg: &TrainConfig,
    seqs: &[Sequence],
    out_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochLog, &Model, &ParamStore) -> bool,
) -> Result<TrainOutcome> {
    if !seqs.iter().any(Sequence::has_gt) {
        return Err(Error::invalid("training needs at least one sequence with ground truth"));
    }
    let seqs: Vec<Sequence> = seqs.iter().filter(|s| s.has_gt()).cloned().collect();
    let mut trainer = Trainer::new(cfg, &seqs)?;
    let mut meta = RunMetadata {
        config: cfg.clone(),
        sequences: seqs.iter().map(|s| s.name.clone()).collect(),
        epochs: Vec::new(),
        version: env!("CARGO_PKG_VERSION").to_owned(),
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir.join("checkpoints"))?;
    }
    let start = Instant::now();
    for e in 0..cfg.epochs {
        let log = trainer.epoch(e, &seqs)?;
        meta.epochs.push(log.clone());
        if let Some(dir) = out_dir {
            trainer.store.save(&checkpoint_path(dir, e + 1))?;
            let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::Config(e.to_string()))?;
            std::fs::write(dir.join("run.json"), json)?;
        }
        let go_on = on_epoch(&log, &trainer.model, &trainer.store);
        let over = cfg
            .time_budget_s
            .is_some_and(|b| start.elapsed().as_secs_f64() >= b);
        if !go_on || over {
            break;
        }
    }
    Ok(TrainOutcome {
        model: trainer.model,
        store: trainer.store,
        log: meta.epochs,
    })
}
