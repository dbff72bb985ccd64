use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::cam::Cam;
use crate::com::{init_loss_weights, BiBlock, PoolState, PoseHead, PoseOutput, Ssm};
use crate::dataio::{filter_points, Frame};
use crate::diff::{Graph, ParamStore, Value};
use crate::error::{Error, Result};
use crate::lcm::Lcm;
use crate::par::ExecMode;
use crate::pointops::{Backbone, CloudVar};

/// The full network: encoder, completion, association, state pooling,
/// bidirectional refinement and pose head.
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub backbone: Backbone,
    pub lcm: Lcm,
    pub cam: Cam,
    pub pool: PoolState,
    pub blocks: Vec<BiBlock>,
    pub head: PoseHead,
}

impl Model {
    /// Builds the network and a freshly initialized parameter store.
    pub fn init(cfg: &ModelConfig, seed: u64, w_q: f64, w_t: f64) -> Result<(Model, ParamStore)> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = cfg.channels;
        let act = cfg.activation;
        let backbone = Backbone::init(&mut store, &mut rng, "backbone", &cfg.backbone())?;
        let lcm = Lcm::init(&mut store, &mut rng, "lcm", &cfg.lcm())?;
        let cam = Cam::init(&mut store, &mut rng, "cam", &cfg.cam())?;
        let pool = PoolState::init(&mut store, &mut rng, "com.pool", c, act)?;
        let blocks = (0..cfg.bi_blocks)
            .map(|i| BiBlock::init(&mut store, &mut rng, &format!("com.block{i}"), c, cfg.dense_ssm, act))
            .collect::<Result<Vec<_>>>()?;
        let head = PoseHead::init(&mut store, &mut rng, "com.head", c, act)?;
        init_loss_weights(&mut store, w_q, w_t)?;
        Ok((
            Model {
                cfg: cfg.clone(),
                backbone,
                lcm,
                cam,
                pool,
                blocks,
                head,
            },
            store,
        ))
    }

    /// Rebuilds the network for an existing store, checking that every
    /// parameter is present with the expected shape.
    pub fn attach(cfg: &ModelConfig, store: &ParamStore) -> Result<Model> {
        let (model, fresh) = Model::init(cfg, 0, 0.0, 0.0)?;
        for (path, p) in fresh.iter() {
            let got = store
                .get(path)
                .map_err(|_| Error::Checkpoint(format!("missing parameter `{path}`")))?;
            if got.value.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "`{path}`: shape {:?}, expected {:?}",
                    got.value.shape(),
                    p.value.shape()
                )));
            }
        }
        if store.len() != fresh.len() {
            return Err(Error::Checkpoint(format!(
                "{} parameters, expected {}",
                store.len(),
                fresh.len()
            )));
        }
        Ok(model)
    }

    pub fn ssms(&self) -> Vec<&Ssm> {
        let mut v: Vec<&Ssm> = self.blocks.iter().flat_map(|b| b.ssms()).collect();
        v.push(&self.cam.fine.balance.ssm);
        v.push(&self.cam.coarse.balance.ssm);
        v
    }

    /// Projects every state matrix back inside the admissible spectral radius.
    pub fn clamp_state_matrices(&self, store: &mut ParamStore) -> Result<()> {
        for s in self.ssms() {
            s.clamp_spectral_radius(store)?;
        }
        Ok(())
    }

    /// Field-of-view and height filtering.
    pub fn prepare(&self, frame: &Frame) -> Result<Frame> {
        filter_points(frame, self.cfg.fov_half_angle_deg, self.cfg.height_bounds())
    }

    /// Encodes and completes one frame: `n_points + m_complete` points.
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, frame: &Frame, mode: ExecMode) -> Result<CloudVar> {
        let p = self.backbone.forward(g, store, frame, mode)?;
        let (q, _) = self.lcm.complete(g, store, &p, mode)?;
        Ok(q)
    }

    /// State `g_t` (`[1, C]`) of the pair `(q1, q2)`.
    pub fn pair_state(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        q1: &CloudVar,
        q2: &CloudVar,
        mode: ExecMode,
    ) -> Result<Value> {
        let corr = self.cam.forward(g, store, q1, q2, mode)?;
        self.pool.forward(g, store, corr)
    }

    /// Refines the window (oldest state first) and reads the newest pose.
    pub fn refine(&self, g: &mut Graph, store: &ParamStore, states: &[Value]) -> Result<PoseOutput> {
        if states.is_empty() {
            return Err(Error::invalid("empty state window"));
        }
        let mut x = g.concat_rows(states)?;
        for b in &self.blocks {
            x = b.forward(g, store, x)?;
        }
        self.head.forward(g, store, x)
    }
}
