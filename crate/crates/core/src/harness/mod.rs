//! Training, inference, evaluation, the ICP baseline and plotting.

mod config;
mod eval;
mod icp;
mod infer;
mod model;
mod plot;
mod train;

pub use config::{ModelConfig, TrainConfig};
pub use eval::{evaluate, evaluate_all, evaluate_sequence, zero_motion, EvalInput, EvalReport, SequenceEval, CSV_HEADER};
pub use icp::{icp_baseline, icp_many, icp_pair, kabsch, IcpConfig, IcpResult, IcpTrajectory};
pub use infer::{infer_sequence, Inference, PairRecord, Session};
pub use model::Model;
pub use plot::{per_length_csv, plot_emit, trajectory_svg};
pub use train::{checkpoint_path, train, train_with, EpochLog, RunMetadata, TrainOutcome, Trainer, WindowStats};
