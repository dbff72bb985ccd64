use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use radar_odom::dataio::{load_sequence, synth_generate, write_sequence, Sequence, SynthConfig};
use radar_odom::diff::ParamStore;
use radar_odom::harness::{
    evaluate_all, icp_baseline, infer_sequence, plot_emit, train, zero_motion, EvalInput, EvalReport, IcpConfig,
    Model, ModelConfig, RunMetadata, TrainConfig,
};
use radar_odom::par::ExecMode;
use radar_odom::{Error, Result};

#[derive(Parser)]
#[command(name = "radar-odom", version, about = "4D radar odometry: synthesize, train, infer, evaluate, plot")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic sequences with ground truth
    Synth {
        /// Synthetic scene config (TOML)
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of sequences, seeds `seed..seed+count`
        #[arg(long, default_value_t = 1)]
        count: u64,
        /// Drop position noise, velocity noise and outliers
        #[arg(long)]
        noiseless: bool,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on sequences with ground truth
    Train {
        /// Training config (TOML)
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Sequence directory or manifest; repeatable
        #[arg(long, required = true)]
        sequence: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate trajectories with a trained checkpoint
    Infer {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, required = true)]
        sequence: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment errors against ground truth
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Method::Model)]
        method: Method,
        #[arg(long, required = true)]
        sequence: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Top-down trajectory SVG and per-length error CSV
    Plot {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// `report.json` written by `eval`
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, required = true)]
        sequence: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Bin,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Method {
    Model,
    Icp,
    Zero,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite(_) | Error::Diverged(_) | Error::DegenerateQuaternion(_) => 3,
        _ => 2,
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Synth {
            config,
            seed,
            count,
            noiseless,
            format,
            out,
        } => {
            let mut cfg = match config {
                Some(p) => SynthConfig::load(&p)?,
                None => SynthConfig::default(),
            };
            if noiseless {
                cfg = cfg.noiseless();
            }
            let ext = match format {
                Format::Csv => "csv",
                Format::Bin => "bin",
            };
            for s in seed..seed + count {
                let seq = synth_generate(&cfg, s)?.sequence;
                let path = write_sequence(&seq, &out.join(&seq.name), ext)?;
                log::info!("{}: {} frames -> {}", seq.name, seq.frames.len(), path.display());
            }
            Ok(())
        }
        Cmd::Train {
            config,
            seed,
            epochs,
            sequence,
            out,
        } => {
            let mut cfg = match config {
                Some(p) => TrainConfig::load(&p)?,
                None => TrainConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            cfg.validate()?;
            let seqs = load_all(&sequence)?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("config.toml"), cfg.to_toml()?)?;
            let outcome = train(&cfg, &seqs, Some(&out))?;
            let last = outcome.log.last().expect("at least one epoch");
            println!(
                "trained {} epochs, final loss {:.5} (l_q {:.5}, l_t {:.5}); checkpoints in {}",
                outcome.log.len(),
                last.loss,
                last.l_q,
                last.l_t,
                out.join("checkpoints").display()
            );
            Ok(())
        }
        Cmd::Infer {
            config,
            checkpoint,
            sequence,
            out,
        } => {
            let (model, store) = load_model(config.as_deref(), &checkpoint)?;
            std::fs::create_dir_all(&out)?;
            for seq in load_all(&sequence)? {
                let inf = infer_sequence(&model, &store, &seq.frames, ExecMode::from_features())?;
                let path = out.join(format!("{}.txt", seq.name));
                inf.trajectory.save_kitti(&path)?;
                let mut csv = String::from("t,skipped,millis,reason\n");
                for p in &inf.pairs {
                    csv += &format!(
                        "{},{},{:.3},{}\n",
                        p.t,
                        p.skipped,
                        p.millis,
                        p.reason.as_deref().unwrap_or("").replace(',', ";")
                    );
                }
                std::fs::write(out.join(format!("{}.pairs.csv", seq.name)), csv)?;
                println!(
                    "{}: {} poses -> {} ({} skipped pairs, {:.1} ms/pair)",
                    seq.name,
                    inf.trajectory.len(),
                    path.display(),
                    inf.skipped(),
                    inf.mean_millis()
                );
            }
            Ok(())
        }
        Cmd::Eval {
            config,
            checkpoint,
            method,
            sequence,
            out,
        } => {
            let seqs = load_all(&sequence)?;
            let report = evaluate_method(method, config.as_deref(), checkpoint.as_deref(), &seqs)?;
            report.save(&out)?;
            print!("{}", report.to_text());
            Ok(())
        }
        Cmd::Plot {
            config,
            checkpoint,
            report,
            sequence,
            out,
        } => {
            let seqs = load_all(&sequence)?;
            let model = checkpoint
                .as_deref()
                .map(|c| load_model(config.as_deref(), c))
                .transpose()?;
            let mut trajs = Vec::new();
            for seq in &seqs {
                if seq.has_gt() {
                    trajs.push((format!("{} gt", seq.name), seq.gt_trajectory()?));
                }
                if let Some((m, s)) = &model {
                    let inf = infer_sequence(m, s, &seq.frames, ExecMode::from_features())?;
                    trajs.push((format!("{} pred", seq.name), inf.trajectory));
                }
            }
            let report = report.as_deref().map(EvalReport::load_json).transpose()?;
            let refs: Vec<(&str, &_)> = trajs.iter().map(|(n, t)| (n.as_str(), t)).collect();
            for p in plot_emit(&out, report.as_ref(), &refs)? {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<Sequence>> {
    paths
        .iter()
        .map(|p| {
            let manifest = if p.is_dir() { p.join("manifest.toml") } else { p.clone() };
            load_sequence(&manifest)
        })
        .collect()
}

/// Model settings from `--config`, else from the `run.json` of the training
/// run that wrote the checkpoint, else the defaults.
fn model_config(config: Option<&Path>, checkpoint: &Path) -> Result<ModelConfig> {
    if let Some(p) = config {
        return Ok(TrainConfig::load(p)?.model);
    }
    let run = checkpoint
        .parent()
        .and_then(Path::parent)
        .map(|d| d.join("run.json"))
        .filter(|p| p.exists());
    match run {
        Some(p) => {
            let text = std::fs::read_to_string(&p)?;
            let meta: RunMetadata = serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: p.clone(),
                line: e.line(),
                msg: e.to_string(),
            })?;
            Ok(meta.config.model)
        }
        None => Ok(ModelConfig::default()),
    }
}

fn load_model(config: Option<&Path>, checkpoint: &Path) -> Result<(Model, ParamStore)> {
    let cfg = model_config(config, checkpoint)?;
    let store = ParamStore::load(checkpoint)?;
    let model = Model::attach(&cfg, &store)?;
    Ok((model, store))
}

fn evaluate_method(
    method: Method,
    config: Option<&Path>,
    checkpoint: Option<&Path>,
    seqs: &[Sequence],
) -> Result<EvalReport> {
    let model = match (method, checkpoint) {
        (Method::Model, Some(c)) => Some(load_model(config, c)?),
        (Method::Model, None) => return Err(Error::InvalidArgument("--method model needs --checkpoint".into())),
        _ => None,
    };
    let mut rows = Vec::with_capacity(seqs.len());
    for seq in seqs {
        let gt = seq.gt_trajectory()?;
        let (pred, ms, skipped) = match (&model, method) {
            (Some((m, s)), _) => {
                let inf = infer_sequence(m, s, &seq.frames, ExecMode::from_features())?;
                let ms = inf.mean_millis();
                let sk = inf.skipped();
                (inf.trajectory, Some(ms), sk)
            }
            (None, Method::Icp) => {
                let r = icp_baseline(&seq.frames, &IcpConfig::default())?;
                let sk = r.flags.iter().filter(|&&f| f).count();
                (r.trajectory, None, sk)
            }
            _ => (zero_motion(&gt), None, 0),
        };
        rows.push((seq.name.clone(), gt, pred, ms, skipped));
    }
    let inputs: Vec<EvalInput<'_>> = rows
        .iter()
        .map(|(name, gt, pred, ms, skipped)| EvalInput {
            name,
            gt,
            pred,
            ms_per_pair: *ms,
            skipped_pairs: *skipped,
        })
        .collect();
    evaluate_all(&inputs, &[], ExecMode::from_features())
}
