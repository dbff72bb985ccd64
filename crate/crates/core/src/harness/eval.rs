use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{rpe_rmse, LengthError, Pose, RpeResult, Trajectory, STANDARD_LENGTHS};
use crate::par::{self, ExecMode};

pub const CSV_HEADER: &str = "seq,length_m,t_rel,r_rel";

/// Segment errors of one sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceEval {
    pub name: String,
    /// m/m
    pub t_rel: f64,
    /// deg/m
    pub r_rel: f64,
    pub per_length: Vec<LengthError>,
    /// Mean wall-clock per frame pair, when measured.
    pub ms_per_pair: Option<f64>,
    pub skipped_pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sequences: Vec<SequenceEval>,
    pub mean_t_rel: f64,
    pub mean_r_rel: f64,
}

/// Segment RMSE over `lengths` (the standard 20..160 m set when empty).
pub fn evaluate(gt: &Trajectory, pred: &Trajectory, lengths: &[f64]) -> Result<RpeResult> {
    let lengths = if lengths.is_empty() { &STANDARD_LENGTHS[..] } else { lengths };
    rpe_rmse(gt, pred, lengths)
}

/// One sequence to score.
pub struct EvalInput<'a> {
    pub name: &'a str,
    pub gt: &'a Trajectory,
    pub pred: &'a Trajectory,
    pub ms_per_pair: Option<f64>,
    pub skipped_pairs: usize,
}

pub fn evaluate_sequence(input: &EvalInput<'_>, lengths: &[f64]) -> Result<SequenceEval> {
    let r = evaluate(input.gt, input.pred, lengths)?;
    Ok(SequenceEval {
        name: input.name.to_owned(),
        t_rel: r.t_rel,
        r_rel: r.r_rel,
        per_length: r.per_length,
        ms_per_pair: input.ms_per_pair,
        skipped_pairs: input.skipped_pairs,
    })
}

/// Scores every sequence concurrently.
pub fn evaluate_all(inputs: &[EvalInput<'_>], lengths: &[f64], mode: ExecMode) -> Result<EvalReport> {
    let seqs = par::map_slice(mode, inputs, |i| evaluate_sequence(i, lengths))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    EvalReport::new(seqs)
}

/// Prediction that never moves.
pub fn zero_motion(gt: &Trajectory) -> Trajectory {
    let mut t = Trajectory::from_poses(vec![Pose::IDENTITY; gt.len()]);
    t.frame_ids = gt.frame_ids.clone();
    t
}

impl EvalReport {
    pub fn new(sequences: Vec<SequenceEval>) -> Result<Self> {
        if sequences.is_empty() {
            return Err(Error::invalid("empty evaluation report"));
        }
        let n = sequences.len() as f64;
        Ok(EvalReport {
            mean_t_rel: sequences.iter().map(|s| s.t_rel).sum::<f64>() / n,
            mean_r_rel: sequences.iter().map(|s| s.r_rel).sum::<f64>() / n,
            sequences,
        })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for s in &self.sequences {
            for l in &s.per_length {
                writeln!(w, "{},{},{},{}", s.name, l.length, l.t_rel, l.r_rel)?;
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("ascii")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<20} {:>10} {:>10} {:>10} {:>8}", "sequence", "t_rel", "r_rel", "ms/pair", "skipped");
        for q in &self.sequences {
            let ms = q.ms_per_pair.map_or_else(|| "-".to_owned(), |m| format!("{m:.1}"));
            let _ = writeln!(
                s,
                "{:<20} {:>10.4} {:>10.4} {:>10} {:>8}",
                q.name, q.t_rel, q.r_rel, ms, q.skipped_pairs
            );
        }
        let _ = writeln!(s, "{:<20} {:>10.4} {:>10.4}", "mean", self.mean_t_rel, self.mean_r_rel);
        s
    }

    /// Writes `report.txt`, `report.csv` and `report.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let txt = dir.join("report.txt");
        let csv = dir.join("report.csv");
        let json = dir.join("report.json");
        std::fs::write(&txt, self.to_text())?;
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(&csv)?))?;
        let body = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(&json, body)?;
        Ok(vec![txt, csv, json])
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: e.line(),
            msg: e.to_string(),
        })
    }
}
