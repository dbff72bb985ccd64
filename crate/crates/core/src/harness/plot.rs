use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::eval::EvalReport;
use crate::error::{Error, Result};
use crate::geom::Trajectory;

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#17becf"];
const SIZE: f64 = 600.0;
const MARGIN: f64 = 40.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Top-down (x right, y up) overlay of labelled trajectories.
pub fn trajectory_svg(trajs: &[(&str, &Trajectory)]) -> Result<String> {
    if trajs.is_empty() || trajs.iter().all(|(_, t)| t.is_empty()) {
        return Err(Error::invalid("nothing to plot"));
    }
    let pts = trajs.iter().flat_map(|(_, t)| t.poses.iter().map(|p| (p.t[0], p.t[1])));
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in pts {
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::NonFinite("trajectory coordinate".into()));
        }
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let span = (x1 - x0).max(y1 - y0).max(1.0);
    let k = (SIZE - 2.0 * MARGIN) / span;
    let map = |x: f64, y: f64| (MARGIN + (x - x0) * k, SIZE - MARGIN - (y - y0) * k);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, (name, t)) in trajs.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = t
            .poses
            .iter()
            .map(|p| {
                let (u, v) = map(p.t[0], p.t[1]);
                format!("{u:.2},{v:.2}")
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"><title>{}</title></polyline>"#,
            points.join(" "),
            escape(name)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="{color}">{}</text>"#,
            MARGIN,
            16.0 * (i + 1) as f64,
            escape(name)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="black">{span:.1} m</text>"#,
        SIZE - MARGIN - 60.0,
        SIZE - 12.0
    );
    s.push_str("</svg>\n");
    Ok(s)
}

/// `length_m,t_rel,r_rel` averaged over the report's sequences, one row
/// per segment length.
pub fn per_length_csv(report: &EvalReport) -> Result<String> {
    let mut lengths: Vec<f64> = report
        .sequences
        .iter()
        .flat_map(|s| s.per_length.iter().map(|l| l.length))
        .collect();
    lengths.sort_by(f64::total_cmp);
    lengths.dedup();
    if lengths.is_empty() {
        return Err(Error::invalid("report has no segment errors"));
    }
    let mut s = String::from("length_m,t_rel,r_rel\n");
    for len in lengths {
        let rows: Vec<_> = report
            .sequences
            .iter()
            .flat_map(|q| q.per_length.iter().filter(|l| l.length == len))
            .collect();
        let n = rows.len() as f64;
        let t = rows.iter().map(|l| l.t_rel).sum::<f64>() / n;
        let r = rows.iter().map(|l| l.r_rel).sum::<f64>() / n;
        let _ = writeln!(s, "{len},{t},{r}");
    }
    Ok(s)
}

/// Writes `trajectories.svg` and/or `per_length.csv` into `dir`.
pub fn plot_emit(dir: &Path, report: Option<&EvalReport>, trajs: &[(&str, &Trajectory)]) -> Result<Vec<PathBuf>> {
    if report.is_none() && trajs.is_empty() {
        return Err(Error::invalid("nothing to plot"));
    }
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    if !trajs.is_empty() {
        let p = dir.join("trajectories.svg");
        std::fs::write(&p, trajectory_svg(trajs)?)?;
        out.push(p);
    }
    if let Some(r) = report {
        let p = dir.join("per_length.csv");
        std::fs::write(&p, per_length_csv(r)?)?;
        out.push(p);
    }
    Ok(out)
}
