//! Prediction CSV (`t,joint,axis,predicted,truth,observed,q_s0,...,std`),
//! per-joint plot series and a self-contained SVG chart.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::data::Sequence;
use crate::error::{Error, Result};
use crate::ssm::Prediction;

const AXES: [&str; 3] = ["x", "y", "z"];

/// One entry of a prediction file.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub t: usize,
    pub joint: usize,
    pub axis: usize,
    pub predicted: f64,
    /// `None` where the truth is missing.
    pub truth: Option<f64>,
    pub observed: bool,
    pub q: Vec<f64>,
    pub std: f64,
}

pub fn write_prediction_csv<W: Write>(mut w: W, pred: &Prediction, truth: &Sequence) -> Result<()> {
    let states = pred.q.nrows();
    let qs: Vec<String> = (0..states).map(|s| format!("q_s{s}")).collect();
    writeln!(w, "t,joint,axis,predicted,truth,observed,{},std", qs.join(","))?;
    for t in 0..pred.predicted.nrows() {
        let q: Vec<String> = pred.q.column(t).iter().map(|v| v.to_string()).collect();
        for c in 0..pred.predicted.ncols() {
            let obs = truth.mask[(t, c)];
            let tv = if obs { truth.values[(t, c)].to_string() } else { String::new() };
            writeln!(
                w,
                "{t},{},{},{},{tv},{},{},{}",
                c / 3,
                AXES[c % 3],
                pred.predicted[(t, c)],
                u8::from(obs),
                q.join(","),
                pred.std[(t, c)]
            )?;
        }
    }
    Ok(())
}

pub fn read_prediction_csv<R: Read>(r: R) -> Result<Vec<PredictionRow>> {
    let mut lines = BufReader::new(r).lines();
    let head = lines.next().ok_or(Error::Parse { line: 1, msg: "empty file".into() })??;
    let cols: Vec<&str> = head.trim_end().split(',').collect();
    let states = cols.len().saturating_sub(7);
    let expected_q: Vec<String> = (0..states).map(|s| format!("q_s{s}")).collect();
    if cols.len() < 8
        || cols[..6] != ["t", "joint", "axis", "predicted", "truth", "observed"]
        || cols[6..6 + states] != expected_q.iter().map(String::as_str).collect::<Vec<_>>()[..]
        || cols[cols.len() - 1] != "std"
    {
        return Err(Error::Parse {
            line: 1,
            msg: format!("unexpected prediction header `{}`", head.trim_end()),
        });
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.trim_end().split(',').collect();
        let err = |msg: String| Error::Parse { line: lineno, msg };
        if cells.len() != cols.len() {
            return Err(err(format!("expected {} cells, found {}", cols.len(), cells.len())));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| err(format!("non-numeric cell `{s}`")));
        let int = |s: &str| s.trim().parse::<usize>().map_err(|_| err(format!("bad integer `{s}`")));
        let axis = AXES
            .iter()
            .position(|a| *a == cells[2].trim())
            .ok_or_else(|| err(format!("bad axis `{}`", cells[2])))?;
        let truth = if cells[4].trim().is_empty() { None } else { Some(num(cells[4])?) };
        out.push(PredictionRow {
            t: int(cells[0])?,
            joint: int(cells[1])?,
            axis,
            predicted: num(cells[3])?,
            truth,
            observed: int(cells[5])? == 1,
            q: cells[6..6 + states].iter().map(|c| num(c)).collect::<Result<_>>()?,
            std: num(cells[cells.len() - 1])?,
        });
    }
    Ok(out)
}

/// One plotted sample of one joint axis.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotPoint {
    pub t: usize,
    pub axis: usize,
    pub truth: Option<f64>,
    pub prediction: f64,
    pub lower: f64,
    pub upper: f64,
    pub state: usize,
}

/// Per-joint series with a two-standard-deviation band.
pub fn plot_series(rows: &[PredictionRow]) -> Vec<Vec<PlotPoint>> {
    let joints = rows.iter().map(|r| r.joint + 1).max().unwrap_or(0);
    let mut out = vec![Vec::new(); joints];
    for r in rows {
        let state = r
            .q
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0;
        out[r.joint].push(PlotPoint {
            t: r.t,
            axis: r.axis,
            truth: if r.observed { r.truth } else { None },
            prediction: r.predicted,
            lower: r.predicted - 2.0 * r.std,
            upper: r.predicted + 2.0 * r.std,
            state,
        });
    }
    out
}

/// Writes `joint<j>.csv` (`t,axis,truth,prediction,lower,upper,state`) and
/// `joint<j>.svg` per joint into `dir`; returns the written paths.
pub fn write_plot_series(dir: &Path, rows: &[PredictionRow]) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (j, series) in plot_series(rows).iter().enumerate() {
        let path = dir.join(format!("joint{j}.csv"));
        let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
        writeln!(w, "t,axis,truth,prediction,lower,upper,state")?;
        for p in series {
            let truth = p.truth.map_or(String::new(), |v| v.to_string());
            writeln!(
                w,
                "{},{},{truth},{},{},{},{}",
                p.t, AXES[p.axis], p.prediction, p.lower, p.upper, p.state
            )?;
        }
        w.flush()?;
        written.push(path);
        let svg = dir.join(format!("joint{j}.svg"));
        std::fs::write(&svg, render_svg(series, &format!("joint {j}")))?;
        written.push(svg);
    }
    Ok(written)
}

/// Three stacked panels (x, y, z): truth in black, prediction in red with a
/// shaded band, and a state strip along the bottom of each panel.
pub fn render_svg(series: &[PlotPoint], title: &str) -> String {
    const W: f64 = 800.0;
    const PANEL: f64 = 180.0;
    const PAD: f64 = 40.0;
    let colors = ["#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b"];
    let height = PAD + 3.0 * (PANEL + PAD);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{height}" viewBox="0 0 {W} {height}">"##
    );
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="white"/>"##);
    let _ = writeln!(s, r##"<text x="{PAD}" y="24" font-family="sans-serif" font-size="16">{title}</text>"##);
    let (t0, t1) = series
        .iter()
        .fold((usize::MAX, 0), |(a, b), p| (a.min(p.t), b.max(p.t)));
    let span = (t1.saturating_sub(t0)).max(1) as f64;
    for (axis, name) in AXES.iter().enumerate() {
        let pts: Vec<&PlotPoint> = series.iter().filter(|p| p.axis == axis).collect();
        if pts.is_empty() {
            continue;
        }
        let top = PAD + axis as f64 * (PANEL + PAD);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in &pts {
            lo = lo.min(p.lower).min(p.truth.unwrap_or(p.lower));
            hi = hi.max(p.upper).max(p.truth.unwrap_or(p.upper));
        }
        if hi.is_nan() || lo.is_nan() || hi <= lo {
            hi = lo + 1.0;
        }
        let x = |t: usize| PAD + (t - t0) as f64 / span * (W - 2.0 * PAD);
        let y = |v: f64| top + (hi - v) / (hi - lo) * PANEL;
        let _ = writeln!(
            s,
            r##"<rect x="{PAD}" y="{top}" width="{}" height="{PANEL}" fill="none" stroke="#999"/>"##,
            W - 2.0 * PAD
        );
        let _ = writeln!(
            s,
            r##"<text x="8" y="{}" font-family="sans-serif" font-size="14">{}</text>"##,
            top + PANEL / 2.0,
            name
        );
        let mut band: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", x(p.t), y(p.upper))).collect();
        band.extend(pts.iter().rev().map(|p| format!("{:.2},{:.2}", x(p.t), y(p.lower))));
        let _ = writeln!(s, r##"<polygon points="{}" fill="#f4a6a6" fill-opacity="0.4" stroke="none"/>"##, band.join(" "));
        let truth: Vec<String> = pts
            .iter()
            .filter_map(|p| p.truth.map(|v| format!("{:.2},{:.2}", x(p.t), y(v))))
            .collect();
        let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="black" stroke-width="1.2"/>"##, truth.join(" "));
        let pred: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", x(p.t), y(p.prediction))).collect();
        let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="red" stroke-width="1.2"/>"##, pred.join(" "));
        let w = (W - 2.0 * PAD) / span;
        for p in &pts {
            let _ = writeln!(
                s,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="6" fill="{}"/>"##,
                x(p.t),
                top + PANEL - 6.0,
                w.max(1.0),
                colors[p.state % colors.len()]
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
