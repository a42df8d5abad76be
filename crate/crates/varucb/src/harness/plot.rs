//! Hand-rolled SVG 1.1 output: cumulative-regret curves (mean line plus a
//! min-max band across seeds, one color per agent) and per-agent
//! reliability diagrams. No drawing dependencies; documents are standalone.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::runner::RunSummary;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("no successful runs to plot")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const PALETTE: [&str; 8] =
    ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

/// Cap on polyline vertices per series; longer series are subsampled.
const MAX_POINTS: usize = 1200;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn file_token(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let s = if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.2}")
    };
    let s = if s.contains('.') { s.trim_end_matches('0').trim_end_matches('.') } else { &s };
    s.to_string()
}

/// Maps data coordinates into a margined screen viewport (y flipped).
struct Frame {
    x_max: f64,
    y_max: f64,
    width: f64,
    height: f64,
}

const MARGIN_LEFT: f64 = 62.0;
const MARGIN_RIGHT: f64 = 16.0;
const MARGIN_TOP: f64 = 18.0;
const MARGIN_BOTTOM: f64 = 46.0;

impl Frame {
    fn new(x_max: f64, y_max: f64, width: f64, height: f64) -> Self {
        Frame { x_max: x_max.max(1e-12), y_max: y_max.max(1e-12), width, height }
    }

    fn sx(&self, x: f64) -> f64 {
        MARGIN_LEFT + x / self.x_max * (self.width - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn sy(&self, y: f64) -> f64 {
        self.height - MARGIN_BOTTOM
            - y / self.y_max * (self.height - MARGIN_TOP - MARGIN_BOTTOM)
    }

    fn open(&self, out: &mut String) {
        write!(
            out,
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
             <svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" \
             width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
             <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            w = self.width,
            h = self.height
        )
        .unwrap();
    }

    /// Axis lines, 5 ticks per axis, and axis titles.
    fn axes(&self, out: &mut String, x_label: &str, y_label: &str) {
        let (x0, y0) = (MARGIN_LEFT, self.height - MARGIN_BOTTOM);
        let (x1, y1) = (self.width - MARGIN_RIGHT, MARGIN_TOP);
        write!(
            out,
            "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"#333\"/>\n\
             <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"#333\"/>\n"
        )
        .unwrap();
        for i in 0..=4 {
            let fx = self.x_max * i as f64 / 4.0;
            let fy = self.y_max * i as f64 / 4.0;
            let sx = self.sx(fx);
            let sy = self.sy(fy);
            write!(
                out,
                "<line x1=\"{sx:.2}\" y1=\"{y0}\" x2=\"{sx:.2}\" y2=\"{:.2}\" stroke=\"#333\"/>\n\
                 <text x=\"{sx:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"middle\" \
                 fill=\"#333\">{}</text>\n",
                y0 + 4.0,
                y0 + 16.0,
                fmt_num(fx)
            )
            .unwrap();
            write!(
                out,
                "<line x1=\"{:.2}\" y1=\"{sy:.2}\" x2=\"{x0}\" y2=\"{sy:.2}\" stroke=\"#333\"/>\n\
                 <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"end\" \
                 fill=\"#333\">{}</text>\n",
                x0 - 4.0,
                x0 - 7.0,
                sy + 4.0,
                fmt_num(fy)
            )
            .unwrap();
        }
        write!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\" \
             fill=\"#333\">{}</text>\n",
            (x0 + x1) / 2.0,
            self.height - 10.0,
            escape(x_label)
        )
        .unwrap();
        write!(
            out,
            "<text x=\"14\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\" \
             transform=\"rotate(-90 14 {:.2})\" fill=\"#333\">{}</text>\n",
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(y_label)
        )
        .unwrap();
    }
}

fn points_attr(frame: &Frame, pts: impl Iterator<Item = (f64, f64)>) -> String {
    let mut s = String::new();
    for (x, y) in pts {
        if !s.is_empty() {
            s.push(' ');
        }
        write!(s, "{:.2},{:.2}", frame.sx(x), frame.sy(y)).unwrap();
    }
    s
}

/// Indices to keep when a series is longer than [`MAX_POINTS`]: evenly
/// strided, always including the last round.
fn sample_indices(len: usize) -> Vec<usize> {
    if len <= MAX_POINTS {
        return (0..len).collect();
    }
    let stride = len.div_ceil(MAX_POINTS);
    let mut idx: Vec<usize> = (0..len).step_by(stride).collect();
    if *idx.last().unwrap() != len - 1 {
        idx.push(len - 1);
    }
    idx
}

struct AgentSeries {
    /// Per-round (mean, min, max) across seeds, truncated to the shortest
    /// seed's length.
    rows: Vec<(f64, f64, f64)>,
    seeds: usize,
}

fn regret_series(summaries: &[&RunSummary]) -> BTreeMap<String, AgentSeries> {
    let mut by_agent: BTreeMap<String, Vec<&[f64]>> = BTreeMap::new();
    for s in summaries {
        if !s.cum_regret.is_empty() {
            by_agent.entry(s.agent.clone()).or_default().push(&s.cum_regret);
        }
    }
    by_agent
        .into_iter()
        .map(|(agent, series)| {
            let len = series.iter().map(|s| s.len()).min().unwrap_or(0);
            let rows = (0..len)
                .map(|i| {
                    let vals = series.iter().map(|s| s[i]);
                    let mut mean = 0.0;
                    let mut lo = f64::INFINITY;
                    let mut hi = f64::NEG_INFINITY;
                    for v in vals {
                        mean += v;
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                    (mean / series.len() as f64, lo, hi)
                })
                .collect();
            (agent, AgentSeries { rows, seeds: series.len() })
        })
        .collect()
}

fn regret_svg(agents: &BTreeMap<String, AgentSeries>) -> String {
    let (width, height) = (800.0, 500.0);
    let x_max = agents.values().map(|a| a.rows.len()).max().unwrap_or(1) as f64;
    let y_max = agents
        .values()
        .flat_map(|a| a.rows.iter().map(|r| r.2))
        .fold(0.0f64, f64::max)
        * 1.05;
    let frame = Frame::new(x_max, y_max, width, height);

    let mut out = String::new();
    frame.open(&mut out);
    frame.axes(&mut out, "round", "cumulative regret");

    for (i, (name, series)) in agents.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let idx = sample_indices(series.rows.len());
        if series.seeds > 1 {
            // Band: max curve forward, min curve back.
            let fwd = idx.iter().map(|&j| ((j + 1) as f64, series.rows[j].2));
            let back = idx.iter().rev().map(|&j| ((j + 1) as f64, series.rows[j].1));
            let pts = points_attr(&frame, fwd.chain(back));
            write!(
                out,
                "<polygon points=\"{pts}\" fill=\"{color}\" fill-opacity=\"0.15\" \
                 stroke=\"none\"/>\n"
            )
            .unwrap();
        }
        let pts = points_attr(&frame, idx.iter().map(|&j| ((j + 1) as f64, series.rows[j].0)));
        write!(
            out,
            "<polyline points=\"{pts}\" fill=\"none\" stroke=\"{color}\" \
             stroke-width=\"1.6\"/>\n"
        )
        .unwrap();
        // Legend row.
        let ly = MARGIN_TOP + 14.0 + 16.0 * i as f64;
        write!(
            out,
            "<line x1=\"{lx0}\" y1=\"{ly}\" x2=\"{lx1}\" y2=\"{ly}\" stroke=\"{color}\" \
             stroke-width=\"2\"/>\n\
             <text x=\"{tx}\" y=\"{ty}\" font-size=\"12\" fill=\"#333\">{label}</text>\n",
            lx0 = MARGIN_LEFT + 10.0,
            lx1 = MARGIN_LEFT + 34.0,
            tx = MARGIN_LEFT + 40.0,
            ty = ly + 4.0,
            label = escape(name)
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

fn reliability_svg(agent: &str, rows: &[(f64, f64)], seeds: usize) -> String {
    let (width, height) = (420.0, 420.0);
    let frame = Frame::new(1.0, 1.0, width, height);
    let mut out = String::new();
    frame.open(&mut out);
    frame.axes(&mut out, "confidence level", "empirical coverage");
    // Perfect-calibration diagonal.
    write!(
        out,
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#999\" \
         stroke-dasharray=\"5,4\"/>\n",
        frame.sx(0.0),
        frame.sy(0.0),
        frame.sx(1.0),
        frame.sy(1.0)
    )
    .unwrap();
    let pts = points_attr(&frame, rows.iter().copied());
    write!(
        out,
        "<polyline points=\"{pts}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.8\"/>\n",
        PALETTE[0]
    )
    .unwrap();
    for &(p, f) in rows {
        write!(
            out,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{}\"/>\n",
            frame.sx(p),
            frame.sy(f),
            PALETTE[0]
        )
        .unwrap();
    }
    write!(
        out,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" fill=\"#333\">{} \
         (mean of {seeds} seeds)</text>\n",
        MARGIN_LEFT + 10.0,
        MARGIN_TOP + 14.0,
        escape(agent)
    )
    .unwrap();
    out.push_str("</svg>\n");
    out
}

/// Writes `regret.svg` plus one `reliability_<agent>.svg` per agent into
/// `out_dir`; returns the paths written. Failed cells are skipped; at least
/// one successful summary is required.
pub fn emit_plots(summaries: &[RunSummary], out_dir: &Path) -> Result<Vec<PathBuf>, PlotError> {
    let ok: Vec<&RunSummary> = summaries.iter().filter(|s| s.is_ok()).collect();
    if ok.is_empty() {
        return Err(PlotError::Empty);
    }
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let regret = regret_series(&ok);
    if !regret.is_empty() {
        let path = out_dir.join("regret.svg");
        fs::write(&path, regret_svg(&regret))?;
        written.push(path);
    }

    // Reliability: mean empirical coverage per threshold across seeds.
    let mut by_agent: BTreeMap<String, Vec<&RunSummary>> = BTreeMap::new();
    for s in &ok {
        if !s.reliability.is_empty() {
            by_agent.entry(s.agent.clone()).or_default().push(s);
        }
    }
    for (agent, cells) in by_agent {
        let n = cells.iter().map(|c| c.reliability.len()).min().unwrap();
        let rows: Vec<(f64, f64)> = (0..n)
            .map(|j| {
                let p = cells[0].reliability[j].threshold;
                let f = cells.iter().map(|c| c.reliability[j].frequency).sum::<f64>()
                    / cells.len() as f64;
                (p, f)
            })
            .collect();
        let path = out_dir.join(format!("reliability_{}.svg", file_token(&agent)));
        fs::write(&path, reliability_svg(&agent, &rows, cells.len()))?;
        written.push(path);
    }
    Ok(written)
}
