use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::boxprior::LabelMask;

use super::{TrainError, TrainMode};

/// Dice similarity `2|A ∩ B| / (|A| + |B|)`, defined as 1 when both masks
/// are empty.
pub fn dice(pred: &LabelMask, truth: &LabelMask) -> f64 {
    assert_eq!(
        (pred.height(), pred.width()),
        (truth.height(), truth.width()),
        "dice needs masks of the same size"
    );
    let (mut inter, mut a, mut b) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        a += usize::from(p);
        b += usize::from(t);
        inter += usize::from(p & t);
    }
    if a + b == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (a + b) as f64
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: Split,
    pub mode: TrainMode,
    pub dice_mean: f64,
    pub dice_std: f64,
    /// Mean per-sample objective.
    pub loss: f64,
    pub t: f64,
    /// Fraction of all tightness constraints with residual `<= 0`.
    pub tight_sat_frac: f64,
    /// Mean outside foreground mass.
    pub empty_residual: f64,
    /// Fraction of samples satisfying both size bounds.
    pub size_ok: f64,
}

pub const METRICS_HEADER: &str = "epoch,split,mode,dice_mean,dice_std,loss,t,tight_sat_frac,empty_residual,size_ok";

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.epoch,
            r.split.as_str(),
            r.mode.as_str(),
            r.dice_mean,
            r.dice_std,
            r.loss,
            r.t,
            r.tight_sat_frac,
            r.empty_residual,
            r.size_ok
        )
        .expect("string write");
    }
    out
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Line chart of validation Dice per epoch, one line per mode.
pub fn dice_curves_svg(rows: &[MetricsRow]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 170.0, 20.0, 50.0);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let max_epoch = rows.iter().map(|r| r.epoch).max().unwrap_or(0).max(1) as f64;
    let x = |e: usize| left + plot_w * e as f64 / max_epoch;
    let y = |d: f64| top + plot_h * (1.0 - d.clamp(0.0, 1.0));

    let mut modes: Vec<TrainMode> = Vec::new();
    for r in rows {
        if !modes.contains(&r.mode) {
            modes.push(r.mode);
        }
    }

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    for tick in 0..=5 {
        let d = tick as f64 / 5.0;
        writeln!(
            s,
            r##"<line x1="{left}" y1="{yy:.2}" x2="{x2}" y2="{yy:.2}" stroke="#dddddd"/><text x="{tx}" y="{ty:.2}" text-anchor="end">{d:.1}</text>"##,
            yy = y(d),
            x2 = left + plot_w,
            tx = left - 6.0,
            ty = y(d) + 4.0
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{cx}" y="{by}" text-anchor="middle">epoch (0 to {me})</text>"#,
        cx = left + plot_w / 2.0,
        by = h - 15.0,
        me = max_epoch as usize
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="15" y="{cy}" transform="rotate(-90 15 {cy})" text-anchor="middle">validation Dice</text>"#,
        cy = top + plot_h / 2.0
    )
    .unwrap();
    for (i, mode) in modes.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = rows
            .iter()
            .filter(|r| r.mode == *mode && r.split == Split::Val)
            .map(|r| format!("{:.2},{:.2}", x(r.epoch), y(r.dice_mean)))
            .collect();
        writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        )
        .unwrap();
        let ly = top + 10.0 + 18.0 * i as f64;
        let lx = left + plot_w + 10.0;
        writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{lx2}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{tx}" y="{ty}">{name}</text>"#,
            lx2 = lx + 20.0,
            tx = lx + 26.0,
            ty = ly + 4.0,
            name = mode.as_str()
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `path` as the metrics CSV and a sibling `.svg` chart. Returns the
/// chart path.
pub fn export_curves(rows: &[MetricsRow], path: &Path) -> Result<PathBuf, TrainError> {
    if rows.is_empty() {
        return Err(TrainError::Config("no metrics to export".into()));
    }
    let svg_path = path.with_extension("svg");
    let write = |p: &Path, text: String| {
        std::fs::write(p, text).map_err(|source| TrainError::Io {
            path: p.to_path_buf(),
            source,
        })
    };
    write(path, metrics_csv(rows))?;
    write(&svg_path, dice_curves_svg(rows))?;
    Ok(svg_path)
}
