//! Plots and markdown tables for the JSON reports written by the tool.
//!
//! Charts carry no text. Series order and colours are listed in the table
//! written next to each chart.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::evaluation::EvalReport;
use crate::harness::{AblationTable, RobustnessTable};

const WIDTH: u32 = 640;
const HEIGHT: u32 = 360;
const MARGIN: u32 = 32;

const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];
const COLOR_NAMES: [&str; 8] = ["blue", "orange", "green", "red", "purple", "brown", "pink", "grey"];

/// Any report the `report` subcommand can render.
#[derive(Clone, Debug)]
pub enum ReportInput {
    Eval(EvalReport),
    Ablation(AblationTable),
    Robustness(RobustnessTable),
}

impl ReportInput {
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        if let Ok(r) = serde_json::from_str(text) {
            return Ok(Self::Eval(r));
        }
        if let Ok(t) = serde_json::from_str(text) {
            return Ok(Self::Ablation(t));
        }
        if let Ok(t) = serde_json::from_str(text) {
            return Ok(Self::Robustness(t));
        }
        Err("not an evaluation, ablation or robustness report".into())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|m| Error::Format(format!("{}: {m}", path.display())))
    }
}

/// Writes charts and tables into `dir`, returning the files written.
pub fn render(input: &ReportInput, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    match input {
        ReportInput::Eval(r) => {
            let curves: Vec<Vec<(f64, f64)>> = r
                .sequences
                .iter()
                .map(|s| s.frames.iter().map(|f| (f.frame_index as f64, f.miou_selected)).collect())
                .collect();
            out.push(save(dir, "per_frame_miou_selected.png", &line_chart(&curves))?);
            let groups: Vec<Vec<f64>> = r
                .sequences
                .iter()
                .map(|s| vec![s.miou_selected.unwrap_or(0.0), s.miou_full.unwrap_or(0.0)])
                .collect();
            out.push(save(dir, "sequences.png", &bar_chart(&groups))?);
            out.push(write_text(dir, "summary.md", &eval_table(r))?);
        }
        ReportInput::Ablation(t) => {
            let groups: Vec<Vec<f64>> = t.rows.iter().map(|r| vec![r.miou_selected, r.miou_full]).collect();
            out.push(save(dir, "ablation.png", &bar_chart(&groups))?);
            out.push(write_text(dir, "ablation.md", &ablation_table(t))?);
        }
        ReportInput::Robustness(t) => {
            let groups: Vec<Vec<f64>> = t.summary.iter().map(|s| vec![s.miou_selected, s.miou_full]).collect();
            out.push(save(dir, "robustness.png", &bar_chart(&groups))?);
            out.push(write_text(dir, "robustness.md", &robustness_table(t))?);
        }
    }
    Ok(out)
}

fn save(dir: &Path, name: &str, img: &RgbImage) -> Result<PathBuf> {
    let path = dir.join(name);
    img.save(&path).map_err(|e| Error::image(&path, e))?;
    Ok(path)
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.4}"))
}

pub fn eval_table(r: &EvalReport) -> String {
    let mut s = String::new();
    writeln!(s, "| sequence | frames | miou_selected | miou_full | contour_dist_px |").unwrap();
    writeln!(s, "|---|---:|---:|---:|---:|").unwrap();
    for q in &r.sequences {
        writeln!(
            s,
            "| {} | {} | {} | {} | {} |",
            q.sequence_id,
            q.frames_evaluated,
            fmt_opt(q.miou_selected),
            fmt_opt(q.miou_full),
            fmt_opt(q.contour_dist_px)
        )
        .unwrap();
    }
    writeln!(
        s,
        "| **all** | {} | {:.4} | {:.4} | {} |",
        r.frames_evaluated,
        r.miou_selected,
        r.miou_full,
        fmt_opt(r.contour_dist_px)
    )
    .unwrap();
    writeln!(s).unwrap();
    writeln!(s, "Line colours in sequence order: {}.", colour_list(r.sequences.len())).unwrap();
    writeln!(s, "Bars: miou_selected (blue), miou_full (orange).").unwrap();
    s
}

pub fn ablation_table(t: &AblationTable) -> String {
    let mut s = String::new();
    writeln!(s, "| config | tpe | man | dcn | contour_loss | miou_selected | miou_full | parameters | final_loss |").unwrap();
    writeln!(s, "|---|:-:|:-:|:-:|:-:|---:|---:|---:|---:|").unwrap();
    let mark = |b: bool| if b { "x" } else { "" };
    for r in &t.rows {
        writeln!(
            s,
            "| {} | {} | {} | {} | {} | {:.4} | {:.4} | {} | {:.4} |",
            r.name,
            mark(r.use_tpe),
            mark(r.use_man),
            mark(r.use_dcn),
            mark(r.use_contour_loss),
            r.miou_selected,
            r.miou_full,
            r.parameter_count,
            r.final_loss
        )
        .unwrap();
    }
    writeln!(s).unwrap();
    writeln!(s, "Bars: miou_selected (blue), miou_full (orange), one group per row.").unwrap();
    s
}

pub fn robustness_table(t: &RobustnessTable) -> String {
    let mut s = String::new();
    writeln!(s, "| condition | frames | miou_selected | miou_full |").unwrap();
    writeln!(s, "|---|---:|---:|---:|").unwrap();
    for c in &t.summary {
        writeln!(
            s,
            "| {} | {} | {:.4} | {:.4} |",
            c.label, c.frames_evaluated, c.miou_selected, c.miou_full
        )
        .unwrap();
    }
    writeln!(s).unwrap();
    writeln!(s, "Bars: miou_selected (blue), miou_full (orange), one group per row.").unwrap();
    s
}

fn colour_list(n: usize) -> String {
    (0..n).map(|i| COLOR_NAMES[i % COLOR_NAMES.len()]).collect::<Vec<_>>().join(", ")
}

/// Lower edge of the value axis: the next 0.1 below the smallest value.
fn axis_floor<'a>(values: impl Iterator<Item = &'a f64>) -> f64 {
    let lo = values.filter(|v| v.is_finite()).fold(1.0f64, |a, &b| a.min(b));
    ((lo * 10.0).floor() / 10.0).clamp(0.0, 0.9)
}

struct Canvas {
    img: RgbImage,
    lo: f64,
}

impl Canvas {
    fn new(lo: f64) -> Self {
        let mut c = Canvas {
            img: RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255])),
            lo,
        };
        let steps = ((1.0 - lo) * 10.0).round() as i32;
        for i in 0..=steps {
            let y = c.y_of(lo + i as f64 * 0.1);
            c.hline(y, [225, 225, 225]);
        }
        c.hline(HEIGHT - MARGIN, [0, 0, 0]);
        for y in MARGIN..=HEIGHT - MARGIN {
            c.put(MARGIN as i64, y as i64, [0, 0, 0]);
        }
        c
    }

    fn y_of(&self, v: f64) -> u32 {
        let span = (HEIGHT - 2 * MARGIN) as f64;
        let t = ((v - self.lo) / (1.0 - self.lo)).clamp(0.0, 1.0);
        HEIGHT - MARGIN - (t * span).round() as u32
    }

    fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as u32) < WIDTH && (y as u32) < HEIGHT {
            self.img.put_pixel(x as u32, y as u32, Rgb(c));
        }
    }

    fn hline(&mut self, y: u32, c: [u8; 3]) {
        for x in MARGIN..=WIDTH - MARGIN {
            self.put(x as i64, y as i64, c);
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3]) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.put(x, y, c);
            self.put(x, y + 1, c);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }
}

/// One polyline per series over a shared x range.
pub fn line_chart(series: &[Vec<(f64, f64)>]) -> RgbImage {
    let mut c = Canvas::new(axis_floor(series.iter().flatten().map(|(_, v)| v)));
    let xs = || series.iter().flatten().map(|p| p.0);
    let (xmin, xmax) = (xs().fold(f64::INFINITY, f64::min), xs().fold(f64::NEG_INFINITY, f64::max));
    if !xmin.is_finite() {
        return c.img;
    }
    let xspan = (xmax - xmin).max(1.0);
    let width = (WIDTH - 2 * MARGIN) as f64;
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(i64, i64)> = s
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, v)| {
                let px = MARGIN as f64 + (x - xmin) / xspan * width;
                (px.round() as i64, c.y_of(v) as i64)
            })
            .collect();
        for w in pts.windows(2) {
            c.line(w[0], w[1], color);
        }
        if let [p] = pts.as_slice() {
            c.put(p.0, p.1, color);
        }
    }
    c.img
}

/// Groups of bars, coloured by position inside the group.
pub fn bar_chart(groups: &[Vec<f64>]) -> RgbImage {
    let mut c = Canvas::new(axis_floor(groups.iter().flatten()));
    if groups.is_empty() {
        return c.img;
    }
    let slot = (WIDTH - 2 * MARGIN) as f64 / groups.len() as f64;
    for (g, bars) in groups.iter().enumerate() {
        let n = bars.len().max(1) as f64;
        let bar_w = slot * 0.8 / n;
        for (b, &v) in bars.iter().enumerate() {
            let x0 = MARGIN as f64 + g as f64 * slot + slot * 0.1 + b as f64 * bar_w;
            let top = c.y_of(if v.is_finite() { v } else { c.lo });
            for x in x0.round() as i64..(x0 + bar_w - 1.0).round() as i64 {
                for y in top..HEIGHT - MARGIN {
                    c.put(x, y as i64, PALETTE[b % PALETTE.len()]);
                }
            }
        }
    }
    c.img
}
