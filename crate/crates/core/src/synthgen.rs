//! Procedural waterway video with exact water masks.
//!
//! Each frame is rendered in camera-fixed coordinates (static shore clutter
//! above a slowly drifting shoreline, water below it carrying a mirrored
//! copy of the shore, moving wave texture and a global brightness factor),
//! then warped by a rigid shake transform. The mask is not warped: every
//! output pixel center is mapped back through the inverse transform and
//! tested against the shoreline, so it is exact for the transformed scene.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, DatasetEntry, DatasetIndex, Frame, FrameSequence, RgbFrame, Split};
use crate::error::{Error, Result};
use crate::params::{mix64, name_seed};
use crate::tensor::Mask;

pub const JITTER_TRACE_FILE: &str = "jitter_trace.json";

/// Brightness of the reflection relative to the shore it mirrors.
const MIRROR_GAIN: f64 = 0.85;

/// Wave-pattern contrast at full texture amplitude. The shore carries the
/// same pattern frozen in time, so only its motion marks the water.
const TEXTURE_GAIN: f64 = 0.15;

/// Shoreline row as a smooth function of column and time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shoreline {
    /// Rows at evenly spaced columns spanning `[0, width]`.
    pub control_rows: Vec<f64>,
    /// Amplitude in pixels of the slow vertical oscillation.
    pub drift_px: f64,
    pub drift_period_frames: f64,
}

impl Shoreline {
    pub fn horizontal(row: f64) -> Self {
        Self {
            control_rows: vec![row, row],
            drift_px: 0.0,
            drift_period_frames: 120.0,
        }
    }

    /// Row of the shoreline at (continuous) column `col` of a `width`-wide
    /// image at frame `t`. Catmull-Rom through the control rows; columns
    /// outside the image use the end values.
    pub fn row_at(&self, col: f64, width: usize, t: usize) -> f64 {
        let p = &self.control_rows;
        let n = p.len();
        let u = (col / width as f64).clamp(0.0, 1.0) * (n - 1) as f64;
        let i = (u.floor() as usize).min(n - 2);
        let s = u - i as f64;
        let at = |k: isize| p[k.clamp(0, n as isize - 1) as usize];
        let (p0, p1, p2, p3) = (at(i as isize - 1), at(i as isize), at(i as isize + 1), at(i as isize + 2));
        let m1 = if i == 0 { p2 - p1 } else { 0.5 * (p2 - p0) };
        let m2 = if i + 2 >= n { p2 - p1 } else { 0.5 * (p3 - p1) };
        let (s2, s3) = (s * s, s * s * s);
        let base = (2.0 * s3 - 3.0 * s2 + 1.0) * p1
            + (s3 - 2.0 * s2 + s) * m1
            + (-2.0 * s3 + 3.0 * s2) * p2
            + (s3 - s2) * m2;
        let phase = 2.0 * PI * t as f64 / self.drift_period_frames + PI * col / width as f64;
        base + self.drift_px * phase.sin()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JitterSpec {
    pub max_shift_px: f64,
    pub max_rot_deg: f64,
    /// AR(1) coefficient `rho` in `[0, 1)`.
    pub temporal_correlation: f64,
}

impl Default for JitterSpec {
    fn default() -> Self {
        Self {
            max_shift_px: 6.0,
            max_rot_deg: 1.5,
            temporal_correlation: 0.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub n_frames: usize,
    /// `(height, width)`.
    pub resolution: (usize, usize),
    pub shoreline: Shoreline,
    pub reflection_strength: f64,
    pub texture_amplitude: f64,
    pub flicker_amplitude: f64,
    /// Global illumination factor; 1 is daylight.
    pub brightness: f64,
    pub jitter: JitterSpec,
}

impl SceneSpec {
    /// Every interference source off: a still shore over flat water.
    pub fn still(seed: u64, n_frames: usize, resolution: (usize, usize), shoreline_row: f64) -> Self {
        Self {
            seed,
            n_frames,
            resolution,
            shoreline: Shoreline::horizontal(shoreline_row),
            reflection_strength: 0.0,
            texture_amplitude: 0.0,
            flicker_amplitude: 0.0,
            brightness: 1.0,
            jitter: JitterSpec {
                max_shift_px: 0.0,
                max_rot_deg: 0.0,
                temporal_correlation: 0.8,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        let (h, w) = self.resolution;
        if self.n_frames == 0 || h < 4 || w < 4 {
            return bad(format!("need frames and at least 4x4 pixels, got {} frames at {h}x{w}", self.n_frames));
        }
        if self.shoreline.control_rows.len() < 2 || self.shoreline.control_rows.iter().any(|r| !r.is_finite()) {
            return bad("shoreline needs at least two finite control rows".into());
        }
        if !(self.shoreline.drift_px.is_finite() && self.shoreline.drift_period_frames > 0.0) {
            return bad("shoreline drift must be finite with a positive period".into());
        }
        for (name, v) in [
            ("reflection_strength", self.reflection_strength),
            ("texture_amplitude", self.texture_amplitude),
            ("flicker_amplitude", self.flicker_amplitude),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 1]"));
            }
        }
        if !(self.brightness > 0.0 && self.brightness <= 2.0) {
            return bad(format!("brightness {} outside (0, 2]", self.brightness));
        }
        let j = &self.jitter;
        if !(j.max_shift_px >= 0.0 && j.max_rot_deg >= 0.0 && j.max_shift_px.is_finite() && j.max_rot_deg < 45.0) {
            return bad("jitter amplitudes must be finite and non-negative".into());
        }
        if !(0.0..1.0).contains(&j.temporal_correlation) {
            return bad(format!("temporal_correlation {} outside [0, 1)", j.temporal_correlation));
        }
        Ok(())
    }

    /// Rows the clean shoreline must keep away from the top and bottom
    /// edges so that it stays inside the frame under any admissible shake.
    pub fn jitter_margin(&self) -> f64 {
        let (h, w) = self.resolution;
        let half_diag = 0.5 * ((h * h + w * w) as f64).sqrt();
        self.jitter.max_shift_px * 2f64.sqrt() + half_diag * self.jitter.max_rot_deg.to_radians().sin() + 1.0
    }
}

/// Shake state of one frame; `shift_*` and `rot_deg` follow
/// `s_t = rho * s_{t-1} + noise_t` with `s_{-1} = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JitterState {
    pub frame: usize,
    pub shift_x: f64,
    pub shift_y: f64,
    pub rot_deg: f64,
    pub noise_x: f64,
    pub noise_y: f64,
    pub noise_rot: f64,
}

impl JitterState {
    /// Maps an output-image point `(row, col)` back to scene coordinates.
    pub fn inverse(&self, row: f64, col: f64, height: usize, width: usize) -> (f64, f64) {
        let (cy, cx) = (height as f64 / 2.0, width as f64 / 2.0);
        let (dy, dx) = (row - cy - self.shift_y, col - cx - self.shift_x);
        let (s, c) = self.rot_deg.to_radians().sin_cos();
        (cy - s * dx + c * dy, cx + c * dx + s * dy)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JitterTrace {
    pub temporal_correlation: f64,
    pub max_shift_px: f64,
    pub max_rot_deg: f64,
    pub frames: Vec<JitterState>,
}

impl JitterTrace {
    pub fn load(dir: &Path) -> Result<Self> {
        data::read_json(&dir.join(JITTER_TRACE_FILE))
    }
}

fn jitter_trace(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> JitterTrace {
    let j = &spec.jitter;
    let rho = j.temporal_correlation;
    let mut draw = |m: f64| {
        let u: f64 = rng.random_range(-1.0..=1.0);
        u * (1.0 - rho) * m
    };
    let mut frames: Vec<JitterState> = Vec::with_capacity(spec.n_frames);
    let (mut sx, mut sy, mut sr) = (0.0, 0.0, 0.0);
    for t in 0..spec.n_frames {
        let (nx, ny, nr) = (draw(j.max_shift_px), draw(j.max_shift_px), draw(j.max_rot_deg));
        sx = rho * sx + nx;
        sy = rho * sy + ny;
        sr = rho * sr + nr;
        frames.push(JitterState {
            frame: t,
            shift_x: sx,
            shift_y: sy,
            rot_deg: sr,
            noise_x: nx,
            noise_y: ny,
            noise_rot: nr,
        });
    }
    JitterTrace {
        temporal_correlation: rho,
        max_shift_px: j.max_shift_px,
        max_rot_deg: j.max_rot_deg,
        frames,
    }
}

/// One block of shore clutter (building, tree line, bank).
struct ShoreBlock {
    col_end: f64,
    height: f64,
    color: [f64; 3],
}

struct Wave {
    ky: f64,
    kx: f64,
    omega: f64,
    phase: f64,
    weight: f64,
}

/// Static scene content drawn from the sequence seed.
struct Scene {
    blocks: Vec<ShoreBlock>,
    waves: Vec<Wave>,
    water: [f64; 3],
    sky: [f64; 3],
    /// Vertical displacement of the reflection at full texture amplitude.
    ripple_px: f64,
    seed: u64,
}

fn hash_noise(seed: u64, y: i64, x: i64) -> f64 {
    let h = mix64(seed ^ mix64((y as u64).wrapping_mul(0x9e37_79b9) ^ (x as u64).wrapping_shl(32)));
    (h >> 11) as f64 / (1u64 << 53) as f64 - 0.5
}

impl Scene {
    fn new(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Self {
        let (h, w) = spec.resolution;
        let scale = w as f64 / 224.0;
        let palette = [
            [0.25, 0.45, 0.2],
            [0.35, 0.3, 0.22],
            [0.55, 0.52, 0.5],
            [0.7, 0.66, 0.58],
            [0.18, 0.3, 0.15],
            [0.45, 0.22, 0.18],
            [0.15, 0.3, 0.4],
            [0.22, 0.33, 0.42],
        ];
        let mut blocks = Vec::new();
        let mut col = 0.0;
        while col < w as f64 {
            col += rng.random_range(6.0..22.0) * scale;
            blocks.push(ShoreBlock {
                col_end: col,
                height: rng.random_range(0.06..0.3) * h as f64,
                color: palette[rng.random_range(0..palette.len())],
            });
        }
        let waves = (0..4)
            .map(|_| {
                let wavelength = rng.random_range(10.0..28.0) * scale;
                let dir: f64 = rng.random_range(-0.6..0.6);
                let k = 2.0 * PI / wavelength;
                Wave {
                    ky: k * dir.cos(),
                    kx: k * dir.sin(),
                    omega: rng.random_range(0.6..1.6),
                    phase: rng.random_range(0.0..2.0 * PI),
                    weight: rng.random_range(0.5..1.0),
                }
            })
            .collect();
        let water = [
            rng.random_range(0.08..0.2),
            rng.random_range(0.22..0.35),
            rng.random_range(0.3..0.45),
        ];
        Self {
            blocks,
            waves,
            water,
            sky: [0.62, 0.74, 0.88],
            ripple_px: 3.0 * scale,
            seed: rng.random(),
        }
    }

    /// Shore/sky color at a scene point (used both above the shoreline and
    /// for the mirrored reflection).
    fn shore_color(&self, row: f64, col: f64, shore_row: f64, height: usize, texture: f64) -> [f64; 3] {
        let block = self
            .blocks
            .iter()
            .find(|b| col < b.col_end)
            .unwrap_or_else(|| self.blocks.last().expect("at least one block"));
        if row < shore_row - block.height {
            let fade = (row / height as f64).clamp(0.0, 1.0) * 0.15;
            return self.sky.map(|c| c - fade);
        }
        let n = 0.08 * hash_noise(self.seed, (row / 2.0).floor() as i64, (col / 2.0).floor() as i64)
            + texture * TEXTURE_GAIN * self.wave(row, col, 0.0);
        block.color.map(|c| c + n)
    }

    fn wave(&self, row: f64, col: f64, t: f64) -> f64 {
        let total: f64 = self.waves.iter().map(|w| w.weight).sum();
        self.waves
            .iter()
            .map(|w| w.weight * (w.ky * row + w.kx * col - w.omega * t + w.phase).sin())
            .sum::<f64>()
            / total
    }
}

fn render_clean(spec: &SceneSpec, scene: &Scene, t: usize, gain: f64) -> Vec<[f64; 3]> {
    let (h, w) = spec.resolution;
    let mut out = vec![[0.0; 3]; h * w];
    for x in 0..w {
        let xc = x as f64 + 0.5;
        let s = spec.shoreline.row_at(xc, w, t);
        for y in 0..h {
            let yc = y as f64 + 0.5;
            let c = if yc < s {
                scene.shore_color(yc, xc, s, h, spec.texture_amplitude)
            } else {
                let depth = ((yc - s) / h as f64).min(1.0);
                let base = scene.water.map(|c| c * (1.0 - 0.4 * depth));
                let r = spec.reflection_strength * (1.0 - 0.5 * depth);
                let wave = scene.wave(yc, xc, t as f64);
                let ripple = spec.texture_amplitude * scene.ripple_px * wave;
                let mirror = scene
                    .shore_color(2.0 * s - yc + ripple, xc, s, h, spec.texture_amplitude)
                    .map(|c| MIRROR_GAIN * c);
                let wave = spec.texture_amplitude * TEXTURE_GAIN * wave;
                let mut px = [0.0; 3];
                for k in 0..3 {
                    px[k] = (1.0 - r) * base[k] + r * mirror[k] + wave;
                }
                px
            };
            out[y * w + x] = c.map(|v| v * gain);
        }
    }
    out
}

fn sample_clamped(img: &[[f64; 3]], h: usize, w: usize, row: f64, col: f64) -> [f64; 3] {
    let py = (row - 0.5).clamp(0.0, (h - 1) as f64);
    let px = (col - 0.5).clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (py.floor() as usize, px.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (py - y0 as f64, px - x0 as f64);
    let mut out = [0.0; 3];
    for k in 0..3 {
        let top = img[y0 * w + x0][k] * (1.0 - fx) + img[y0 * w + x1][k] * fx;
        let bot = img[y1 * w + x0][k] * (1.0 - fx) + img[y1 * w + x1][k] * fx;
        out[k] = top * (1.0 - fy) + bot * fy;
    }
    out
}

/// Water mask of frame `t` under `jitter`: a pixel is water when its
/// center, mapped back to scene coordinates, lies on or below the shoreline.
pub fn analytic_mask(spec: &SceneSpec, t: usize, jitter: &JitterState) -> Mask {
    let (h, w) = spec.resolution;
    Mask::from_fn(h, w, |y, x| {
        let (r, c) = jitter.inverse(y as f64 + 0.5, x as f64 + 0.5, h, w);
        (r >= spec.shoreline.row_at(c, w, t)) as u8
    })
}

/// A generated sequence together with its shake trace.
#[derive(Clone, Debug)]
pub struct GeneratedSequence {
    pub sequence: FrameSequence,
    pub trace: JitterTrace,
}

pub fn generate_sequence(spec: &SceneSpec) -> Result<FrameSequence> {
    Ok(generate_with_trace(spec, "synthetic")?.sequence)
}

pub fn generate_with_trace(spec: &SceneSpec, id: &str) -> Result<GeneratedSequence> {
    spec.validate()?;
    let (h, w) = spec.resolution;
    let margin = spec.jitter_margin();
    for t in 0..spec.n_frames {
        for x in 0..=w {
            let s = spec.shoreline.row_at(x as f64, w, t);
            if s < margin || s > h as f64 - margin {
                return Err(Error::Generation {
                    frame: t,
                    message: format!(
                        "shoreline row {s:.1} at column {x} is within the {margin:.1}-pixel jitter margin"
                    ),
                });
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scene = Scene::new(spec, &mut rng);
    let trace = jitter_trace(spec, &mut rng);
    let gains: Vec<f64> = (0..spec.n_frames)
        .map(|_| {
            let u: f64 = rng.random_range(-1.0..=1.0);
            spec.brightness * (1.0 + spec.flicker_amplitude * 0.5 * u)
        })
        .collect();

    let frames = (0..spec.n_frames)
        .into_par_iter()
        .map(|t| {
            let clean = render_clean(spec, &scene, t, gains[t]);
            let j = &trace.frames[t];
            let mut data = Vec::with_capacity(h * w * 3);
            for y in 0..h {
                for x in 0..w {
                    let (r, c) = j.inverse(y as f64 + 0.5, x as f64 + 0.5, h, w);
                    let px = sample_clamped(&clean, h, w, r, c);
                    data.extend(px.iter().map(|&v| ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32));
                }
            }
            let image = RgbFrame::new(h, w, data)?;
            Frame::new(image, t as i64, Some(analytic_mask(spec, t, j)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GeneratedSequence {
        sequence: FrameSequence::new(id, frames, Split::Train)?,
        trace,
    })
}

/// Writes a sequence directory plus its shake trace.
pub fn save_generated(g: &GeneratedSequence, dir: &Path) -> Result<()> {
    data::save_sequence(&g.sequence, dir)?;
    data::write_json(&dir.join(JITTER_TRACE_FILE), &g.trace)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lighting {
    Day,
    Dim,
    Flicker,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JitterLevel {
    Low,
    High,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShoreShape {
    Straight,
    Curved,
}

/// One cell of the benchmark condition grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub lighting: Lighting,
    pub jitter: JitterLevel,
    pub shape: ShoreShape,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkOptions {
    pub n_sequences: usize,
    pub n_frames: usize,
    pub resolution: (usize, usize),
    pub split_ratios: [f64; 3],
    pub reflection_strength: f64,
    pub texture_amplitude: f64,
    /// Shake amplitudes `(max_shift_px, max_rot_deg)` at 224 pixels wide,
    /// scaled with the width.
    pub low_jitter: (f64, f64),
    pub high_jitter: (f64, f64),
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self {
            n_sequences: 10,
            n_frames: 60,
            resolution: (224, 224),
            split_ratios: [6.0, 2.0, 2.0],
            reflection_strength: 0.6,
            texture_amplitude: 0.6,
            low_jitter: (2.0, 0.5),
            high_jitter: (6.0, 1.5),
        }
    }
}

/// Catalogue entry of one generated benchmark sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSequence {
    pub id: String,
    pub split: Split,
    pub condition: Condition,
    pub spec: SceneSpec,
}

pub const CONDITIONS_FILE: &str = "conditions.json";

/// Scene specs and splits for the benchmark. Lighting and shoreline shape
/// cycle over the sequence index; jitter alternates within each split so
/// every split sees both shake levels.
pub fn benchmark_plan(seed: u64, opts: &BenchmarkOptions) -> Result<Vec<BenchmarkSequence>> {
    let n = opts.n_sequences;
    let splits = data::assign_splits(n, opts.split_ratios, seed)?;
    let (h, w) = opts.resolution;
    let scale = w as f64 / 224.0;
    let mut rank = [0usize; 3];
    (0..n)
        .map(|i| {
            let split = splits[i];
            let r = &mut rank[split as usize];
            let jitter = if *r % 2 == 0 { JitterLevel::Low } else { JitterLevel::High };
            *r += 1;
            let lighting = [Lighting::Day, Lighting::Dim, Lighting::Flicker][i % 3];
            let shape = if (i / 2) % 2 == 0 { ShoreShape::Straight } else { ShoreShape::Curved };
            let seq_seed = name_seed(seed, &format!("sequence{i}"));
            let mut rng = ChaCha8Rng::seed_from_u64(seq_seed);
            let hf = h as f64;
            let control_rows = match shape {
                ShoreShape::Straight => vec![rng.random_range(0.42..0.6) * hf, rng.random_range(0.42..0.6) * hf],
                ShoreShape::Curved => (0..5).map(|_| rng.random_range(0.4..0.62) * hf).collect(),
            };
            let (shift, rot) = match jitter {
                JitterLevel::Low => opts.low_jitter,
                JitterLevel::High => opts.high_jitter,
            };
            let (brightness, flicker) = match lighting {
                Lighting::Day => (1.0, 0.0),
                Lighting::Dim => (0.45, 0.0),
                Lighting::Flicker => (0.8, 0.7),
            };
            let spec = SceneSpec {
                seed: seq_seed,
                n_frames: opts.n_frames,
                resolution: opts.resolution,
                shoreline: Shoreline {
                    control_rows,
                    drift_px: 0.02 * hf,
                    drift_period_frames: rng.random_range(80.0..160.0),
                },
                reflection_strength: opts.reflection_strength,
                texture_amplitude: opts.texture_amplitude,
                flicker_amplitude: flicker,
                brightness,
                jitter: JitterSpec {
                    max_shift_px: shift * scale,
                    max_rot_deg: rot,
                    temporal_correlation: 0.8,
                },
            };
            Ok(BenchmarkSequence {
                id: format!("seq{i:02}"),
                split,
                condition: Condition {
                    lighting,
                    jitter,
                    shape,
                },
                spec,
            })
        })
        .collect()
}

/// Generates the benchmark under `out` and writes `dataset.json`.
pub fn generate_benchmark(seed: u64, out: &Path, opts: &BenchmarkOptions) -> Result<DatasetIndex> {
    let plan = benchmark_plan(seed, opts)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    plan.par_iter()
        .map(|b| {
            let mut g = generate_with_trace(&b.spec, &b.id)?;
            g.sequence.split = b.split;
            save_generated(&g, &out.join(&b.id))
        })
        .collect::<Result<Vec<()>>>()?;
    let index = DatasetIndex {
        sequences: plan
            .iter()
            .map(|b| DatasetEntry {
                id: b.id.clone(),
                path: PathBuf::from(&b.id),
                split: b.split,
            })
            .collect(),
    };
    index.save(out)?;
    data::write_json(&out.join(CONDITIONS_FILE), &plan)?;
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn still_scene_is_static_and_masked_below_row() {
        let spec = SceneSpec::still(3, 4, (64, 48), 32.0);
        let seq = generate_sequence(&spec).unwrap();
        assert_eq!(seq.len(), 4);
        for f in &seq.frames[1..] {
            assert_eq!(f.image, seq.frames[0].image);
        }
        let m = seq.frames[0].mask.as_ref().unwrap();
        for y in 0..64 {
            for x in 0..48 {
                assert_eq!(m.get(y, x), (y >= 32) as u8);
            }
        }
    }

    #[test]
    fn straight_control_rows_give_a_line() {
        let s = Shoreline {
            control_rows: vec![10.0, 20.0, 30.0],
            drift_px: 0.0,
            drift_period_frames: 10.0,
        };
        for c in [0.0, 13.0, 50.0, 77.7, 100.0] {
            assert!((s.row_at(c, 100, 0) - (10.0 + 0.2 * c)).abs() < 1e-9);
        }
    }

    #[test]
    fn margin_violation_names_frame() {
        let mut spec = SceneSpec::still(0, 3, (64, 64), 2.0);
        spec.jitter.max_shift_px = 4.0;
        assert!(matches!(generate_sequence(&spec), Err(Error::Generation { frame: 0, .. })));
    }

    #[test]
    fn benchmark_splits_and_jitter_levels() {
        let plan = benchmark_plan(0, &BenchmarkOptions::default()).unwrap();
        assert_eq!(plan.len(), 10);
        for split in [Split::Train, Split::Val, Split::Test] {
            let levels: Vec<_> = plan.iter().filter(|b| b.split == split).map(|b| b.condition.jitter).collect();
            assert!(levels.contains(&JitterLevel::High) && levels.contains(&JitterLevel::Low));
        }
    }
}
