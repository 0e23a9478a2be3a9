//! Frames, sequences, on-disk layout and dataset splitting.
//!
//! A sequence directory holds `manifest.json`, `frames/%06d.png` (8-bit RGB)
//! and optionally `masks/%06d.png` (8-bit grayscale, 0 or 255). The number in
//! the file name is the frame timestamp. A dataset directory holds
//! `dataset.json` listing its sequence directories.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::{Grid, Mask, Tensor};

/// An RGB image, row-major `H x W x 3`, intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbFrame {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl RgbFrame {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "{}x{}x3 image needs {} values, got {}",
                height,
                width,
                height * width * 3,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Channel-first `[3, H, W]` tensor for the network.
    pub fn to_tensor(&self) -> Tensor {
        let hw = self.height * self.width;
        Tensor::from_fn(&[3, self.height, self.width], |i| {
            let (c, p) = (i / hw, i % hw);
            self.data[p * 3 + c] as f64
        })
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let bytes = self.data.iter().map(|&v| quantize(v)).collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, bytes).expect("buffer size")
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        Self {
            height: img.height() as usize,
            width: img.width() as usize,
            data: img.as_raw().iter().map(|&b| b as f32 / 255.0).collect(),
        }
    }

    pub fn resized(&self, height: usize, width: usize) -> Self {
        if (height, width) == (self.height, self.width) {
            return self.clone();
        }
        let chw = self.to_tensor();
        let out = kernels::resize_bilinear(chw.data(), 3, (self.height, self.width), (height, width));
        let hw = height * width;
        let mut data = vec![0.0f32; hw * 3];
        for c in 0..3 {
            for p in 0..hw {
                data[p * 3 + c] = out[c * hw + p] as f32;
            }
        }
        Self {
            height,
            width,
            data,
        }
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Nearest-neighbour mask resize (half-pixel centers).
pub fn resize_mask(mask: &Mask, height: usize, width: usize) -> Mask {
    if mask.dims() == (height, width) {
        return mask.clone();
    }
    let sy = mask.height as f64 / height as f64;
    let sx = mask.width as f64 / width as f64;
    Grid::from_fn(height, width, |y, x| {
        let ys = (((y as f64 + 0.5) * sy) as usize).min(mask.height - 1);
        let xs = (((x as f64 + 0.5) * sx) as usize).min(mask.width - 1);
        mask.get(ys, xs)
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub image: RgbFrame,
    pub timestamp: i64,
    pub mask: Option<Mask>,
}

impl Frame {
    pub fn new(image: RgbFrame, timestamp: i64, mask: Option<Mask>) -> Result<Self> {
        let f = Self {
            image,
            timestamp,
            mask,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if self.timestamp < 0 {
            return Err(Error::Validation(format!(
                "negative timestamp {}",
                self.timestamp
            )));
        }
        if let Some(mask) = &self.mask {
            if mask.dims() != (self.image.height, self.image.width) {
                return Err(Error::Validation(format!(
                    "frame {}: mask is {}x{} but image is {}x{}",
                    self.timestamp, mask.height, mask.width, self.image.height, self.image.width
                )));
            }
            mask.validate_binary()
                .map_err(|e| Error::Validation(format!("frame {}: {e}", self.timestamp)))?;
        }
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.image.height, self.image.width)
    }

    /// Bilinear image / nearest-neighbour mask resize.
    pub fn resized(&self, height: usize, width: usize) -> Self {
        Self {
            image: self.image.resized(height, width),
            timestamp: self.timestamp,
            mask: self.mask.as_ref().map(|m| resize_mask(m, height, width)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Validation(format!("unknown split `{s}` (train, val or test)"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    pub id: String,
    pub frames: Vec<Frame>,
    pub split: Split,
    pub fps: f64,
}

impl FrameSequence {
    pub fn new(id: impl Into<String>, frames: Vec<Frame>, split: Split) -> Result<Self> {
        let s = Self {
            id: id.into(),
            frames,
            split,
            fps: 30.0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for f in &self.frames {
            f.validate()?;
        }
        for pair in self.frames.windows(2) {
            if pair[1].timestamp <= pair[0].timestamp {
                return Err(Error::Validation(format!(
                    "sequence {}: timestamps {} and {} are not strictly increasing",
                    self.id, pair[0].timestamp, pair[1].timestamp
                )));
            }
            if pair[1].dims() != pair[0].dims() {
                return Err(Error::Validation(format!(
                    "sequence {}: frame {} resolution differs from frame {}",
                    self.id, pair[1].timestamp, pair[0].timestamp
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn resolution(&self) -> Option<(usize, usize)> {
        self.frames.first().map(Frame::dims)
    }

    pub fn resized(&self, height: usize, width: usize) -> Self {
        Self {
            id: self.id.clone(),
            frames: self.frames.iter().map(|f| f.resized(height, width)).collect(),
            split: self.split,
            fps: self.fps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub id: String,
    pub split: Split,
    pub frame_count: usize,
    /// `[height, width]` of stored frames; metrics are computed at this size.
    pub resolution: (usize, usize),
    pub fps: f64,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATASET_FILE: &str = "dataset.json";

fn frame_name(timestamp: i64) -> String {
    format!("{timestamp:06}.png")
}

pub fn load_sequence(dir: &Path) -> Result<FrameSequence> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(Error::Format(format!(
            "{} has no {MANIFEST_FILE}",
            dir.display()
        )));
    }
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::json(&manifest_path, e))?;

    let frames_dir = dir.join("frames");
    let mut timestamps = Vec::new();
    let entries = fs::read_dir(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(&frames_dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        let Some(stem) = name.strip_suffix(".png") else { continue };
        let ts: i64 = stem
            .parse()
            .map_err(|_| Error::Format(format!("unexpected frame file name {name}")))?;
        timestamps.push(ts);
    }
    timestamps.sort_unstable();
    if timestamps.len() != manifest.frame_count {
        return Err(Error::Format(format!(
            "manifest of {} declares {} frames, found {}",
            manifest.id,
            manifest.frame_count,
            timestamps.len()
        )));
    }

    let mut frames = Vec::with_capacity(timestamps.len());
    for ts in timestamps {
        let path = frames_dir.join(frame_name(ts));
        let img = image::open(&path).map_err(|e| Error::image(&path, e))?.to_rgb8();
        let image = RgbFrame::from_rgb8(&img);
        if (image.height, image.width) != manifest.resolution {
            return Err(Error::Validation(format!(
                "frame {ts}: image is {}x{} but manifest declares {:?}",
                image.height, image.width, manifest.resolution
            )));
        }
        let mask_path = dir.join("masks").join(frame_name(ts));
        let mask = if mask_path.is_file() {
            let m = image::open(&mask_path)
                .map_err(|e| Error::image(&mask_path, e))?
                .to_luma8();
            Some(mask_from_gray(&m, ts)?)
        } else {
            None
        };
        frames.push(Frame::new(image, ts, mask)?);
    }
    let mut seq = FrameSequence::new(manifest.id, frames, manifest.split)?;
    seq.fps = manifest.fps;
    Ok(seq)
}

fn mask_from_gray(img: &GrayImage, ts: i64) -> Result<Mask> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = Vec::with_capacity(w * h);
    for &v in img.as_raw() {
        data.push(match v {
            0 => 0,
            255 => 1,
            other => {
                return Err(Error::Validation(format!(
                    "frame {ts}: mask value {other} is neither 0 nor 255"
                )))
            }
        });
    }
    Ok(Grid {
        height: h,
        width: w,
        data,
    })
}

pub fn mask_to_gray(mask: &Mask) -> GrayImage {
    let bytes = mask.data.iter().map(|&v| if v > 0 { 255 } else { 0 }).collect();
    GrayImage::from_raw(mask.width as u32, mask.height as u32, bytes).expect("buffer size")
}

pub fn save_sequence(seq: &FrameSequence, dir: &Path) -> Result<()> {
    seq.validate()?;
    let frames_dir = dir.join("frames");
    let masks_dir = dir.join("masks");
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    if seq.frames.iter().any(|f| f.mask.is_some()) {
        fs::create_dir_all(&masks_dir).map_err(|e| Error::io(&masks_dir, e))?;
    }
    for f in &seq.frames {
        let path = frames_dir.join(frame_name(f.timestamp));
        f.image.to_rgb8().save(&path).map_err(|e| Error::image(&path, e))?;
        if let Some(mask) = &f.mask {
            let path = masks_dir.join(frame_name(f.timestamp));
            mask_to_gray(mask).save(&path).map_err(|e| Error::image(&path, e))?;
        }
    }
    let manifest = Manifest {
        id: seq.id.clone(),
        split: seq.split,
        frame_count: seq.frames.len(),
        resolution: seq.resolution().unwrap_or((0, 0)),
        fps: seq.fps,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub id: String,
    /// Relative to the dataset directory.
    pub path: PathBuf,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub sequences: Vec<DatasetEntry>,
}

impl DatasetIndex {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(DATASET_FILE);
        if !path.is_file() {
            return Err(Error::Format(format!("{} has no {DATASET_FILE}", dir.display())));
        }
        read_json(&path)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(DATASET_FILE), self)
    }

    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.sequences
            .iter()
            .filter(|e| e.split == split)
            .map(|e| e.id.as_str())
            .collect()
    }
}

/// Loads every sequence of `split` listed in `dir/dataset.json`.
pub fn load_split(dir: &Path, split: Split) -> Result<Vec<FrameSequence>> {
    let index = DatasetIndex::load(dir)?;
    index
        .sequences
        .iter()
        .filter(|e| e.split == split)
        .map(|e| {
            let mut seq = load_sequence(&dir.join(&e.path))?;
            seq.split = e.split;
            Ok(seq)
        })
        .collect()
}

/// Split sizes by largest remainder, then topped up so every split with a
/// nonzero ratio receives at least one sequence.
fn split_counts(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::Config(format!("split ratios {ratios:?} must be non-negative")));
    }
    let total: f64 = ratios.iter().sum();
    if total <= 0.0 {
        return Err(Error::Config("split ratios sum to zero".into()));
    }
    let nonzero = ratios.iter().filter(|&&r| r > 0.0).count();
    if n < nonzero {
        return Err(Error::Config(format!(
            "{n} sequences cannot fill {nonzero} nonzero splits"
        )));
    }
    let exact: Vec<f64> = ratios.iter().map(|r| r / total * n as f64).collect();
    let mut counts = [0usize; 3];
    for i in 0..3 {
        counts[i] = exact[i].floor() as usize;
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut left = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if ratios[i] > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    for i in 0..3 {
        if ratios[i] > 0.0 && counts[i] == 0 {
            let donor = (0..3).max_by_key(|&j| (counts[j], std::cmp::Reverse(j))).unwrap();
            counts[donor] -= 1;
            counts[i] += 1;
        }
    }
    Ok(counts)
}

/// Deterministic split assignment for `n` items.
pub fn assign_splits(n: usize, ratios: [f64; 3], seed: u64) -> Result<Vec<Split>> {
    let counts = split_counts(n, ratios)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Split::Train; n];
    let labels = [Split::Train, Split::Val, Split::Test];
    let mut cursor = 0;
    for (label, count) in labels.iter().zip(counts) {
        for &i in &order[cursor..cursor + count] {
            out[i] = *label;
        }
        cursor += count;
    }
    Ok(out)
}

/// Assigns each sequence to exactly one of train/val/test.
pub fn split_dataset(
    mut sequences: Vec<FrameSequence>,
    ratios: [f64; 3],
    seed: u64,
) -> Result<Vec<FrameSequence>> {
    let labels = assign_splits(sequences.len(), ratios, seed)?;
    for (s, l) in sequences.iter_mut().zip(labels) {
        s.split = l;
    }
    Ok(sequences)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_two_two_split_of_ten() {
        let labels = assign_splits(10, [6.0, 2.0, 2.0], 0).unwrap();
        let count = |s| labels.iter().filter(|&&l| l == s).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (6, 2, 2));
        assert_eq!(labels, assign_splits(10, [6.0, 2.0, 2.0], 0).unwrap());
    }

    #[test]
    fn single_sequence_single_bucket() {
        assert_eq!(assign_splits(1, [1.0, 0.0, 0.0], 5).unwrap(), vec![Split::Train]);
        assert!(matches!(
            assign_splits(2, [1.0, 1.0, 1.0], 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn nearest_mask_resize_keeps_binary_values() {
        let m = Grid::from_fn(8, 8, |y, _| (y >= 4) as u8);
        let r = resize_mask(&m, 4, 4);
        assert_eq!(r.data, vec![0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn frame_rejects_mismatched_mask() {
        let img = RgbFrame::filled(4, 4, [0.0; 3]);
        let err = Frame::new(img, 3, Some(Grid::filled(2, 2, 0))).unwrap_err();
        assert!(err.to_string().contains("frame 3"));
    }
}
