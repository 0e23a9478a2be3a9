//! Full-image and selected-zone MIoU, contour distance, and per-sequence
//! evaluation reports.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contour::{mask_to_contour, DistanceField};
use crate::data::{Frame, FrameSequence};
use crate::error::{Error, Result};
use crate::fusion::Model;
use crate::harness::{eval_pick, PickMode};
use crate::kernels::resize_bilinear;
use crate::losses::{contour_distance, threshold, ContourDistanceMode};
use crate::params::name_seed;
use crate::tensor::{Grid, Mask};

/// Whether the zone extends above the ground-truth shoreline.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZoneMode {
    /// Water region plus a band on both sides of the shoreline.
    #[default]
    Symmetric,
    /// Water region only; the band would add nothing below the shoreline.
    BelowOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectedZone {
    pub mask: Mask,
    pub band_width_px: usize,
}

/// Band width scaled from 32 px at 480 rows.
pub fn default_band_px(height: usize) -> usize {
    (32.0 * height as f64 / 480.0).round() as usize
}

/// Ground-truth water plus every pixel whose center lies within
/// `band_width_px` of the ground-truth shoreline.
pub fn build_selected_zone(gt: &Mask, band_width_px: usize) -> Result<SelectedZone> {
    build_selected_zone_with(gt, band_width_px, ZoneMode::Symmetric)
}

pub fn build_selected_zone_with(gt: &Mask, band_width_px: usize, mode: ZoneMode) -> Result<SelectedZone> {
    gt.validate_binary()?;
    let field = match mode {
        ZoneMode::Symmetric => Some(DistanceField::from_mask(gt)?),
        ZoneMode::BelowOnly => None,
    };
    let band = band_width_px as f64;
    let mask = Mask::from_fn(gt.height, gt.width, |y, x| {
        let near = field.as_ref().is_some_and(|f| f.at_pixel(y, x) <= band);
        (gt.get(y, x) == 1 || near) as u8
    });
    Ok(SelectedZone {
        mask,
        band_width_px,
    })
}

/// Per-class IoU and their mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IouBreakdown {
    pub water: f64,
    pub background: f64,
    pub miou: f64,
}

pub fn class_iou(pred: &Mask, gt: &Mask, zone: Option<&SelectedZone>) -> Result<IouBreakdown> {
    if pred.dims() != gt.dims() {
        return Err(Error::Validation(format!(
            "prediction {:?} and ground truth {:?} differ in shape",
            pred.dims(),
            gt.dims()
        )));
    }
    if let Some(z) = zone {
        if z.mask.dims() != gt.dims() {
            return Err(Error::Validation("zone and ground truth differ in shape".into()));
        }
    }
    // [class][pred==class, gt==class, both]
    let mut counts = [[0usize; 3]; 2];
    for i in 0..gt.data.len() {
        if zone.is_some_and(|z| z.mask.data[i] == 0) {
            continue;
        }
        let (p, g) = (pred.data[i] as usize, gt.data[i] as usize);
        for (class, c) in counts.iter_mut().enumerate() {
            let (pc, gc) = (p == class, g == class);
            c[0] += pc as usize;
            c[1] += gc as usize;
            c[2] += (pc && gc) as usize;
        }
    }
    let iou = |c: [usize; 3]| {
        let union = c[0] + c[1] - c[2];
        if union == 0 {
            1.0
        } else {
            c[2] as f64 / union as f64
        }
    };
    let background = iou(counts[0]);
    let water = iou(counts[1]);
    Ok(IouBreakdown {
        water,
        background,
        miou: 0.5 * (water + background),
    })
}

/// Mean of the water and background IoU over the zone (whole image when
/// absent). A class absent from both masks inside the zone scores 1.
pub fn miou(pred: &Mask, gt: &Mask, zone: Option<&SelectedZone>) -> Result<f64> {
    Ok(class_iou(pred, gt, zone)?.miou)
}

/// Anything that maps a current frame and chosen previous frames to
/// per-pixel water probabilities at the frame's own resolution.
pub trait FreeSpaceModel: Sync {
    fn n_prev_pool(&self) -> usize;
    fn n_prev_pick(&self) -> usize;
    fn predict(&self, current: &Frame, previous: &[&Frame]) -> Result<Grid<f64>>;
}

impl FreeSpaceModel for Model {
    fn n_prev_pool(&self) -> usize {
        self.config().n_prev_pool
    }

    fn n_prev_pick(&self) -> usize {
        self.config().n_prev_pick
    }

    fn predict(&self, current: &Frame, previous: &[&Frame]) -> Result<Grid<f64>> {
        let (ih, iw) = self.config().input_size;
        let (h, w) = current.dims();
        let fit = |f: &Frame| if f.dims() == (ih, iw) { f.clone() } else { f.resized(ih, iw) };
        let cur = fit(current);
        let prev: Vec<Frame> = previous.iter().map(|f| fit(f)).collect();
        let refs: Vec<&Frame> = prev.iter().collect();
        let p = self.predict_probability(&cur, &refs)?;
        if (h, w) == (ih, iw) {
            return Ok(p);
        }
        Ok(Grid {
            height: h,
            width: w,
            data: resize_bilinear(&p.data, 1, (ih, iw), (h, w)),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// `None` scales the default band to the sequence resolution.
    pub band_width_px: Option<usize>,
    pub zone_mode: ZoneMode,
    pub pick_mode: PickMode,
    pub seed: u64,
    pub n_c: usize,
    pub distance_mode: ContourDistanceMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            band_width_px: None,
            zone_mode: ZoneMode::Symmetric,
            pick_mode: PickMode::RandomKOfM,
            seed: 0,
            n_c: 128,
            distance_mode: ContourDistanceMode::PredictionToTruth,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame_index: usize,
    pub timestamp: i64,
    pub miou_full: f64,
    pub miou_selected: f64,
    /// `None` when the prediction or the ground truth has no shoreline.
    pub contour_dist_px: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub sequence_id: String,
    pub band_width_px: usize,
    pub frames_evaluated: usize,
    pub unlabeled_skipped: usize,
    /// `None` when no frame was scored.
    pub miou_full: Option<f64>,
    pub miou_selected: Option<f64>,
    /// Mean over frames where the distance is defined.
    pub contour_dist_px: Option<f64>,
    pub contour_undefined: usize,
    pub frames: Vec<FrameMetrics>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl SequenceReport {
    fn from_frames(sequence_id: String, band_width_px: usize, frames: Vec<FrameMetrics>, unlabeled_skipped: usize) -> Self {
        let dists: Vec<f64> = frames.iter().filter_map(|f| f.contour_dist_px).collect();
        Self {
            sequence_id,
            band_width_px,
            frames_evaluated: frames.len(),
            unlabeled_skipped,
            miou_full: mean(frames.iter().map(|f| f.miou_full)),
            miou_selected: mean(frames.iter().map(|f| f.miou_selected)),
            contour_dist_px: mean(dists.iter().copied()),
            contour_undefined: frames.len() - dists.len(),
            frames,
        }
    }
}

/// Scores every labeled frame after the first `n_prev_pool`, which only
/// serve as context.
pub fn evaluate_sequence(
    model: &dyn FreeSpaceModel,
    sequence: &FrameSequence,
    cfg: &EvalConfig,
) -> Result<SequenceReport> {
    let (h, _) = sequence
        .resolution()
        .ok_or_else(|| Error::Validation(format!("sequence {} is empty", sequence.id)))?;
    let band = cfg.band_width_px.unwrap_or_else(|| default_band_px(h));
    let pool = model.n_prev_pool();
    let k = model.n_prev_pick();
    let seq_hash = name_seed(cfg.seed, &sequence.id);
    let candidates: Vec<usize> = (pool..sequence.len()).collect();
    let scored: Vec<Option<FrameMetrics>> = candidates
        .par_iter()
        .map(|&i| {
            let frame = &sequence.frames[i];
            let Some(gt) = &frame.mask else { return Ok(None) };
            let pick = eval_pick(i, pool, k, cfg.pick_mode, cfg.seed, &sequence.id)?;
            let previous: Vec<&Frame> = pick.indices.iter().map(|&j| &sequence.frames[j]).collect();
            let p = model.predict(frame, &previous)?;
            if p.dims() != gt.dims() {
                return Err(Error::Shape(format!(
                    "prediction {:?} for frame {} does not match mask {:?}",
                    p.dims(),
                    frame.timestamp,
                    gt.dims()
                )));
            }
            let pred = threshold(&p);
            let zone = build_selected_zone_with(gt, band, cfg.zone_mode)?;
            let pc = mask_to_contour(&pred)?;
            let gc = mask_to_contour(gt)?;
            Ok(Some(FrameMetrics {
                frame_index: i,
                timestamp: frame.timestamp,
                miou_full: miou(&pred, gt, None)?,
                miou_selected: miou(&pred, gt, Some(&zone))?,
                contour_dist_px: contour_distance(&pc, &gc, cfg.n_c, seq_hash ^ i as u64, cfg.distance_mode),
            }))
        })
        .collect::<Result<_>>()?;
    let skipped = scored.iter().filter(|s| s.is_none()).count();
    let frames = scored.into_iter().flatten().collect();
    Ok(SequenceReport::from_frames(sequence.id.clone(), band, frames, skipped))
}

/// Settings and per-sequence results of one evaluation run; the top-level
/// means are over all scored frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub threshold: f64,
    pub n_prev_pool: usize,
    pub n_prev_pick: usize,
    pub frames_evaluated: usize,
    pub miou_full: f64,
    pub miou_selected: f64,
    pub contour_dist_px: Option<f64>,
    pub sequences: Vec<SequenceReport>,
}

impl EvalReport {
    /// Fails when no frame was scored at all.
    pub fn from_sequences(
        config: EvalConfig,
        model: &dyn FreeSpaceModel,
        sequences: Vec<SequenceReport>,
    ) -> Result<Self> {
        let all = || sequences.iter().flat_map(|s| s.frames.iter());
        if all().next().is_none() {
            return Err(Error::Validation(
                "no labeled frame past the context window to evaluate".into(),
            ));
        }
        Ok(Self {
            threshold: 0.5,
            n_prev_pool: model.n_prev_pool(),
            n_prev_pick: model.n_prev_pick(),
            frames_evaluated: all().count(),
            miou_full: mean(all().map(|f| f.miou_full)).unwrap_or(f64::NAN),
            miou_selected: mean(all().map(|f| f.miou_selected)).unwrap_or(f64::NAN),
            contour_dist_px: mean(all().filter_map(|f| f.contour_dist_px)),
            config,
            sequences,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::data::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::data::read_json(path)
    }

    /// Per-frame rows: `sequence_id,frame_index,miou_full,miou_selected,contour_dist_px`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sequence_id,frame_index,miou_full,miou_selected,contour_dist_px\n");
        for s in &self.sequences {
            for f in &s.frames {
                let d = f.contour_dist_px.map(|d| d.to_string()).unwrap_or_default();
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    s.sequence_id, f.frame_index, f.miou_full, f.miou_selected, d
                ));
            }
        }
        out
    }
}

/// Evaluates every sequence (in order) and assembles the report.
pub fn evaluate_dataset(
    model: &dyn FreeSpaceModel,
    sequences: &[FrameSequence],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let reports = sequences
        .iter()
        .map(|s| evaluate_sequence(model, s, cfg))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_sequences(cfg.clone(), model, reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows_from(h: usize, w: usize, r: usize) -> Mask {
        Mask::from_fn(h, w, |y, _| (y >= r) as u8)
    }

    #[test]
    fn straight_shoreline_zone() {
        let z = build_selected_zone(&rows_from(100, 100, 40), 10).unwrap();
        assert_eq!(z.mask.count_ones(), 7000);
        assert!((0..100).all(|x| z.mask.get(30, x) == 1 && z.mask.get(29, x) == 0));
        let z0 = build_selected_zone(&rows_from(100, 100, 40), 0).unwrap();
        assert_eq!(z0.mask, rows_from(100, 100, 40));
        let all = build_selected_zone(&Mask::filled(10, 10, 1), 0).unwrap();
        assert_eq!(all.mask.count_ones(), 100);
    }

    #[test]
    fn analytic_miou_cases() {
        let gt = rows_from(10, 10, 5);
        assert_eq!(miou(&gt, &gt, None).unwrap(), 1.0);
        assert_eq!(miou(&Mask::filled(10, 10, 1), &gt, None).unwrap(), 0.25);
        assert!(miou(&Mask::filled(10, 9, 1), &gt, None).is_err());
    }

    #[test]
    fn selected_zone_is_stricter_for_shoreline_shift() {
        let gt = rows_from(100, 100, 40);
        let pred = rows_from(100, 100, 42);
        let zone = build_selected_zone(&gt, 10).unwrap();
        let full = miou(&pred, &gt, None).unwrap();
        let sel = miou(&pred, &gt, Some(&zone)).unwrap();
        // Background: 40 of 42 (full), 10 of 12 (zone); water 58 of 60 both.
        assert!((full - 0.5 * (40.0 / 42.0 + 58.0 / 60.0)).abs() < 1e-12);
        assert!((sel - 0.5 * (10.0 / 12.0 + 58.0 / 60.0)).abs() < 1e-12);
        assert!(sel < full);
    }

    #[test]
    fn default_band_at_benchmark_size() {
        assert_eq!(default_band_px(224), 15);
        assert_eq!(default_band_px(480), 32);
    }
}
