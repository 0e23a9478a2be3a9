//! Previous-frame picking, robustness transforms, the training loop, and
//! the ablation and robustness drivers.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::config::{ExperimentConfig, ModelConfig, TrainConfig};
use crate::data::{Frame, FrameSequence};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_dataset, evaluate_sequence, EvalConfig, EvalReport, SequenceReport};
use crate::fusion::{forward_var, Model};
use crate::losses::{total_loss_var, LossBreakdown, LossTarget};
use crate::params::{mix64, name_seed};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PickMode {
    /// `k` distinct frames drawn uniformly from the `pool` most recent.
    #[default]
    RandomKOfM,
    /// The `k` most recent frames.
    FixedLastK,
}

/// Positions (within the sequence) of the previous frames fused for one
/// prediction, most recent first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FramePick {
    pub indices: Vec<usize>,
    pub mode: PickMode,
}

pub fn pick_frames<R: Rng>(current: usize, pool: usize, k: usize, mode: PickMode, rng: &mut R) -> Result<FramePick> {
    if current < pool {
        return Err(Error::Context { current, pool });
    }
    if k > pool {
        return Err(Error::Config(format!("cannot pick {k} of {pool} previous frames")));
    }
    let mut offsets: Vec<usize> = match mode {
        PickMode::FixedLastK => (0..k).collect(),
        PickMode::RandomKOfM => sample(rng, pool, k).into_vec(),
    };
    offsets.sort_unstable();
    Ok(FramePick {
        indices: offsets.into_iter().map(|o| current - 1 - o).collect(),
        mode,
    })
}

/// Seed of the evaluation-time pick for one frame.
pub fn eval_pick_seed(seed: u64, sequence_id: &str, index: usize) -> u64 {
    mix64(name_seed(seed, sequence_id) ^ index as u64)
}

pub(crate) fn eval_pick(
    current: usize,
    pool: usize,
    k: usize,
    mode: PickMode,
    seed: u64,
    sequence_id: &str,
) -> Result<FramePick> {
    let mut rng = ChaCha8Rng::seed_from_u64(eval_pick_seed(seed, sequence_id, current));
    pick_frames(current, pool, k, mode, &mut rng)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Forward,
    Backward,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropMode {
    /// Evenly spaced drops: with rate 1/7 the 1-based positions 7, 14, ...
    #[default]
    Periodic,
    /// Independent Bernoulli drops with the given seed.
    Random { seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RobustnessCondition {
    pub direction: Direction,
    /// Drop rate `numerator / denominator`, below 1.
    pub drop_numerator: u32,
    pub drop_denominator: u32,
    #[serde(default)]
    pub drop_mode: DropMode,
}

impl RobustnessCondition {
    pub const fn new(direction: Direction, drop_numerator: u32, drop_denominator: u32) -> Self {
        Self {
            direction,
            drop_numerator,
            drop_denominator,
            drop_mode: DropMode::Periodic,
        }
    }

    /// The four conditions of the robustness grid.
    pub fn grid() -> [Self; 4] {
        [
            Self::new(Direction::Forward, 0, 1),
            Self::new(Direction::Forward, 1, 7),
            Self::new(Direction::Backward, 0, 1),
            Self::new(Direction::Backward, 1, 7),
        ]
    }

    pub fn label(&self) -> String {
        let dir = match self.direction {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        };
        if self.drop_numerator == 0 {
            format!("{dir}/none")
        } else {
            format!("{dir}/{}/{}", self.drop_numerator, self.drop_denominator)
        }
    }
}

/// Drops frames, then (for backward) reverses them and renumbers the
/// timestamps `0..n`.
pub fn apply_condition(sequence: &FrameSequence, cond: &RobustnessCondition) -> Result<FrameSequence> {
    let (num, den) = (cond.drop_numerator as u64, cond.drop_denominator as u64);
    if den == 0 || num >= den {
        return Err(Error::Validation(format!(
            "drop rate {num}/{den} must lie in [0, 1)"
        )));
    }
    let mut rng = match cond.drop_mode {
        DropMode::Random { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        DropMode::Periodic => None,
    };
    let rate = num as f64 / den as f64;
    let mut frames: Vec<Frame> = Vec::with_capacity(sequence.len());
    for (i, f) in sequence.frames.iter().enumerate() {
        let p = i as u64 + 1;
        let drop = match &mut rng {
            None => p * num / den > (p - 1) * num / den,
            Some(r) => r.random_bool(rate),
        };
        if !drop {
            frames.push(f.clone());
        }
    }
    if cond.direction == Direction::Backward {
        frames.reverse();
        for (t, f) in frames.iter_mut().enumerate() {
            f.timestamp = t as i64;
        }
    }
    Ok(FrameSequence {
        id: sequence.id.clone(),
        frames,
        split: sequence.split,
        fps: sequence.fps,
    })
}

/// Per-iteration training record; loss terms are batch means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub learning_rate: f64,
    pub l_ce: f64,
    pub l_dice: f64,
    pub l_con: f64,
    pub total: f64,
    /// Batch elements whose ground truth had no shoreline.
    pub empty_contours: usize,
}

/// One training example location: sequence and frame position.
#[derive(Clone, Copy, Debug)]
struct SampleRef {
    sequence: usize,
    index: usize,
}

struct PreparedSequence {
    id: String,
    frames: Vec<Frame>,
    targets: Vec<Option<Arc<LossTarget>>>,
}

fn prepare(sequences: &[FrameSequence], cfg: &ModelConfig) -> Result<Vec<PreparedSequence>> {
    let (h, w) = cfg.input_size;
    sequences
        .par_iter()
        .map(|s| {
            let frames: Vec<Frame> = s
                .frames
                .iter()
                .map(|f| if f.dims() == (h, w) { f.clone() } else { f.resized(h, w) })
                .collect();
            let targets = frames
                .iter()
                .enumerate()
                .map(|(i, f)| match &f.mask {
                    Some(m) if i >= cfg.n_prev_pool => Ok(Some(Arc::new(LossTarget::new(m.clone())?))),
                    _ => Ok(None),
                })
                .collect::<Result<_>>()?;
            Ok(PreparedSequence {
                id: s.id.clone(),
                frames,
                targets,
            })
        })
        .collect()
}

/// Loss and parameter gradients for one example.
pub fn example_gradients(
    model: &Model,
    current: &Frame,
    previous: &[&Frame],
    target: &LossTarget,
) -> Result<(LossBreakdown, BTreeMap<String, Tensor>)> {
    let mut g = Graph::new();
    let cur = g.constant(current.image.to_tensor());
    let prev: Vec<(Var, i64)> = previous
        .iter()
        .map(|f| (g.constant(f.image.to_tensor()), f.timestamp))
        .collect();
    let vars = forward_var(&mut g, model.params(), model.config(), (cur, current.timestamp), &prev)?;
    let (loss, breakdown) = total_loss_var(&mut g, vars.logits, target, model.config());
    let mut grads = g.backward(loss);
    Ok((breakdown, g.param_grads(&mut grads)))
}

/// Mini-batch SGD with momentum; weight decay is added to the gradient.
/// Frames with index below `n_prev_pool` never contribute a loss term.
/// `on_iteration` sees every record as it is produced.
pub fn train(
    model: &mut Model,
    sequences: &[FrameSequence],
    tc: &TrainConfig,
    mut on_iteration: impl FnMut(&IterationLog) -> Result<()>,
) -> Result<Vec<IterationLog>> {
    tc.validate()?;
    let cfg = model.config().clone();
    let prepared = prepare(sequences, &cfg)?;
    let samples: Vec<SampleRef> = prepared
        .iter()
        .enumerate()
        .flat_map(|(s, p)| {
            p.targets
                .iter()
                .enumerate()
                .filter(|(_, t)| t.is_some())
                .map(move |(index, _)| SampleRef { sequence: s, index })
        })
        .collect();
    if samples.is_empty() {
        return Err(Error::Validation(
            "training data has no labeled frame past the context window".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut momentum: BTreeMap<String, Tensor> = BTreeMap::new();
    let mut log = Vec::with_capacity(tc.iterations);

    for iteration in 0..tc.iterations {
        let batch: Vec<(SampleRef, FramePick)> = (0..tc.batch_size)
            .map(|_| {
                let s = samples[rng.random_range(0..samples.len())];
                let pick = pick_frames(s.index, cfg.n_prev_pool, cfg.n_prev_pick, PickMode::RandomKOfM, &mut rng)?;
                Ok((s, pick))
            })
            .collect::<Result<_>>()?;

        let results: Vec<(LossBreakdown, BTreeMap<String, Tensor>)> = batch
            .par_iter()
            .map(|(s, pick)| {
                let seq = &prepared[s.sequence];
                let previous: Vec<&Frame> = pick.indices.iter().map(|&j| &seq.frames[j]).collect();
                let target = seq.targets[s.index].as_ref().expect("sampled frames have targets");
                example_gradients(model, &seq.frames[s.index], &previous, target)
            })
            .collect::<Result<_>>()?;

        for ((s, _), (b, _)) in batch.iter().zip(&results) {
            if !b.total.is_finite() {
                return Err(Error::NonFinite {
                    iteration,
                    sequence: prepared[s.sequence].id.clone(),
                    frame: s.index,
                });
            }
        }

        let n = tc.batch_size as f64;
        let mut record = IterationLog {
            iteration,
            learning_rate: tc.learning_rate_at(iteration),
            l_ce: 0.0,
            l_dice: 0.0,
            l_con: 0.0,
            total: 0.0,
            empty_contours: 0,
        };
        let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
        for (b, g) in results {
            record.l_ce += b.l_ce / n;
            record.l_dice += b.l_dice / n;
            record.l_con += b.l_con / n;
            record.total += b.total / n;
            record.empty_contours += b.empty_contour as usize;
            for (name, t) in g {
                match grads.get_mut(&name) {
                    Some(acc) => acc.add_assign(&t),
                    None => {
                        grads.insert(name, t);
                    }
                }
            }
        }
        if grads.values().any(|g| !g.all_finite()) {
            return Err(Error::NonFinite {
                iteration,
                sequence: prepared[batch[0].0.sequence].id.clone(),
                frame: batch[0].0.index,
            });
        }

        let lr = record.learning_rate;
        for (name, p) in model.params_mut().iter_mut() {
            // Modules outside the recorded graph (alignment when image-only)
            // still decay.
            let zero;
            let g = match grads.get(name) {
                Some(g) => g,
                None => {
                    zero = Tensor::zeros(p.shape());
                    &zero
                }
            };
            let buf = momentum
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            for ((pv, &gv), bv) in p.data_mut().iter_mut().zip(g.data()).zip(buf.data_mut()) {
                let d = gv / n + tc.weight_decay * *pv;
                *bv = tc.momentum * *bv + d;
                *pv -= lr * *bv;
            }
        }
        on_iteration(&record)?;
        log.push(record);
    }
    Ok(log)
}

/// Writes records as JSON lines.
pub fn write_log(path: &Path, log: &[IterationLog]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for r in log {
        let line = serde_json::to_string(r).map_err(|e| Error::json(path, e))?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

/// One row of the module ablation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub use_tpe: bool,
    pub use_man: bool,
    pub use_dcn: bool,
    pub use_contour_loss: bool,
    pub miou_selected: f64,
    pub miou_full: f64,
    pub parameter_count: usize,
    pub final_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::data::write_json(path, self)
    }
}

/// The full model and each module switched off in turn.
pub fn ablation_configs(base: &ModelConfig) -> Vec<(&'static str, ModelConfig)> {
    let all = ModelConfig {
        use_tpe: true,
        use_man: true,
        use_dcn: true,
        use_contour_loss: true,
        ..base.clone()
    };
    vec![
        ("without_tpe", ModelConfig { use_tpe: false, ..all.clone() }),
        ("without_man", ModelConfig { use_man: false, ..all.clone() }),
        ("without_dcn", ModelConfig { use_dcn: false, ..all.clone() }),
        ("without_contour_loss", ModelConfig { use_contour_loss: false, ..all.clone() }),
        ("all", all),
    ]
}

/// Trains one model from `cfg` (initialized with the training seed) and
/// evaluates it.
pub fn train_and_evaluate(
    cfg: &ExperimentConfig,
    train_seqs: &[FrameSequence],
    eval_seqs: &[FrameSequence],
    eval_cfg: &EvalConfig,
) -> Result<(Model, Vec<IterationLog>, EvalReport)> {
    let mut model = Model::new(cfg.model.clone(), cfg.train.seed)?;
    let log = train(&mut model, train_seqs, &cfg.train, |_| Ok(()))?;
    let report = evaluate_dataset(&model, eval_seqs, eval_cfg)?;
    Ok((model, log, report))
}

/// Trains and evaluates the five ablation configurations with identical
/// seeds.
pub fn run_ablation(
    base: &ExperimentConfig,
    train_seqs: &[FrameSequence],
    eval_seqs: &[FrameSequence],
    eval_cfg: &EvalConfig,
) -> Result<AblationTable> {
    let rows = ablation_configs(&base.model)
        .into_iter()
        .map(|(name, model_cfg)| {
            let cfg = ExperimentConfig {
                model: model_cfg.clone(),
                train: base.train.clone(),
            };
            let (model, log, report) = train_and_evaluate(&cfg, train_seqs, eval_seqs, eval_cfg)?;
            Ok(AblationRow {
                name: name.to_string(),
                use_tpe: model_cfg.use_tpe,
                use_man: model_cfg.use_man,
                use_dcn: model_cfg.use_dcn,
                use_contour_loss: model_cfg.use_contour_loss,
                miou_selected: report.miou_selected,
                miou_full: report.miou_full,
                parameter_count: model.parameter_count(),
                final_loss: log.last().map_or(f64::NAN, |r| r.total),
            })
        })
        .collect::<Result<_>>()?;
    Ok(AblationTable { rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessEntry {
    pub condition: RobustnessCondition,
    pub label: String,
    pub report: SequenceReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub label: String,
    pub frames_evaluated: usize,
    pub miou_selected: f64,
    pub miou_full: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessTable {
    pub entries: Vec<RobustnessEntry>,
    /// Frame-weighted means across sequences, one per condition.
    pub summary: Vec<ConditionSummary>,
}

impl RobustnessTable {
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::data::write_json(path, self)
    }

    pub fn summary_for(&self, label: &str) -> Option<&ConditionSummary> {
        self.summary.iter().find(|s| s.label == label)
    }
}

/// Evaluates each sequence under every condition of the robustness grid.
pub fn run_robustness(
    model: &dyn crate::evaluation::FreeSpaceModel,
    sequences: &[FrameSequence],
    eval_cfg: &EvalConfig,
) -> Result<RobustnessTable> {
    let mut entries = Vec::new();
    for seq in sequences {
        for cond in RobustnessCondition::grid() {
            let conditioned = apply_condition(seq, &cond)?;
            entries.push(RobustnessEntry {
                condition: cond,
                label: cond.label(),
                report: evaluate_sequence(model, &conditioned, eval_cfg)?,
            });
        }
    }
    let summary = RobustnessCondition::grid()
        .iter()
        .map(|c| {
            let label = c.label();
            let frames: Vec<_> = entries
                .iter()
                .filter(|e| e.label == label)
                .flat_map(|e| e.report.frames.iter())
                .collect();
            let n = frames.len();
            let avg = |f: fn(&&crate::evaluation::FrameMetrics) -> f64| {
                if n == 0 {
                    f64::NAN
                } else {
                    frames.iter().map(f).sum::<f64>() / n as f64
                }
            };
            ConditionSummary {
                frames_evaluated: n,
                miou_selected: avg(|f| f.miou_selected),
                miou_full: avg(|f| f.miou_full),
                label,
            }
        })
        .collect();
    Ok(RobustnessTable { entries, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RgbFrame;

    fn seq(n: usize) -> FrameSequence {
        let frames = (0..n)
            .map(|t| Frame::new(RgbFrame::filled(2, 2, [t as f32 / 100.0; 3]), t as i64, None).unwrap())
            .collect();
        FrameSequence::new("s", frames, crate::data::Split::Test).unwrap()
    }

    #[test]
    fn fixed_pick_takes_most_recent() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = pick_frames(10, 4, 2, PickMode::FixedLastK, &mut rng).unwrap();
        assert_eq!(p.indices, vec![9, 8]);
        let p = pick_frames(10, 4, 4, PickMode::RandomKOfM, &mut rng).unwrap();
        assert_eq!(p.indices, vec![9, 8, 7, 6]);
        assert!(matches!(
            pick_frames(3, 4, 2, PickMode::FixedLastK, &mut rng),
            Err(Error::Context { current: 3, pool: 4 })
        ));
    }

    #[test]
    fn periodic_drop_and_reverse() {
        let s = seq(14);
        let d = apply_condition(&s, &RobustnessCondition::new(Direction::Forward, 1, 7)).unwrap();
        let ts: Vec<i64> = d.frames.iter().map(|f| f.timestamp).collect();
        assert_eq!(ts, vec![0, 1, 2, 3, 4, 5, 7, 8, 9, 10, 11, 12]);
        let s5 = seq(5);
        let b = apply_condition(&s5, &RobustnessCondition::new(Direction::Backward, 0, 1)).unwrap();
        assert_eq!(b.frames.iter().map(|f| f.timestamp).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
        assert_eq!(b.frames[0].image, s5.frames[4].image);
        let same = apply_condition(&s, &RobustnessCondition::new(Direction::Forward, 0, 1)).unwrap();
        assert_eq!(same, s);
    }
}
