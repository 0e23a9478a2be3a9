//! Training objective: cross-entropy + Dice + contour-position loss.
//!
//! The contour term is trained through a differentiable surrogate. The
//! boundary softness of a prediction lives on the cracks between 4-adjacent
//! pixels (`b = |p_a - p_b|`), and each crack is weighted by the exact
//! distance from its midpoint to the ground-truth contour. For a hard
//! prediction this is the mean contour distance of the predicted boundary,
//! which [`contour_distance_sampled`] estimates by uniform sampling.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autograd::{sigmoid, CustomOp, Graph, Var};
use crate::config::ModelConfig;
use crate::contour::{mask_to_contour, ContourPolyline, DistanceField};
use crate::error::{Error, Result};
use crate::tensor::{Grid, Mask, Tensor};

/// Smoothing term of the Dice loss, in pixel-count units.
pub const DICE_EPS: f64 = 1.0;
/// Guards the contour surrogate's denominator.
pub const CONTOUR_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_ce: f64,
    pub l_dice: f64,
    pub l_con: f64,
    pub total: f64,
    /// The ground truth had no contour, so `l_con` was forced to zero.
    pub empty_contour: bool,
}

fn check_logits(logits: &Tensor, mask: &Mask) -> Result<()> {
    let s = logits.shape();
    if s.len() != 3 || s[0] != 2 || (s[1], s[2]) != mask.dims() {
        return Err(Error::Validation(format!(
            "logits {:?} do not match a {}x{} mask",
            s, mask.height, mask.width
        )));
    }
    Ok(())
}

fn check_probabilities(p: &Grid<f64>, mask: &Mask) -> Result<()> {
    if p.dims() != mask.dims() {
        return Err(Error::Validation(format!(
            "probabilities {:?} do not match mask {:?}",
            p.dims(),
            mask.dims()
        )));
    }
    if let Some(v) = p.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Validation(format!("probability {v} outside [0, 1]")));
    }
    Ok(())
}

/// Mean two-class cross-entropy with a stable log-softmax.
pub fn cross_entropy(logits: &Tensor, mask: &Mask) -> Result<f64> {
    check_logits(logits, mask)?;
    Ok(ce_value(logits.data(), &mask.data))
}

fn ce_value(logits: &[f64], target: &[u8]) -> f64 {
    let n = target.len();
    let (l0, l1) = logits.split_at(n);
    let mut total = 0.0;
    for i in 0..n {
        let (a, b) = (l0[i], l1[i]);
        let m = a.max(b);
        let lse = m + ((a - m).exp() + (b - m).exp()).ln();
        total += lse - if target[i] == 1 { b } else { a };
    }
    total / n as f64
}

/// Softmax probability of the water class.
pub fn water_probability(logits: &Tensor) -> Grid<f64> {
    let s = logits.shape();
    let n = s[1] * s[2];
    let (l0, l1) = logits.data().split_at(n);
    Grid {
        height: s[1],
        width: s[2],
        data: l0.iter().zip(l1).map(|(a, b)| sigmoid(b - a)).collect(),
    }
}

/// `1 - (2 * sum(p*m) + eps) / (sum(p) + sum(m) + eps)` with `eps = 1`.
pub fn dice_loss(p: &Grid<f64>, mask: &Mask) -> Result<f64> {
    check_probabilities(p, mask)?;
    Ok(dice_value(&p.data, &mask.data))
}

fn dice_value(p: &[f64], m: &[u8]) -> f64 {
    let (inter, sp, sm) = dice_sums(p, m);
    1.0 - (2.0 * inter + DICE_EPS) / (sp + sm + DICE_EPS)
}

fn dice_sums(p: &[f64], m: &[u8]) -> (f64, f64, f64) {
    let mut inter = 0.0;
    let mut sp = 0.0;
    let mut sm = 0.0;
    for (&pi, &mi) in p.iter().zip(m) {
        inter += pi * mi as f64;
        sp += pi;
        sm += mi as f64;
    }
    (inter, sp, sm)
}

/// Which contour the distances are measured from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContourDistanceMode {
    /// Sample the prediction, measure to the ground truth.
    #[default]
    PredictionToTruth,
    /// Average of both directions.
    Symmetric,
}

/// Mean distance (pixels) from `n_c` points sampled uniformly by arc length
/// on `pred` to the nearest point of `gt`. `None` when either contour is
/// empty.
pub fn contour_distance_sampled(
    pred: &ContourPolyline,
    gt: &ContourPolyline,
    n_c: usize,
    rng_seed: u64,
) -> Option<f64> {
    if pred.is_empty() || gt.is_empty() || n_c == 0 {
        return None;
    }
    let samples = pred.sample_uniform(n_c, rng_seed);
    if samples.is_empty() {
        return None;
    }
    let total: f64 = samples.iter().map(|&p| gt.distance_to(p)).sum();
    Some(total / samples.len() as f64)
}

pub fn contour_distance(
    pred: &ContourPolyline,
    gt: &ContourPolyline,
    n_c: usize,
    rng_seed: u64,
    mode: ContourDistanceMode,
) -> Option<f64> {
    let forward = contour_distance_sampled(pred, gt, n_c, rng_seed)?;
    match mode {
        ContourDistanceMode::PredictionToTruth => Some(forward),
        ContourDistanceMode::Symmetric => {
            let backward = contour_distance_sampled(gt, pred, n_c, rng_seed ^ 0x5bd1_e995)?;
            Some(0.5 * (forward + backward))
        }
    }
}

/// Per-crack ground-truth distances for the contour surrogate, cached per
/// mask. Vertical pairs `(y,x)-(y+1,x)` first, then horizontal pairs
/// `(y,x)-(y,x+1)`, both row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CrackDistances {
    pub height: usize,
    pub width: usize,
    below: Vec<f64>,
    right: Vec<f64>,
    empty: bool,
}

impl CrackDistances {
    pub fn from_mask(mask: &Mask) -> Result<Self> {
        Ok(Self::from_field(&DistanceField::from_mask(mask)?))
    }

    pub fn from_field(field: &DistanceField) -> Self {
        let (h, w) = (field.height, field.width);
        let below = Grid::from_fn(h.saturating_sub(1), w, |y, x| field.below_edge(y, x)).data;
        let right = Grid::from_fn(h, w.saturating_sub(1), |y, x| field.right_edge(y, x)).data;
        Self {
            height: h,
            width: w,
            below,
            right,
            empty: field.is_empty(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.empty
    }

    pub fn diagonal(&self) -> f64 {
        (self.height as f64).hypot(self.width as f64)
    }
}

/// Returns `(sum D*b, sum b)` over all cracks.
fn surrogate_sums(p: &[f64], d: &CrackDistances) -> (f64, f64) {
    let (h, w) = (d.height, d.width);
    let mut num = 0.0;
    let mut den = 0.0;
    for y in 0..h.saturating_sub(1) {
        for x in 0..w {
            let b = (p[y * w + x] - p[(y + 1) * w + x]).abs();
            num += d.below[y * w + x] * b;
            den += b;
        }
    }
    for y in 0..h {
        for x in 0..w.saturating_sub(1) {
            let b = (p[y * w + x] - p[y * w + x + 1]).abs();
            num += d.right[y * (w - 1) + x] * b;
            den += b;
        }
    }
    (num, den)
}

fn surrogate_value(p: &[f64], d: &CrackDistances, beta: f64) -> f64 {
    if d.is_empty() {
        return 0.0;
    }
    let (num, den) = surrogate_sums(p, d);
    if den == 0.0 {
        return 0.0;
    }
    beta * num / (den + CONTOUR_EPS) / d.diagonal()
}

/// Differentiable contour-position loss of a water-probability grid.
/// Zero when the ground truth has no contour or the prediction is constant.
pub fn contour_loss(p: &Grid<f64>, gt_mask: &Mask, beta: f64) -> Result<f64> {
    check_probabilities(p, gt_mask)?;
    if !(beta > 0.0) {
        return Err(Error::Config(format!("beta must be positive, got {beta}")));
    }
    let d = CrackDistances::from_mask(gt_mask)?;
    Ok(surrogate_value(&p.data, &d, beta))
}

/// Analytic gradient of [`contour_loss`] with respect to the probabilities.
pub fn contour_loss_grad(p: &Grid<f64>, d: &CrackDistances, beta: f64) -> Grid<f64> {
    let mut g = Grid::filled(p.height, p.width, 0.0);
    surrogate_grad(&p.data, d, beta, 1.0, &mut g.data);
    g
}

fn surrogate_grad(p: &[f64], d: &CrackDistances, beta: f64, upstream: f64, out: &mut [f64]) {
    if d.is_empty() {
        return;
    }
    let (num, den) = surrogate_sums(p, d);
    if den == 0.0 {
        return;
    }
    let s = den + CONTOUR_EPS;
    let scale = upstream * beta / d.diagonal();
    let ratio = num / s;
    let (h, w) = (d.height, d.width);
    let mut push = |a: usize, b: usize, dist: f64| {
        let diff = p[a] - p[b];
        let sign = if diff > 0.0 {
            1.0
        } else if diff < 0.0 {
            -1.0
        } else {
            0.0
        };
        let db = scale * (dist - ratio) / s * sign;
        out[a] += db;
        out[b] -= db;
    };
    for y in 0..h.saturating_sub(1) {
        for x in 0..w {
            push(y * w + x, (y + 1) * w + x, d.below[y * w + x]);
        }
    }
    for y in 0..h {
        for x in 0..w.saturating_sub(1) {
            push(y * w + x, y * w + x + 1, d.right[y * (w - 1) + x]);
        }
    }
}

/// Everything the loss needs about one ground-truth frame.
#[derive(Clone, Debug)]
pub struct LossTarget {
    pub mask: Mask,
    pub cracks: Arc<CrackDistances>,
}

impl LossTarget {
    pub fn new(mask: Mask) -> Result<Self> {
        let cracks = Arc::new(CrackDistances::from_mask(&mask)?);
        Ok(Self { mask, cracks })
    }
}

pub fn total_loss(logits: &Tensor, gt_mask: &Mask, config: &ModelConfig) -> Result<LossBreakdown> {
    check_logits(logits, gt_mask)?;
    let target = LossTarget::new(gt_mask.clone())?;
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    let (_, breakdown) = total_loss_var(&mut g, l, &target, config);
    Ok(breakdown)
}

/// Records the composite loss on `g`; returns the scalar node and the
/// per-term values. The probabilities are computed once and shared.
pub fn total_loss_var(
    g: &mut Graph,
    logits: Var,
    target: &LossTarget,
    config: &ModelConfig,
) -> (Var, LossBreakdown) {
    let mask = Arc::new(target.mask.data.clone());
    let ce_val = ce_value(g.value(logits).data(), &mask);
    let ce = g.custom(
        &[logits],
        Tensor::scalar(ce_val),
        Box::new(CrossEntropyOp { target: mask.clone() }),
    );

    let probs = water_probability(g.value(logits));
    let (h, w) = (probs.height, probs.width);
    let p = g.custom(
        &[logits],
        Tensor::new(vec![h, w], probs.data).expect("prob shape"),
        Box::new(WaterProbOp),
    );

    let dice_val = dice_value(g.value(p).data(), &mask);
    let dice = g.custom(
        &[p],
        Tensor::scalar(dice_val),
        Box::new(DiceOp { target: mask }),
    );

    let mut total = g.add(ce, dice);
    let mut breakdown = LossBreakdown {
        l_ce: ce_val,
        l_dice: dice_val,
        ..Default::default()
    };
    if config.use_contour_loss {
        breakdown.empty_contour = target.cracks.is_empty();
        let con_val = surrogate_value(g.value(p).data(), &target.cracks, config.beta);
        let con = g.custom(
            &[p],
            Tensor::scalar(con_val),
            Box::new(ContourOp {
                cracks: target.cracks.clone(),
                beta: config.beta,
            }),
        );
        breakdown.l_con = con_val;
        total = g.add(total, con);
    }
    breakdown.total = g.value(total).item();
    (total, breakdown)
}

struct CrossEntropyOp {
    target: Arc<Vec<u8>>,
}

impl CustomOp for CrossEntropyOp {
    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let logits = inputs[0];
        let n = self.target.len();
        let scale = grad.item() / n as f64;
        let mut gl = Tensor::zeros(logits.shape());
        let (l0, l1) = logits.data().split_at(n);
        let gd = gl.data_mut();
        for i in 0..n {
            let p1 = sigmoid(l1[i] - l0[i]);
            let y1 = self.target[i] as f64;
            gd[i] = scale * ((1.0 - p1) - (1.0 - y1));
            gd[n + i] = scale * (p1 - y1);
        }
        vec![Some(gl)]
    }
}

struct WaterProbOp;

impl CustomOp for WaterProbOp {
    fn backward(&self, inputs: &[&Tensor], out: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let n = out.len();
        let mut gl = Tensor::zeros(inputs[0].shape());
        let gd = gl.data_mut();
        for i in 0..n {
            let p = out.data()[i];
            let d = grad.data()[i] * p * (1.0 - p);
            gd[i] = -d;
            gd[n + i] = d;
        }
        vec![Some(gl)]
    }
}

struct DiceOp {
    target: Arc<Vec<u8>>,
}

impl CustomOp for DiceOp {
    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let p = inputs[0].data();
        let (inter, sp, sm) = dice_sums(p, &self.target);
        let den = sp + sm + DICE_EPS;
        let num = 2.0 * inter + DICE_EPS;
        let g = grad.item();
        let gp = Tensor::from_fn(inputs[0].shape(), |i| {
            -g * (2.0 * self.target[i] as f64 * den - num) / (den * den)
        });
        vec![Some(gp)]
    }
}

struct ContourOp {
    cracks: Arc<CrackDistances>,
    beta: f64,
}

impl CustomOp for ContourOp {
    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let mut gp = Tensor::zeros(inputs[0].shape());
        surrogate_grad(inputs[0].data(), &self.cracks, self.beta, grad.item(), gp.data_mut());
        vec![Some(gp)]
    }
}

/// Hard water mask from probabilities at threshold 0.5.
pub fn threshold(p: &Grid<f64>) -> Mask {
    Grid {
        height: p.height,
        width: p.width,
        data: p.data.iter().map(|&v| (v > 0.5) as u8).collect(),
    }
}

/// Mean sampled distance between two masks' contours; `None` when either
/// has no boundary.
pub fn mask_contour_distance(
    pred: &Mask,
    gt: &Mask,
    n_c: usize,
    seed: u64,
    mode: ContourDistanceMode,
) -> Result<Option<f64>> {
    let pc = mask_to_contour(pred)?;
    let gc = mask_to_contour(gt)?;
    Ok(contour_distance(&pc, &gc, n_c, seed, mode))
}
