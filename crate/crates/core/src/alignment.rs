//! Previous-to-current alignment: frame encoding, the frame-interval gate,
//! deformable convolution, and the pre-fusion sum
//!
//! ```text
//! F_pre = sum_j DCN(Y_j) * gate(t_current - t_j)
//! ```
//!
//! over the selected previous frames `Y_j`, with the gate broadcast over the
//! spatial grid.

use crate::autograd::{Graph, Var};
use crate::config::{EncoderKind, ModelConfig};
use crate::data::Frame;
use crate::error::{Error, Result};
use crate::kernels::DeformPlan;
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Spatial features `[C, H, W]` of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub data: Tensor,
    pub source_timestamp: i64,
}

impl FeatureMap {
    pub fn new(data: Tensor, source_timestamp: i64) -> Result<Self> {
        if data.shape().len() != 3 {
            return Err(Error::Shape(format!("feature map must be [C, H, W], got {:?}", data.shape())));
        }
        Ok(Self {
            data,
            source_timestamp,
        })
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.data.shape()[1], self.data.shape()[2])
    }

    fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let want = [cfg.feature_channels, cfg.feature_grid.0, cfg.feature_grid.1];
        if self.data.shape() != want {
            return Err(Error::Shape(format!(
                "feature map {:?} does not match configured {:?}",
                self.data.shape(),
                want
            )));
        }
        if !self.data.all_finite() {
            return Err(Error::Validation(format!(
                "feature map of frame {} has non-finite values",
                self.source_timestamp
            )));
        }
        Ok(())
    }
}

/// Per-channel weights in `(0, 1)` for one frame interval.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalGate {
    pub gate: Vec<f64>,
    pub delta_t: i64,
}

/// Sampling displacements `[2*K*K, H, W]` (rows then columns per tap), in
/// feature-grid cells.
#[derive(Clone, Debug, PartialEq)]
pub struct OffsetField {
    pub offsets: Tensor,
    pub kernel: usize,
}

/// Channel widths of the stride-2 encoder stages.
pub fn encoder_widths(cfg: &ModelConfig) -> Vec<usize> {
    let stages = cfg.stride().trailing_zeros() as usize;
    let ladder: &[usize] = match cfg.encoder {
        EncoderKind::PaperBackbone => &[32, 64, 128, 256],
        EncoderKind::Tiny => &[8, 16, 32, 32],
    };
    (0..stages)
        .map(|i| ladder[i.min(ladder.len() - 1)])
        .collect()
}

fn he(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

pub(crate) fn init_params(cfg: &ModelConfig, seed: u64, store: &mut ParamStore) {
    let mut cin = 3;
    for (i, &cout) in encoder_widths(cfg).iter().enumerate() {
        store.init_normal(&format!("encoder.stage{i}.weight"), &[cout, cin, 3, 3], he(cin * 9), seed);
        store.init_zeros(&format!("encoder.stage{i}.bias"), &[cout]);
        cin = cout;
    }
    let c = cfg.feature_channels;
    store.init_normal("encoder.proj.weight", &[c, cin, 1, 1], he(cin), seed);
    store.init_zeros("encoder.proj.bias", &[c]);

    if cfg.use_tpe {
        let e = cfg.gate_embed_dim;
        store.init_normal("align.gate.weight", &[c, e], 1.0 / (e as f64).sqrt(), seed);
        store.init_zeros("align.gate.bias", &[c]);
    }

    let k = cfg.dcn_kernel;
    store.init_normal("align.dcn.weight", &[c, c, k, k], he(c * k * k), seed);
    store.init_zeros("align.dcn.bias", &[c]);
    if cfg.use_dcn {
        store.init_zeros("align.dcn.offset.weight", &[2 * k * k, c, k, k]);
        store.init_zeros("align.dcn.offset.bias", &[2 * k * k]);
    }
}

/// Records the encoder on `g`. `image` is `[3, H, W]`.
pub fn encode_var(g: &mut Graph, store: &ParamStore, cfg: &ModelConfig, image: Var) -> Var {
    let mut x = image;
    for i in 0..encoder_widths(cfg).len() {
        let w = g.param(store, &format!("encoder.stage{i}.weight"));
        let b = g.param(store, &format!("encoder.stage{i}.bias"));
        x = g.conv2d(x, w, Some(b), 2, 1);
        x = g.relu(x);
    }
    let w = g.param(store, "encoder.proj.weight");
    let b = g.param(store, "encoder.proj.bias");
    g.conv2d(x, w, Some(b), 1, 0)
}

fn check_input(frame: &Frame, cfg: &ModelConfig) -> Result<()> {
    if frame.dims() != cfg.input_size {
        return Err(Error::Shape(format!(
            "frame {} is {:?}, model input is {:?}",
            frame.timestamp,
            frame.dims(),
            cfg.input_size
        )));
    }
    Ok(())
}

pub fn encode_frame(frame: &Frame, params: &ParamStore, cfg: &ModelConfig) -> Result<FeatureMap> {
    check_input(frame, cfg)?;
    let mut g = Graph::new();
    let img = g.constant(frame.image.to_tensor());
    let f = encode_var(&mut g, params, cfg, img);
    FeatureMap::new(g.value(f).clone(), frame.timestamp)
}

/// Alternating sin/cos of `delta_t` over log-spaced wavelengths.
pub fn sinusoidal_embedding(delta_t: i64, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for i in 0..dim / 2 {
        let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / dim as f64);
        let angle = delta_t as f64 * freq;
        out[2 * i] = angle.sin();
        out[2 * i + 1] = angle.cos();
    }
    out
}

/// Records the gate for `delta_t` on `g`; `[C]`.
pub fn gate_var(g: &mut Graph, store: &ParamStore, cfg: &ModelConfig, delta_t: i64) -> Var {
    let e = cfg.gate_embed_dim;
    let emb = g.constant(Tensor::new(vec![e, 1], sinusoidal_embedding(delta_t, e)).expect("embedding"));
    let w = g.param(store, "align.gate.weight");
    let b = g.param(store, "align.gate.bias");
    let z = g.matmul(w, emb, false, false);
    let z = g.reshape(z, &[cfg.feature_channels]);
    let z = g.add_channel(z, b);
    g.sigmoid(z)
}

pub fn temporal_gate(delta_t: i64, params: &ParamStore, cfg: &ModelConfig) -> Result<TemporalGate> {
    if delta_t < 1 {
        return Err(Error::Validation(format!("frame interval {delta_t} must be at least 1")));
    }
    let gate = if cfg.use_tpe {
        let mut g = Graph::new();
        let v = gate_var(&mut g, params, cfg, delta_t);
        g.value(v).data().to_vec()
    } else {
        vec![1.0; cfg.feature_channels]
    };
    Ok(TemporalGate { gate, delta_t })
}

/// Records the (deformable) convolution applied to one previous frame.
pub fn deform_var(g: &mut Graph, store: &ParamStore, cfg: &ModelConfig, y: Var) -> Var {
    let pad = cfg.dcn_kernel / 2;
    let w = g.param(store, "align.dcn.weight");
    let b = g.param(store, "align.dcn.bias");
    if cfg.use_dcn {
        let ow = g.param(store, "align.dcn.offset.weight");
        let ob = g.param(store, "align.dcn.offset.bias");
        let offsets = g.conv2d(y, ow, Some(ob), 1, pad);
        g.deform_conv2d(y, offsets, w, Some(b))
    } else {
        g.conv2d(y, w, Some(b), 1, pad)
    }
}

/// Offsets the learned branch predicts for `features`.
pub fn offset_field(features: &FeatureMap, params: &ParamStore, cfg: &ModelConfig) -> Result<OffsetField> {
    features.check(cfg)?;
    let k = cfg.dcn_kernel;
    let (h, w) = features.grid();
    if !cfg.use_dcn {
        return Ok(OffsetField {
            offsets: Tensor::zeros(&[2 * k * k, h, w]),
            kernel: k,
        });
    }
    let mut g = Graph::new();
    let y = g.constant(features.data.clone());
    let ow = g.param(params, "align.dcn.offset.weight");
    let ob = g.param(params, "align.dcn.offset.bias");
    let off = g.conv2d(y, ow, Some(ob), 1, k / 2);
    Ok(OffsetField {
        offsets: g.value(off).clone(),
        kernel: k,
    })
}

pub fn deformable_conv(features: &FeatureMap, params: &ParamStore, cfg: &ModelConfig) -> Result<FeatureMap> {
    features.check(cfg)?;
    let mut g = Graph::new();
    let y = g.constant(features.data.clone());
    let out = deform_var(&mut g, params, cfg, y);
    FeatureMap::new(g.value(out).clone(), features.source_timestamp)
}

/// Deformable convolution with explicit offsets, weights `[Co, Ci, K, K]`
/// and optional bias.
pub fn deform_conv_with_offsets(
    input: &Tensor,
    offsets: &OffsetField,
    weight: &Tensor,
    bias: Option<&Tensor>,
) -> Result<Tensor> {
    let (xs, ws) = (input.shape(), weight.shape());
    let k = offsets.kernel;
    if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] || ws[2] != k || ws[3] != k {
        return Err(Error::Shape(format!("input {xs:?} incompatible with weights {ws:?}")));
    }
    if offsets.offsets.shape() != [2 * k * k, xs[1], xs[2]] {
        return Err(Error::Shape(format!(
            "offset field {:?} does not match input {:?}",
            offsets.offsets.shape(),
            xs
        )));
    }
    if !input.all_finite() || !offsets.offsets.all_finite() {
        return Err(Error::Validation("non-finite deformable convolution input".into()));
    }
    let plan = DeformPlan::new(offsets.offsets.data(), xs[1], xs[2], k);
    let cols = plan.columns(input.data(), xs[0]);
    let hw = xs[1] * xs[2];
    let mut out = Tensor::zeros(&[ws[0], xs[1], xs[2]]);
    crate::kernels::gemm(ws[0], xs[0] * k * k, hw, weight.data(), false, &cols, false, out.data_mut(), 0.0);
    if let Some(b) = bias {
        for (ch, chunk) in out.data_mut().chunks_mut(hw).enumerate() {
            for v in chunk {
                *v += b.data()[ch];
            }
        }
    }
    Ok(out)
}

/// Records `F_pre` on `g` from `(features, timestamp)` pairs.
pub fn prefuse_var(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &ModelConfig,
    previous: &[(Var, i64)],
    current_timestamp: i64,
) -> Var {
    let mut acc: Option<Var> = None;
    for &(y, ts) in previous {
        let aligned = deform_var(g, store, cfg, y);
        let term = if cfg.use_tpe {
            let gate = gate_var(g, store, cfg, current_timestamp - ts);
            g.mul_channel(aligned, gate)
        } else {
            aligned
        };
        acc = Some(match acc {
            Some(a) => g.add(a, term),
            None => term,
        });
    }
    acc.expect("prefuse needs at least one previous frame")
}

pub(crate) fn check_previous(previous_ts: &[i64], current_timestamp: i64) -> Result<()> {
    if let Some(&t) = previous_ts.iter().find(|&&t| t >= current_timestamp) {
        return Err(Error::Ordering {
            previous: t,
            current: current_timestamp,
        });
    }
    Ok(())
}

pub fn prefuse(
    previous: &[FeatureMap],
    current_timestamp: i64,
    params: &ParamStore,
    cfg: &ModelConfig,
) -> Result<FeatureMap> {
    if previous.is_empty() {
        return Err(Error::Validation("prefuse needs at least one previous frame".into()));
    }
    for f in previous {
        f.check(cfg)?;
    }
    let ts: Vec<i64> = previous.iter().map(|f| f.source_timestamp).collect();
    check_previous(&ts, current_timestamp)?;
    let mut g = Graph::new();
    let vars: Vec<(Var, i64)> = previous
        .iter()
        .map(|f| (g.constant(f.data.clone()), f.source_timestamp))
        .collect();
    let out = prefuse_var(&mut g, params, cfg, &vars, current_timestamp);
    FeatureMap::new(g.value(out).clone(), current_timestamp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RgbFrame;

    fn micro() -> ModelConfig {
        ModelConfig {
            input_size: (16, 16),
            feature_channels: 4,
            feature_grid: (4, 4),
            attention_heads: 2,
            gate_embed_dim: 8,
            encoder: EncoderKind::Tiny,
            spatial_kernel: 3,
            decoder_channels: 4,
            ..ModelConfig::default()
        }
    }

    fn params(cfg: &ModelConfig) -> ParamStore {
        let mut s = ParamStore::new();
        init_params(cfg, 11, &mut s);
        s
    }

    #[test]
    fn encoder_geometry_and_zero_input() {
        let cfg = micro();
        let p = params(&cfg);
        let frame = Frame::new(RgbFrame::filled(16, 16, [0.0; 3]), 0, None).unwrap();
        let f = encode_frame(&frame, &p, &cfg).unwrap();
        assert_eq!(f.data.shape(), &[4, 4, 4]);
        assert!(f.data.data().iter().all(|&v| v == 0.0));
        let wrong = Frame::new(RgbFrame::filled(8, 8, [0.0; 3]), 0, None).unwrap();
        assert!(matches!(encode_frame(&wrong, &p, &cfg), Err(Error::Shape(_))));
    }

    #[test]
    fn gate_range_and_zero_layer() {
        let cfg = micro();
        let mut p = params(&cfg);
        for dt in 1..=32 {
            let g = temporal_gate(dt, &p, &cfg).unwrap();
            assert!(g.gate.iter().all(|&v| v > 0.0 && v < 1.0));
        }
        assert!(temporal_gate(0, &p, &cfg).is_err());
        p.zero_prefix("align.gate");
        let g = temporal_gate(3, &p, &cfg).unwrap();
        assert!(g.gate.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn prefuse_rejects_bad_inputs() {
        let cfg = micro();
        let p = params(&cfg);
        let f = FeatureMap::new(Tensor::zeros(&[4, 4, 4]), 5).unwrap();
        assert!(matches!(prefuse(&[], 6, &p, &cfg), Err(Error::Validation(_))));
        assert!(matches!(prefuse(&[f], 5, &p, &cfg), Err(Error::Ordering { .. })));
    }
}
