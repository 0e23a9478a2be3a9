//! Current/previous fusion, spatial attention, decoding, and the assembled
//! model.

use std::f64::consts::PI;

use crate::alignment::{self, FeatureMap};
use crate::autograd::{Graph, Var};
use crate::config::{AttentionOrientation, ModelConfig};
use crate::data::Frame;
use crate::error::{Error, Result};
use crate::losses::water_probability;
use crate::params::ParamStore;
use crate::tensor::{Grid, Tensor};

pub(crate) fn init_params(cfg: &ModelConfig, seed: u64, store: &mut ParamStore) {
    let c = cfg.feature_channels;
    if cfg.use_man {
        let std = 1.0 / (c as f64).sqrt();
        for l in 0..cfg.attention_depth {
            for part in ["q", "k", "v", "out"] {
                let name = format!("fusion.attn{l}.{part}.weight");
                if part == "out" {
                    store.init_zeros(&name, &[c, c]);
                } else {
                    store.init_normal(&name, &[c, c], std, seed);
                }
                store.init_zeros(&format!("fusion.attn{l}.{part}.bias"), &[c]);
            }
        }
    }
    let k = cfg.spatial_kernel;
    store.init_normal("fusion.spatial.weight", &[1, 2, k, k], (1.0 / (2 * k * k) as f64).sqrt(), seed);
    store.init_zeros("fusion.spatial.bias", &[1]);

    let d = cfg.decoder_channels;
    store.init_normal("decoder.block1.weight", &[d, c, 3, 3], (2.0 / (9 * c) as f64).sqrt(), seed);
    store.init_zeros("decoder.block1.bias", &[d]);
    store.init_normal("decoder.block2.weight", &[d, d, 3, 3], (2.0 / (9 * d) as f64).sqrt(), seed);
    store.init_zeros("decoder.block2.bias", &[d]);
    store.init_normal("decoder.classifier.weight", &[2, d, 1, 1], (1.0 / d as f64).sqrt(), seed);
    store.init_zeros("decoder.classifier.bias", &[2]);
}

fn linear(g: &mut Graph, store: &ParamStore, prefix: &str, x: Var) -> Var {
    let w = g.param(store, &format!("{prefix}.weight"));
    let b = g.param(store, &format!("{prefix}.bias"));
    let y = g.matmul(w, x, false, false);
    g.add_channel(y, b)
}

/// Fixed 2-D sinusoidal position code `[C, h*w]`: the first half of the
/// channels encodes the row, the second half the column, with periods from
/// twice the grid size down.
pub fn position_encoding(channels: usize, h: usize, w: usize) -> Tensor {
    let half = channels / 2;
    Tensor::from_fn(&[channels, h * w], |i| {
        let (ch, pos) = (i / (h * w), i % (h * w));
        let (axis_ch, coord, extent) = if ch < half {
            (ch, pos / w, h)
        } else {
            (ch - half, pos % w, w)
        };
        let freq = PI * (1u64 << (axis_ch / 2).min(62)) as f64 / extent as f64;
        let angle = freq * (coord as f64 + 0.5);
        if axis_ch % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// One multi-head attention layer over `[C, N]` tokens. Returns the
/// residual output and the per-head weights `[N_query, N_key]`.
fn attention_layer(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &ModelConfig,
    layer: usize,
    queries: Var,
    context: Var,
    position: Var,
) -> (Var, Vec<Var>) {
    let c = cfg.feature_channels;
    let heads = cfg.attention_heads;
    let d = c / heads;
    let p = format!("fusion.attn{layer}");
    let q_in = g.add(queries, position);
    let k_in = g.add(context, position);
    let q = linear(g, store, &format!("{p}.q"), q_in);
    let k = linear(g, store, &format!("{p}.k"), k_in);
    let v = linear(g, store, &format!("{p}.v"), context);
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_rows(q, h * d, d);
        let kh = g.slice_rows(k, h * d, d);
        let vh = g.slice_rows(v, h * d, d);
        let scores = g.matmul(qh, kh, true, false);
        let scores = g.scale(scores, 1.0 / (d as f64).sqrt());
        let a = g.softmax_rows(scores);
        outs.push(g.matmul(vh, a, false, true));
        weights.push(a);
    }
    let o = g.concat_rows(&outs);
    let o = linear(g, store, &format!("{p}.out"), o);
    (g.add(queries, o), weights)
}

/// Records the fusion of `F_x` and `F_pre` (`[C, h, w]` each). Without the
/// attention module the two maps are summed.
pub fn cross_attend_var(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &ModelConfig,
    f_x: Var,
    f_pre: Var,
) -> (Var, Vec<Var>) {
    if !cfg.use_man {
        return (g.add(f_x, f_pre), Vec::new());
    }
    let shape = g.shape(f_x).to_vec();
    let tokens = [shape[0], shape[1] * shape[2]];
    let x = g.reshape(f_x, &tokens);
    let pre = g.reshape(f_pre, &tokens);
    let (mut queries, context) = match cfg.attention_orientation {
        AttentionOrientation::CurrentQueriesPrevious => (x, pre),
        AttentionOrientation::PreviousQueriesCurrent => (pre, x),
    };
    let position = g.constant(position_encoding(shape[0], shape[1], shape[2]));
    let mut weights = Vec::new();
    for l in 0..cfg.attention_depth {
        let (out, w) = attention_layer(g, store, cfg, l, queries, context, position);
        queries = out;
        weights.extend(w);
    }
    (g.reshape(queries, &shape), weights)
}

/// Records spatial attention; returns the gated map and the `[1, h, w]` gate.
pub fn spatial_attend_var(g: &mut Graph, store: &ParamStore, cfg: &ModelConfig, x: Var) -> (Var, Var) {
    let stats = g.channel_mean_max(x);
    let w = g.param(store, "fusion.spatial.weight");
    let b = g.param(store, "fusion.spatial.bias");
    let s = g.conv2d(stats, w, Some(b), 1, cfg.spatial_kernel / 2);
    let gate = g.sigmoid(s);
    (g.mul_spatial(x, gate), gate)
}

/// Records the decoder; the result is `[2, H, W]` logits at input size.
pub fn decode_var(g: &mut Graph, store: &ParamStore, cfg: &ModelConfig, x: Var) -> Var {
    let (gh, gw) = cfg.feature_grid;
    let (h, w) = cfg.input_size;
    let mut y = x;
    for (i, name) in ["decoder.block1", "decoder.block2"].iter().enumerate() {
        if i == 1 {
            y = g.resize(y, 2 * gh, 2 * gw);
        }
        let wt = g.param(store, &format!("{name}.weight"));
        let b = g.param(store, &format!("{name}.bias"));
        y = g.conv2d(y, wt, Some(b), 1, 1);
        y = g.relu(y);
    }
    let wt = g.param(store, "decoder.classifier.weight");
    let b = g.param(store, "decoder.classifier.bias");
    let logits = g.conv2d(y, wt, Some(b), 1, 0);
    g.resize(logits, h, w)
}

/// Intermediate nodes of one recorded forward pass.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub f_x: Var,
    pub f_pre: Var,
    pub fused: Var,
    pub attention: Vec<Var>,
    pub spatial_gate: Var,
    pub attended: Var,
    pub logits: Var,
}

/// Records the full model. `current` and `previous` are `[3, H, W]` image
/// nodes paired with their timestamps; an empty `previous` gives a zero
/// previous-frame map.
pub fn forward_var(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &ModelConfig,
    current: (Var, i64),
    previous: &[(Var, i64)],
) -> Result<ForwardVars> {
    let ts: Vec<i64> = previous.iter().map(|p| p.1).collect();
    alignment::check_previous(&ts, current.1)?;
    let f_x = alignment::encode_var(g, store, cfg, current.0);
    let f_pre = if previous.is_empty() {
        g.constant(Tensor::zeros(g.shape(f_x)))
    } else {
        let encoded: Vec<(Var, i64)> = previous
            .iter()
            .map(|&(img, t)| (alignment::encode_var(g, store, cfg, img), t))
            .collect();
        alignment::prefuse_var(g, store, cfg, &encoded, current.1)
    };
    let (fused, attention) = cross_attend_var(g, store, cfg, f_x, f_pre);
    let (attended, spatial_gate) = spatial_attend_var(g, store, cfg, fused);
    let logits = decode_var(g, store, cfg, attended);
    Ok(ForwardVars {
        f_x,
        f_pre,
        fused,
        attention,
        spatial_gate,
        attended,
        logits,
    })
}

fn check_features(f: &FeatureMap, cfg: &ModelConfig) -> Result<()> {
    let want = [cfg.feature_channels, cfg.feature_grid.0, cfg.feature_grid.1];
    if f.data.shape() != want {
        return Err(Error::Shape(format!("feature map {:?}, expected {:?}", f.data.shape(), want)));
    }
    Ok(())
}

/// Fused map plus attention weights (layer-major, one `[N, N]` per head).
pub fn cross_attend(
    f_x: &FeatureMap,
    f_pre: &FeatureMap,
    params: &ParamStore,
    cfg: &ModelConfig,
) -> Result<(FeatureMap, Vec<Tensor>)> {
    check_features(f_x, cfg)?;
    check_features(f_pre, cfg)?;
    let mut g = Graph::new();
    let x = g.constant(f_x.data.clone());
    let pre = g.constant(f_pre.data.clone());
    let (out, weights) = cross_attend_var(&mut g, params, cfg, x, pre);
    let weights = weights.iter().map(|&w| g.value(w).clone()).collect();
    Ok((FeatureMap::new(g.value(out).clone(), f_x.source_timestamp)?, weights))
}

/// Gated map and the `[h, w]` gate.
pub fn spatial_attend(x: &FeatureMap, params: &ParamStore, cfg: &ModelConfig) -> Result<(FeatureMap, Grid<f64>)> {
    check_features(x, cfg)?;
    let mut g = Graph::new();
    let v = g.constant(x.data.clone());
    let (out, gate) = spatial_attend_var(&mut g, params, cfg, v);
    let (h, w) = x.grid();
    let gate = Grid {
        height: h,
        width: w,
        data: g.value(gate).data().to_vec(),
    };
    Ok((FeatureMap::new(g.value(out).clone(), x.source_timestamp)?, gate))
}

pub fn decode(x: &FeatureMap, params: &ParamStore, cfg: &ModelConfig) -> Result<Tensor> {
    check_features(x, cfg)?;
    let mut g = Graph::new();
    let v = g.constant(x.data.clone());
    let out = decode_var(&mut g, params, cfg, v);
    Ok(g.value(out).clone())
}

/// Model configuration together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
}

impl Model {
    /// Freshly initialized parameters; equal seeds give equal parameters for
    /// every module the configurations share.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        alignment::init_params(&config, seed, &mut params);
        init_params(&config, seed, &mut params);
        Ok(Self { config, params })
    }

    /// Wraps loaded parameters after checking names and shapes.
    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let reference = Self::new(config.clone(), 0)?;
        let expected: Vec<_> = reference.params.iter().map(|(n, t)| (n, t.shape())).collect();
        let got: Vec<_> = params.iter().map(|(n, t)| (n, t.shape())).collect();
        if expected != got {
            return Err(Error::Format(
                "parameter names or shapes do not match the model configuration".into(),
            ));
        }
        if params.iter().any(|(_, t)| !t.all_finite()) {
            return Err(Error::Format("non-finite parameter values".into()));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.parameter_count()
    }

    fn check_frame(&self, f: &Frame) -> Result<()> {
        if f.dims() != self.config.input_size {
            return Err(Error::Shape(format!(
                "frame {} is {:?}, model input is {:?}",
                f.timestamp,
                f.dims(),
                self.config.input_size
            )));
        }
        Ok(())
    }

    /// `[2, H, W]` logits (channel 1 is water) for `current` given the
    /// selected previous frames.
    pub fn forward(&self, current: &Frame, previous: &[&Frame]) -> Result<Tensor> {
        self.check_frame(current)?;
        for p in previous {
            self.check_frame(p)?;
        }
        let mut g = Graph::new();
        let cur = g.constant(current.image.to_tensor());
        let prev: Vec<(Var, i64)> = previous
            .iter()
            .map(|f| (g.constant(f.image.to_tensor()), f.timestamp))
            .collect();
        let vars = forward_var(&mut g, &self.params, &self.config, (cur, current.timestamp), &prev)?;
        let logits = g.value(vars.logits).clone();
        if !logits.all_finite() {
            return Err(Error::Validation(format!(
                "non-finite logits for frame {}",
                current.timestamp
            )));
        }
        Ok(logits)
    }

    pub fn predict_probability(&self, current: &Frame, previous: &[&Frame]) -> Result<Grid<f64>> {
        Ok(water_probability(&self.forward(current, previous)?))
    }
}
