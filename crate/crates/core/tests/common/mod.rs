#![allow(dead_code)]

use freespace::autograd::{Graph, Var};
use freespace::config::ModelConfig;
use freespace::fusion::Model;
use freespace::params::ParamStore;
use freespace::tensor::{Grid, Mask, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

/// Feature-level config small enough for finite differences: 8 channels on
/// a 4x4 grid.
pub fn fd_config() -> ModelConfig {
    ModelConfig {
        input_size: (16, 16),
        feature_channels: 8,
        feature_grid: (4, 4),
        attention_heads: 2,
        gate_embed_dim: 8,
        spatial_kernel: 3,
        decoder_channels: 6,
        ..ModelConfig::tiny()
    }
}

/// A model whose parameters (including the zero-initialized ones) are all
/// random, so every path carries gradient.
pub fn randomized_model(cfg: ModelConfig, seed: u64) -> Model {
    let mut model = Model::new(cfg, seed).unwrap();
    let mut r = rng(seed ^ 0xabc);
    for (_, t) in model.params_mut().iter_mut() {
        for v in t.data_mut() {
            *v = r.random_range(-0.4..0.4);
        }
    }
    model
}

pub struct FdReport {
    pub checked: usize,
    pub worst_rel: f64,
    pub worst_name: String,
}

/// Relative error; gradients below 1e-5 in magnitude are compared on that
/// scale, which sits well above the central-difference noise.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-5)
}

/// Compares analytic gradients of `sum(build(..) * probe)` against central
/// differences, for every input and for up to `per_tensor` entries of each
/// parameter the graph touches.
pub fn finite_difference_check(
    store: &ParamStore,
    inputs: &[Tensor],
    per_tensor: usize,
    seed: u64,
    build: impl Fn(&mut Graph, &ParamStore, &[Var]) -> Var,
) -> FdReport {
    let mut r = rng(seed);
    let eval = |store: &ParamStore, inputs: &[Tensor], probe: Option<&Tensor>| -> (f64, Graph, Var, Vec<Var>, Tensor) {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
        let out = build(&mut g, store, &vars);
        let probe = probe.cloned().unwrap_or_else(|| Tensor::from_fn(g.shape(out), |i| ((i * 7919 % 13) as f64 - 6.0) / 6.0));
        let p = g.constant(probe.clone());
        let prod = g.mul(out, p);
        let loss = g.sum_all(prod);
        (g.value(loss).item(), g, loss, vars, probe)
    };
    let (_, g, loss, vars, probe) = eval(store, inputs, None);
    let mut grads = g.backward(loss);
    let input_grads: Vec<Tensor> = vars
        .iter()
        .map(|&v| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(g.shape(v))))
        .collect();
    let param_grads = g.param_grads(&mut grads);
    let h = 1e-6;
    let mut report = FdReport {
        checked: 0,
        worst_rel: 0.0,
        worst_name: String::new(),
    };
    let record = |name: String, a: f64, n: f64, report: &mut FdReport| {
        let e = rel_err(a, n);
        report.checked += 1;
        if e > report.worst_rel {
            report.worst_rel = e;
            report.worst_name = format!("{name} (analytic {a:.6e}, numeric {n:.6e})");
        }
    };
    for (k, t) in inputs.iter().enumerate() {
        for _ in 0..per_tensor.min(t.len()) {
            let i = r.random_range(0..t.len());
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            minus[k].data_mut()[i] -= h;
            let n = (eval(store, &plus, Some(&probe)).0 - eval(store, &minus, Some(&probe)).0) / (2.0 * h);
            record(format!("input {k}[{i}]"), input_grads[k].data()[i], n, &mut report);
        }
    }
    for (name, gt) in &param_grads {
        let len = gt.len();
        for _ in 0..per_tensor.min(len) {
            let i = r.random_range(0..len);
            let mut plus = store.clone();
            let mut minus = store.clone();
            plus.get_mut(name).unwrap().data_mut()[i] += h;
            minus.get_mut(name).unwrap().data_mut()[i] -= h;
            let n = (eval(&plus, inputs, Some(&probe)).0 - eval(&minus, inputs, Some(&probe)).0) / (2.0 * h);
            record(format!("{name}[{i}]"), gt.data()[i], n, &mut report);
        }
    }
    report
}

/// Rows at or below `row` are water.
pub fn rows_from(h: usize, w: usize, row: usize) -> Mask {
    Grid::from_fn(h, w, |y, _| u8::from(y >= row))
}

/// A random union of discs, with water guaranteed non-empty and not full.
pub fn random_blobs(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Mask {
    loop {
        let n = rng.random_range(1..5);
        let discs: Vec<(f64, f64, f64)> = (0..n)
            .map(|_| {
                (
                    rng.random_range(0.0..h as f64),
                    rng.random_range(0.0..w as f64),
                    rng.random_range(1.5..(h.min(w) as f64 / 3.0).max(2.5)),
                )
            })
            .collect();
        let m = Grid::from_fn(h, w, |y, x| {
            let (yc, xc) = (y as f64 + 0.5, x as f64 + 0.5);
            u8::from(discs.iter().any(|&(cy, cx, r)| (yc - cy).powi(2) + (xc - cx).powi(2) <= r * r))
        });
        let ones = m.count_ones();
        if ones > 0 && ones < h * w {
            return m;
        }
    }
}
