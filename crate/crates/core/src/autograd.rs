//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation of one forward pass. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and returns
//! the gradient of that scalar with respect to every node that requires one.

use std::collections::BTreeMap;

use crate::kernels::{self, ConvGeometry, DeformPlan};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// An operation whose forward value is computed by the caller and whose
/// backward pass is supplied here. Used by the loss terms.
pub trait CustomOp {
    /// Gradients with respect to each input, given the gradient of the output.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>>;
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddChannel(Var, Var),
    MulChannel(Var, Var),
    MulSpatial(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Reshape(Var),
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    SoftmaxRows(Var),
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeometry,
        cols: Vec<f64>,
    },
    DeformConv2d {
        x: Var,
        offsets: Var,
        w: Var,
        b: Option<Var>,
        plan: DeformPlan,
        cols: Vec<f64>,
    },
    ChannelMeanMax {
        x: Var,
        argmax: Vec<usize>,
    },
    Resize {
        x: Var,
        from: (usize, usize),
    },
    SumAll(Var),
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A constant input; no gradient is tracked for it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A differentiable input.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Registers the named parameter as a leaf. Repeated calls with the same
    /// name return the same node, so shared weights accumulate gradients.
    ///
    /// Panics if the parameter is missing; model code only asks for names it
    /// created in the store.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let t = store
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` not in store"))
            .clone();
        let v = self.push(t, Op::Leaf, true);
        self.params.insert(name.to_string(), v);
        v
    }

    pub fn param_vars(&self) -> &BTreeMap<String, Var> {
        &self.params
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shape mismatch");
        let out = Tensor::from_fn(self.shape(a), |i| {
            self.value(a).data()[i] - self.value(b).data()[i]
        });
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let out = Tensor::from_fn(self.shape(a), |i| {
            self.value(a).data()[i] * self.value(b).data()[i]
        });
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v * s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    /// `x[c, ...] + b[c]`.
    pub fn add_channel(&mut self, x: Var, b: Var) -> Var {
        let c = self.shape(x)[0];
        assert_eq!(self.value(b).len(), c, "bias length mismatch");
        let inner = self.value(x).len() / c;
        let bv = self.value(b).data();
        let out = Tensor::from_fn(self.shape(x), |i| self.value(x).data()[i] + bv[i / inner]);
        let rg = self.rg(x) || self.rg(b);
        self.push(out, Op::AddChannel(x, b), rg)
    }

    /// `x[c, ...] * g[c]`.
    pub fn mul_channel(&mut self, x: Var, g: Var) -> Var {
        let c = self.shape(x)[0];
        assert_eq!(self.value(g).len(), c, "gate length mismatch");
        let inner = self.value(x).len() / c;
        let gv = self.value(g).data();
        let out = Tensor::from_fn(self.shape(x), |i| self.value(x).data()[i] * gv[i / inner]);
        let rg = self.rg(x) || self.rg(g);
        self.push(out, Op::MulChannel(x, g), rg)
    }

    /// `x[c, y, x] * g[0, y, x]`.
    pub fn mul_spatial(&mut self, x: Var, g: Var) -> Var {
        let hw = self.shape(x)[1] * self.shape(x)[2];
        assert_eq!(self.value(g).len(), hw, "spatial gate size mismatch");
        let gv = self.value(g).data();
        let out = Tensor::from_fn(self.shape(x), |i| self.value(x).data()[i] * gv[i % hw]);
        let rg = self.rg(x) || self.rg(g);
        self.push(out, Op::MulSpatial(x, g), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let out = self
            .value(x)
            .clone()
            .reshaped(shape)
            .expect("reshape element count");
        let rg = self.rg(x);
        self.push(out, Op::Reshape(x), rg)
    }

    /// `op(a) * op(b)` for 2-D operands.
    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(sa.len() == 2 && sb.len() == 2, "matmul needs 2-D operands");
        let (m, k) = if ta { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
        let (k2, n) = if tb { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        assert_eq!(k, k2, "matmul inner dimension mismatch");
        let mut out = Tensor::zeros(&[m, n]);
        kernels::gemm(
            m,
            k,
            n,
            self.value(a).data(),
            ta,
            self.value(b).data(),
            tb,
            out.data_mut(),
            0.0,
        );
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMul { a, b, ta, tb }, rg)
    }

    /// Numerically stable softmax over the last axis of a 2-D tensor.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let (rows, cols) = (s[0], s[1]);
        let mut out = self.value(x).clone();
        for r in 0..rows {
            let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::SoftmaxRows(x), rg)
    }

    /// Rows `start..start+len` of a 2-D tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let cols = self.shape(x)[1];
        let data = self.value(x).data()[start * cols..(start + len) * cols].to_vec();
        let out = Tensor::new(vec![len, cols], data).expect("slice");
        let rg = self.rg(x);
        self.push(out, Op::SliceRows { x, start }, rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.shape(parts[0])[1];
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            assert_eq!(self.shape(p)[1], cols, "concat column mismatch");
            rows += self.shape(p)[0];
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::new(vec![rows, cols], data).expect("concat");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(out, Op::ConcatRows(parts.to_vec()), rg)
    }

    /// 2-D convolution of `[Ci, H, W]` with weights `[Co, Ci, K, K]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let xs = self.shape(x);
        let ws = self.shape(w);
        assert_eq!(xs.len(), 3, "conv2d input must be [C, H, W]");
        assert_eq!(ws[1], xs[0], "conv2d channel mismatch");
        let geom = ConvGeometry {
            channels: xs[0],
            height: xs[1],
            width: xs[2],
            kernel: ws[2],
            stride,
            pad,
        };
        let co = ws[0];
        let cols = kernels::im2col(self.value(x).data(), &geom);
        let (oh, ow) = (geom.out_height(), geom.out_width());
        let mut out = Tensor::zeros(&[co, oh, ow]);
        kernels::gemm(
            co,
            geom.col_rows(),
            oh * ow,
            self.value(w).data(),
            false,
            &cols,
            false,
            out.data_mut(),
            0.0,
        );
        if let Some(b) = b {
            add_bias(&mut out, self.value(b).data());
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(
            out,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols,
            },
            rg,
        )
    }

    /// Stride-1, same-padding deformable convolution. `offsets` is
    /// `[2*K*K, H, W]` in grid-cell units.
    pub fn deform_conv2d(&mut self, x: Var, offsets: Var, w: Var, b: Option<Var>) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let k = ws[2];
        assert_eq!(ws[1], xs[0], "deform_conv2d channel mismatch");
        assert_eq!(
            self.shape(offsets),
            &[2 * k * k, xs[1], xs[2]],
            "offset field shape"
        );
        let plan = DeformPlan::new(self.value(offsets).data(), xs[1], xs[2], k);
        let cols = plan.columns(self.value(x).data(), xs[0]);
        let hw = xs[1] * xs[2];
        let mut out = Tensor::zeros(&[ws[0], xs[1], xs[2]]);
        kernels::gemm(
            ws[0],
            xs[0] * k * k,
            hw,
            self.value(w).data(),
            false,
            &cols,
            false,
            out.data_mut(),
            0.0,
        );
        if let Some(b) = b {
            add_bias(&mut out, self.value(b).data());
        }
        let rg = self.rg(x) || self.rg(offsets) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(
            out,
            Op::DeformConv2d {
                x,
                offsets,
                w,
                b,
                plan,
                cols,
            },
            rg,
        )
    }

    /// Channel-wise mean and max: `[C, H, W] -> [2, H, W]`.
    pub fn channel_mean_max(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let (c, hw) = (s[0], s[1] * s[2]);
        let (h, w) = (s[1], s[2]);
        let xv = self.value(x).data();
        let mut out = Tensor::zeros(&[2, h, w]);
        let mut argmax = vec![0usize; hw];
        for p in 0..hw {
            let mut sum = 0.0;
            let mut best = f64::NEG_INFINITY;
            for ch in 0..c {
                let v = xv[ch * hw + p];
                sum += v;
                if v > best {
                    best = v;
                    argmax[p] = ch;
                }
            }
            out.data_mut()[p] = sum / c as f64;
            out.data_mut()[hw + p] = best;
        }
        let rg = self.rg(x);
        self.push(out, Op::ChannelMeanMax { x, argmax }, rg)
    }

    /// Bilinear resize (half-pixel centers) of `[C, H, W]`.
    pub fn resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Var {
        let s = self.shape(x);
        let (c, h, w) = (s[0], s[1], s[2]);
        let data = kernels::resize_bilinear(self.value(x).data(), c, (h, w), (out_h, out_w));
        let out = Tensor::new(vec![c, out_h, out_w], data).expect("resize");
        let rg = self.rg(x);
        self.push(out, Op::Resize { x, from: (h, w) }, rg)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(out, Op::SumAll(x), rg)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    /// Records a custom operation whose forward value is already computed.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, op: Box<dyn CustomOp>) -> Var {
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            rg,
        )
    }

    /// Reverse pass from `root`, seeded with ones.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.shape(root), 1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = Some(g);
                continue;
            }
            self.backward_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backward_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.rg(*a) {
                    let ga = Tensor::from_fn(g.shape(), |i| g.data()[i] * bv[i]);
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let gb = Tensor::from_fn(g.shape(), |i| g.data()[i] * av[i]);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.map(|v| v * s)),
            Op::AddChannel(x, b) => {
                self.accumulate(grads, *x, g.clone());
                if self.rg(*b) {
                    let c = self.value(*b).len();
                    let inner = g.len() / c;
                    let gb = Tensor::from_fn(self.shape(*b), |ch| {
                        g.data()[ch * inner..(ch + 1) * inner].iter().sum()
                    });
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::MulChannel(x, gate) => {
                let c = self.value(*gate).len();
                let inner = g.len() / c;
                let gv = self.value(*gate).data();
                if self.rg(*x) {
                    let gx = Tensor::from_fn(g.shape(), |i| g.data()[i] * gv[i / inner]);
                    self.accumulate(grads, *x, gx);
                }
                if self.rg(*gate) {
                    let xv = self.value(*x).data();
                    let gg = Tensor::from_fn(self.shape(*gate), |ch| {
                        let r = ch * inner..(ch + 1) * inner;
                        g.data()[r.clone()]
                            .iter()
                            .zip(&xv[r])
                            .map(|(a, b)| a * b)
                            .sum()
                    });
                    self.accumulate(grads, *gate, gg);
                }
            }
            Op::MulSpatial(x, gate) => {
                let hw = self.value(*gate).len();
                let gv = self.value(*gate).data();
                if self.rg(*x) {
                    let gx = Tensor::from_fn(g.shape(), |i| g.data()[i] * gv[i % hw]);
                    self.accumulate(grads, *x, gx);
                }
                if self.rg(*gate) {
                    let xv = self.value(*x).data();
                    let mut gg = Tensor::zeros(self.shape(*gate));
                    for (i, (gi, xi)) in g.data().iter().zip(xv).enumerate() {
                        gg.data_mut()[i % hw] += gi * xi;
                    }
                    self.accumulate(grads, *gate, gg);
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let gx = Tensor::from_fn(g.shape(), |i| if xv[i] > 0.0 { g.data()[i] } else { 0.0 });
                self.accumulate(grads, *x, gx);
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                let gx = Tensor::from_fn(g.shape(), |i| g.data()[i] * y[i] * (1.0 - y[i]));
                self.accumulate(grads, *x, gx);
            }
            Op::Reshape(x) => {
                let gx = g.clone().reshaped(self.shape(*x)).expect("reshape grad");
                self.accumulate(grads, *x, gx);
            }
            Op::MatMul { a, b, ta, tb } => {
                let (ta, tb) = (*ta, *tb);
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k) = if ta { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
                let n = if tb { sb[0] } else { sb[1] };
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.rg(*a) {
                    let mut ga = Tensor::zeros(sa);
                    if ta {
                        kernels::gemm(k, n, m, bv, tb, g.data(), true, ga.data_mut(), 0.0);
                    } else {
                        kernels::gemm(m, n, k, g.data(), false, bv, !tb, ga.data_mut(), 0.0);
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let mut gb = Tensor::zeros(sb);
                    if tb {
                        kernels::gemm(n, m, k, g.data(), true, av, ta, gb.data_mut(), 0.0);
                    } else {
                        kernels::gemm(k, m, n, av, !ta, g.data(), false, gb.data_mut(), 0.0);
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::SoftmaxRows(x) => {
                let cols = g.shape()[1];
                let y = node.value.data();
                let mut gx = Tensor::zeros(g.shape());
                for (r, out) in gx.data_mut().chunks_mut(cols).enumerate() {
                    let yr = &y[r * cols..(r + 1) * cols];
                    let gr = &g.data()[r * cols..(r + 1) * cols];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..cols {
                        out[j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::SliceRows { x, start } => {
                let cols = g.shape()[1];
                let mut gx = Tensor::zeros(self.shape(*x));
                gx.data_mut()[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                self.accumulate(grads, *x, gx);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    let gp = Tensor::new(self.shape(p).to_vec(), g.data()[offset..offset + n].to_vec())
                        .expect("concat grad");
                    offset += n;
                    self.accumulate(grads, p, gp);
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols,
            } => {
                let co = self.shape(*w)[0];
                let ncols = geom.col_cols();
                if self.rg(*w) {
                    let mut gw = Tensor::zeros(self.shape(*w));
                    kernels::gemm(co, ncols, geom.col_rows(), g.data(), false, cols, true, gw.data_mut(), 0.0);
                    self.accumulate(grads, *w, gw);
                }
                if let Some(b) = b {
                    if self.rg(*b) {
                        self.accumulate(grads, *b, bias_grad(g, co));
                    }
                }
                if self.rg(*x) {
                    let mut gcols = vec![0.0; geom.col_rows() * ncols];
                    kernels::gemm(geom.col_rows(), co, ncols, self.value(*w).data(), true, g.data(), false, &mut gcols, 0.0);
                    let mut gx = Tensor::zeros(self.shape(*x));
                    kernels::col2im(&gcols, geom, gx.data_mut());
                    self.accumulate(grads, *x, gx);
                }
            }
            Op::DeformConv2d {
                x,
                offsets,
                w,
                b,
                plan,
                cols,
            } => {
                let ws = self.shape(*w);
                let (co, ci, k) = (ws[0], ws[1], ws[2]);
                let hw = plan.height * plan.width;
                let rows = ci * k * k;
                if self.rg(*w) {
                    let mut gw = Tensor::zeros(ws);
                    kernels::gemm(co, hw, rows, g.data(), false, cols, true, gw.data_mut(), 0.0);
                    self.accumulate(grads, *w, gw);
                }
                if let Some(b) = b {
                    if self.rg(*b) {
                        self.accumulate(grads, *b, bias_grad(g, co));
                    }
                }
                if self.rg(*x) || self.rg(*offsets) {
                    let mut gcols = vec![0.0; rows * hw];
                    kernels::gemm(rows, co, hw, self.value(*w).data(), true, g.data(), false, &mut gcols, 0.0);
                    let mut gx = Tensor::zeros(self.shape(*x));
                    let mut goff = Tensor::zeros(self.shape(*offsets));
                    plan.backward(self.value(*x).data(), ci, &gcols, gx.data_mut(), goff.data_mut());
                    self.accumulate(grads, *x, gx);
                    self.accumulate(grads, *offsets, goff);
                }
            }
            Op::ChannelMeanMax { x, argmax } => {
                let s = self.shape(*x);
                let (c, hw) = (s[0], s[1] * s[2]);
                let mut gx = Tensor::zeros(s);
                for p in 0..hw {
                    let gm = g.data()[p] / c as f64;
                    for ch in 0..c {
                        gx.data_mut()[ch * hw + p] += gm;
                    }
                    gx.data_mut()[argmax[p] * hw + p] += g.data()[hw + p];
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Resize { x, from } => {
                let s = g.shape();
                let data = kernels::resize_bilinear_backward(g.data(), s[0], *from, (s[1], s[2]));
                let gx = Tensor::new(vec![s[0], from.0, from.1], data).expect("resize grad");
                self.accumulate(grads, *x, gx);
            }
            Op::SumAll(x) => {
                let gx = Tensor::full(self.shape(*x), g.item());
                self.accumulate(grads, *x, gx);
            }
            Op::Custom { inputs, op } => {
                let values: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                let gs = op.backward(&values, &node.value, g);
                for (&v, gv) in inputs.iter().zip(gs) {
                    if let Some(gv) = gv {
                        self.accumulate(grads, v, gv);
                    }
                }
            }
        }
    }

    /// Gradients of every registered parameter, keyed by name. Parameters that
    /// did not influence `root` get zero gradients.
    pub fn param_grads(&self, grads: &mut Gradients) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .map(|(name, &v)| {
                let g = grads
                    .take(v)
                    .unwrap_or_else(|| Tensor::zeros(self.shape(v)));
                (name.clone(), g)
            })
            .collect()
    }
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn add_bias(out: &mut Tensor, bias: &[f64]) {
    let inner = out.len() / bias.len();
    for (ch, chunk) in out.data_mut().chunks_mut(inner).enumerate() {
        for v in chunk {
            *v += bias[ch];
        }
    }
}

fn bias_grad(g: &Tensor, channels: usize) -> Tensor {
    let inner = g.len() / channels;
    Tensor::from_fn(&[channels], |ch| {
        g.data()[ch * inner..(ch + 1) * inner].iter().sum()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric_grad(f: impl Fn(&Tensor) -> f64, x: &Tensor) -> Tensor {
        let h = 1e-6;
        Tensor::from_fn(x.shape(), |i| {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            (f(&xp) - f(&xm)) / (2.0 * h)
        })
    }

    fn wave(shape: &[usize], phase: f64) -> Tensor {
        Tensor::from_fn(shape, |i| ((i as f64 + phase) * 0.731).sin())
    }

    #[test]
    fn matmul_all_transpose_modes() {
        for &(ta, tb) in &[(false, false), (true, false), (false, true), (true, true)] {
            let a0 = wave(if ta { &[4, 3] } else { &[3, 4] }, 0.3);
            let b0 = wave(if tb { &[2, 4] } else { &[4, 2] }, 1.7);
            let f = |a: &Tensor, b: &Tensor| {
                let mut g = Graph::new();
                let a = g.variable(a.clone());
                let b = g.variable(b.clone());
                let c = g.matmul(a, b, ta, tb);
                let s = g.sigmoid(c);
                let out = g.sum_all(s);
                (g.value(out).item(), g, a, b, out)
            };
            let (_, g, av, bv, out) = f(&a0, &b0);
            let grads = g.backward(out);
            let na = numeric_grad(|a| f(a, &b0).0, &a0);
            let nb = numeric_grad(|b| f(&a0, b).0, &b0);
            assert!(grads.get(av).unwrap().max_abs_diff(&na) < 1e-8);
            assert!(grads.get(bv).unwrap().max_abs_diff(&nb) < 1e-8);
        }
    }

    #[test]
    fn strided_conv_gradients() {
        let x0 = wave(&[2, 5, 6], 0.0);
        let w0 = wave(&[3, 2, 3, 3], 2.0);
        let f = |x: &Tensor, w: &Tensor| {
            let mut g = Graph::new();
            let xv = g.variable(x.clone());
            let wv = g.variable(w.clone());
            let y = g.conv2d(xv, wv, None, 2, 1);
            let y = g.sigmoid(y);
            let out = g.sum_all(y);
            (g.value(out).item(), g, xv, wv, out)
        };
        let (_, g, xv, wv, out) = f(&x0, &w0);
        assert_eq!(g.shape(out), &[1]);
        let grads = g.backward(out);
        assert!(grads.get(xv).unwrap().max_abs_diff(&numeric_grad(|x| f(x, &w0).0, &x0)) < 1e-8);
        assert!(grads.get(wv).unwrap().max_abs_diff(&numeric_grad(|w| f(&x0, w).0, &w0)) < 1e-8);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let x = g.constant(wave(&[3, 7], 0.2).map(|v| v * 30.0));
        let y = g.softmax_rows(x);
        for row in g.value(y).data().chunks(7) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
