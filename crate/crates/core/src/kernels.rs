//! Low-level numeric kernels: GEMM, im2col/col2im, deformable sampling and
//! separable bilinear resampling. Everything here works on raw slices; the
//! autodiff layer in [`crate::autograd`] owns shapes and bookkeeping.

/// `c = op(a) * op(b) + beta * c` with `op(a)` of size `m x k` and `op(b)` of
/// size `k x n`. `trans_a` means `a` is stored `k x m`, likewise for `b`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m) } else { (k, 1) };
    let (rsb, csb) = if trans_b { (1, k) } else { (n, 1) };
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_height() * self.out_width()
    }
}

pub fn im2col(input: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let (oh, ow) = (g.out_height(), g.out_width());
    let kk = g.kernel * g.kernel;
    let mut cols = vec![0.0; g.col_rows() * oh * ow];
    for c in 0..g.channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = c * kk + ky * g.kernel + kx;
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst[oy * ow + ox] = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: accumulates column gradients back into `grad_input`.
pub fn col2im(cols: &[f64], g: &ConvGeometry, grad_input: &mut [f64]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let kk = g.kernel * g.kernel;
    for c in 0..g.channels {
        let plane = &mut grad_input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = c * kk + ky * g.kernel + kx;
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            plane[iy as usize * g.width + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// One bilinear tap set. Corners outside the image carry `None` and read as 0.
#[derive(Clone, Copy, Debug)]
pub struct BilinearTap {
    pub index: [Option<usize>; 4],
    pub weight: [f64; 4],
    /// d weight / d row-coordinate.
    pub dw_dy: [f64; 4],
    /// d weight / d col-coordinate.
    pub dw_dx: [f64; 4],
}

impl BilinearTap {
    pub fn new(py: f64, px: f64, height: usize, width: usize) -> Self {
        let y0 = py.floor();
        let x0 = px.floor();
        let ly = py - y0;
        let lx = px - x0;
        let (hy, hx) = (1.0 - ly, 1.0 - lx);
        let (y0, x0) = (y0 as i64, x0 as i64);
        let corner = |y: i64, x: i64| {
            if y >= 0 && x >= 0 && (y as usize) < height && (x as usize) < width {
                Some(y as usize * width + x as usize)
            } else {
                None
            }
        };
        Self {
            index: [
                corner(y0, x0),
                corner(y0, x0 + 1),
                corner(y0 + 1, x0),
                corner(y0 + 1, x0 + 1),
            ],
            weight: [hy * hx, hy * lx, ly * hx, ly * lx],
            dw_dy: [-hx, -lx, hx, lx],
            dw_dx: [-hy, hy, -ly, ly],
        }
    }

    #[inline]
    pub fn sample(&self, plane: &[f64]) -> f64 {
        let mut v = 0.0;
        for i in 0..4 {
            if let Some(idx) = self.index[i] {
                v += self.weight[i] * plane[idx];
            }
        }
        v
    }

    /// Returns `(d sample / d y, d sample / d x)`.
    #[inline]
    pub fn sample_grad(&self, plane: &[f64]) -> (f64, f64) {
        let (mut gy, mut gx) = (0.0, 0.0);
        for i in 0..4 {
            if let Some(idx) = self.index[i] {
                gy += self.dw_dy[i] * plane[idx];
                gx += self.dw_dx[i] * plane[idx];
            }
        }
        (gy, gx)
    }
}

/// Sampling plan of a stride-1, same-padding deformable convolution.
///
/// `offsets` is `[2*K*K, H, W]`; channel `2k` holds the row displacement and
/// `2k + 1` the column displacement of kernel tap `k = ky*K + kx`.
pub struct DeformPlan {
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    /// `taps[k * H * W + pos]`
    pub taps: Vec<BilinearTap>,
}

impl DeformPlan {
    pub fn new(offsets: &[f64], height: usize, width: usize, kernel: usize) -> Self {
        let hw = height * width;
        let kk = kernel * kernel;
        let pad = (kernel / 2) as f64;
        let mut taps = Vec::with_capacity(kk * hw);
        for k in 0..kk {
            let (ky, kx) = ((k / kernel) as f64, (k % kernel) as f64);
            let dy = &offsets[2 * k * hw..(2 * k + 1) * hw];
            let dx = &offsets[(2 * k + 1) * hw..(2 * k + 2) * hw];
            for oy in 0..height {
                for ox in 0..width {
                    let pos = oy * width + ox;
                    let py = oy as f64 - pad + ky + dy[pos];
                    let px = ox as f64 - pad + kx + dx[pos];
                    taps.push(BilinearTap::new(py, px, height, width));
                }
            }
        }
        Self {
            height,
            width,
            kernel,
            taps,
        }
    }

    /// Deformable im2col: `[C*K*K, H*W]`.
    pub fn columns(&self, input: &[f64], channels: usize) -> Vec<f64> {
        let hw = self.height * self.width;
        let kk = self.kernel * self.kernel;
        let mut cols = vec![0.0; channels * kk * hw];
        for c in 0..channels {
            let plane = &input[c * hw..(c + 1) * hw];
            for k in 0..kk {
                let row = &mut cols[(c * kk + k) * hw..(c * kk + k + 1) * hw];
                let taps = &self.taps[k * hw..(k + 1) * hw];
                for (dst, tap) in row.iter_mut().zip(taps) {
                    *dst = tap.sample(plane);
                }
            }
        }
        cols
    }

    /// Back-propagates column gradients into input and offset gradients.
    pub fn backward(
        &self,
        input: &[f64],
        channels: usize,
        grad_cols: &[f64],
        grad_input: &mut [f64],
        grad_offsets: &mut [f64],
    ) {
        let hw = self.height * self.width;
        let kk = self.kernel * self.kernel;
        for c in 0..channels {
            let plane = &input[c * hw..(c + 1) * hw];
            let gplane = &mut grad_input[c * hw..(c + 1) * hw];
            for k in 0..kk {
                let gcol = &grad_cols[(c * kk + k) * hw..(c * kk + k + 1) * hw];
                let taps = &self.taps[k * hw..(k + 1) * hw];
                for pos in 0..hw {
                    let g = gcol[pos];
                    if g == 0.0 {
                        continue;
                    }
                    let tap = &taps[pos];
                    for i in 0..4 {
                        if let Some(idx) = tap.index[i] {
                            gplane[idx] += tap.weight[i] * g;
                        }
                    }
                    let (sy, sx) = tap.sample_grad(plane);
                    grad_offsets[2 * k * hw + pos] += g * sy;
                    grad_offsets[(2 * k + 1) * hw + pos] += g * sx;
                }
            }
        }
    }
}

/// Per-axis taps of a bilinear resize with half-pixel centers
/// (`align_corners = false`).
#[derive(Clone, Debug)]
pub struct AxisResample {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub frac: Vec<f64>,
}

impl AxisResample {
    pub fn new(n_in: usize, n_out: usize) -> Self {
        let scale = n_in as f64 / n_out as f64;
        let mut lo = Vec::with_capacity(n_out);
        let mut hi = Vec::with_capacity(n_out);
        let mut frac = Vec::with_capacity(n_out);
        for i in 0..n_out {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            lo.push(i0);
            hi.push(i1);
            frac.push(if i1 == i0 { 0.0 } else { src - i0 as f64 });
        }
        Self { lo, hi, frac }
    }
}

/// Bilinear resize of a `[C, H, W]` buffer.
pub fn resize_bilinear(
    input: &[f64],
    channels: usize,
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<f64> {
    let ry = AxisResample::new(h, oh);
    let rx = AxisResample::new(w, ow);
    let mut out = vec![0.0; channels * oh * ow];
    for c in 0..channels {
        let plane = &input[c * h * w..(c + 1) * h * w];
        let dst = &mut out[c * oh * ow..(c + 1) * oh * ow];
        for y in 0..oh {
            let (y0, y1, fy) = (ry.lo[y], ry.hi[y], ry.frac[y]);
            for x in 0..ow {
                let (x0, x1, fx) = (rx.lo[x], rx.hi[x], rx.frac[x]);
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                dst[y * ow + x] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

/// Adjoint of [`resize_bilinear`].
pub fn resize_bilinear_backward(
    grad_out: &[f64],
    channels: usize,
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<f64> {
    let ry = AxisResample::new(h, oh);
    let rx = AxisResample::new(w, ow);
    let mut grad = vec![0.0; channels * h * w];
    for c in 0..channels {
        let g = &grad_out[c * oh * ow..(c + 1) * oh * ow];
        let dst = &mut grad[c * h * w..(c + 1) * h * w];
        for y in 0..oh {
            let (y0, y1, fy) = (ry.lo[y], ry.hi[y], ry.frac[y]);
            for x in 0..ow {
                let (x0, x1, fx) = (rx.lo[x], rx.hi[x], rx.frac[x]);
                let v = g[y * ow + x];
                dst[y0 * w + x0] += v * (1.0 - fy) * (1.0 - fx);
                dst[y0 * w + x1] += v * (1.0 - fy) * fx;
                dst[y1 * w + x0] += v * fy * (1.0 - fx);
                dst[y1 * w + x1] += v * fy * fx;
            }
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // a = [[1,2,3],[4,5,6]] (2x3), b = [[1,0],[0,1],[1,1]] (3x2)
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let mut c = [0.0; 4];
        gemm(2, 3, 2, &a, false, &b, false, &mut c, 0.0);
        assert_eq!(c, [4.0, 5.0, 10.0, 11.0]);

        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let bt = [1.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let mut c2 = [0.0; 4];
        gemm(2, 3, 2, &at, true, &bt, true, &mut c2, 0.0);
        assert_eq!(c2, c);
    }

    #[test]
    fn bilinear_tap_at_integer_point_is_exact() {
        let plane: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let tap = BilinearTap::new(1.0, 2.0, 3, 4);
        assert_eq!(tap.sample(&plane), 6.0);
        let tap = BilinearTap::new(-1.5, 0.0, 3, 4);
        assert_eq!(tap.sample(&plane), 0.0);
    }

    #[test]
    fn resize_identity_when_sizes_match() {
        let data: Vec<f64> = (0..20).map(|v| v as f64 * 0.5).collect();
        assert_eq!(resize_bilinear(&data, 1, (4, 5), (4, 5)), data);
    }

    #[test]
    fn resize_backward_is_adjoint() {
        let x: Vec<f64> = (0..12).map(|v| (v as f64 * 0.37).sin()).collect();
        let g: Vec<f64> = (0..48).map(|v| (v as f64 * 0.11).cos()).collect();
        let y = resize_bilinear(&x, 1, (3, 4), (6, 8));
        let gx = resize_bilinear_backward(&g, 1, (3, 4), (6, 8));
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&gx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
