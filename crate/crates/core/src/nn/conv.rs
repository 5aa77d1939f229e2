//! 3D convolution.
//!
//! For a volume `V ∈ R^{C×L×X×Y}` and kernels `F ∈ R^{N×C×T×H×W}` each output
//! cell is the convolution sum
//!
//! ```text
//! Φ_n(l, x, y) = b_n + Σ_{c,t,h,w} V(c, l·sT - pT + (T-1-t), ...) · F_n(c, t, h, w)
//! ```
//!
//! i.e. the kernel is applied flipped along every axis, taps outside the
//! volume read zero. Two implementations are provided: explicit loops
//! ([`conv3d_direct`]) and patch flattening plus a matrix product
//! ([`conv3d`]). They agree to rounding.

use super::gemm::{gemm, Mat};
use super::{NnError, Result, Tensor};

/// Kernel geometry, stride and zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    /// `(N, C, T, H, W)`.
    pub kernel_shape: [usize; 5],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl ConvSpec {
    /// `3×3×3` kernels, unit stride, padding 1: spatial and temporal size preserved.
    pub fn same3(out_channels: usize, in_channels: usize) -> Self {
        Self { kernel_shape: [out_channels, in_channels, 3, 3, 3], stride: [1; 3], padding: [1; 3] }
    }

    fn validate(&self) -> Result<()> {
        if self.kernel_shape.iter().any(|&k| k == 0) || self.stride.iter().any(|&s| s == 0) {
            return Err(NnError::Shape(format!(
                "kernel dims and strides must be >= 1: kernel {:?}, stride {:?}",
                self.kernel_shape, self.stride
            )));
        }
        Ok(())
    }

    /// Output shape `[N, L', X', Y']` for an input `[C, L, X, Y]`.
    pub fn output_shape(&self, input: &[usize]) -> Result<[usize; 4]> {
        self.validate()?;
        if input.len() != 4 {
            return Err(NnError::Shape(format!("conv3d input must be rank 4, got {input:?}")));
        }
        let [n, c, kt, kh, kw] = self.kernel_shape;
        if input[0] != c {
            return Err(NnError::Shape(format!("conv3d channel mismatch: input {} vs kernel {c}", input[0])));
        }
        let mut out = [n, 0, 0, 0];
        for (i, &k) in [kt, kh, kw].iter().enumerate() {
            let padded = input[i + 1] + 2 * self.padding[i];
            if padded < k {
                return Err(NnError::Shape(format!(
                    "conv3d axis {i}: padded size {padded} smaller than kernel {k}"
                )));
            }
            out[i + 1] = (padded - k) / self.stride[i] + 1;
        }
        Ok(out)
    }

    fn check(&self, volume: &Tensor, kernels: &Tensor, bias: Option<&Tensor>) -> Result<[usize; 4]> {
        kernels.expect_shape(&self.kernel_shape, "conv3d kernels")?;
        if let Some(b) = bias {
            b.expect_shape(&[self.kernel_shape[0]], "conv3d bias")?;
        }
        self.output_shape(volume.shape())
    }
}

/// Input index for output position `o` and kernel tap `k` along one axis.
#[inline]
fn source_index(o: usize, k: usize, klen: usize, stride: usize, pad: usize) -> isize {
    (o * stride + (klen - 1 - k)) as isize - pad as isize
}

/// Explicit-loop convolution.
pub fn conv3d_direct(volume: &Tensor, kernels: &Tensor, bias: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    let out_shape = spec.check(volume, kernels, Some(bias))?;
    let [c_in, l_in, x_in, y_in] = [volume.shape()[0], volume.shape()[1], volume.shape()[2], volume.shape()[3]];
    let [n_out, _, kt, kh, kw] = spec.kernel_shape;
    let [_, lo, xo, yo] = out_shape;
    let v = volume.data();
    let f = kernels.data();
    let mut out = vec![0.0; n_out * lo * xo * yo];
    let mut idx = 0;
    for n in 0..n_out {
        for l in 0..lo {
            for x in 0..xo {
                for y in 0..yo {
                    let mut acc = bias.data()[n];
                    for c in 0..c_in {
                        for t in 0..kt {
                            let il = source_index(l, t, kt, spec.stride[0], spec.padding[0]);
                            if il < 0 || il >= l_in as isize {
                                continue;
                            }
                            for h in 0..kh {
                                let ix = source_index(x, h, kh, spec.stride[1], spec.padding[1]);
                                if ix < 0 || ix >= x_in as isize {
                                    continue;
                                }
                                for w in 0..kw {
                                    let iy = source_index(y, w, kw, spec.stride[2], spec.padding[2]);
                                    if iy < 0 || iy >= y_in as isize {
                                        continue;
                                    }
                                    let vi = ((c * l_in + il as usize) * x_in + ix as usize) * y_in + iy as usize;
                                    let fi = (((n * c_in + c) * kt + t) * kh + h) * kw + w;
                                    acc += v[vi] * f[fi];
                                }
                            }
                        }
                    }
                    out[idx] = acc;
                    idx += 1;
                }
            }
        }
    }
    Ok(Tensor::from_raw(&out_shape, out))
}

/// Valid output range `[lo, hi)` along an axis for a fixed tap offset, such
/// that the source index lands inside `[0, len)`.
#[inline]
fn valid_range(out_len: usize, offset: isize, stride: usize, len: usize) -> (usize, usize) {
    // source = o * stride + offset
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
    let hi_excl = if (len as isize) - offset <= 0 { 0 } else { ((len as isize) - offset + s - 1) / s };
    let lo = (lo as usize).min(out_len);
    let hi = (hi_excl.max(0) as usize).min(out_len);
    (lo, hi.max(lo))
}

/// Patch matrix `[C·T·H·W × (l1-l0)·X'·Y']` for output time slices `l0..l1`.
fn im2col(volume: &Tensor, spec: &ConvSpec, out_shape: &[usize; 4], (la, lb): (usize, usize), cols: &mut Vec<f64>) {
    let s = volume.shape();
    let (c_in, l_in, x_in, y_in) = (s[0], s[1], s[2], s[3]);
    let [_, _, kt, kh, kw] = spec.kernel_shape;
    let [_, _, xo, yo] = *out_shape;
    let patch = (lb - la) * xo * yo;
    cols.clear();
    cols.resize(c_in * kt * kh * kw * patch, 0.0);
    let v = volume.data();
    let [st, sh, sw] = spec.stride;
    let [pt, ph, pw] = spec.padding;
    let mut row = 0;
    for c in 0..c_in {
        for t in 0..kt {
            let off_l = (kt - 1 - t) as isize - pt as isize;
            let (l0, l1) = valid_range(lb, off_l, st, l_in);
            let (l0, l1) = (l0.max(la), l1.max(la));
            for h in 0..kh {
                let off_x = (kh - 1 - h) as isize - ph as isize;
                let (x0, x1) = valid_range(xo, off_x, sh, x_in);
                for w in 0..kw {
                    let off_y = (kw - 1 - w) as isize - pw as isize;
                    let (y0, y1) = valid_range(yo, off_y, sw, y_in);
                    let dst = &mut cols[row * patch..(row + 1) * patch];
                    for l in l0..l1 {
                        let il = (l * st) as isize + off_l;
                        for x in x0..x1 {
                            let ix = (x * sh) as isize + off_x;
                            let src_base = ((c * l_in + il as usize) * x_in + ix as usize) * y_in;
                            let dst_base = ((l - la) * xo + x) * yo;
                            if sw == 1 {
                                let iy0 = (y0 as isize + off_y) as usize;
                                dst[dst_base + y0..dst_base + y1]
                                    .copy_from_slice(&v[src_base + iy0..src_base + iy0 + (y1 - y0)]);
                            } else {
                                for y in y0..y1 {
                                    let iy = ((y * sw) as isize + off_y) as usize;
                                    dst[dst_base + y] = v[src_base + iy];
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Scatter-add the patch-matrix gradient of output slices `l0..l1` onto `g`.
fn col2im(cols: &[f64], spec: &ConvSpec, in_shape: &[usize], out_shape: &[usize; 4], (la, lb): (usize, usize), g: &mut [f64]) {
    let (c_in, l_in, x_in, y_in) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let [_, _, kt, kh, kw] = spec.kernel_shape;
    let [_, _, xo, yo] = *out_shape;
    let patch = (lb - la) * xo * yo;
    let [st, sh, sw] = spec.stride;
    let [pt, ph, pw] = spec.padding;
    let mut row = 0;
    for c in 0..c_in {
        for t in 0..kt {
            let off_l = (kt - 1 - t) as isize - pt as isize;
            let (l0, l1) = valid_range(lb, off_l, st, l_in);
            let (l0, l1) = (l0.max(la), l1.max(la));
            for h in 0..kh {
                let off_x = (kh - 1 - h) as isize - ph as isize;
                let (x0, x1) = valid_range(xo, off_x, sh, x_in);
                for w in 0..kw {
                    let off_y = (kw - 1 - w) as isize - pw as isize;
                    let (y0, y1) = valid_range(yo, off_y, sw, y_in);
                    let src = &cols[row * patch..(row + 1) * patch];
                    for l in l0..l1 {
                        let il = (l * st) as isize + off_l;
                        for x in x0..x1 {
                            let ix = (x * sh) as isize + off_x;
                            let dst_base = ((c * l_in + il as usize) * x_in + ix as usize) * y_in;
                            let src_base = ((l - la) * xo + x) * yo;
                            if sw == 1 {
                                let iy0 = (y0 as isize + off_y) as usize;
                                let d = &mut g[dst_base + iy0..dst_base + iy0 + (y1 - y0)];
                                for (d, s) in d.iter_mut().zip(&src[src_base + y0..src_base + y1]) {
                                    *d += s;
                                }
                            } else {
                                for y in y0..y1 {
                                    let iy = ((y * sw) as isize + off_y) as usize;
                                    g[dst_base + iy] += src[src_base + y];
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Output time-slice ranges whose patch matrices stay around 2 MB.
fn tiles(spec: &ConvSpec, out_shape: &[usize; 4]) -> impl Iterator<Item = (usize, usize)> {
    let ck: usize = spec.kernel_shape[1..].iter().product();
    let per_slice = ck * out_shape[2] * out_shape[3];
    let step = (TILE_VALUES / per_slice.max(1)).max(1);
    let lo = out_shape[1];
    (0..lo).step_by(step).map(move |a| (a, (a + step).min(lo)))
}

const TILE_VALUES: usize = 1 << 18;

/// Convolution via patch flattening and a matrix product.
pub fn conv3d(volume: &Tensor, kernels: &Tensor, bias: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    let out_shape = spec.check(volume, kernels, Some(bias))?;
    let n = spec.kernel_shape[0];
    let ck: usize = spec.kernel_shape[1..].iter().product();
    let plane = out_shape[2] * out_shape[3];
    let patch = out_shape[1] * plane;
    let mut out = vec![0.0; n * patch];
    for (row, &b) in out.chunks_mut(patch).zip(bias.data()) {
        row.fill(b);
    }
    let mut cols = Vec::new();
    for (la, lb) in tiles(spec, &out_shape) {
        im2col(volume, spec, &out_shape, (la, lb), &mut cols);
        let w = (lb - la) * plane;
        gemm(Mat::new(kernels.data(), n, ck), Mat::new(&cols, ck, w), 1.0, &mut out[la * plane..], patch);
    }
    Ok(Tensor::from_raw(&out_shape, out))
}

/// Gradients of a convolution with respect to its inputs.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    /// `None` when the input gradient was not requested.
    pub volume: Option<Tensor>,
    pub kernels: Tensor,
    pub bias: Tensor,
}

/// Adjoint of [`conv3d`].
pub fn conv3d_backward(grad_out: &Tensor, volume: &Tensor, kernels: &Tensor, spec: &ConvSpec) -> Result<ConvGrads> {
    conv3d_backward_opt(grad_out, volume, kernels, spec, true)
}

/// Adjoint of [`conv3d`], optionally skipping the input gradient.
pub fn conv3d_backward_opt(
    grad_out: &Tensor,
    volume: &Tensor,
    kernels: &Tensor,
    spec: &ConvSpec,
    need_volume_grad: bool,
) -> Result<ConvGrads> {
    let out_shape = spec.check(volume, kernels, None)?;
    grad_out.expect_shape(&out_shape, "conv3d grad_out")?;
    let n = spec.kernel_shape[0];
    let ck: usize = spec.kernel_shape[1..].iter().product();
    let patch = out_shape[1] * out_shape[2] * out_shape[3];
    let go = grad_out.data();

    let bias: Vec<f64> = go.chunks(patch).map(|r| r.iter().sum()).collect();

    let plane = out_shape[2] * out_shape[3];
    let mut gk = vec![0.0; n * ck];
    let mut gv = need_volume_grad.then(|| vec![0.0; volume.len()]);
    let mut cols = Vec::new();
    let mut gcols = Vec::new();
    for (la, lb) in tiles(spec, &out_shape) {
        let w = (lb - la) * plane;
        let go_tile = Mat::view(&go[la * plane..], n, w, patch);
        im2col(volume, spec, &out_shape, (la, lb), &mut cols);
        gemm(go_tile, Mat::new(&cols, ck, w).t(), 1.0, &mut gk, ck);
        if let Some(g) = gv.as_mut() {
            gcols.clear();
            gcols.resize(ck * w, 0.0);
            gemm(Mat::new(kernels.data(), n, ck).t(), go_tile, 0.0, &mut gcols, w);
            col2im(&gcols, spec, volume.shape(), &out_shape, (la, lb), g);
        }
    }
    let gv = gv.map(|g| Tensor::from_raw(volume.shape(), g));

    Ok(ConvGrads {
        volume: gv,
        kernels: Tensor::from_raw(&spec.kernel_shape, gk),
        bias: Tensor::vector(bias),
    })
}
