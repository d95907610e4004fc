//! 2-D cross-correlation with stride, dilation and zero padding.
//!
//! Lowered to im2col + GEMM per sample. Samples run in parallel; every
//! reduction that crosses samples (weight and bias gradients) is summed
//! in sample order afterwards, so results do not depend on the thread count.

use super::{Shape, Tensor};
use crate::error::{Error, Result};
use rayon::prelude::*;
use std::ops::Range;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl Conv2dSpec {
    pub const fn new(stride: usize, dilation: usize, padding: usize) -> Self {
        Conv2dSpec {
            stride,
            dilation,
            padding,
        }
    }

    /// Stride 1, no dilation, padding that keeps the spatial size for kernel `k`.
    pub const fn same(k: usize) -> Self {
        Conv2dSpec::new(1, 1, k / 2)
    }

    /// Stride 1, dilation `rate`, padding `rate` (size preserving for 3×3).
    pub const fn atrous(rate: usize) -> Self {
        Conv2dSpec::new(1, rate, rate)
    }
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Conv2dSpec::new(1, 1, 0)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Geometry {
    pub input: Shape,
    pub out_c: usize,
    pub k: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub spec: Conv2dSpec,
}

impl Geometry {
    pub fn new(input: Shape, weight: Shape, spec: Conv2dSpec) -> Result<Self> {
        if spec.stride == 0 || spec.dilation == 0 {
            return Err(Error::invalid(
                "conv2d",
                format!("stride {} and dilation {} must be >= 1", spec.stride, spec.dilation),
            ));
        }
        if weight.h != weight.w {
            return Err(Error::shape(
                "conv2d",
                format!("kernel must be square, got {}x{}", weight.h, weight.w),
            ));
        }
        if input.c != weight.c {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "input has {} channels but weight {} expects {}",
                    input.c, weight, weight.c
                ),
            ));
        }
        let k = weight.h;
        let span = spec.dilation * (k - 1) + 1;
        let out_dim = |len: usize, axis: &str| -> Result<usize> {
            let padded = len + 2 * spec.padding;
            if padded < span {
                return Err(Error::shape(
                    "conv2d",
                    format!(
                        "{axis} {len} with padding {} is smaller than the dilated kernel span {span}",
                        spec.padding
                    ),
                ));
            }
            Ok((padded - span) / spec.stride + 1)
        };
        Ok(Geometry {
            input,
            out_c: weight.n,
            k,
            out_h: out_dim(input.h, "height")?,
            out_w: out_dim(input.w, "width")?,
            spec,
        })
    }

    pub fn output(&self) -> Shape {
        Shape::new(self.input.n, self.out_c, self.out_h, self.out_w)
    }

    fn patch(&self) -> usize {
        self.input.c * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Output indices `lo..hi` along an axis of `out` positions whose tap `t`
    /// lands inside an input axis of `len`, and the input index of `lo`.
    #[inline]
    fn span(&self, t: usize, out: usize, len: usize) -> (usize, usize, usize) {
        let stride = self.spec.stride as isize;
        let off = (t * self.spec.dilation) as isize - self.spec.padding as isize;
        let lo = if off >= 0 { 0 } else { (-off + stride - 1) / stride };
        let hi = ((len as isize - off + stride - 1) / stride).clamp(0, out as isize);
        if lo >= hi {
            return (hi as usize, hi as usize, 0);
        }
        (lo as usize, hi as usize, (lo * stride + off) as usize)
    }

    /// Output rows per im2col block, keeping the column buffer near 256 KiB.
    fn block_rows(&self) -> usize {
        (BLOCK_ELEMS / (self.patch() * self.out_w).max(1)).clamp(1, self.out_h.max(1))
    }

    /// Fills `cols` (patch × rows·out_w) for output rows `rows` of one sample `x`.
    fn im2col(&self, x: &[f64], rows: Range<usize>, cols: &mut [f64]) {
        let (h, w, k) = (self.input.h, self.input.w, self.k);
        let (ow, stride) = (self.out_w, self.spec.stride);
        let width = rows.len() * ow;
        for ci in 0..self.input.c {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                let (ylo, yhi, iy0) = self.span(ky, self.out_h, h);
                let (ylo, yhi, iy0) = clip(ylo, yhi, iy0, stride, &rows);
                for kx in 0..k {
                    let (xlo, xhi, ix0) = self.span(kx, ow, w);
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * width..(row + 1) * width];
                    dst[..(ylo - rows.start) * ow].fill(0.0);
                    dst[(yhi - rows.start) * ow..].fill(0.0);
                    for oy in ylo..yhi {
                        let src = &plane[(iy0 + (oy - ylo) * stride) * w..];
                        let line = &mut dst[(oy - rows.start) * ow..(oy - rows.start + 1) * ow];
                        line[..xlo].fill(0.0);
                        line[xhi..].fill(0.0);
                        if stride == 1 {
                            line[xlo..xhi].copy_from_slice(&src[ix0..ix0 + (xhi - xlo)]);
                        } else {
                            for (j, v) in line[xlo..xhi].iter_mut().enumerate() {
                                *v = src[ix0 + j * stride];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds a column block produced for output rows `rows` onto `dx`.
    fn col2im(&self, cols: &[f64], rows: Range<usize>, dx: &mut [f64]) {
        let (h, w, k) = (self.input.h, self.input.w, self.k);
        let (ow, stride) = (self.out_w, self.spec.stride);
        let width = rows.len() * ow;
        for ci in 0..self.input.c {
            let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                let (ylo, yhi, iy0) = self.span(ky, self.out_h, h);
                let (ylo, yhi, iy0) = clip(ylo, yhi, iy0, stride, &rows);
                for kx in 0..k {
                    let (xlo, xhi, ix0) = self.span(kx, ow, w);
                    let row = (ci * k + ky) * k + kx;
                    let src = &cols[row * width..(row + 1) * width];
                    for oy in ylo..yhi {
                        let base = (oy - rows.start) * ow;
                        let line = &src[base + xlo..base + xhi];
                        let dst = &mut plane[(iy0 + (oy - ylo) * stride) * w..];
                        if stride == 1 {
                            for (d, v) in dst[ix0..ix0 + line.len()].iter_mut().zip(line) {
                                *d += v;
                            }
                        } else {
                            for (j, v) in line.iter().enumerate() {
                                dst[ix0 + j * stride] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `c[m×n] = a[m×k] · b[k×n]` with explicit strides, overwriting `c`.
#[allow(clippy::too_many_arguments)]
const BLOCK_ELEMS: usize = 1 << 15;

/// Restricts a valid output span `lo..hi` (first input index `i0`) to `rows`.
fn clip(lo: usize, hi: usize, i0: usize, stride: usize, rows: &Range<usize>) -> (usize, usize, usize) {
    let nlo = lo.max(rows.start).min(rows.end);
    let nhi = hi.min(rows.end).max(nlo);
    (nlo, nhi, i0 + nlo.saturating_sub(lo) * stride)
}

fn block_ranges(total: usize, step: usize) -> impl Iterator<Item = Range<usize>> {
    (0..total).step_by(step).map(move |s| s..(s + step).min(total))
}

/// `C = A·B + beta·C` for row-major `C` with row stride `c_rs`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
    c_rs: usize,
) {
    assert!(m == 0 || n == 0 || c.len() >= (m - 1) * c_rs + n);
    // SAFETY: the callers size `a`, `b` for the given dimensions and strides,
    // `c` is checked above and is a distinct, exclusively borrowed buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            c_rs as isize,
            1,
        );
    }
}

fn check_bias(bias: Option<&Tensor>, out_c: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.len() != out_c {
            return Err(Error::shape(
                "conv2d",
                format!("bias has {} values for {out_c} output channels", b.len()),
            ));
        }
    }
    Ok(())
}

/// Cross-correlation of `input` with `weight` (`outC x inC x k x k`), plus `bias`.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: Conv2dSpec) -> Result<Tensor> {
    let geo = Geometry::new(input.shape(), weight.shape(), spec)?;
    check_bias(bias, geo.out_c)?;
    Ok(conv2d_forward(&geo, input, weight, bias))
}

pub(crate) fn conv2d_forward(geo: &Geometry, input: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Tensor {
    let in_per = geo.input.c * geo.input.plane();
    let (patch, positions, ow) = (geo.patch(), geo.positions(), geo.out_w);
    let step = geo.block_rows();
    let samples: Vec<Vec<f64>> = input
        .data()
        .par_chunks(in_per)
        .map(|x| {
            let mut cols = vec![0.0; patch * step * ow];
            let mut out = vec![0.0; geo.out_c * positions];
            for rows in block_ranges(geo.out_h, step) {
                let width = rows.len() * ow;
                geo.im2col(x, rows.clone(), &mut cols[..patch * width]);
                gemm(
                    geo.out_c,
                    patch,
                    width,
                    weight.data(),
                    (patch as isize, 1),
                    &cols,
                    (width as isize, 1),
                    0.0,
                    &mut out[rows.start * ow..],
                    positions,
                );
            }
            if let Some(b) = bias {
                for (row, &bv) in out.chunks_mut(positions).zip(b.data()) {
                    row.iter_mut().for_each(|v| *v += bv);
                }
            }
            out
        })
        .collect();
    Tensor::from_parts(geo.output(), samples.concat())
}

/// Returns `(dx, dw, db)`; `dx` is `None` unless `need_input`.
pub(crate) fn conv2d_backward(
    geo: &Geometry,
    input: &Tensor,
    weight: &Tensor,
    grad: &Tensor,
    need_input: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let in_per = geo.input.c * geo.input.plane();
    let (patch, positions, ow) = (geo.patch(), geo.positions(), geo.out_w);
    let out_per = geo.out_c * positions;
    let step = geo.block_rows();

    let per_sample: Vec<(Vec<f64>, Vec<f64>)> = input
        .data()
        .par_chunks(in_per)
        .zip(grad.data().par_chunks(out_per))
        .map(|(x, dy)| {
            let mut cols = vec![0.0; patch * step * ow];
            let mut dw = vec![0.0; geo.out_c * patch];
            let mut dx = if need_input { vec![0.0; in_per] } else { Vec::new() };
            for rows in block_ranges(geo.out_h, step) {
                let width = rows.len() * ow;
                let dy_block = &dy[rows.start * ow..];
                geo.im2col(x, rows.clone(), &mut cols[..patch * width]);
                gemm(
                    geo.out_c,
                    width,
                    patch,
                    dy_block,
                    (positions as isize, 1),
                    &cols,
                    (1, width as isize),
                    1.0,
                    &mut dw,
                    patch,
                );
                if need_input {
                    // cols is reused as the column-space input gradient.
                    gemm(
                        patch,
                        geo.out_c,
                        width,
                        weight.data(),
                        (1, patch as isize),
                        dy_block,
                        (positions as isize, 1),
                        0.0,
                        &mut cols,
                        width,
                    );
                    geo.col2im(&cols[..patch * width], rows, &mut dx);
                }
            }
            (dx, dw)
        })
        .collect();

    let mut grad_input = Vec::with_capacity(if need_input { input.len() } else { 0 });
    let mut grad_weight = vec![0.0; weight.len()];
    for (dx, dw) in &per_sample {
        grad_input.extend_from_slice(dx);
        grad_weight.iter_mut().zip(dw).for_each(|(acc, v)| *acc += v);
    }

    let mut grad_bias = vec![0.0; geo.out_c];
    for dy in grad.data().chunks(out_per) {
        for (acc, row) in grad_bias.iter_mut().zip(dy.chunks(positions)) {
            *acc += row.iter().sum::<f64>();
        }
    }

    (
        need_input.then(|| Tensor::from_parts(geo.input, grad_input)),
        Tensor::from_parts(weight.shape(), grad_weight),
        Tensor::from_parts(Shape::new(geo.out_c, 1, 1, 1), grad_bias),
    )
}
