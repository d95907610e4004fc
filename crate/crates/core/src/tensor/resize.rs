//! Bilinear resampling with the half-pixel (align-corners = false) convention.

use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Per-axis interpolation taps: `(lo, hi, frac)` for every destination index.
fn axis_taps(src_len: usize, dst_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = src_len as f64 / dst_len as f64;
    (0..dst_len)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (s.floor() as usize).min(src_len - 1);
            let hi = (lo + 1).min(src_len - 1);
            let frac = if hi == lo { 0.0 } else { s - lo as f64 };
            (lo, hi, frac)
        })
        .collect()
}

/// Resizes the spatial plane of every channel to `out_h x out_w`.
///
/// Interpolants are evaluated as `a + t * (b - a)`, so constant regions stay
/// bit-exactly constant and an identity-sized resize returns the input.
pub fn resize_bilinear(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("resize_bilinear", "target size must be positive"));
    }
    let s = input.shape();
    let ys = axis_taps(s.h, out_h);
    let xs = axis_taps(s.w, out_w);
    let out_shape = Shape::new(s.n, s.c, out_h, out_w);
    let mut out = Vec::with_capacity(out_shape.numel());
    for plane in input.data().chunks(s.plane()) {
        for &(y0, y1, ty) in &ys {
            let (r0, r1) = (&plane[y0 * s.w..(y0 + 1) * s.w], &plane[y1 * s.w..(y1 + 1) * s.w]);
            for &(x0, x1, tx) in &xs {
                let top = r0[x0] + tx * (r0[x1] - r0[x0]);
                let bottom = r1[x0] + tx * (r1[x1] - r1[x0]);
                out.push(top + ty * (bottom - top));
            }
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

/// Bilinear upsampling; shrinking either axis is rejected.
pub fn bilinear_upsample(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let s = input.shape();
    if out_h < s.h || out_w < s.w {
        return Err(Error::invalid(
            "bilinear_upsample",
            format!("cannot downsample {}x{} to {out_h}x{out_w}", s.h, s.w),
        ));
    }
    resize_bilinear(input, out_h, out_w)
}

pub(crate) fn resize_bilinear_backward(grad: &Tensor, input: Shape) -> Tensor {
    let g = grad.shape();
    let ys = axis_taps(input.h, g.h);
    let xs = axis_taps(input.w, g.w);
    let mut out = vec![0.0; input.numel()];
    for (dst, src) in out.chunks_mut(input.plane()).zip(grad.data().chunks(g.plane())) {
        for (oy, &(y0, y1, ty)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, tx)) in xs.iter().enumerate() {
                let v = src[oy * g.w + ox];
                let (top, bottom) = (v * (1.0 - ty), v * ty);
                dst[y0 * input.w + x0] += top * (1.0 - tx);
                dst[y0 * input.w + x1] += top * tx;
                dst[y1 * input.w + x0] += bottom * (1.0 - tx);
                dst[y1 * input.w + x1] += bottom * tx;
            }
        }
    }
    Tensor::from_parts(input, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stays_constant() {
        let t = Tensor::full([1, 2, 3, 5], 3.5);
        let up = bilinear_upsample(&t, 17, 11).unwrap();
        assert!(up.data().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn half_pixel_ramp() {
        let t = Tensor::new([1, 1, 1, 2], vec![0.0, 1.0]).unwrap();
        let up = bilinear_upsample(&t, 1, 4).unwrap();
        assert_eq!(up.data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn identity_size() {
        let t = Tensor::from_fn([2, 3, 4, 5], |n, c, y, x| {
            (n as f64 - 0.3 * c as f64) * y as f64 + x as f64 / 7.0
        });
        assert_eq!(bilinear_upsample(&t, 4, 5).unwrap(), t);
    }

    #[test]
    fn downsample_rejected_but_resize_allowed() {
        let t = Tensor::ones([1, 1, 4, 4]);
        assert!(bilinear_upsample(&t, 2, 4).is_err());
        let half = resize_bilinear(&Tensor::new([1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap(), 1, 1).unwrap();
        assert_eq!(half.data(), &[1.5]);
    }
}
