//! Weighted F-measure with distance-dependent error weighting.

use super::check_dims;
use crate::error::Result;
use crate::image::GrayImage;

const EPS: f64 = f64::EPSILON;
const KERNEL: usize = 7;
const SIGMA: f64 = 5.0;

/// Exact Euclidean distance to the nearest foreground pixel and that pixel's
/// row-major index. Ties go to the smallest index. Requires at least one
/// foreground pixel.
pub fn distance_transform(fg: &[bool], h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    // Per column: nearest foreground row (ties to the upper one).
    let mut col_row: Vec<Option<usize>> = vec![None; h * w];
    for x in 0..w {
        let mut last = None;
        for y in 0..h {
            if fg[y * w + x] {
                last = Some(y);
            }
            col_row[y * w + x] = last;
        }
        let mut next = None;
        for y in (0..h).rev() {
            if fg[y * w + x] {
                next = Some(y);
            }
            let up = col_row[y * w + x];
            col_row[y * w + x] = match (up, next) {
                (Some(u), Some(d)) => Some(if y - u <= d - y { u } else { d }),
                (u, d) => u.or(d),
            };
        }
    }
    let mut dist = vec![0.0; h * w];
    let mut idx = vec![0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut best: Option<(usize, usize)> = None;
            for xs in 0..w {
                let Some(ys) = col_row[y * w + xs] else { continue };
                let d2 = ys.abs_diff(y).pow(2) + xs.abs_diff(x).pow(2);
                let cand = (d2, ys * w + xs);
                if best.is_none_or(|b| cand < b) {
                    best = Some(cand);
                }
            }
            let (d2, i) = best.expect("at least one foreground pixel");
            dist[y * w + x] = (d2 as f64).sqrt();
            idx[y * w + x] = i;
        }
    }
    (dist, idx)
}

/// Normalized 1-D Gaussian; the 2-D kernel is its outer product.
fn gaussian_taps() -> [f64; KERNEL] {
    let r = (KERNEL / 2) as f64;
    let mut taps = [0.0; KERNEL];
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - r;
        *t = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.map(|t| t / s)
}

/// Same-size Gaussian filtering with zero padding.
pub(crate) fn gaussian_filter(src: &[f64], h: usize, w: usize) -> Vec<f64> {
    let taps = gaussian_taps();
    let r = KERNEL / 2;
    let pass = |input: &[f64], horizontal: bool| {
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, t) in taps.iter().enumerate() {
                    let (yy, xx) = if horizontal {
                        (y as isize, x as isize + i as isize - r as isize)
                    } else {
                        (y as isize + i as isize - r as isize, x as isize)
                    };
                    if (0..h as isize).contains(&yy) && (0..w as isize).contains(&xx) {
                        acc += t * input[yy as usize * w + xx as usize];
                    }
                }
                out[y * w + x] = acc;
            }
        }
        out
    };
    pass(&pass(src, true), false)
}

/// Weighted F-measure with β² = 1. All-background ground truth scores 0.
pub fn weighted_f(pred: &GrayImage, gt: &GrayImage) -> Result<f64> {
    check_dims("weighted_f", pred, gt)?;
    let (h, w) = (pred.height(), pred.width());
    let mask = gt.to_mask();
    let fg = mask.data();
    if !fg.contains(&true) {
        return Ok(0.0);
    }
    let g = |i: usize| f64::from(u8::from(fg[i]));
    let err: Vec<f64> = pred.data().iter().enumerate().map(|(i, p)| (p - g(i)).abs()).collect();
    let (dist, nearest) = distance_transform(fg, h, w);
    let spread: Vec<f64> = (0..h * w)
        .map(|i| if fg[i] { err[i] } else { err[nearest[i]] })
        .collect();
    let filtered = gaussian_filter(&spread, h, w);
    let decay = 0.5f64.ln() / 5.0;
    let (mut fg_err, mut bg_err, mut fg_n) = (0.0, 0.0, 0usize);
    for i in 0..h * w {
        if fg[i] {
            fg_err += err[i].min(filtered[i]);
            fg_n += 1;
        } else {
            bg_err += err[i] * (2.0 - (decay * dist[i]).exp());
        }
    }
    let tp = fg_n as f64 - fg_err;
    let recall = 1.0 - fg_err / fg_n as f64;
    let precision = tp / (EPS + tp + bg_err);
    Ok(2.0 * recall * precision / (EPS + recall + precision))
}
