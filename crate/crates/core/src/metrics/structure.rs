//! Structure measure: object-aware and region-aware similarity.

use super::check_dims;
use crate::error::Result;
use crate::image::GrayImage;

const EPS: f64 = f64::EPSILON;

/// `alpha · S_o + (1 − alpha) · S_r`, clipped below at 0.
///
/// All-background ground truth scores `1 − mean(pred)`, all-foreground
/// scores `mean(pred)`.
pub fn s_measure(pred: &GrayImage, gt: &GrayImage, alpha: f64) -> Result<f64> {
    check_dims("s_measure", pred, gt)?;
    let gt = gt.to_mask();
    let fg = gt.count();
    if fg == 0 {
        return Ok(1.0 - pred.mean());
    }
    if fg == gt.data().len() {
        return Ok(pred.mean());
    }
    let g: Vec<f64> = gt.to_gray().data().to_vec();
    let (h, w) = (pred.height(), pred.width());
    let q = alpha * object(pred.data(), gt.data()) + (1.0 - alpha) * region(pred.data(), &g, h, w);
    Ok(q.max(0.0))
}

fn object(pred: &[f64], gt: &[bool]) -> f64 {
    let fg: Vec<f64> = pred.iter().zip(gt).filter(|(_, &g)| g).map(|(&p, _)| p).collect();
    let bg: Vec<f64> = pred
        .iter()
        .zip(gt)
        .filter(|(_, &g)| !g)
        .map(|(&p, _)| 1.0 - p)
        .collect();
    let u = fg.len() as f64 / pred.len() as f64;
    u * object_score(&fg) + (1.0 - u) * object_score(&bg)
}

/// `2x / (x² + 1 + σ + eps)` with mean `x` and sample standard deviation `σ`.
fn object_score(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let x = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - x).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    2.0 * x / (x * x + 1.0 + var.sqrt() + EPS)
}

/// 1-based centroid `(row, col)` of the foreground, rounded half away from zero.
pub(crate) fn centroid(gt: &[f64], h: usize, w: usize) -> (usize, usize) {
    let (mut sy, mut sx, mut area) = (0.0, 0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            let g = gt[y * w + x];
            sy += (y + 1) as f64 * g;
            sx += (x + 1) as f64 * g;
            area += g;
        }
    }
    ((sy / area).round() as usize, (sx / area).round() as usize)
}

fn region(pred: &[f64], gt: &[f64], h: usize, w: usize) -> f64 {
    let (cy, cx) = centroid(gt, h, w);
    let area = (h * w) as f64;
    let quads = [(0, cy, 0, cx), (0, cy, cx, w), (cy, h, 0, cx), (cy, h, cx, w)];
    let w1 = (cx * cy) as f64 / area;
    let w2 = ((w - cx) * cy) as f64 / area;
    let w3 = (cx * (h - cy)) as f64 / area;
    let weights = [w1, w2, w3, 1.0 - w1 - w2 - w3];
    let mut q = 0.0;
    for (&(y0, y1, x0, x1), wt) in quads.iter().zip(weights) {
        let mut p = Vec::with_capacity((y1 - y0) * (x1 - x0));
        let mut g = Vec::with_capacity(p.capacity());
        for y in y0..y1 {
            p.extend_from_slice(&pred[y * w + x0..y * w + x1]);
            g.extend_from_slice(&gt[y * w + x0..y * w + x1]);
        }
        q += wt * ssim(&p, &g);
    }
    q
}

/// Single-window SSIM without stabilizing constants; an empty block scores 0.
fn ssim(pred: &[f64], gt: &[f64]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let n = pred.len() as f64;
    let x = pred.iter().sum::<f64>() / n;
    let y = gt.iter().sum::<f64>() / n;
    let dof = (n - 1.0).max(1.0);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&p, &g) in pred.iter().zip(gt) {
        sxx += (p - x) * (p - x);
        syy += (g - y) * (g - y);
        sxy += (p - x) * (g - y);
    }
    let (sxx, syy, sxy) = (sxx / dof, syy / dof, sxy / dof);
    let a = 4.0 * x * y * sxy;
    let b = (x * x + y * y) * (sxx + syy);
    if a != 0.0 {
        a / (b + EPS)
    } else if b == 0.0 {
        1.0
    } else {
        0.0
    }
}
