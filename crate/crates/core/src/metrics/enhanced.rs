//! Enhanced-alignment measure.

use super::counts::positives_per_threshold;
use super::{adaptive_threshold, check_dims, CURVE_POINTS};
use crate::error::Result;
use crate::image::GrayImage;

const EPS: f64 = f64::EPSILON;

#[derive(Clone, Debug, PartialEq)]
pub struct EMeasure {
    /// Score of the prediction binarized at the adaptive threshold.
    pub adaptive: f64,
    /// Scores at thresholds `k/255`.
    pub curve: Vec<f64>,
}

/// Score from the four pixel-class counts of a binarized prediction: pred
/// positive on foreground (`tp`), on background (`fp`), and the foreground
/// and image sizes.
pub(crate) fn score(tp: u64, fp: u64, fg: u64, total: u64) -> f64 {
    let n = total as f64;
    if fg == 0 {
        return (total - fp) as f64 / n;
    }
    if fg == total {
        return tp as f64 / n;
    }
    let pos = tp + fp;
    let mean_p = pos as f64 / n;
    let mean_g = fg as f64 / n;
    let enhanced = |p: f64, g: f64| {
        let (ap, ag) = (p - mean_p, g - mean_g);
        let align = 2.0 * ap * ag / (ap * ap + ag * ag + EPS);
        (align + 1.0).powi(2) / 4.0
    };
    let fn_ = fg - tp;
    let tn = total - fg - fp;
    let sum = tp as f64 * enhanced(1.0, 1.0)
        + fp as f64 * enhanced(1.0, 0.0)
        + fn_ as f64 * enhanced(0.0, 1.0)
        + tn as f64 * enhanced(0.0, 0.0);
    sum / n
}

pub fn e_measure(pred: &GrayImage, gt: &GrayImage) -> Result<EMeasure> {
    check_dims("e_measure", pred, gt)?;
    let mask = gt.to_mask();
    let total = mask.data().len() as u64;
    let fg = mask.count() as u64;
    let (tp, fp) = positives_per_threshold(pred, &mask);
    let curve = (0..CURVE_POINTS).map(|k| score(tp[k], fp[k], fg, total)).collect();
    let t = adaptive_threshold(pred);
    let (mut atp, mut afp) = (0, 0);
    for (&p, &g) in pred.data().iter().zip(mask.data()) {
        if p >= t {
            if g {
                atp += 1;
            } else {
                afp += 1;
            }
        }
    }
    Ok(EMeasure {
        adaptive: score(atp, afp, fg, total),
        curve,
    })
}
