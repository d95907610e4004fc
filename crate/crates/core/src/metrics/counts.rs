use super::{adaptive_threshold, check_dims, ratio, CURVE_POINTS};
use crate::error::{Error, Result};
use crate::image::{BinaryMask, GrayImage};

/// Pixel counts of a binarized prediction against a ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

pub fn confusion(pred: &BinaryMask, gt: &BinaryMask) -> Result<Confusion> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::shape(
            "confusion",
            format!(
                "prediction {}x{} vs ground truth {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            ),
        ));
    }
    let mut c = Confusion::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatioMetrics {
    pub pa: f64,
    pub precision: f64,
    pub recall: f64,
    pub iou: f64,
    pub dice: f64,
    pub ber: f64,
}

/// Count ratios; any 0/0 is taken as 0.
pub fn ratio_metrics(c: &Confusion) -> RatioMetrics {
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let tpr = ratio(tp, tp + fn_);
    let tnr = ratio(tn, tn + fp);
    RatioMetrics {
        pa: ratio(tp + tn, tp + tn + fp + fn_),
        precision: ratio(tp, tp + fp),
        recall: tpr,
        iou: ratio(tp, tp + fp + fn_),
        dice: ratio(2.0 * tp, 2.0 * tp + fp + fn_),
        ber: 1.0 - 0.5 * (tpr + tnr),
    }
}

/// `(1+β²)PR / (β²P + R)`, 0 when the denominator vanishes.
pub fn f_measure(precision: f64, recall: f64, beta2: f64) -> f64 {
    ratio((1.0 + beta2) * precision * recall, beta2 * precision + recall)
}

/// β² of the threshold-swept F-measure.
pub const F_BETA2: f64 = 0.3;

/// Threshold of curve point `k`.
pub fn curve_threshold(k: usize) -> f64 {
    k as f64 / (CURVE_POINTS - 1) as f64
}

/// Largest `k` with `k/255 <= v`, for `v` in `[0, 1]`.
pub(crate) fn curve_bin(v: f64) -> usize {
    let top = CURVE_POINTS - 1;
    let mut k = ((v * top as f64).floor().max(0.0) as usize).min(top);
    while k < top && curve_threshold(k + 1) <= v {
        k += 1;
    }
    while k > 0 && curve_threshold(k) > v {
        k -= 1;
    }
    k
}

/// Foreground/background pixel counts predicted positive at every curve threshold.
pub(crate) fn positives_per_threshold(pred: &GrayImage, gt: &BinaryMask) -> (Vec<u64>, Vec<u64>) {
    let mut fg = vec![0u64; CURVE_POINTS];
    let mut bg = vec![0u64; CURVE_POINTS];
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let bins = if g { &mut fg } else { &mut bg };
        bins[curve_bin(p)] += 1;
    }
    // Suffix sums: entry k counts pixels with value >= k/255.
    for bins in [&mut fg, &mut bg] {
        for k in (0..CURVE_POINTS - 1).rev() {
            bins[k] += bins[k + 1];
        }
    }
    (fg, bg)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FCurve {
    /// F at thresholds `k/255`, `k = 0..=255`, positives `pred >= t`.
    pub curve: Vec<f64>,
    /// Best F over the curve thresholds and the adaptive threshold.
    pub f_max: f64,
    /// F at the adaptive threshold.
    pub f_mean: f64,
    pub adaptive_threshold: f64,
}

fn f_from_counts(tp: u64, fp: u64, fg_total: u64) -> f64 {
    let p = ratio(tp as f64, (tp + fp) as f64);
    let r = ratio(tp as f64, fg_total as f64);
    f_measure(p, r, F_BETA2)
}

pub fn f_curve(pred: &GrayImage, gt: &GrayImage) -> Result<FCurve> {
    check_dims("f_curve", pred, gt)?;
    let gt = gt.to_mask();
    let (fg, bg) = positives_per_threshold(pred, &gt);
    let fg_total = gt.count() as u64;
    let curve: Vec<f64> = fg
        .iter()
        .zip(&bg)
        .map(|(&tp, &fp)| f_from_counts(tp, fp, fg_total))
        .collect();
    let t = adaptive_threshold(pred);
    let c = confusion(&pred.binarize(t), &gt)?;
    let f_mean = f_from_counts(c.tp, c.fp, fg_total);
    let f_max = curve.iter().copied().fold(f_mean, f64::max);
    Ok(FCurve {
        curve,
        f_max,
        f_mean,
        adaptive_threshold: t,
    })
}

/// Mean absolute difference, no binarization.
pub fn mae(pred: &GrayImage, gt: &GrayImage) -> Result<f64> {
    check_dims("mae", pred, gt)?;
    let sum: f64 = pred.data().iter().zip(gt.data()).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / pred.len() as f64)
}
