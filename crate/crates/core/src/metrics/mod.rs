//! Evaluation metrics for a grayscale prediction in `[0, 1]` against a
//! binary ground truth (ground-truth values `>= 0.5` are foreground).
//!
//! Conventions shared by every metric:
//! - a ratio whose numerator and denominator are both 0 is 0;
//! - threshold sweeps use the 256 thresholds `k/255` with `pred >= t` positive;
//! - the adaptive threshold is `min(2·mean(pred), 1)`.

mod counts;
mod enhanced;
mod structure;
mod weighted;

pub use counts::{
    confusion, curve_threshold, f_curve, f_measure, mae, ratio_metrics, Confusion, FCurve, RatioMetrics, F_BETA2,
};
pub use enhanced::{e_measure, EMeasure};
pub use structure::s_measure;
pub use weighted::{distance_transform, weighted_f};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use rayon::prelude::*;
use std::fmt;
use std::str::FromStr;

/// Number of thresholds in the F and E curves.
pub const CURVE_POINTS: usize = 256;

/// Object/region balance of the S-measure.
pub const S_ALPHA: f64 = 0.5;

pub(crate) fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub(crate) fn check_dims(op: &'static str, pred: &GrayImage, gt: &GrayImage) -> Result<()> {
    if !pred.same_dims(gt) {
        return Err(Error::shape(
            op,
            format!(
                "prediction {}x{} vs ground truth {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            ),
        ));
    }
    Ok(())
}

pub fn adaptive_threshold(pred: &GrayImage) -> f64 {
    (2.0 * pred.mean()).min(1.0)
}

/// Binarization used for PA, IoU, Dice and BER.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Binarize {
    Fixed(f64),
    Adaptive,
}

impl Default for Binarize {
    fn default() -> Self {
        Binarize::Fixed(0.5)
    }
}

impl Binarize {
    pub fn threshold(&self, pred: &GrayImage) -> f64 {
        match *self {
            Binarize::Fixed(t) => t,
            Binarize::Adaptive => adaptive_threshold(pred),
        }
    }
}

impl fmt::Display for Binarize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Binarize::Fixed(t) => write!(f, "{t}"),
            Binarize::Adaptive => f.write_str("adaptive"),
        }
    }
}

impl FromStr for Binarize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("adaptive") {
            return Ok(Binarize::Adaptive);
        }
        match s.parse::<f64>() {
            Ok(t) if (0.0..=1.0).contains(&t) => Ok(Binarize::Fixed(t)),
            _ => Err(Error::invalid(
                "binarize",
                format!("expected `adaptive` or a threshold in [0, 1], got `{s}`"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub pa: f64,
    pub f_max: f64,
    pub f_mean: f64,
    pub f_weighted: f64,
    pub s_measure: f64,
    pub e_measure: f64,
    pub iou: f64,
    pub dice: f64,
    pub ber: f64,
    pub mae: f64,
    pub f_curve: Vec<f64>,
    pub e_curve: Vec<f64>,
    /// Threshold used for PA/IoU/Dice/BER.
    pub threshold_used: f64,
}

impl MetricReport {
    /// The ten scalar metrics in reporting order.
    pub fn scalars(&self) -> [(&'static str, f64); 10] {
        [
            ("pa", self.pa),
            ("f_max", self.f_max),
            ("f_mean", self.f_mean),
            ("f_weighted", self.f_weighted),
            ("s_measure", self.s_measure),
            ("e_measure", self.e_measure),
            ("iou", self.iou),
            ("dice", self.dice),
            ("ber", self.ber),
            ("mae", self.mae),
        ]
    }
}

pub fn evaluate_pair(pred: &GrayImage, gt: &GrayImage, binarize: Binarize) -> Result<MetricReport> {
    check_dims("evaluate_pair", pred, gt)?;
    let threshold = binarize.threshold(pred);
    let r = ratio_metrics(&confusion(&pred.binarize(threshold), &gt.to_mask())?);
    let f = f_curve(pred, gt)?;
    let e = e_measure(pred, gt)?;
    Ok(MetricReport {
        pa: r.pa,
        f_max: f.f_max,
        f_mean: f.f_mean,
        f_weighted: weighted_f(pred, gt)?,
        s_measure: s_measure(pred, gt, S_ALPHA)?,
        e_measure: e.adaptive,
        iou: r.iou,
        dice: r.dice,
        ber: r.ber,
        mae: mae(pred, gt)?,
        f_curve: f.curve,
        e_curve: e.curve,
        threshold_used: threshold,
    })
}

/// One named prediction/ground-truth pair.
#[derive(Clone, Debug)]
pub struct NamedPair {
    pub name: String,
    pub pred: GrayImage,
    pub gt: GrayImage,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetReport {
    pub aggregate: MetricReport,
    /// Per-image reports sorted by name.
    pub per_image: Vec<(String, MetricReport)>,
}

/// Evaluates every pair on a pool of `jobs` workers (default: all cores).
///
/// Aggregates are means of the per-image values in name order, except
/// `f_max`, the maximum of the mean F curve. Results do not depend on `jobs`.
pub fn evaluate_dataset(mut pairs: Vec<NamedPair>, binarize: Binarize, jobs: Option<usize>) -> Result<DatasetReport> {
    if pairs.is_empty() {
        return Err(Error::Dataset("no image pairs to evaluate".into()));
    }
    pairs.sort_by(|a, b| a.name.cmp(&b.name));
    let run = || -> Result<Vec<MetricReport>> {
        pairs
            .par_iter()
            .map(|p| evaluate_pair(&p.pred, &p.gt, binarize).map_err(|e| Error::Dataset(format!("{}: {e}", p.name))))
            .collect()
    };
    let reports = match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::invalid("evaluate_dataset", e.to_string()))?
            .install(run)?,
        None => run()?,
    };
    let aggregate = aggregate(&reports);
    Ok(DatasetReport {
        aggregate,
        per_image: pairs.into_iter().map(|p| p.name).zip(reports).collect(),
    })
}

fn aggregate(reports: &[MetricReport]) -> MetricReport {
    let n = reports.len() as f64;
    let mean = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let mean_curve = |f: fn(&MetricReport) -> &Vec<f64>| -> Vec<f64> {
        (0..CURVE_POINTS)
            .map(|k| reports.iter().map(|r| f(r)[k]).sum::<f64>() / n)
            .collect()
    };
    let f_curve = mean_curve(|r| &r.f_curve);
    MetricReport {
        pa: mean(|r| r.pa),
        f_max: f_curve.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        f_mean: mean(|r| r.f_mean),
        f_weighted: mean(|r| r.f_weighted),
        s_measure: mean(|r| r.s_measure),
        e_measure: mean(|r| r.e_measure),
        iou: mean(|r| r.iou),
        dice: mean(|r| r.dice),
        ber: mean(|r| r.ber),
        mae: mean(|r| r.mae),
        e_curve: mean_curve(|r| &r.e_curve),
        f_curve,
        threshold_used: mean(|r| r.threshold_used),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(name: &str, seed: u64) -> NamedPair {
        let mut s = seed;
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        let pred = GrayImage::from_fn(12, 10, |_, _| next());
        let gt = GrayImage::from_fn(12, 10, |y, x| f64::from(u8::from(y > 3 && x < 6)));
        NamedPair {
            name: name.into(),
            pred,
            gt,
        }
    }

    #[test]
    fn perfect_report() {
        let gt = GrayImage::from_fn(16, 16, |y, x| {
            f64::from(u8::from((4..11).contains(&y) && (3..9).contains(&x)))
        });
        let r = evaluate_pair(&gt, &gt, Binarize::default()).unwrap();
        for v in [
            r.pa,
            r.f_max,
            r.f_mean,
            r.f_weighted,
            r.s_measure,
            r.e_measure,
            r.iou,
            r.dice,
        ] {
            assert!((v - 1.0).abs() <= 1e-6, "{r:?}");
        }
        assert!(r.ber.abs() <= 1e-6 && r.mae.abs() <= 1e-6);
    }

    #[test]
    fn binarize_parsing() {
        assert_eq!("adaptive".parse::<Binarize>().unwrap(), Binarize::Adaptive);
        assert_eq!("0.5".parse::<Binarize>().unwrap(), Binarize::Fixed(0.5));
        assert!("1.5".parse::<Binarize>().is_err());
        assert!("x".parse::<Binarize>().is_err());
    }

    #[test]
    fn dataset_aggregation() {
        let single = evaluate_dataset(vec![pair("a", 1)], Binarize::default(), Some(1)).unwrap();
        let double = evaluate_dataset(vec![pair("a", 1), pair("b", 1)], Binarize::default(), Some(2)).unwrap();
        let (s, d) = (&single.aggregate, &double.aggregate);
        for ((_, a), (_, b)) in s.scalars().iter().zip(d.scalars()) {
            assert!((a - b).abs() < 1e-15);
        }
        let mixed = evaluate_dataset(
            vec![pair("b", 2), pair("a", 1), pair("c", 3)],
            Binarize::Adaptive,
            Some(1),
        )
        .unwrap();
        let names: Vec<&str> = mixed.per_image.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["a", "b", "c"]);
        let mean_mae = mixed.per_image.iter().map(|(_, r)| r.mae).sum::<f64>() / 3.0;
        assert_eq!(mixed.aggregate.mae, mean_mae);
        let par = evaluate_dataset(
            vec![pair("b", 2), pair("a", 1), pair("c", 3)],
            Binarize::Adaptive,
            Some(8),
        )
        .unwrap();
        assert_eq!(par, mixed);
        assert!(evaluate_dataset(Vec::new(), Binarize::default(), None).is_err());
    }
}
