//! Seeded random prediction / ground-truth pairs in several styles.

#![allow(dead_code)]

use gatedseg::GrayImage;
use rand::Rng;

pub type Grid = Vec<Vec<f64>>;

pub fn to_grid(img: &GrayImage) -> Grid {
    (0..img.height())
        .map(|y| (0..img.width()).map(|x| img.get(y, x)).collect())
        .collect()
}

/// A binary ground truth: one or two random rectangles, occasionally empty or full.
pub fn random_gt(rng: &mut impl Rng, h: usize, w: usize) -> GrayImage {
    match rng.random_range(0..20) {
        0 => return GrayImage::filled(h, w, 0.0),
        1 => return GrayImage::filled(h, w, 1.0),
        _ => {}
    }
    let rects: Vec<(usize, usize, usize, usize)> = (0..rng.random_range(1..=2))
        .map(|_| {
            let (y0, x0) = (rng.random_range(0..h - 1), rng.random_range(0..w - 1));
            (y0, rng.random_range(y0 + 1..=h), x0, rng.random_range(x0 + 1..=w))
        })
        .collect();
    GrayImage::from_fn(h, w, |y, x| {
        f64::from(u8::from(
            rects
                .iter()
                .any(|&(y0, y1, x0, x1)| (y0..y1).contains(&y) && (x0..x1).contains(&x)),
        ))
    })
}

/// A prediction: uniform noise, 8-bit quantized noise (hits curve thresholds
/// exactly), a noisy copy of `gt`, or a binary map.
pub fn random_pred(rng: &mut impl Rng, gt: &GrayImage) -> GrayImage {
    let (h, w) = (gt.height(), gt.width());
    let style = rng.random_range(0..4);
    let values: Vec<f64> = gt
        .data()
        .iter()
        .map(|&g| match style {
            0 => rng.random::<f64>(),
            1 => f64::from(rng.random_range(0u8..=255)) / 255.0,
            2 => (0.8 * g + 0.2 * rng.random::<f64>()).clamp(0.0, 1.0),
            _ => f64::from(u8::from(rng.random_bool(0.4))),
        })
        .collect();
    GrayImage::new(h, w, values).unwrap()
}

pub fn random_pair(rng: &mut impl Rng, h: usize, w: usize) -> (GrayImage, GrayImage) {
    let gt = random_gt(rng, h, w);
    (random_pred(rng, &gt), gt)
}
