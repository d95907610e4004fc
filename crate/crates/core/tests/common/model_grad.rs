//! Finite-difference check of full-model loss gradients.

use gatedseg::net::{loss, run, ModelParams};
use gatedseg::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct GradCheckSummary {
    pub checked: usize,
    /// Coordinates redrawn because a ReLU kink sat inside the step.
    pub redrawn: usize,
    pub worst: f64,
    /// `(parameter, index, analytic, numeric)` per checked coordinate.
    pub samples: Vec<(String, usize, f64, f64)>,
}

/// A rectangle mask per sample, shifted by the sample index.
pub fn toy_mask(n: usize, size: usize) -> Tensor {
    Tensor::from_fn([n, 1, size, size], |b, _, y, x| {
        let lo = size / 4 + b;
        f64::from(u8::from(
            (lo..3 * size / 4).contains(&y) && (lo..size / 2 + 3).contains(&x),
        ))
    })
}

pub fn model_loss(p: &ModelParams, x: &Tensor, gt: &Tensor) -> f64 {
    let mut tape = Tape::new();
    let bound = p.tensors.bind(&mut tape);
    let xn = tape.constant(x.clone());
    let nodes = run(&mut tape, &p.config, &bound, xn, None).unwrap();
    let l = loss(&mut tape, nodes.s1_logits, nodes.sf_logits, gt).unwrap();
    tape.value(l).item().unwrap()
}

/// Relative error `|a - n| / max(|a|, |n|, 1e-6)`. Differences of a loss near
/// 1 resolve about 1e-11 absolute at the step used, hence the floor.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares analytic loss gradients with central differences (step 1e-5)
/// on `count` randomly drawn parameter coordinates.
pub fn check_model_gradients(p: &ModelParams, x: &Tensor, gt: &Tensor, count: usize, seed: u64) -> GradCheckSummary {
    let mut tape = Tape::new();
    let bound = p.tensors.bind(&mut tape);
    let xn = tape.constant(x.clone());
    let nodes = run(&mut tape, &p.config, &bound, xn, None).unwrap();
    let l = loss(&mut tape, nodes.s1_logits, nodes.sf_logits, gt).unwrap();
    let grads = tape.backward(l).unwrap();

    let names: Vec<String> = p.tensors.names().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let base = model_loss(p, x, gt);
    let mut summary = GradCheckSummary {
        checked: 0,
        redrawn: 0,
        worst: 0.0,
        samples: Vec::new(),
    };
    while summary.checked < count {
        let name = &names[rng.random_range(0..names.len())];
        let t = p.get(name).unwrap();
        let i = rng.random_range(0..t.len());
        let analytic = grads.wrt(bound.get(name).unwrap()).data()[i];
        let v = t.data()[i];
        let at = |d: f64| {
            let mut q = p.clone();
            q.set(name, t.with_value(i, v + d)).unwrap();
            model_loss(&q, x, gt)
        };
        let (fwd, bwd) = ((at(h) - base) / h, (base - at(-h)) / h);
        // A kink inside the step makes the one-sided slopes disagree.
        if (fwd - bwd).abs() > 1e-4 * fwd.abs().max(bwd.abs()) + 1e-9 {
            summary.redrawn += 1;
            assert!(summary.redrawn <= 4 * count, "too many coordinates sit on kinks");
            continue;
        }
        let numeric = (fwd + bwd) / 2.0;
        summary.worst = summary.worst.max(relative_error(analytic, numeric));
        summary.samples.push((name.clone(), i, analytic, numeric));
        summary.checked += 1;
    }
    summary
}
