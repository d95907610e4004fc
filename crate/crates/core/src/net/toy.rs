use super::{forward, forward_two_stream, train_step, AdamConfig, AdamState, Batch, ModelConfig, ModelParams, Stream};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

pub const TOY_SIZE: usize = 64;
pub const TOY_IMAGES: usize = 4;

/// Seeded synthetic rectangles: a tinted rectangle on a noisy background,
/// its binary mask and (for two-stream models) a depth map that is nearer
/// inside the rectangle.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyDataset {
    pub batch: Batch,
}

impl ToyDataset {
    pub fn generate(seed: u64, two_stream: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = TOY_SIZE;
        let mut images = Vec::with_capacity(TOY_IMAGES);
        let mut masks = Vec::with_capacity(TOY_IMAGES);
        let mut depths = Vec::with_capacity(TOY_IMAGES);
        for _ in 0..TOY_IMAGES {
            let h = rng.random_range(s / 4..s / 2);
            let w = rng.random_range(s / 4..s / 2);
            let y0 = rng.random_range(4..s - h - 4);
            let x0 = rng.random_range(4..s - w - 4);
            let inside = move |y: usize, x: usize| (y0..y0 + h).contains(&y) && (x0..x0 + w).contains(&x);
            let fg: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.6..0.9));
            let bg: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.1..0.4));
            let noise: Vec<f64> = (0..3 * s * s).map(|_| rng.random_range(-0.05..0.05)).collect();
            images.push(Tensor::from_fn([1, 3, s, s], |_, c, y, x| {
                let base = if inside(y, x) { fg[c] } else { bg[c] };
                base + noise[(c * s + y) * s + x]
            }));
            masks.push(Tensor::from_fn([1, 1, s, s], |_, _, y, x| {
                f64::from(u8::from(inside(y, x)))
            }));
            if two_stream {
                let near = rng.random_range(0.7..0.9);
                depths.push(Tensor::from_fn(
                    [1, 1, s, s],
                    |_, _, y, x| if inside(y, x) { near } else { 0.2 },
                ));
            }
        }
        let stack = |parts: &[Tensor]| Tensor::stack_batch(parts).expect("toy tensors share a shape");
        ToyDataset {
            batch: Batch {
                images: stack(&images),
                depth: two_stream.then(|| stack(&depths)),
                masks: stack(&masks),
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub params: ModelParams,
    /// Loss before each step.
    pub losses: Vec<f64>,
    /// Gradient L2 norm per parameter at the first step.
    pub first_step_grad_norms: BTreeMap<String, f64>,
    /// Mean absolute error of `S^F` on the training set after the last step.
    pub final_mae: f64,
}

/// Full-batch training on [`ToyDataset`]; the seed drives both the data and
/// the initialization.
pub fn train_toy(config: ModelConfig, steps: usize, seed: u64, lr: f64) -> Result<TrainReport> {
    if steps == 0 {
        return Err(Error::invalid("train_toy", "steps must be positive"));
    }
    let config = config.with_input_size(TOY_SIZE, TOY_SIZE);
    let data = ToyDataset::generate(seed, config.stream == Stream::Two);
    let mut params = ModelParams::init(config, seed)?;
    let mut state = AdamState::default();
    let adam = AdamConfig {
        lr,
        ..AdamConfig::default()
    };
    let mut losses = Vec::with_capacity(steps);
    let mut first_step_grad_norms = BTreeMap::new();
    for step in 0..steps {
        let out = train_step(&params, &data.batch, &state, &adam)?;
        if step == 0 {
            first_step_grad_norms = out.grad_norms;
        }
        losses.push(out.loss);
        params = out.params;
        state = out.state;
    }
    let pred = match &data.batch.depth {
        Some(d) => forward_two_stream(&data.batch.images, d, &params)?,
        None => forward(&data.batch.images, &params)?,
    };
    let masks = data.batch.masks.data();
    let final_mae = pred
        .sf
        .data()
        .iter()
        .zip(masks)
        .map(|(p, g)| (p - g).abs())
        .sum::<f64>()
        / masks.len() as f64;
    Ok(TrainReport {
        params,
        losses,
        first_step_grad_norms,
        final_mae,
    })
}
