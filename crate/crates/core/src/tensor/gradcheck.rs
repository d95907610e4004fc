//! Central-difference gradient checking.

use super::{Conv2dSpec, NodeId, Shape, Tape, Tensor};
use crate::error::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Finite-difference step.
pub const FD_EPS: f64 = 1e-6;

/// A differentiable operator with concrete random-input shapes.
#[derive(Clone, Debug)]
pub enum GradCheckOp {
    Conv2d {
        input: Shape,
        out_channels: usize,
        kernel: usize,
        spec: Conv2dSpec,
    },
    Bilinear {
        input: Shape,
        out_h: usize,
        out_w: usize,
    },
    Add(Shape),
    Sub(Shape),
    Mul(Shape),
    Sigmoid(Shape),
    Relu(Shape),
    ScaleChannels(Shape),
    Concat(Vec<Shape>),
    Slice {
        input: Shape,
        start: usize,
        len: usize,
    },
    GlobalAvgPool(Shape),
    Sum(Shape),
    BceWithLogits(Shape),
    SoftIou(Shape),
}

impl GradCheckOp {
    /// One representative configuration per operator.
    pub fn catalogue() -> Vec<GradCheckOp> {
        let s = Shape::new(2, 3, 4, 5);
        vec![
            GradCheckOp::Conv2d {
                input: Shape::new(2, 3, 5, 5),
                out_channels: 4,
                kernel: 3,
                spec: Conv2dSpec::same(3),
            },
            GradCheckOp::Conv2d {
                input: Shape::new(1, 2, 7, 6),
                out_channels: 3,
                kernel: 3,
                spec: Conv2dSpec::new(2, 2, 2),
            },
            GradCheckOp::Bilinear {
                input: Shape::new(1, 2, 3, 3),
                out_h: 6,
                out_w: 6,
            },
            GradCheckOp::Bilinear {
                input: Shape::new(1, 2, 8, 8),
                out_h: 2,
                out_w: 2,
            },
            GradCheckOp::Add(s),
            GradCheckOp::Sub(s),
            GradCheckOp::Mul(s),
            GradCheckOp::Sigmoid(s),
            GradCheckOp::Relu(s),
            GradCheckOp::ScaleChannels(s),
            GradCheckOp::Concat(vec![
                Shape::new(2, 1, 3, 3),
                Shape::new(2, 4, 3, 3),
                Shape::new(2, 2, 3, 3),
            ]),
            GradCheckOp::Slice {
                input: s,
                start: 1,
                len: 2,
            },
            GradCheckOp::GlobalAvgPool(s),
            GradCheckOp::Sum(s),
            GradCheckOp::BceWithLogits(Shape::new(1, 1, 4, 4)),
            GradCheckOp::SoftIou(Shape::new(1, 1, 4, 4)),
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            GradCheckOp::Conv2d { .. } => "conv2d",
            GradCheckOp::Bilinear { .. } => "bilinear",
            GradCheckOp::Add(_) => "add",
            GradCheckOp::Sub(_) => "sub",
            GradCheckOp::Mul(_) => "mul",
            GradCheckOp::Sigmoid(_) => "sigmoid",
            GradCheckOp::Relu(_) => "relu",
            GradCheckOp::ScaleChannels(_) => "scale_channels",
            GradCheckOp::Concat(_) => "concat_channels",
            GradCheckOp::Slice { .. } => "slice_channels",
            GradCheckOp::GlobalAvgPool(_) => "global_avg_pool",
            GradCheckOp::Sum(_) => "sum",
            GradCheckOp::BceWithLogits(_) => "bce_with_logits",
            GradCheckOp::SoftIou(_) => "soft_iou_loss",
        }
    }
}

fn uniform(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::random_uniform(shape, -1.0, 1.0, rng)
}

/// Random values bounded away from zero so no element sits on the ReLU kink.
fn away_from_zero(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..shape.numel())
        .map(|_| {
            let mag = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::from_parts(shape, data)
}

fn binary_target(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..shape.numel())
        .map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
        .collect();
    Tensor::from_parts(shape, data)
}

/// Max relative error between analytic and central-difference gradients of
/// `op` on seeded random inputs.
pub fn grad_check(op: &GradCheckOp, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match op.clone() {
        GradCheckOp::Conv2d {
            input,
            out_channels,
            kernel,
            spec,
        } => {
            let inputs = vec![
                uniform(input, &mut rng),
                uniform(Shape::new(out_channels, input.c, kernel, kernel), &mut rng),
                uniform(Shape::new(out_channels, 1, 1, 1), &mut rng),
            ];
            max_relative_error(&inputs, seed, |t, x| t.conv2d(x[0], x[1], Some(x[2]), spec))
        }
        GradCheckOp::Bilinear { input, out_h, out_w } => {
            max_relative_error(&[uniform(input, &mut rng)], seed, |t, x| t.resize(x[0], out_h, out_w))
        }
        GradCheckOp::Add(s) => {
            let inputs = [uniform(s, &mut rng), uniform(s, &mut rng)];
            max_relative_error(&inputs, seed, |t, x| t.add(x[0], x[1]))
        }
        GradCheckOp::Sub(s) => {
            let inputs = [uniform(s, &mut rng), uniform(s, &mut rng)];
            max_relative_error(&inputs, seed, |t, x| t.sub(x[0], x[1]))
        }
        GradCheckOp::Mul(s) => {
            let inputs = [uniform(s, &mut rng), uniform(s, &mut rng)];
            max_relative_error(&inputs, seed, |t, x| t.mul(x[0], x[1]))
        }
        GradCheckOp::Sigmoid(s) => {
            let inputs = [uniform(s, &mut rng).map(|v| 3.0 * v)];
            max_relative_error(&inputs, seed, |t, x| t.sigmoid(x[0]))
        }
        GradCheckOp::Relu(s) => max_relative_error(&[away_from_zero(s, &mut rng)], seed, |t, x| t.relu(x[0])),
        GradCheckOp::ScaleChannels(s) => {
            let inputs = [uniform(s, &mut rng), uniform(Shape::new(s.n, 1, 1, 1), &mut rng)];
            max_relative_error(&inputs, seed, |t, x| t.scale_channels(x[0], x[1]))
        }
        GradCheckOp::Concat(shapes) => {
            let inputs: Vec<Tensor> = shapes.iter().map(|&s| uniform(s, &mut rng)).collect();
            max_relative_error(&inputs, seed, |t, x| t.concat_channels(x))
        }
        GradCheckOp::Slice { input, start, len } => max_relative_error(&[uniform(input, &mut rng)], seed, |t, x| {
            t.slice_channels(x[0], start, len)
        }),
        GradCheckOp::GlobalAvgPool(s) => {
            max_relative_error(&[uniform(s, &mut rng)], seed, |t, x| t.global_avg_pool(x[0]))
        }
        GradCheckOp::Sum(s) => max_relative_error(&[uniform(s, &mut rng)], seed, |t, x| t.sum(x[0])),
        GradCheckOp::BceWithLogits(s) => {
            let target = binary_target(s, &mut rng);
            let inputs = [uniform(s, &mut rng).map(|v| 2.0 * v)];
            max_relative_error(&inputs, seed, move |t, x| t.bce_with_logits(x[0], &target))
        }
        GradCheckOp::SoftIou(s) => {
            let target = binary_target(s, &mut rng);
            let inputs = [uniform(s, &mut rng).map(|v| 2.0 * v)];
            max_relative_error(&inputs, seed, move |t, x| t.soft_iou_loss(x[0], &target, 1.0))
        }
    }
}

/// Compares tape gradients of `sum(R ∘ f(inputs))` against central
/// differences for every input element, where `R` is a seeded random
/// projection. Returns `max |analytic - numeric| / max(1e-8, |numeric|)`.
pub fn max_relative_error<F>(inputs: &[Tensor], seed: u64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let build = |values: &[Tensor]| -> Result<(Tape, Vec<NodeId>, NodeId)> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = values.iter().map(|v| tape.var(v.clone())).collect();
        let out = f(&mut tape, &ids)?;
        Ok((tape, ids, out))
    };

    let (mut tape, ids, out) = build(inputs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_cafe);
    let projection = Tensor::random_uniform(tape.shape(out), -1.0, 1.0, &mut rng);
    let loss = project(&mut tape, out, &projection)?;
    let grads = tape.backward(loss)?;

    let loss_at = |values: &[Tensor]| -> Result<f64> {
        let (mut t, _, o) = build(values)?;
        let l = project(&mut t, o, &projection)?;
        t.value(l).item()
    };

    let mut worst: f64 = 0.0;
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (k, id) in ids.iter().enumerate() {
        let analytic = grads.wrt(*id);
        for i in 0..inputs[k].len() {
            let x = inputs[k].data()[i];
            probe[k] = inputs[k].with_value(i, x + FD_EPS);
            let plus = loss_at(&probe)?;
            probe[k] = inputs[k].with_value(i, x - FD_EPS);
            let minus = loss_at(&probe)?;
            probe[k] = inputs[k].clone();
            let numeric = (plus - minus) / (2.0 * FD_EPS);
            let err = (analytic.data()[i] - numeric).abs() / numeric.abs().max(1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

fn project(tape: &mut Tape, out: NodeId, projection: &Tensor) -> Result<NodeId> {
    let r = tape.constant(projection.clone());
    let weighted = tape.mul(out, r)?;
    tape.sum(weighted)
}
