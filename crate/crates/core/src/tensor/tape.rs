//! Recording tape for reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the node list is always a
//! topological order of the computation graph. `backward` walks it in
//! reverse and asks each recorded [`Op`] for the adjoint of its inputs.

use super::conv::{conv2d_backward, Geometry};
use super::kernels;
use super::resize::{resize_bilinear, resize_bilinear_backward};
use super::{Conv2dSpec, Shape, Tensor};
use crate::error::{Error, Result};

/// Index of a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operator that can be recorded on a tape.
pub trait Op: Send + Sync {
    fn name(&self) -> &'static str;

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;

    /// Adjoints for each input. Entries whose `needs` flag is false may be
    /// returned as `None`.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>>;
}

struct Node {
    value: Tensor,
    inputs: Vec<NodeId>,
    op: Option<Box<dyn Op>>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf whose gradient is tracked (parameters, probed inputs).
    pub fn var(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, true)
    }

    /// Leaf that never receives a gradient (images, targets).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            op: None,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].value.shape()
    }

    /// Evaluates `op` on the given nodes and records the result.
    pub fn apply(&mut self, op: impl Op + 'static, inputs: &[NodeId]) -> Result<NodeId> {
        let value = {
            let values: Vec<&Tensor> = inputs.iter().map(|id| &self.nodes[id.0].value).collect();
            op.forward(&values)?
        };
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|id| self.nodes[id.0].requires_grad);
        self.nodes.push(Node {
            value,
            inputs: inputs.to_vec(),
            op: Some(Box::new(op)),
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Reverse accumulation from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != Shape::scalar() {
            return Err(Error::shape("backward", format!("loss must be 1x1x1x1, got {shape}")));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(op) = &node.op else { continue };
            let Some(grad) = grads[i].take() else { continue };
            let needs: Vec<bool> = node.inputs.iter().map(|id| self.nodes[id.0].requires_grad).collect();
            if needs.iter().any(|&n| n) {
                let inputs: Vec<&Tensor> = node.inputs.iter().map(|id| &self.nodes[id.0].value).collect();
                let adjoints = op.backward(&inputs, &node.value, &grad, &needs)?;
                for ((input, adj), need) in node.inputs.iter().zip(adjoints).zip(&needs) {
                    let (Some(adj), true) = (adj, *need) else { continue };
                    debug_assert_eq!(adj.shape(), self.shape(*input), "{} adjoint shape", op.name());
                    match &mut grads[input.0] {
                        Some(acc) => acc.data_mut().iter_mut().zip(adj.data()).for_each(|(a, b)| *a += b),
                        slot @ None => *slot = Some(adj),
                    }
                }
            }
            grads[i] = Some(grad);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    /// Re-evaluates every recorded op from the stored leaf values.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                None => node.value.clone(),
                Some(op) => {
                    let inputs: Vec<&Tensor> = node.inputs.iter().map(|id| &values[id.0]).collect();
                    op.forward(&inputs)?
                }
            };
            values.push(v);
        }
        Ok(values)
    }

    /// True when [`Tape::replay`] reproduces every node bit-for-bit.
    pub fn replay_matches(&self) -> Result<bool> {
        let replayed = self.replay()?;
        Ok(replayed.iter().zip(&self.nodes).all(|(r, n)| {
            r.shape() == n.value.shape()
                && r.data()
                    .iter()
                    .zip(n.value.data())
                    .all(|(a, b)| a.to_bits() == b.to_bits())
        }))
    }

    // Built-in operators.

    pub fn conv2d(&mut self, x: NodeId, weight: NodeId, bias: Option<NodeId>, spec: Conv2dSpec) -> Result<NodeId> {
        match bias {
            Some(b) => self.apply(Conv2dOp { spec }, &[x, weight, b]),
            None => self.apply(Conv2dOp { spec }, &[x, weight]),
        }
    }

    pub fn resize(&mut self, x: NodeId, out_h: usize, out_w: usize) -> Result<NodeId> {
        if self.shape(x).h == out_h && self.shape(x).w == out_w {
            return Ok(x);
        }
        self.apply(ResizeOp { out_h, out_w }, &[x])
    }

    pub fn upsample(&mut self, x: NodeId, out_h: usize, out_w: usize) -> Result<NodeId> {
        let s = self.shape(x);
        if out_h < s.h || out_w < s.w {
            return Err(Error::invalid(
                "bilinear_upsample",
                format!("cannot downsample {}x{} to {out_h}x{out_w}", s.h, s.w),
            ));
        }
        self.resize(x, out_h, out_w)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(BinaryOp::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(BinaryOp::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(BinaryOp::Mul, &[a, b])
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(SigmoidOp, &[x])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(ReluOp, &[x])
    }

    pub fn scale_channels(&mut self, x: NodeId, gate: NodeId) -> Result<NodeId> {
        self.apply(ScaleChannelsOp, &[x, gate])
    }

    pub fn concat_channels(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        self.apply(ConcatOp, parts)
    }

    pub fn slice_channels(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.apply(SliceOp { start, len }, &[x])
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(GapOp, &[x])
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(SumOp, &[x])
    }

    /// Mean binary cross-entropy between `sigmoid(logits)` and `target`.
    pub fn bce_with_logits(&mut self, logits: NodeId, target: &Tensor) -> Result<NodeId> {
        self.apply(BceWithLogitsOp { target: target.clone() }, &[logits])
    }

    /// `1 - (I + s) / (U + s)` for soft intersection `I` and union `U` of
    /// `sigmoid(logits)` and `target`.
    pub fn soft_iou_loss(&mut self, logits: NodeId, target: &Tensor, smooth: f64) -> Result<NodeId> {
        self.apply(
            SoftIouLossOp {
                target: target.clone(),
                smooth,
            },
            &[logits],
        )
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Shape>,
}

impl Gradients {
    /// Gradient of the loss with respect to `id`; zeros when `id` does not
    /// influence the loss.
    pub fn wrt(&self, id: NodeId) -> Tensor {
        self.grads
            .get(id.0)
            .and_then(|g| g.clone())
            .unwrap_or_else(|| Tensor::zeros(self.shapes[id.0]))
    }

    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

fn expect_inputs(op: &'static str, inputs: &[&Tensor], n: usize) -> Result<()> {
    if inputs.len() != n {
        return Err(Error::invalid(op, format!("expected {n} inputs, got {}", inputs.len())));
    }
    Ok(())
}

struct Conv2dOp {
    spec: Conv2dSpec,
}

impl Op for Conv2dOp {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let bias = inputs.get(2).copied();
        super::conv2d(inputs[0], inputs[1], bias, self.spec)
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let geo = Geometry::new(inputs[0].shape(), inputs[1].shape(), self.spec)?;
        let (dx, dw, db) = conv2d_backward(&geo, inputs[0], inputs[1], grad, needs[0]);
        let mut out = vec![dx, Some(dw)];
        if let Some(b) = inputs.get(2) {
            out.push(Some(db.reshape(b.shape())?));
        }
        Ok(out)
    }
}

struct ResizeOp {
    out_h: usize,
    out_w: usize,
}

impl Op for ResizeOp {
    fn name(&self) -> &'static str {
        "resize_bilinear"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        expect_inputs(self.name(), inputs, 1)?;
        resize_bilinear(inputs[0], self.out_h, self.out_w)
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(resize_bilinear_backward(grad, inputs[0].shape()))])
    }
}

enum BinaryOp {
    Add,
    Sub,
    Mul,
}

impl Op for BinaryOp {
    fn name(&self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
        }
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        expect_inputs(self.name(), inputs, 2)?;
        match self {
            BinaryOp::Add => kernels::add(inputs[0], inputs[1]),
            BinaryOp::Sub => kernels::sub(inputs[0], inputs[1]),
            BinaryOp::Mul => kernels::mul(inputs[0], inputs[1]),
        }
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        Ok(match self {
            BinaryOp::Add => vec![Some(grad.clone()), Some(grad.clone())],
            BinaryOp::Sub => vec![Some(grad.clone()), Some(grad.map(|g| -g))],
            BinaryOp::Mul => vec![
                needs[0].then(|| kernels::mul(grad, inputs[1])).transpose()?,
                needs[1].then(|| kernels::mul(grad, inputs[0])).transpose()?,
            ],
        })
    }
}

struct SigmoidOp;

impl Op for SigmoidOp {
    fn name(&self) -> &'static str {
        "sigmoid"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        expect_inputs(self.name(), inputs, 1)?;
        Ok(kernels::sigmoid(inputs[0]))
    }

    fn backward(&self, _: &[&Tensor], output: &Tensor, grad: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let data = output
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&s, &g)| g * s * (1.0 - s))
            .collect();
        Ok(vec![Some(Tensor::from_parts(output.shape(), data))])
    }
}

struct ReluOp;

impl Op for ReluOp {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        expect_inputs(self.name(), inputs, 1)?;
        Ok(kernels::relu(inputs[0]))
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let data = inputs[0]
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
            .collect();
        Ok(vec![Some(Tensor::from_parts(grad.shape(), data))])
    }
}

struct ScaleChannelsOp;

impl Op for ScaleChannelsOp {
    fn name(&self) -> &'static str {
        "scale_channels"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        expect_inputs(self.name(), inputs, 2)?;
        kernels::scale_channels(inputs[0], inputs[1])
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![
            needs[0].then(|| kernels::scale_channels(grad, inputs[1])).transpose()?,
            needs[1].then(|| kernels::scale_channels_gate_grad(inputs[0], grad)),
        ])
    }
}

struct ConcatOp;

impl Op for ConcatOp {
    fn name(&self) -> &'static str {
        "concat_channels"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        kernels::concat_channels(inputs)
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let mut start = 0;
        let mut out = Vec::with_capacity(inputs.len());
        for (input, &need) in inputs.iter().zip(needs) {
            let c = input.shape().c;
            out.push(need.then(|| kernels::slice_channels(grad, start, c)).transpose()?);
            start += c;
        }
        Ok(out)
    }
}

struct SliceOp {
    start: usize,
    len: usize,
}

impl Op for SliceOp {
    fn name(&self) -> &'static str {
        "slice_channels"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        expect_inputs(self.name(), inputs, 1)?;
        kernels::slice_channels(inputs[0], self.start, self.len)
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(kernels::unslice_channels(
            grad,
            inputs[0].shape(),
            self.start,
        ))])
    }
}

struct GapOp;

impl Op for GapOp {
    fn name(&self) -> &'static str {
        "global_avg_pool"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        expect_inputs(self.name(), inputs, 1)?;
        Ok(kernels::global_avg_pool(inputs[0]))
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(kernels::global_avg_pool_backward(grad, inputs[0].shape()))])
    }
}

struct SumOp;

impl Op for SumOp {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        expect_inputs(self.name(), inputs, 1)?;
        Ok(kernels::sum_all(inputs[0]))
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(Tensor::full(inputs[0].shape(), grad.data()[0]))])
    }
}

fn check_target(op: &'static str, logits: &Tensor, target: &Tensor) -> Result<()> {
    if logits.shape() != target.shape() {
        return Err(Error::shape(
            op,
            format!("logits {} vs target {}", logits.shape(), target.shape()),
        ));
    }
    Ok(())
}

struct BceWithLogitsOp {
    target: Tensor,
}

impl Op for BceWithLogitsOp {
    fn name(&self) -> &'static str {
        "bce_with_logits"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        expect_inputs(self.name(), inputs, 1)?;
        check_target(self.name(), inputs[0], &self.target)?;
        let total: f64 = inputs[0]
            .data()
            .iter()
            .zip(self.target.data())
            .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
            .sum();
        Ok(Tensor::scalar(total / inputs[0].len() as f64))
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let scale = grad.data()[0] / inputs[0].len() as f64;
        let data = inputs[0]
            .data()
            .iter()
            .zip(self.target.data())
            .map(|(&x, &t)| (logistic(x) - t) * scale)
            .collect();
        Ok(vec![Some(Tensor::from_parts(inputs[0].shape(), data))])
    }
}

// Unclamped logistic for the loss terms, where exact saturation is harmless.
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct SoftIouLossOp {
    target: Tensor,
    smooth: f64,
}

impl SoftIouLossOp {
    fn parts(&self, logits: &Tensor) -> (f64, f64) {
        let mut inter = 0.0;
        let mut union = 0.0;
        for (&x, &t) in logits.data().iter().zip(self.target.data()) {
            let p = logistic(x);
            inter += p * t;
            union += p + t - p * t;
        }
        (inter + self.smooth, union + self.smooth)
    }
}

impl Op for SoftIouLossOp {
    fn name(&self) -> &'static str {
        "soft_iou_loss"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        expect_inputs(self.name(), inputs, 1)?;
        check_target(self.name(), inputs[0], &self.target)?;
        let (i, u) = self.parts(inputs[0]);
        Ok(Tensor::scalar(1.0 - i / u))
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let (i, u) = self.parts(inputs[0]);
        let g = grad.data()[0];
        let data = inputs[0]
            .data()
            .iter()
            .zip(self.target.data())
            .map(|(&x, &t)| {
                let p = logistic(x);
                // d(I/U)/dp = (t·U − I·(1 − t)) / U²
                let d_ratio = (t * u - i * (1.0 - t)) / (u * u);
                -g * d_ratio * p * (1.0 - p)
            })
            .collect();
        Ok(vec![Some(Tensor::from_parts(inputs[0].shape(), data))])
    }
}
