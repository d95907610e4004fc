use super::{run, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::{NodeId, Tape, Tensor};
use std::collections::BTreeMap;

/// Smoothing constant of the soft-IoU term.
pub const IOU_SMOOTH: f64 = 1.0;

fn check_target(logits: &Tensor, gt: &Tensor) -> Result<()> {
    if logits.shape() != gt.shape() {
        return Err(Error::shape(
            "loss",
            format!("logits {} and ground truth {} differ", logits.shape(), gt.shape()),
        ));
    }
    if let Some(v) = gt.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid("loss", format!("ground truth value {v} outside [0, 1]")));
    }
    Ok(())
}

fn term(tape: &mut Tape, logits: NodeId, gt: &Tensor) -> Result<NodeId> {
    check_target(tape.value(logits), gt)?;
    let bce = tape.bce_with_logits(logits, gt)?;
    let iou = tape.soft_iou_loss(logits, gt, IOU_SMOOTH)?;
    tape.add(bce, iou)
}

/// Two-term supervision on the FPN output and the final output; each term is
/// mean BCE plus soft-IoU loss.
pub fn loss(tape: &mut Tape, s1_logits: NodeId, sf_logits: NodeId, gt: &Tensor) -> Result<NodeId> {
    let a = term(tape, s1_logits, gt)?;
    let b = term(tape, sf_logits, gt)?;
    tape.add(a, b)
}

/// [`loss`] evaluated on plain tensors.
pub fn loss_value(s1_logits: &Tensor, sf_logits: &Tensor, gt: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.constant(s1_logits.clone());
    let b = tape.constant(sf_logits.clone());
    let l = loss(&mut tape, a, b, gt)?;
    tape.value(l).item()
}

/// Training inputs: `images` n×3×h×w, optional `depth` n×1×h×w, `masks` n×1×h×w.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub images: Tensor,
    pub depth: Option<Tensor>,
    pub masks: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub params: ModelParams,
    pub state: AdamState,
    /// Loss before the update.
    pub loss: f64,
    /// L2 norm of each parameter's gradient.
    pub grad_norms: BTreeMap<String, f64>,
}

/// One forward, backward and Adam update.
pub fn train_step(params: &ModelParams, batch: &Batch, state: &AdamState, adam: &AdamConfig) -> Result<StepOutcome> {
    params.validate()?;
    let mut tape = Tape::new();
    let bound = params.tensors.bind(&mut tape);
    let x = tape.constant(batch.images.clone());
    let d = batch.depth.as_ref().map(|d| tape.constant(d.clone()));
    let nodes = run(&mut tape, &params.config, &bound, x, d)?;
    let l = loss(&mut tape, nodes.s1_logits, nodes.sf_logits, &batch.masks)?;
    let loss_value = tape.value(l).item()?;
    if !loss_value.is_finite() {
        return Err(Error::NonFinite { op: "loss" });
    }
    let grads = tape.backward(l)?;

    let mut next = params.clone();
    let mut state = state.clone();
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - adam.beta1.powi(t);
    let c2 = 1.0 - adam.beta2.powi(t);
    let mut grad_norms = BTreeMap::new();
    for (name, &id) in bound.iter() {
        let g = grads.wrt(id);
        grad_norms.insert(name.clone(), g.l2_norm());
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let p = next.tensors.get_mut(name)?.data_mut();
        for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
            *m = adam.beta1 * *m + (1.0 - adam.beta1) * g;
            *v = adam.beta2 * *v + (1.0 - adam.beta2) * g * g;
            *p -= adam.lr * (*m / c1) / ((*v / c2).sqrt() + adam.eps);
        }
    }
    if next.tensors.iter().any(|(_, t)| !t.is_finite()) {
        return Err(Error::NonFinite { op: "adam update" });
    }
    Ok(StepOutcome {
        params: next,
        state,
        loss: loss_value,
        grad_norms,
    })
}
