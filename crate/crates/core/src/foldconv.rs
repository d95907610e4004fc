//! Fold / unfold, folded atrous convolution and the ASPP family.
//!
//! `fold` moves every 2×2 window into the channel axis: input channel `c`
//! and window position `p` (0 top-left, 1 top-right, 2 bottom-left,
//! 3 bottom-right) land in output channel `4c + p`. Odd heights or widths
//! are zero-padded on the bottom/right first; `unfold` crops them again.
//!
//! A folded atrous convolution is `unfold(conv_dilated(fold(x)))`. Each
//! dilated tap of the folded convolution covers a whole 2×2 block of the
//! original map instead of a single pixel.

use crate::error::{Error, Result};
use crate::params::{conv_specs, BoundParams, ParamSet, ParamSpec};
use crate::tensor::{conv2d, Conv2dSpec, NodeId, Op, Shape, Tape, Tensor};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Folded spatial size for an `h x w` map.
pub fn folded_hw(h: usize, w: usize) -> (usize, usize) {
    (h.div_ceil(2), w.div_ceil(2))
}

/// 2×2 space-to-channel transform. Output is `n x 4c x ceil(h/2) x ceil(w/2)`.
pub fn fold(input: &Tensor) -> Tensor {
    let s = input.shape();
    let (fh, fw) = folded_hw(s.h, s.w);
    let out = Shape::new(s.n, 4 * s.c, fh, fw);
    let mut data = vec![0.0; out.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    let pos = 2 * (y % 2) + x % 2;
                    data[out.index(n, 4 * c + pos, y / 2, x / 2)] = input.get(n, c, y, x);
                }
            }
        }
    }
    Tensor::from_parts(out, data)
}

/// Inverse of [`fold`] for a map whose pre-fold size was `original`.
pub fn unfold(input: &Tensor, original: (usize, usize)) -> Result<Tensor> {
    let s = input.shape();
    if !s.c.is_multiple_of(4) {
        return Err(Error::shape(
            "unfold",
            format!("{} channels is not divisible by 4", s.c),
        ));
    }
    let (h, w) = original;
    if h == 0 || w == 0 || folded_hw(h, w) != (s.h, s.w) {
        return Err(Error::shape(
            "unfold",
            format!("{}x{} folded map cannot unfold to {h}x{w}", s.h, s.w),
        ));
    }
    let out = Shape::new(s.n, s.c / 4, h, w);
    let mut data = Vec::with_capacity(out.numel());
    for n in 0..out.n {
        for c in 0..out.c {
            for y in 0..h {
                for x in 0..w {
                    data.push(input.get(n, 4 * c + 2 * (y % 2) + x % 2, y / 2, x / 2));
                }
            }
        }
    }
    Ok(Tensor::from_parts(out, data))
}

struct FoldOp;

impl Op for FoldOp {
    fn name(&self) -> &'static str {
        "fold"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        Ok(fold(inputs[0]))
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let s = inputs[0].shape();
        Ok(vec![Some(unfold(grad, (s.h, s.w))?)])
    }
}

struct UnfoldOp {
    original: (usize, usize),
}

impl Op for UnfoldOp {
    fn name(&self) -> &'static str {
        "unfold"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        unfold(inputs[0], self.original)
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(fold(grad))])
    }
}

pub fn fold_node(tape: &mut Tape, x: NodeId) -> Result<NodeId> {
    tape.apply(FoldOp, &[x])
}

pub fn unfold_node(tape: &mut Tape, x: NodeId, original: (usize, usize)) -> Result<NodeId> {
    tape.apply(UnfoldOp { original }, &[x])
}

fn check_folded_weight(input: Shape, weight: Shape) -> Result<()> {
    if !weight.n.is_multiple_of(4) {
        return Err(Error::shape(
            "folded_atrous_conv",
            format!("weight has {} output channels, not divisible by 4", weight.n),
        ));
    }
    if weight.c != 4 * input.c {
        return Err(Error::shape(
            "folded_atrous_conv",
            format!(
                "weight expects {} input channels, folded input has {}",
                weight.c,
                4 * input.c
            ),
        ));
    }
    Ok(())
}

fn folded_spec(kernel: usize, rate: usize) -> Conv2dSpec {
    Conv2dSpec::new(1, rate, rate * (kernel / 2))
}

/// `unfold(conv(fold(x), dilation = rate))`; keeps the spatial size and
/// yields `weight.outC / 4` channels.
pub fn folded_atrous_conv(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, rate: usize) -> Result<Tensor> {
    let s = input.shape();
    check_folded_weight(s, weight.shape())?;
    let folded = fold(input);
    let y = conv2d(&folded, weight, bias, folded_spec(weight.shape().h, rate))?;
    unfold(&y, (s.h, s.w))
}

/// Tape version of [`folded_atrous_conv`].
pub fn folded_atrous_conv_node(
    tape: &mut Tape,
    x: NodeId,
    weight: NodeId,
    bias: Option<NodeId>,
    rate: usize,
) -> Result<NodeId> {
    let s = tape.shape(x);
    let ws = tape.shape(weight);
    check_folded_weight(s, ws)?;
    let folded = fold_node(tape, x)?;
    let y = tape.conv2d(folded, weight, bias, folded_spec(ws.h, rate))?;
    unfold_node(tape, y, (s.h, s.w))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvKind {
    PlainAtrous,
    FoldedAtrous,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// Every rate branch reads the module input.
    Parallel,
    /// Rate branch `j` reads the module input concatenated with the outputs
    /// of rate branches `0..j`.
    Dense,
}

/// Multi-rate context module configuration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AsppConfig {
    pub conv_kind: ConvKind,
    pub topology: Topology,
    pub rates: Vec<usize>,
    pub include_pointwise_branch: bool,
    pub include_image_pool_branch: bool,
    pub out_channels: usize,
}

impl Default for AsppConfig {
    fn default() -> Self {
        AsppConfig::fold_aspp()
    }
}

impl AsppConfig {
    fn with(conv_kind: ConvKind, topology: Topology, rates: Vec<usize>, extras: bool) -> Self {
        AsppConfig {
            conv_kind,
            topology,
            rates,
            include_pointwise_branch: extras,
            include_image_pool_branch: extras,
            out_channels: 32,
        }
    }

    /// Single plain atrous convolution, `Atrous(r)`.
    pub fn atrous(rate: usize) -> Self {
        Self::with(ConvKind::PlainAtrous, Topology::Parallel, vec![rate], false)
    }

    /// Single folded atrous convolution, `Fold(r)`.
    pub fn fold(rate: usize) -> Self {
        Self::with(ConvKind::FoldedAtrous, Topology::Parallel, vec![rate], false)
    }

    pub fn aspp() -> Self {
        Self::with(ConvKind::PlainAtrous, Topology::Parallel, vec![2, 4, 6], true)
    }

    pub fn fold_aspp() -> Self {
        Self::with(ConvKind::FoldedAtrous, Topology::Parallel, vec![2, 4, 6], true)
    }

    pub fn dense_aspp() -> Self {
        Self::with(ConvKind::PlainAtrous, Topology::Dense, vec![2, 4, 6], true)
    }

    pub fn fold_dense_aspp() -> Self {
        Self::with(ConvKind::FoldedAtrous, Topology::Dense, vec![2, 4, 6], true)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rates.is_empty() || self.rates.contains(&0) {
            return Err(Error::Config(format!(
                "ASPP rates must be non-empty and >= 1, got {:?}",
                self.rates
            )));
        }
        if self.out_channels == 0 {
            return Err(Error::Config("ASPP out_channels must be >= 1".into()));
        }
        Ok(())
    }

    fn branch_count(&self) -> usize {
        self.rates.len() + usize::from(self.include_pointwise_branch) + usize::from(self.include_image_pool_branch)
    }

    /// Parameters the module needs for an input with `in_channels` channels.
    pub fn param_specs(&self, prefix: &str, in_channels: usize) -> Vec<ParamSpec> {
        let b = self.out_channels;
        let mut specs = Vec::new();
        if self.include_pointwise_branch {
            specs.extend(conv_specs(&format!("{prefix}.pointwise"), b, in_channels, 1));
        }
        for j in 0..self.rates.len() {
            let cin = match self.topology {
                Topology::Parallel => in_channels,
                Topology::Dense => in_channels + j * b,
            };
            let name = format!("{prefix}.rate{j}");
            specs.extend(match self.conv_kind {
                ConvKind::PlainAtrous => conv_specs(&name, b, cin, 3),
                ConvKind::FoldedAtrous => conv_specs(&name, 4 * b, 4 * cin, 3),
            });
        }
        if self.include_image_pool_branch {
            specs.extend(conv_specs(&format!("{prefix}.pool"), b, in_channels, 1));
        }
        specs.extend(conv_specs(
            &format!("{prefix}.fuse"),
            self.out_channels,
            self.branch_count() * b,
            1,
        ));
        specs
    }
}

fn rate_branch(
    tape: &mut Tape,
    params: &BoundParams,
    name: &str,
    kind: ConvKind,
    x: NodeId,
    rate: usize,
) -> Result<NodeId> {
    match kind {
        ConvKind::PlainAtrous => params.conv(tape, name, x, Conv2dSpec::atrous(rate)),
        ConvKind::FoldedAtrous => {
            let w = params.get(&format!("{name}.weight"))?;
            let b = params.get(&format!("{name}.bias"))?;
            folded_atrous_conv_node(tape, x, w, Some(b), rate)
        }
    }
}

/// Runs the configured module on `x`; output has `config.out_channels`
/// channels and the input's spatial size.
pub fn aspp_forward(
    tape: &mut Tape,
    x: NodeId,
    config: &AsppConfig,
    params: &BoundParams,
    prefix: &str,
) -> Result<NodeId> {
    config.validate()?;
    let s = tape.shape(x);
    let mut branches = Vec::with_capacity(config.branch_count());
    if config.include_pointwise_branch {
        branches.push(params.conv(tape, &format!("{prefix}.pointwise"), x, Conv2dSpec::default())?);
    }
    let mut dense_inputs = vec![x];
    for (j, &rate) in config.rates.iter().enumerate() {
        let input = match config.topology {
            Topology::Parallel => x,
            Topology::Dense => tape.concat_channels(&dense_inputs)?,
        };
        let out = rate_branch(
            tape,
            params,
            &format!("{prefix}.rate{j}"),
            config.conv_kind,
            input,
            rate,
        )?;
        dense_inputs.push(out);
        branches.push(out);
    }
    if config.include_image_pool_branch {
        let pooled = tape.global_avg_pool(x)?;
        let projected = params.conv(tape, &format!("{prefix}.pool"), pooled, Conv2dSpec::default())?;
        branches.push(tape.upsample(projected, s.h, s.w)?);
    }
    let cat = tape.concat_channels(&branches)?;
    params.conv(tape, &format!("{prefix}.fuse"), cat, Conv2dSpec::default())
}

/// Convenience wrapper running [`aspp_forward`] on plain tensors.
pub fn aspp_forward_tensor(input: &Tensor, config: &AsppConfig, params: &ParamSet, prefix: &str) -> Result<Tensor> {
    params.validate(&config.param_specs(prefix, input.shape().c))?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let x = tape.constant(input.clone());
    let y = aspp_forward(&mut tape, x, config, &bound, prefix)?;
    Ok(tape.value(y).clone())
}

/// Input positions of a single-channel `grid` map that influence the output
/// at `out_pos`, found by probing the operator with one impulse per input
/// position (all-ones kernel, so contributions never cancel).
pub fn receptive_field(
    kind: ConvKind,
    rate: usize,
    kernel: usize,
    out_pos: (usize, usize),
    grid: (usize, usize),
) -> Result<BTreeSet<(usize, usize)>> {
    let (gh, gw) = grid;
    if out_pos.0 >= gh || out_pos.1 >= gw {
        return Err(Error::invalid(
            "receptive_field",
            format!("{out_pos:?} outside {gh}x{gw} grid"),
        ));
    }
    if kernel.is_multiple_of(2) || rate == 0 {
        return Err(Error::invalid("receptive_field", "kernel must be odd and rate >= 1"));
    }
    let spec = Conv2dSpec::new(1, rate, rate * (kernel / 2));
    let response = |impulse: &Tensor| -> Result<f64> {
        let out = match kind {
            ConvKind::PlainAtrous => conv2d(impulse, &Tensor::ones([1, 1, kernel, kernel]), None, spec)?,
            ConvKind::FoldedAtrous => folded_atrous_conv(impulse, &Tensor::ones([4, 4, kernel, kernel]), None, rate)?,
        };
        Ok(out.get(0, 0, out_pos.0, out_pos.1))
    };
    let mut support = BTreeSet::new();
    for y in 0..gh {
        for x in 0..gw {
            let impulse = Tensor::from_fn(
                [1, 1, gh, gw],
                |_, _, iy, ix| if (iy, ix) == (y, x) { 1.0 } else { 0.0 },
            );
            if response(&impulse)? != 0.0 {
                support.insert((y, x));
            }
        }
    }
    Ok(support)
}
