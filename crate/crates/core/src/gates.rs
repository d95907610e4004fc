//! Gate units.
//!
//! A gate unit turns a context feature and a partner feature into two
//! per-sample scalars: `P(S(Conv(Cat(context, partner))))`, where the
//! convolution has two output channels, `S` is the logistic and `P` global
//! average pooling. The first scalar weights the transition feature on the
//! FPN branch, the second on the parallel branch.
//!
//! v1 units use the level's own encoder feature as context; v2 units share
//! one context built from all five encoder levels.

use crate::error::{Error, Result};
use crate::params::{conv_specs, BoundParams, ParamSet, ParamSpec};
use crate::tensor::{Conv2dSpec, NodeId, Tape, Tensor};
use serde::{Deserialize, Serialize};

/// Number of encoder levels.
pub const LEVELS: usize = 5;

/// Encoder level whose resolution the v2 aggregation uses (1-based).
pub const AGGREGATION_LEVEL: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateVersion {
    None,
    V1,
    V2,
}

/// Per-sample gate values of one level.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelGates {
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
}

/// Gate values recorded during one forward pass. `levels[0]` is level 1.
/// `cross_modal` is filled by the two-stream network with `(g_rgb, g_d)`
/// stored as `(g1, g2)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GateTrace {
    pub levels: Vec<LevelGates>,
    pub cross_modal: Vec<LevelGates>,
}

impl GateTrace {
    /// All recorded scalars, level-gate pairs first.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.levels
            .iter()
            .chain(&self.cross_modal)
            .flat_map(|l| l.g1.iter().chain(&l.g2).copied())
    }
}

pub fn aggregate_name() -> &'static str {
    "gate.aggregate"
}

pub fn level_name(level: usize) -> String {
    format!("gate.level{level}")
}

/// Parameters for the five gate units (and the v2 aggregation conv).
/// `encoder_channels` are the widths of `E^1..E^5`; `width` is the
/// transition/decoder width, which is also the aggregated context width.
pub fn param_specs(version: GateVersion, encoder_channels: &[usize; LEVELS], width: usize) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    match version {
        GateVersion::None => {}
        GateVersion::V1 => {
            for (i, &c) in encoder_channels.iter().enumerate() {
                specs.extend(conv_specs(&level_name(i + 1), 2, c + width, 3));
            }
        }
        GateVersion::V2 => {
            specs.extend(conv_specs(aggregate_name(), width, encoder_channels.iter().sum(), 3));
            for i in 0..LEVELS {
                specs.extend(conv_specs(&level_name(i + 1), 2, 2 * width, 3));
            }
        }
    }
    specs
}

/// `E = Conv(Cat(E^1..E^5))` with every level resized (bilinear) to the
/// level-3 resolution first.
pub fn aggregate_encoder(tape: &mut Tape, encoder: &[NodeId], params: &BoundParams) -> Result<NodeId> {
    if encoder.len() != LEVELS {
        return Err(Error::invalid(
            "aggregate_encoder",
            format!("expected {LEVELS} encoder levels, got {}", encoder.len()),
        ));
    }
    let target = tape.shape(encoder[AGGREGATION_LEVEL - 1]);
    let resized = encoder
        .iter()
        .map(|&e| tape.resize(e, target.h, target.w))
        .collect::<Result<Vec<_>>>()?;
    let cat = tape.concat_channels(&resized)?;
    params.conv(tape, aggregate_name(), cat, Conv2dSpec::same(3))
}

/// The two gate scalars of one unit as `n x 1 x 1 x 1` nodes. The partner is
/// resized to the context's spatial size before concatenation.
pub fn gate_values(
    tape: &mut Tape,
    context: NodeId,
    partner: NodeId,
    params: &BoundParams,
    name: &str,
) -> Result<(NodeId, NodeId)> {
    let cs = tape.shape(context);
    let partner = tape.resize(partner, cs.h, cs.w)?;
    let cat = tape.concat_channels(&[context, partner])?;
    let logits = params.conv(tape, name, cat, Conv2dSpec::same(3))?;
    if tape.shape(logits).c != 2 {
        return Err(Error::shape(
            "gate_values",
            format!(
                "gate conv `{name}` must produce 2 channels, got {}",
                tape.shape(logits).c
            ),
        ));
    }
    let s = tape.sigmoid(logits)?;
    let pooled = tape.global_avg_pool(s)?;
    let g1 = tape.slice_channels(pooled, 0, 1)?;
    let g2 = tape.slice_channels(pooled, 1, 1)?;
    Ok((g1, g2))
}

/// Plain-tensor wrapper around [`gate_values`] returning per-sample values.
pub fn gate_values_tensor(context: &Tensor, partner: &Tensor, params: &ParamSet, name: &str) -> Result<LevelGates> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let c = tape.constant(context.clone());
    let p = tape.constant(partner.clone());
    let (g1, g2) = gate_values(&mut tape, c, p, &bound, name)?;
    Ok(LevelGates {
        g1: tape.value(g1).data().to_vec(),
        g2: tape.value(g2).data().to_vec(),
    })
}

pub fn cross_modal_name(level: usize) -> String {
    format!("cross.level{level}")
}

/// Parameters of the per-level cross-modal fusion units.
pub fn cross_modal_specs(encoder_channels: &[usize; LEVELS]) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    for (i, &c) in encoder_channels.iter().enumerate() {
        let base = cross_modal_name(i + 1);
        specs.extend(conv_specs(&format!("{base}.gate"), 2, 2 * c, 3));
        specs.extend(conv_specs(&format!("{base}.rgb"), c, c, 3));
        specs.extend(conv_specs(&format!("{base}.depth"), c, c, 3));
    }
    specs
}

/// Cross-modal fusion at one level:
/// `(g_rgb, g_d) = gate(E_rgb, E_d)` and
/// `fused = g_rgb · Conv(E_rgb) + g_d · Conv(E_d)`.
pub fn cross_modal_gate(
    tape: &mut Tape,
    rgb: NodeId,
    depth: NodeId,
    params: &BoundParams,
    base: &str,
) -> Result<(NodeId, NodeId, NodeId)> {
    let (rs, ds) = (tape.shape(rgb), tape.shape(depth));
    if rs != ds {
        return Err(Error::shape(
            "cross_modal_gate",
            format!("modal features differ: rgb {rs} vs depth {ds}"),
        ));
    }
    let (g_rgb, g_d) = gate_values(tape, rgb, depth, params, &format!("{base}.gate"))?;
    let r = params.conv(tape, &format!("{base}.rgb"), rgb, Conv2dSpec::same(3))?;
    let d = params.conv(tape, &format!("{base}.depth"), depth, Conv2dSpec::same(3))?;
    let r = tape.scale_channels(r, g_rgb)?;
    let d = tape.scale_channels(d, g_d)?;
    let fused = tape.add(r, d)?;
    Ok((fused, g_rgb, g_d))
}
