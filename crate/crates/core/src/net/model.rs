use super::{
    decoder_name, encoder_conv_name, transition_name, ModelConfig, ModelParams, Prediction, Stream, ASPP_PREFIX,
    ENCODER_STRIDES, FUSE_NAME,
};
use crate::error::{Error, Result};
use crate::foldconv::aspp_forward;
use crate::gates::{self, GateTrace, GateVersion, LevelGates, LEVELS};
use crate::params::BoundParams;
use crate::tensor::{Conv2dSpec, NodeId, Tape, Tensor};

/// Five encoder levels: conv3×3 → ReLU → conv3×3 (stride 2 from level 2 on) → ReLU.
pub fn encode(tape: &mut Tape, image: NodeId, params: &BoundParams, prefix: &str) -> Result<[NodeId; LEVELS]> {
    let s = tape.shape(image);
    let step = ENCODER_STRIDES[LEVELS - 1];
    if !s.h.is_multiple_of(step) || !s.w.is_multiple_of(step) {
        return Err(Error::shape(
            "encode",
            format!("input {}x{} must have height and width divisible by {step}", s.h, s.w),
        ));
    }
    let mut x = image;
    let mut levels = [image; LEVELS];
    for (i, slot) in levels.iter_mut().enumerate() {
        let level = i + 1;
        let stride = if level == 1 { 1 } else { 2 };
        let h = params.conv(tape, &encoder_conv_name(prefix, level, 1), x, Conv2dSpec::same(3))?;
        let h = tape.relu(h)?;
        let h = params.conv(
            tape,
            &encoder_conv_name(prefix, level, 2),
            h,
            Conv2dSpec::new(stride, 1, 1),
        )?;
        x = tape.relu(h)?;
        *slot = x;
    }
    Ok(levels)
}

/// `T^1..T^4` by 3×3 convolution; `T^5` through the context module when configured.
pub fn transition(
    tape: &mut Tape,
    encoder: &[NodeId; LEVELS],
    params: &BoundParams,
    config: &ModelConfig,
) -> Result<[NodeId; LEVELS]> {
    let mut out = *encoder;
    for (i, slot) in out.iter_mut().enumerate() {
        let level = i + 1;
        *slot = match (&config.aspp, level) {
            (Some(aspp), LEVELS) => aspp_forward(tape, encoder[i], aspp, params, ASPP_PREFIX)?,
            _ => params.conv(tape, &transition_name(level), encoder[i], Conv2dSpec::same(3))?,
        };
    }
    Ok(out)
}

/// How the decoder obtains gate values.
#[derive(Clone, Debug)]
pub enum GateMode {
    /// No gate units: every gate is 1.
    Ungated,
    /// Constant `(g1, g2)` per level (index 0 is level 1), for probing.
    Fixed([(f64, f64); LEVELS]),
    /// Gate units with one context node per level.
    Units([NodeId; LEVELS]),
}

/// Decoder outputs. Index 0 is level 1 throughout.
#[derive(Clone, Debug)]
pub struct Decoded {
    pub levels: [NodeId; LEVELS],
    pub gates: [Option<(NodeId, NodeId)>; LEVELS],
}

/// Gated top-down decoding:
/// `D^5 = Conv(g1^5·T^5)`, `D^i = Conv(g1^i·T^i + Up(D^{i+1}))`.
///
/// Gate units at level `i < 5` read `D^{i+1}` as partner, level 5 reads `T^5`,
/// so gates are evaluated interleaved with decoding.
pub fn fpn_decode(
    tape: &mut Tape,
    transitions: &[NodeId; LEVELS],
    mode: &GateMode,
    params: &BoundParams,
) -> Result<Decoded> {
    let n = tape.shape(transitions[0]).n;
    let mut levels = *transitions;
    let mut gates: [Option<(NodeId, NodeId)>; LEVELS] = [None; LEVELS];
    let mut deeper: Option<NodeId> = None;
    for level in (1..=LEVELS).rev() {
        let i = level - 1;
        let t = transitions[i];
        let pair = match mode {
            GateMode::Ungated => None,
            GateMode::Fixed(values) => {
                let (a, b) = values[i];
                Some((
                    tape.constant(Tensor::full([n, 1, 1, 1], a)),
                    tape.constant(Tensor::full([n, 1, 1, 1], b)),
                ))
            }
            GateMode::Units(contexts) => {
                let partner = deeper.unwrap_or(t);
                Some(gates::gate_values(
                    tape,
                    contexts[i],
                    partner,
                    params,
                    &gates::level_name(level),
                )?)
            }
        };
        gates[i] = pair;
        let mut x = match pair {
            Some((g1, _)) => tape.scale_channels(t, g1)?,
            None => t,
        };
        if let Some(d) = deeper {
            let ts = tape.shape(t);
            let up = tape.upsample(d, ts.h, ts.w)?;
            x = tape.add(x, up)?;
        }
        let d = params.conv(tape, &decoder_name(level), x, Conv2dSpec::same(3))?;
        levels[i] = d;
        deeper = Some(d);
    }
    Ok(Decoded { levels, gates })
}

/// `F_Cat = Cat(D^1, Up(g2^1·T^1), …, Up(g2^5·T^5))`.
pub fn parallel_branch(
    tape: &mut Tape,
    d1: NodeId,
    transitions: &[NodeId; LEVELS],
    gates: &[Option<(NodeId, NodeId)>; LEVELS],
) -> Result<NodeId> {
    let ds = tape.shape(d1);
    let mut parts = vec![d1];
    for (t, pair) in transitions.iter().zip(gates) {
        let gated = match pair {
            Some((_, g2)) => tape.scale_channels(*t, *g2)?,
            None => *t,
        };
        parts.push(tape.upsample(gated, ds.h, ds.w)?);
    }
    tape.concat_channels(&parts)
}

/// Residual fusion: returns `(logits, S^F)` with `logits = Conv(F_Cat) + D^1`.
pub fn fuse_final(tape: &mut Tape, fcat: NodeId, d1: NodeId, params: &BoundParams) -> Result<(NodeId, NodeId)> {
    let conv = params.conv(tape, FUSE_NAME, fcat, Conv2dSpec::same(3))?;
    let logits = tape.add(conv, d1)?;
    let sf = tape.sigmoid(logits)?;
    Ok((logits, sf))
}

/// Every node of interest from one recorded forward pass.
#[derive(Clone, Debug)]
pub struct ForwardNodes {
    pub encoder: [NodeId; LEVELS],
    pub transitions: [NodeId; LEVELS],
    pub decoded: Decoded,
    pub fcat: Option<NodeId>,
    /// `D^1`.
    pub s1_logits: NodeId,
    pub s1: NodeId,
    pub sf_logits: NodeId,
    pub sf: NodeId,
    /// `(g_rgb, g_d)` per level for the two-stream model.
    pub cross_gates: Vec<(NodeId, NodeId)>,
}

impl ForwardNodes {
    pub fn trace(&self, tape: &Tape) -> GateTrace {
        let read = |(a, b): (NodeId, NodeId)| LevelGates {
            g1: tape.value(a).data().to_vec(),
            g2: tape.value(b).data().to_vec(),
        };
        GateTrace {
            levels: self.decoded.gates.iter().flatten().map(|&p| read(p)).collect(),
            cross_modal: self.cross_gates.iter().map(|&p| read(p)).collect(),
        }
    }

    pub fn prediction(&self, tape: &Tape) -> Prediction {
        Prediction {
            s1: tape.value(self.s1).clone(),
            sf: tape.value(self.sf).clone(),
            trace: self.trace(tape),
        }
    }
}

/// Records the full network on `tape`. `depth` must be given exactly when
/// the configuration is two-stream.
pub fn run(
    tape: &mut Tape,
    config: &ModelConfig,
    params: &BoundParams,
    image: NodeId,
    depth: Option<NodeId>,
) -> Result<ForwardNodes> {
    let (encoder, cross_gates) = match (config.stream, depth) {
        (Stream::Single, None) => (encode(tape, image, params, "encoder")?, Vec::new()),
        (Stream::Two, Some(depth)) => {
            let (is, ds) = (tape.shape(image), tape.shape(depth));
            if (is.n, is.h, is.w) != (ds.n, ds.h, ds.w) {
                return Err(Error::shape(
                    "forward_two_stream",
                    format!("rgb {is} and depth {ds} differ in batch or resolution"),
                ));
            }
            let rgb = encode(tape, image, params, "encoder")?;
            let dep = encode(tape, depth, params, "depth_encoder")?;
            let mut fused = rgb;
            let mut cross = Vec::with_capacity(LEVELS);
            for i in 0..LEVELS {
                let (f, g_rgb, g_d) =
                    gates::cross_modal_gate(tape, rgb[i], dep[i], params, &gates::cross_modal_name(i + 1))?;
                fused[i] = f;
                cross.push((g_rgb, g_d));
            }
            (fused, cross)
        }
        (Stream::Single, Some(_)) => {
            return Err(Error::Config("a depth input needs a two-stream configuration".into()))
        }
        (Stream::Two, None) => return Err(Error::Config("the two-stream configuration needs a depth input".into())),
    };

    let transitions = transition(tape, &encoder, params, config)?;
    let mode = match config.gate_version {
        GateVersion::None => GateMode::Ungated,
        GateVersion::V1 => GateMode::Units(encoder),
        GateVersion::V2 => GateMode::Units([gates::aggregate_encoder(tape, &encoder, params)?; LEVELS]),
    };
    let decoded = fpn_decode(tape, &transitions, &mode, params)?;
    let d1 = decoded.levels[0];
    let s1 = tape.sigmoid(d1)?;
    let (fcat, sf_logits, sf) = if config.parallel_branch {
        let fcat = parallel_branch(tape, d1, &transitions, &decoded.gates)?;
        let (logits, sf) = fuse_final(tape, fcat, d1, params)?;
        (Some(fcat), logits, sf)
    } else {
        (None, d1, s1)
    };
    Ok(ForwardNodes {
        encoder,
        transitions,
        decoded,
        fcat,
        s1_logits: d1,
        s1,
        sf_logits,
        sf,
        cross_gates,
    })
}

fn predict(params: &ModelParams, image: &Tensor, depth: Option<&Tensor>) -> Result<Prediction> {
    params.validate()?;
    let mut tape = Tape::new();
    let bound = params.tensors.bind(&mut tape);
    let x = tape.constant(image.clone());
    let d = depth.map(|d| tape.constant(d.clone()));
    let nodes = run(&mut tape, &params.config, &bound, x, d)?;
    Ok(nodes.prediction(&tape))
}

/// Single-stream forward pass on an `n x 3 x h x w` image batch.
pub fn forward(image: &Tensor, params: &ModelParams) -> Result<Prediction> {
    predict(params, image, None)
}

/// Two-stream forward pass on RGB (`n x 3 x h x w`) and depth (`n x 1 x h x w`).
pub fn forward_two_stream(rgb: &Tensor, depth: &Tensor, params: &ModelParams) -> Result<Prediction> {
    predict(params, rgb, Some(depth))
}
