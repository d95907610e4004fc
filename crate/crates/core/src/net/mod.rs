//! The gated encoder-decoder network.
//!
//! Pipeline: encoder (`E^1..E^5`) → transitions (`T^1..T^5`, 32 channels,
//! `T^5` optionally through a context module) → gated FPN branch
//! (`D^5..D^1`) → optional parallel branch and residual fusion (`S^F`).
//! The two-stream variant fuses an RGB and a depth encoder level by level
//! with cross-modal gate units before the shared decoder.

mod model;
mod toy;
mod train;

pub use model::{
    encode, forward, forward_two_stream, fpn_decode, fuse_final, parallel_branch, run, transition, Decoded,
    ForwardNodes, GateMode,
};
pub use toy::{train_toy, ToyDataset, TrainReport};
pub use train::{loss, loss_value, train_step, AdamConfig, AdamState, Batch, StepOutcome};

use crate::error::{Error, Result};
use crate::foldconv::AsppConfig;
use crate::gates::{self, GateTrace, GateVersion, LEVELS};
use crate::params::{conv_specs, ParamSet, ParamSpec};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Downsampling factor of each encoder level relative to the input.
pub const ENCODER_STRIDES: [usize; LEVELS] = [1, 2, 4, 8, 16];

/// Width of transitions and decoder levels 5..2.
pub const TRANSITION_CHANNELS: usize = 32;

/// Parameter prefix of the context module on `E^5`.
pub const ASPP_PREFIX: &str = "aspp";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Single,
    Two,
}

/// Network topology.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub stream: Stream,
    pub encoder_channels: [usize; LEVELS],
    pub transition_channels: usize,
    pub gate_version: GateVersion,
    pub parallel_branch: bool,
    pub aspp: Option<AsppConfig>,
    pub input_size: (usize, usize),
}

/// Named configurations: the M1..M5 ablation ladder plus the two-stream model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// FPN baseline.
    M1,
    /// + parallel branch.
    M2,
    /// + v1 gate units.
    M3,
    /// v1 → v2 gate units.
    M4,
    /// + Fold-ASPP on `E^5`.
    M5,
    /// M5 with an extra depth encoder and cross-modal gates.
    TwoStream,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::M1,
        Preset::M2,
        Preset::M3,
        Preset::M4,
        Preset::M5,
        Preset::TwoStream,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::M1 => "m1",
            Preset::M2 => "m2",
            Preset::M3 => "m3",
            Preset::M4 => "m4",
            Preset::M5 => "m5",
            Preset::TwoStream => "two-stream",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown preset `{s}` (expected m1..m5 or two-stream)")))
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::preset(Preset::M5)
    }
}

impl ModelConfig {
    pub fn preset(preset: Preset) -> Self {
        let mut cfg = ModelConfig {
            stream: Stream::Single,
            encoder_channels: [16, 24, 32, 48, 64],
            transition_channels: TRANSITION_CHANNELS,
            gate_version: GateVersion::None,
            parallel_branch: false,
            aspp: None,
            input_size: (352, 352),
        };
        if preset == Preset::M1 {
            return cfg;
        }
        cfg.parallel_branch = true;
        match preset {
            Preset::M2 => {}
            Preset::M3 => cfg.gate_version = GateVersion::V1,
            Preset::M4 => cfg.gate_version = GateVersion::V2,
            Preset::M5 | Preset::TwoStream => {
                cfg.gate_version = GateVersion::V2;
                cfg.aspp = Some(AsppConfig::fold_aspp());
                if preset == Preset::TwoStream {
                    cfg.stream = Stream::Two;
                }
            }
            Preset::M1 => unreachable!(),
        }
        cfg
    }

    pub fn with_input_size(mut self, h: usize, w: usize) -> Self {
        self.input_size = (h, w);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_channels.contains(&0) || self.transition_channels == 0 {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        let (h, w) = self.input_size;
        let step = ENCODER_STRIDES[LEVELS - 1];
        if h == 0 || w == 0 || h % step != 0 || w % step != 0 {
            return Err(Error::Config(format!(
                "input size {h}x{w} must be a positive multiple of {step}"
            )));
        }
        if let Some(aspp) = &self.aspp {
            aspp.validate()?;
            if aspp.out_channels != self.transition_channels {
                return Err(Error::Config(format!(
                    "context module width {} must equal the transition width {}",
                    aspp.out_channels, self.transition_channels
                )));
            }
        }
        Ok(())
    }

    /// Channels of the parallel-branch concatenation: `D^1` plus five gated transitions.
    pub fn fcat_channels(&self) -> usize {
        1 + LEVELS * self.transition_channels
    }

    /// Every parameter the configuration needs, with shapes.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let width = self.transition_channels;
        let mut specs = encoder_specs("encoder", 3, &self.encoder_channels);
        for (i, &c) in self.encoder_channels.iter().enumerate() {
            let level = i + 1;
            match (&self.aspp, level) {
                (Some(aspp), LEVELS) => specs.extend(aspp.param_specs(ASPP_PREFIX, c)),
                _ => specs.extend(conv_specs(&transition_name(level), width, c, 3)),
            }
        }
        specs.extend(gates::param_specs(self.gate_version, &self.encoder_channels, width));
        for level in 1..=LEVELS {
            let out = if level == 1 { 1 } else { width };
            specs.extend(conv_specs(&decoder_name(level), out, width, 3));
        }
        if self.parallel_branch {
            specs.extend(conv_specs(FUSE_NAME, 1, self.fcat_channels(), 3));
        }
        if self.stream == Stream::Two {
            specs.extend(encoder_specs("depth_encoder", 1, &self.encoder_channels));
            specs.extend(gates::cross_modal_specs(&self.encoder_channels));
        }
        specs
    }
}

pub(crate) const FUSE_NAME: &str = "fuse";

pub(crate) fn transition_name(level: usize) -> String {
    format!("transition.level{level}")
}

pub(crate) fn decoder_name(level: usize) -> String {
    format!("decoder.level{level}")
}

pub(crate) fn encoder_conv_name(prefix: &str, level: usize, conv: usize) -> String {
    format!("{prefix}.level{level}.conv{conv}")
}

fn encoder_specs(prefix: &str, in_channels: usize, channels: &[usize; LEVELS]) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    let mut cin = in_channels;
    for (i, &c) in channels.iter().enumerate() {
        specs.extend(conv_specs(&encoder_conv_name(prefix, i + 1, 1), c, cin, 3));
        specs.extend(conv_specs(&encoder_conv_name(prefix, i + 1, 2), c, c, 3));
        cin = c;
    }
    specs
}

/// A configuration together with its parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tensors: ParamSet,
}

impl ModelParams {
    /// Seeded Glorot-uniform weights and zero biases.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let tensors = ParamSet::init(&config.param_specs(), seed);
        Ok(ModelParams { config, tensors })
    }

    /// Wraps existing tensors, checking names and shapes against the config.
    pub fn new(config: ModelConfig, tensors: ParamSet) -> Result<Self> {
        config.validate()?;
        let p = ModelParams { config, tensors };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.tensors.validate(&self.config.param_specs())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name)
    }

    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self.tensors.get_mut(name)?;
        if slot.shape() != value.shape() {
            return Err(Error::ParamShape {
                name: name.to_string(),
                expected: slot.shape().dims().to_vec(),
                found: value.shape().dims().to_vec(),
            });
        }
        *slot = value;
        Ok(())
    }

    /// Names of every gate-unit convolution parameter.
    pub fn gate_param_names(&self) -> Vec<String> {
        self.tensors
            .names()
            .filter(|n| n.starts_with("gate.") || (n.starts_with("cross.") && n.contains(".gate.")))
            .cloned()
            .collect()
    }
}

/// Output of a forward pass.
#[derive(Clone, Debug)]
pub struct Prediction {
    /// `sigmoid(D^1)`, the FPN-branch prediction.
    pub s1: Tensor,
    /// Final prediction `S^F` (equal to `s1` without a parallel branch).
    pub sf: Tensor,
    pub trace: GateTrace,
}
