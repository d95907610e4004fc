//! Gated encoder-decoder binary segmentation at desk scale.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: dense `(n, c, h, w)` f64 arrays, forward kernels and a
//!   recording tape for reverse-mode gradients.
//! - [`foldconv`]: the 2×2 fold/unfold transform, folded atrous convolution
//!   and the ASPP family built on top of it.
//! - [`gates`]: multi-level gate units producing per-sample scalar pairs.
//! - [`net`]: encoder, transitions, gated dual-branch decoder, the
//!   two-stream variant, loss, Adam and the toy trainer.
//! - [`metrics`]: the ten segmentation metrics, threshold curves and
//!   dataset aggregation.
//! - [`io`]: mask images, the weight container and dataset pairing.

pub mod error;
pub mod foldconv;
pub mod gates;
pub mod image;
pub mod io;
pub mod metrics;
pub mod net;
pub mod params;
pub mod tensor;

pub use error::{Error, Result};
pub use image::{BinaryMask, GrayImage};
pub use metrics::{evaluate_dataset, evaluate_pair, Binarize, DatasetReport, MetricReport};
pub use net::{ModelConfig, ModelParams, Prediction, Preset};
pub use tensor::{NodeId, Shape, Tape, Tensor};
