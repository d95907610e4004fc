//! Named parameter tensors and their binding onto a tape.

use crate::error::{Error, Result};
use crate::tensor::{NodeId, Shape, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Convolution kernel `out x in x k x k`, Glorot-uniform initialized.
    Weight,
    /// Per-output-channel offset stored as `out x 1 x 1 x 1`, zero initialized.
    Bias,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Shape,
    pub kind: ParamKind,
}

/// Weight and bias specs for one convolution named `prefix`.
pub fn conv_specs(prefix: &str, out_c: usize, in_c: usize, k: usize) -> [ParamSpec; 2] {
    [
        ParamSpec {
            name: format!("{prefix}.weight"),
            shape: Shape::new(out_c, in_c, k, k),
            kind: ParamKind::Weight,
        },
        ParamSpec {
            name: format!("{prefix}.bias"),
            shape: Shape::new(out_c, 1, 1, 1),
            kind: ParamKind::Bias,
        },
    ]
}

/// Name-ordered collection of parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    /// Seeded initialization: weights uniform in `[-a, a]` with
    /// `a = sqrt(6 / (fan_in + fan_out))`, biases zero. Values are drawn in
    /// name order from a single stream.
    pub fn init(specs: &[ParamSpec], seed: u64) -> Self {
        let mut sorted: Vec<&ParamSpec> = specs.iter().collect();
        sorted.sort_by(|a, b| a.name.cmp(&b.name));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for spec in sorted {
            let t = match spec.kind {
                ParamKind::Bias => Tensor::zeros(spec.shape),
                ParamKind::Weight => {
                    let s = spec.shape;
                    let fan_in = s.c * s.h * s.w;
                    let fan_out = s.n * s.h * s.w;
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    Tensor::random_uniform(s, -a, a, &mut rng)
                }
            };
            tensors.insert(spec.name.clone(), t);
        }
        ParamSet { tensors }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Option<Tensor> {
        self.tensors.insert(name.into(), value)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Checks that every spec is present with its shape.
    pub fn validate(&self, specs: &[ParamSpec]) -> Result<()> {
        for spec in specs {
            let t = self.get(&spec.name)?;
            if t.shape() != spec.shape {
                return Err(Error::ParamShape {
                    name: spec.name.clone(),
                    expected: spec.shape.dims().to_vec(),
                    found: t.shape().dims().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Registers every tensor as a gradient-tracked leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let ids = self
            .tensors
            .iter()
            .map(|(name, t)| (name.clone(), tape.var(t.clone())))
            .collect();
        BoundParams { ids }
    }
}

impl FromIterator<(String, Tensor)> for ParamSet {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        ParamSet {
            tensors: iter.into_iter().collect(),
        }
    }
}

/// Parameter name → tape node.
#[derive(Clone, Debug, Default)]
pub struct BoundParams {
    ids: BTreeMap<String, NodeId>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<NodeId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &NodeId)> {
        self.ids.iter()
    }

    /// Convolution `{prefix}.weight` / `{prefix}.bias` on the tape.
    pub fn conv(&self, tape: &mut Tape, prefix: &str, x: NodeId, spec: crate::tensor::Conv2dSpec) -> Result<NodeId> {
        let w = self.get(&format!("{prefix}.weight"))?;
        let b = self.get(&format!("{prefix}.bias"))?;
        tape.conv2d(x, w, Some(b), spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_bounded() {
        let specs: Vec<ParamSpec> = conv_specs("a", 4, 3, 3)
            .into_iter()
            .chain(conv_specs("b", 2, 4, 1))
            .collect();
        let p = ParamSet::init(&specs, 7);
        assert_eq!(p, ParamSet::init(&specs, 7));
        assert_ne!(p, ParamSet::init(&specs, 8));
        let bound = (6.0f64 / (27 + 36) as f64).sqrt();
        assert!(p.get("a.weight").unwrap().data().iter().all(|v| v.abs() <= bound));
        assert!(p.get("a.bias").unwrap().data().iter().all(|&v| v == 0.0));
        p.validate(&specs).unwrap();
    }

    #[test]
    fn validate_reports_missing_and_misshapen() {
        let specs = conv_specs("a", 4, 3, 3);
        let mut p = ParamSet::new();
        assert!(matches!(p.validate(&specs), Err(Error::MissingParam(_))));
        p.insert("a.weight", Tensor::zeros([4, 3, 1, 1]));
        p.insert("a.bias", Tensor::zeros([4, 1, 1, 1]));
        assert!(matches!(p.validate(&specs), Err(Error::ParamShape { .. })));
    }
}
