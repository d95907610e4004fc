//! `GNWT` weight container.
//!
//! Layout (all integers little-endian): magic `GNWT`, `u32` version,
//! `u32` entry count, then per entry `u16` name length, UTF-8 name,
//! `u8` dtype, `u8` ndim, `ndim × u32` dims and the payload.
//! dtype 1 is `f64`; dtype 2 is raw bytes (1-D), used for the embedded
//! model configuration.

use crate::error::{Error, Result};
use crate::net::{ModelConfig, ModelParams};
use crate::params::ParamSet;
use crate::tensor::Tensor;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"GNWT";
pub const VERSION: u32 = 1;
pub const DTYPE_F64: u8 = 1;
pub const DTYPE_BYTES: u8 = 2;
/// Name of the JSON model-configuration entry.
pub const CONFIG_ENTRY: &str = "config";

#[derive(Clone, Debug, PartialEq)]
pub enum EntryData {
    F64 { dims: Vec<u32>, values: Vec<f64> },
    Bytes(Vec<u8>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub data: EntryData,
}

/// Ordered list of named entries.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightContainer {
    pub entries: Vec<Entry>,
}

impl WeightContainer {
    pub fn new() -> Self {
        WeightContainer::default()
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, t: &Tensor) {
        self.entries.push(Entry {
            name: name.into(),
            data: EntryData::F64 {
                dims: t.shape().dims().iter().map(|&d| d as u32).collect(),
                values: t.data().to_vec(),
            },
        });
    }

    pub fn push_bytes(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.entries.push(Entry {
            name: name.into(),
            data: EntryData::Bytes(bytes),
        });
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&u32::try_from(self.entries.len()).map_err(too_large)?.to_le_bytes());
        for e in &self.entries {
            let name = e.name.as_bytes();
            out.extend_from_slice(&u16::try_from(name.len()).map_err(too_large)?.to_le_bytes());
            out.extend_from_slice(name);
            match &e.data {
                EntryData::F64 { dims, values } => {
                    let expected: u64 = dims.iter().map(|&d| u64::from(d)).product();
                    if expected != values.len() as u64 {
                        return Err(Error::Container(format!(
                            "entry `{}` has dims {dims:?} but {} values",
                            e.name,
                            values.len()
                        )));
                    }
                    out.push(DTYPE_F64);
                    out.push(u8::try_from(dims.len()).map_err(too_large)?);
                    dims.iter().for_each(|d| out.extend_from_slice(&d.to_le_bytes()));
                    values.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
                }
                EntryData::Bytes(bytes) => {
                    out.push(DTYPE_BYTES);
                    out.push(1);
                    out.extend_from_slice(&u32::try_from(bytes.len()).map_err(too_large)?.to_le_bytes());
                    out.extend_from_slice(bytes);
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Container("bad magic, not a GNWT weight file".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Container(format!("unsupported format version {version}")));
        }
        let count = r.u32("entry count")?;
        let mut entries = Vec::new();
        for _ in 0..count {
            let len = usize::from(r.u16("name length")?);
            let name = std::str::from_utf8(r.take(len, "entry name")?)
                .map_err(|_| Error::Container("entry name is not UTF-8".into()))?
                .to_string();
            let dtype = r.u8("dtype")?;
            let ndim = r.u8("ndim")?;
            let dims = (0..ndim).map(|_| r.u32("dims")).collect::<Result<Vec<u32>>>()?;
            let numel = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
            let numel = numel.ok_or_else(|| Error::Container(format!("entry `{name}` is too large")))?;
            let data = match dtype {
                DTYPE_F64 => {
                    let size = numel
                        .checked_mul(8)
                        .ok_or_else(|| Error::Container(format!("entry `{name}` is too large")))?;
                    let raw = r.take(size, &name)?;
                    let values = raw
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                        .collect();
                    EntryData::F64 { dims, values }
                }
                DTYPE_BYTES => {
                    if ndim != 1 {
                        return Err(Error::Container(format!(
                            "byte entry `{name}` must be 1-D, has {ndim} dims"
                        )));
                    }
                    EntryData::Bytes(r.take(numel, &name)?.to_vec())
                }
                other => {
                    return Err(Error::Container(format!(
                        "unknown dtype code {other} in entry `{name}`"
                    )))
                }
            };
            entries.push(Entry { name, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Container(format!(
                "{} trailing bytes after the last entry",
                bytes.len() - r.pos
            )));
        }
        Ok(WeightContainer { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        WeightContainer::from_bytes(&bytes).map_err(|e| match e {
            Error::Container(msg) => Error::Container(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Every `f64` entry as a 4-D tensor; byte entries are skipped.
    pub fn to_param_set(&self) -> Result<ParamSet> {
        let mut set = ParamSet::new();
        for e in &self.entries {
            if let EntryData::F64 { dims, values } = &e.data {
                let [n, c, h, w] = <[u32; 4]>::try_from(dims.as_slice()).map_err(|_| {
                    Error::Container(format!("parameter `{}` must be 4-D, has {} dims", e.name, dims.len()))
                })?;
                let t = Tensor::new([n as usize, c as usize, h as usize, w as usize], values.clone())?;
                set.insert(e.name.clone(), t);
            }
        }
        Ok(set)
    }

    /// `config` entry first, then every parameter in name order.
    pub fn from_model(params: &ModelParams) -> Result<Self> {
        let mut c = WeightContainer::new();
        let json = serde_json::to_vec(&params.config).map_err(|e| Error::Config(e.to_string()))?;
        c.push_bytes(CONFIG_ENTRY, json);
        for (name, t) in params.tensors.iter() {
            c.push_tensor(name.clone(), t);
        }
        Ok(c)
    }

    pub fn to_model(&self) -> Result<ModelParams> {
        let Some(Entry {
            data: EntryData::Bytes(json),
            ..
        }) = self.get(CONFIG_ENTRY)
        else {
            return Err(Error::Container(format!("missing byte entry `{CONFIG_ENTRY}`")));
        };
        let config: ModelConfig =
            serde_json::from_slice(json).map_err(|e| Error::Config(format!("embedded config: {e}")))?;
        ModelParams::new(config, self.to_param_set()?)
    }
}

fn too_large<E>(_: E) -> Error {
    Error::Container("value does not fit the container's integer field".into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Container(format!(
                    "truncated file: `{what}` needs {n} bytes at offset {}, {} available",
                    self.pos,
                    self.bytes.len() - self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_container_round_trip() {
        let c = WeightContainer::new();
        let bytes = c.to_bytes().unwrap();
        assert_eq!(bytes.len(), 12);
        let back = WeightContainer::from_bytes(&bytes).unwrap();
        assert!(back.to_param_set().unwrap().is_empty());
    }

    #[test]
    fn bit_exact_values() {
        let mut c = WeightContainer::new();
        let t = Tensor::new([1, 1, 2, 2], vec![-0.0, f64::MIN_POSITIVE, 1.0 / 3.0, -1e300]).unwrap();
        c.push_tensor("w", &t);
        c.push_bytes("blob", b"{}".to_vec());
        let back = WeightContainer::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
        let EntryData::F64 { values, .. } = &back.entries[0].data else {
            panic!()
        };
        assert_eq!(values[0].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn rejects_corruption() {
        let mut c = WeightContainer::new();
        c.push_tensor("w", &Tensor::ones([1, 1, 1, 2]));
        let bytes = c.to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(WeightContainer::from_bytes(&bad), Err(Error::Container(m)) if m.contains("magic")));
        let name_end = 12 + 2 + 1;
        let mut bad = bytes.clone();
        bad[name_end] = 9;
        assert!(matches!(WeightContainer::from_bytes(&bad), Err(Error::Container(m)) if m.contains("dtype code 9")));
        let err = WeightContainer::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }
}
