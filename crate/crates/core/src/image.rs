//! Single-channel maps used by the metrics and the file I/O.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Grayscale map with values in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::invalid("GrayImage", format!("empty image {h}x{w}")));
        }
        if data.len() != h * w {
            return Err(Error::shape(
                "GrayImage",
                format!("{h}x{w} image needs {} values, got {}", h * w, data.len()),
            ));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid("GrayImage", format!("value {v} outside [0, 1]")));
        }
        Ok(GrayImage { h, w, data })
    }

    /// Builds from `f(y, x)`, clamping into `[0, 1]`.
    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(f(y, x).clamp(0.0, 1.0));
            }
        }
        GrayImage { h, w, data }
    }

    pub fn filled(h: usize, w: usize, value: f64) -> Self {
        GrayImage::from_fn(h, w, |_, _| value)
    }

    /// 8-bit samples divided by 255.
    pub fn from_u8(h: usize, w: usize, bytes: &[u8]) -> Result<Self> {
        GrayImage::new(h, w, bytes.iter().map(|&b| f64::from(b) / 255.0).collect())
    }

    /// Rounds to the nearest 8-bit level.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v * 255.0).round() as u8).collect()
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// `value >= threshold`.
    pub fn binarize(&self, threshold: f64) -> BinaryMask {
        BinaryMask {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| v >= threshold).collect(),
        }
    }

    /// Ground-truth reading: `value >= 0.5` is foreground.
    pub fn to_mask(&self) -> BinaryMask {
        self.binarize(0.5)
    }

    pub fn complement(&self) -> GrayImage {
        GrayImage {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|v| 1.0 - v).collect(),
        }
    }

    /// `1 x 1 x h x w` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts([1, 1, self.h, self.w].into(), self.data.clone())
    }

    /// Reads a single-channel plane `n`, `c` of a tensor, clamping into `[0, 1]`.
    pub fn from_tensor_plane(t: &Tensor, n: usize, c: usize) -> Self {
        let s = t.shape();
        GrayImage::from_fn(s.h, s.w, |y, x| t.get(n, c, y, x))
    }

    pub fn same_dims(&self, other: &GrayImage) -> bool {
        self.h == other.h && self.w == other.w
    }
}

/// Binary map, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    h: usize,
    w: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(h: usize, w: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::shape(
                "BinaryMask",
                format!("{h}x{w} mask needs {} values, got {}", h * w, data.len()),
            ));
        }
        Ok(BinaryMask { h, w, data })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn not(&self) -> BinaryMask {
        BinaryMask {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|b| !b).collect(),
        }
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&b| f64::from(u8::from(b))).collect(),
        }
    }
}
