//! Mask and image files, weight files and dataset pairing.

mod container;

pub use container::{Entry, EntryData, WeightContainer, CONFIG_ENTRY, DTYPE_BYTES, DTYPE_F64, MAGIC, VERSION};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::net::ModelParams;
use crate::tensor::Tensor;
use image::{DynamicImage, ImageFormat, ImageReader};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// File extensions recognized as masks or images (case-insensitive).
pub const IMAGE_EXTENSIONS: [&str; 4] = ["png", "pgm", "pnm", "ppm"];

fn decode(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    reader.decode().map_err(|e| Error::Image {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

fn to_gray(img: &DynamicImage) -> Result<GrayImage> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma8(g) => g.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect(),
        DynamicImage::ImageLumaA8(g) => g.pixels().map(|p| f64::from(p.0[0]) / 255.0).collect(),
        DynamicImage::ImageLuma16(g) => g.as_raw().iter().map(|&v| f64::from(v) / 65535.0).collect(),
        DynamicImage::ImageLumaA16(g) => g.pixels().map(|p| f64::from(p.0[0]) / 65535.0).collect(),
        DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) => img
            .to_rgb8()
            .pixels()
            .map(|p| luma(f64::from(p.0[0]), f64::from(p.0[1]), f64::from(p.0[2])) / 255.0)
            .collect(),
        _ => img
            .to_rgb16()
            .pixels()
            .map(|p| luma(f64::from(p.0[0]), f64::from(p.0[1]), f64::from(p.0[2])) / 65535.0)
            .collect(),
    };
    // Luma weights sum to 1 up to rounding; keep the result inside [0, 1].
    GrayImage::new(h, w, data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

/// Reads a PNG or PGM (P2/P5) mask; color images are converted by luma.
pub fn load_mask(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    to_gray(&decode(path)?)
}

/// Reads an RGB image as a `1 x 3 x h x w` tensor in `[0, 1]`.
/// Grayscale files are replicated over the three channels.
pub fn load_rgb(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let img = decode(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Tensor::from_fn([1, 3, h, w], |_, c, y, x| {
        f64::from(img.get_pixel(x as u32, y as u32).0[c]) / 255.0
    }))
}

/// Writes an 8-bit mask; the format follows the extension (`.pgm` → binary PGM, otherwise PNG).
pub fn save_mask(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let buf = image::GrayImage::from_raw(w, h, img.to_u8()).expect("buffer matches dims");
    let format = match extension(path).as_deref() {
        Some("pgm" | "pnm") => ImageFormat::Pnm,
        _ => ImageFormat::Png,
    };
    buf.save_with_format(path, format).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

pub fn save_weights(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    WeightContainer::from_model(params)?.save(path)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    WeightContainer::load(path)?.to_model().map_err(|e| match e {
        Error::Container(m) => Error::Container(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn extension(path: &Path) -> Option<String> {
    path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase)
}

fn image_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if !path.is_file() || !extension(&path).is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if let Some(prev) = files.insert(stem.to_string(), path.clone()) {
            return Err(Error::Dataset(format!(
                "two files share the stem `{stem}`: {} and {}",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(files)
}

/// A matched prediction/ground-truth file pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FilePair {
    pub stem: String,
    pub pred: PathBuf,
    pub gt: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pairing {
    /// Sorted by stem.
    pub pairs: Vec<FilePair>,
    /// Stems present in only one of the two directories, sorted.
    pub unmatched: Vec<String>,
}

/// Pairs files of two directories by stem, ignoring extensions.
pub fn pair_dataset(pred_dir: impl AsRef<Path>, gt_dir: impl AsRef<Path>) -> Result<Pairing> {
    let preds = image_files(pred_dir.as_ref())?;
    let mut gts = image_files(gt_dir.as_ref())?;
    let mut pairs = Vec::new();
    let mut unmatched = Vec::new();
    for (stem, pred) in preds {
        match gts.remove(&stem) {
            Some(gt) => pairs.push(FilePair { stem, pred, gt }),
            None => unmatched.push(stem),
        }
    }
    unmatched.extend(gts.into_keys());
    unmatched.sort();
    if pairs.is_empty() {
        return Err(Error::Dataset(format!(
            "no matching file stems between {} and {}",
            pred_dir.as_ref().display(),
            gt_dir.as_ref().display()
        )));
    }
    Ok(Pairing { pairs, unmatched })
}
