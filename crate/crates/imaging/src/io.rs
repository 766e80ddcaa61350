//! Stack persistence: 8-bit PNGs plus a JSON manifest per stack, and a
//! dataset index listing many manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::error::{ImagingError, Result};
use crate::image::{dequantize_unit, quantize_unit, RgbImage, RgbaImage};
use crate::stack::{ForegroundLayer, LayerStack};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.json";
pub const INDEX_NAME: &str = "index.json";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    /// [height, width] in pixels.
    frame: [usize; 2],
    composite: String,
    background: String,
    layers: Vec<ManifestLayer>,
    global_prompt: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestLayer {
    path: String,
    /// [x_l, y_l, x_r, y_r].
    bbox: [usize; 4],
    prompt: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Index {
    format_version: u32,
    /// Manifest paths relative to the index directory.
    stacks: Vec<String>,
}

fn manifest_error(path: &Path, reason: impl Into<String>) -> ImagingError {
    ImagingError::Manifest {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn write_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    let (w, h) = (img.width(), img.height());
    let mut bytes = Vec::with_capacity(3 * w * h);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                bytes.push(quantize_unit(img.get(c, y, x)));
            }
        }
    }
    let buf: image::RgbImage =
        image::ImageBuffer::from_raw(w as u32, h as u32, bytes).expect("sized buffer");
    buf.save(path).map_err(|source| ImagingError::Png {
        path: path.to_path_buf(),
        source,
    })
}

fn write_rgba_png(path: &Path, img: &RgbaImage) -> Result<()> {
    let (w, h) = (img.width(), img.height());
    let mut bytes = Vec::with_capacity(4 * w * h);
    for y in 0..h {
        for x in 0..w {
            for c in 0..4 {
                bytes.push(quantize_unit(img.get(c, y, x)));
            }
        }
    }
    let buf: image::RgbaImage =
        image::ImageBuffer::from_raw(w as u32, h as u32, bytes).expect("sized buffer");
    buf.save(path).map_err(|source| ImagingError::Png {
        path: path.to_path_buf(),
        source,
    })
}

fn read_png(path: &Path) -> Result<image::DynamicImage> {
    if !path.exists() {
        return Err(ImagingError::MissingFile {
            path: path.to_path_buf(),
        });
    }
    image::open(path).map_err(|source| ImagingError::Png {
        path: path.to_path_buf(),
        source,
    })
}

fn read_rgb_png(path: &Path, w: usize, h: usize) -> Result<RgbImage> {
    let img = read_png(path)?.to_rgb8();
    if (img.width() as usize, img.height() as usize) != (w, h) {
        return Err(ImagingError::DimensionMismatch {
            context: "rgb png",
            expected_w: w,
            expected_h: h,
            got_w: img.width() as usize,
            got_h: img.height() as usize,
        });
    }
    let mut out = RgbImage::new(w, h);
    for (x, y, pixel) in img.enumerate_pixels() {
        for c in 0..3 {
            out.set(c, y as usize, x as usize, dequantize_unit(pixel.0[c]));
        }
    }
    Ok(out)
}

fn read_rgba_png(path: &Path, w: usize, h: usize) -> Result<RgbaImage> {
    let img = read_png(path)?.to_rgba8();
    if (img.width() as usize, img.height() as usize) != (w, h) {
        return Err(ImagingError::DimensionMismatch {
            context: "rgba png",
            expected_w: w,
            expected_h: h,
            got_w: img.width() as usize,
            got_h: img.height() as usize,
        });
    }
    let mut out = RgbaImage::new(w, h);
    for (x, y, pixel) in img.enumerate_pixels() {
        for c in 0..4 {
            out.set(c, y as usize, x as usize, dequantize_unit(pixel.0[c]));
        }
    }
    Ok(out)
}

/// Write a single RGB image as an 8-bit PNG.
pub fn save_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    write_rgb_png(path, img)
}

/// Write a single RGBA image as an 8-bit PNG.
pub fn save_rgba_png(path: &Path, img: &RgbaImage) -> Result<()> {
    write_rgba_png(path, img)
}

/// Read a standalone PNG as RGB at whatever size the file carries.
pub fn load_rgb_png(path: &Path) -> Result<RgbImage> {
    let img = read_png(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = RgbImage::new(w, h);
    for (x, y, pixel) in img.enumerate_pixels() {
        for c in 0..3 {
            out.set(c, y as usize, x as usize, dequantize_unit(pixel.0[c]));
        }
    }
    Ok(out)
}

/// Write composite/background/layer PNGs plus `manifest.json` into `dir`;
/// returns the manifest path.
pub fn save_stack(stack: &LayerStack, dir: &Path) -> Result<PathBuf> {
    stack.validate()?;
    fs::create_dir_all(dir)?;
    write_rgb_png(&dir.join("composite.png"), &stack.composite)?;
    write_rgba_png(&dir.join("background.png"), &stack.background)?;
    let mut layers = Vec::with_capacity(stack.foregrounds.len());
    for (i, fg) in stack.foregrounds.iter().enumerate() {
        let name = format!("layer_{i:02}.png");
        write_rgba_png(&dir.join(&name), &fg.image)?;
        layers.push(ManifestLayer {
            path: name,
            bbox: fg.bbox.as_array(),
            prompt: fg.prompt.clone(),
        });
    }
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        frame: [stack.height(), stack.width()],
        composite: "composite.png".to_string(),
        background: "background.png".to_string(),
        layers,
        global_prompt: stack.global_prompt.clone(),
    };
    let path = dir.join(MANIFEST_NAME);
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| manifest_error(&path, format!("encode failed: {e}")))?;
    fs::write(&path, json + "\n")?;
    Ok(path)
}

/// Load a stack from its manifest, validating boxes, dimensions, and the
/// alpha-inside-bbox invariant.
pub fn load_stack(manifest_path: &Path) -> Result<LayerStack> {
    if !manifest_path.exists() {
        return Err(ImagingError::MissingFile {
            path: manifest_path.to_path_buf(),
        });
    }
    let text = fs::read_to_string(manifest_path)?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| manifest_error(manifest_path, format!("malformed JSON: {e}")))?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(manifest_error(
            manifest_path,
            format!(
                "unsupported format_version {} (expected {MANIFEST_VERSION})",
                manifest.format_version
            ),
        ));
    }
    let [h, w] = manifest.frame;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let composite = read_rgb_png(&dir.join(&manifest.composite), w, h)?;
    let background = read_rgba_png(&dir.join(&manifest.background), w, h)?;
    let mut foregrounds = Vec::with_capacity(manifest.layers.len());
    for layer in &manifest.layers {
        let [x_l, y_l, x_r, y_r] = layer.bbox;
        let bbox = BBox::new(x_l, y_l, x_r, y_r);
        bbox.validate(w, h)?;
        foregrounds.push(ForegroundLayer {
            image: read_rgba_png(&dir.join(&layer.path), w, h)?,
            bbox,
            prompt: layer.prompt.clone(),
        });
    }
    let stack = LayerStack {
        composite,
        background,
        foregrounds,
        global_prompt: manifest.global_prompt,
    };
    stack.validate()?;
    Ok(stack)
}

/// Write `index.json` listing manifest paths relative to `dir`.
pub fn write_index(dir: &Path, manifests: &[PathBuf]) -> Result<PathBuf> {
    let stacks = manifests
        .iter()
        .map(|p| {
            p.strip_prefix(dir)
                .unwrap_or(p)
                .to_string_lossy()
                .replace('\\', "/")
        })
        .collect();
    let index = Index {
        format_version: MANIFEST_VERSION,
        stacks,
    };
    let path = dir.join(INDEX_NAME);
    let json = serde_json::to_string_pretty(&index)
        .map_err(|e| manifest_error(&path, format!("encode failed: {e}")))?;
    fs::write(&path, json + "\n")?;
    Ok(path)
}

/// Manifest paths from a dataset directory's `index.json`.
pub fn read_index(dir: &Path) -> Result<Vec<PathBuf>> {
    let path = dir.join(INDEX_NAME);
    if !path.exists() {
        return Err(ImagingError::MissingFile { path });
    }
    let text = fs::read_to_string(&path)?;
    let index: Index = serde_json::from_str(&text)
        .map_err(|e| manifest_error(&path, format!("malformed JSON: {e}")))?;
    if index.format_version != MANIFEST_VERSION {
        return Err(manifest_error(
            &path,
            format!("unsupported format_version {}", index.format_version),
        ));
    }
    Ok(index.stacks.iter().map(|s| dir.join(s)).collect())
}

/// Load every stack named by a dataset directory's index, in index order.
pub fn load_dataset(dir: &Path) -> Result<Vec<LayerStack>> {
    read_index(dir)?
        .iter()
        .map(|manifest| load_stack(manifest))
        .collect()
}
