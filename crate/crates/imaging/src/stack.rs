//! Layered image stacks and the two conversions every metric relies on:
//! bottom-to-top over-compositing and gray-background RGBA flattening.

use crate::bbox::BBox;
use crate::error::{ImagingError, Result};
use crate::image::{RgbImage, RgbaImage};

/// Alpha at or below this is treated as empty when checking that layer
/// content stays inside its bbox; matches the tight-bbox convention and
/// survives 8-bit quantization.
pub const ALPHA_EMPTY: f64 = 1.0 / 255.0;

/// One foreground: a full-frame RGBA canvas (transparent outside `bbox`),
/// its bounding box, and its prompt words.
#[derive(Debug, Clone, PartialEq)]
pub struct ForegroundLayer {
    pub image: RgbaImage,
    pub bbox: BBox,
    pub prompt: Vec<String>,
}

/// Composite image plus its decomposition: background and ordered
/// foregrounds, bottom-to-top.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    pub composite: RgbImage,
    pub background: RgbaImage,
    pub foregrounds: Vec<ForegroundLayer>,
    pub global_prompt: Vec<String>,
}

impl LayerStack {
    pub fn width(&self) -> usize {
        self.composite.width()
    }

    pub fn height(&self) -> usize {
        self.composite.height()
    }

    /// Total layer count including the background.
    pub fn n_layers(&self) -> usize {
        1 + self.foregrounds.len()
    }

    /// Structural checks: matching frame dims everywhere, valid boxes,
    /// and no above-threshold alpha outside any foreground's bbox.
    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.width(), self.height());
        for (context, iw, ih) in [
            ("background", self.background.width(), self.background.height()),
        ] {
            if (iw, ih) != (w, h) {
                return Err(ImagingError::DimensionMismatch {
                    context,
                    expected_w: w,
                    expected_h: h,
                    got_w: iw,
                    got_h: ih,
                });
            }
        }
        for (i, fg) in self.foregrounds.iter().enumerate() {
            if (fg.image.width(), fg.image.height()) != (w, h) {
                return Err(ImagingError::DimensionMismatch {
                    context: "foreground layer",
                    expected_w: w,
                    expected_h: h,
                    got_w: fg.image.width(),
                    got_h: fg.image.height(),
                });
            }
            fg.bbox.validate(w, h)?;
            for y in 0..h {
                for x in 0..w {
                    let a = fg.image.get(3, y, x);
                    if a > ALPHA_EMPTY && !fg.bbox.contains_point(x, y) {
                        return Err(ImagingError::AlphaOutsideBBox {
                            layer: i,
                            x,
                            y,
                            alpha: a,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Flatten a stack: background over opaque black, then each foreground
/// bottom-to-top with the straight-alpha over operator, clamped to [0, 1].
pub fn over_composite(stack: &LayerStack) -> Result<RgbImage> {
    let (w, h) = (stack.width(), stack.height());
    if (stack.background.width(), stack.background.height()) != (w, h) {
        return Err(ImagingError::DimensionMismatch {
            context: "over_composite background",
            expected_w: w,
            expected_h: h,
            got_w: stack.background.width(),
            got_h: stack.background.height(),
        });
    }
    for fg in &stack.foregrounds {
        fg.bbox.validate(w, h)?;
    }
    let mut out = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let a = stack.background.get(3, y, x);
                let mut v = stack.background.get(c, y, x) * a;
                for fg in &stack.foregrounds {
                    let fa = fg.image.get(3, y, x);
                    v = fg.image.get(c, y, x) * fa + v * (1.0 - fa);
                }
                out.set(c, y, x, v.clamp(0.0, 1.0));
            }
        }
    }
    Ok(out)
}

/// Flatten RGBA against a fixed neutral 0.5 gray:
/// out = rgb * alpha + 0.5 * (1 - alpha), per channel.
pub fn rgba_to_rgb(img: &RgbaImage) -> RgbImage {
    let (w, h) = (img.width(), img.height());
    let mut out = RgbImage::new(w, h);
    let n = img.n_pixels();
    let alpha = img.alpha();
    for c in 0..3 {
        let src = img.plane(c);
        for i in 0..n {
            let v = src[i] * alpha[i] + 0.5 * (1.0 - alpha[i]);
            out.data_mut()[c * n + i] = v;
        }
    }
    out
}
