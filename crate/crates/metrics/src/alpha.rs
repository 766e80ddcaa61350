//! Alpha-channel agreement metrics and the combined layer score.

use layerflow_imaging::{rgba_to_rgb, RgbaImage};

use crate::error::{MetricsError, Result};
use crate::pixel::rgb_l1;

/// Opacity above which a pixel counts as covered when binarizing.
pub const MASK_THRESHOLD: f64 = 0.5;

fn check_sizes(context: &'static str, a: &RgbaImage, b: &RgbaImage) -> Result<()> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(MetricsError::SizeMismatch {
            context,
            got_w: a.width(),
            got_h: a.height(),
            want_w: b.width(),
            want_h: b.height(),
        });
    }
    Ok(())
}

/// Soft intersection-over-union of the alpha planes: `sum(min) / sum(max)`.
/// Two fully transparent layers agree perfectly and score one.
pub fn alpha_soft_iou(a: &RgbaImage, b: &RgbaImage) -> Result<f64> {
    check_sizes("alpha_soft_iou", a, b)?;
    let (mut inter, mut union) = (0.0f64, 0.0f64);
    for (&x, &y) in a.alpha().iter().zip(b.alpha()) {
        inter += x.min(y);
        union += x.max(y);
    }
    if union == 0.0 {
        return Ok(1.0);
    }
    Ok(inter / union)
}

/// Hard intersection-over-union after binarizing at [`MASK_THRESHOLD`].
pub fn mask_iou(a: &RgbaImage, b: &RgbaImage) -> Result<f64> {
    check_sizes("mask_iou", a, b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.alpha().iter().zip(b.alpha()) {
        let (pa, pb) = (x > MASK_THRESHOLD, y > MASK_THRESHOLD);
        inter += (pa && pb) as usize;
        union += (pa || pb) as usize;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// F1 of the binarized coverage masks, with `a` as prediction and `b` as
/// reference. Two empty masks score one.
pub fn mask_f1(a: &RgbaImage, b: &RgbaImage) -> Result<f64> {
    check_sizes("mask_f1", a, b)?;
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.alpha().iter().zip(b.alpha()) {
        let (pa, pb) = (x > MASK_THRESHOLD, y > MASK_THRESHOLD);
        tp += (pa && pb) as usize;
        fp += (pa && !pb) as usize;
        fneg += (!pa && pb) as usize;
    }
    if tp + fp + fneg == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * tp as f64 / (2.0 * tp as f64 + fp as f64 + fneg as f64))
}

/// Mean absolute RGB difference after compositing each layer onto the
/// mid-gray canvas, so color only counts where a layer is visible.
pub fn layer_l1(a: &RgbaImage, b: &RgbaImage) -> Result<f64> {
    check_sizes("layer_l1", a, b)?;
    rgb_l1(&rgba_to_rgb(a), &rgba_to_rgb(b))
}

/// Combined layer distance: the mean of the color error and the soft-IoU
/// shortfall, each in the unit interval. Zero means a perfect layer.
pub fn unified_score(l1: f64, soft_iou: f64) -> Result<f64> {
    for (name, value) in [("rgb_l1", l1), ("alpha_soft_iou", soft_iou)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(MetricsError::OutOfRange { name, value });
        }
    }
    Ok((l1 + (1.0 - soft_iou)) / 2.0)
}

/// [`unified_score`] computed directly from a pair of layers.
pub fn unified_layer_score(a: &RgbaImage, b: &RgbaImage) -> Result<f64> {
    unified_score(layer_l1(a, b)?, alpha_soft_iou(a, b)?)
}
