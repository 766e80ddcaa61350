//! Hand-computable metric values.

use layerflow_imaging::{RgbImage, RgbaImage};
use layerflow_metrics::{
    alpha_soft_iou, mask_f1, mask_iou, mse, psnr, rgb_l1, ssim, unified_score, MetricsError,
    PSNR_CAP,
};

fn flat_rgb(w: usize, h: usize, v: f64) -> RgbImage {
    RgbImage::from_planes(w, h, vec![v; 3 * w * h]).unwrap()
}

fn flat_rgba(w: usize, h: usize, rgb: f64, alpha: f64) -> RgbaImage {
    let mut data = vec![rgb; 4 * w * h];
    for a in data.iter_mut().skip(3 * w * h) {
        *a = alpha;
    }
    RgbaImage::from_planes(w, h, data).unwrap()
}

#[test]
fn psnr_of_identical_images_hits_the_cap() {
    let img = flat_rgb(16, 16, 0.25);
    assert_eq!(psnr(&img, &img).unwrap(), PSNR_CAP);
}

#[test]
fn psnr_of_a_uniform_half_difference_is_six_db() {
    let a = flat_rgb(16, 16, 0.75);
    let b = flat_rgb(16, 16, 0.25);
    assert!((mse(&a, &b).unwrap() - 0.25).abs() < 1e-12);
    // 10 * log10(1 / 0.25)
    assert!((psnr(&a, &b).unwrap() - 6.020599913279624).abs() < 1e-9);
}

#[test]
fn l1_of_a_uniform_difference_is_that_difference() {
    let a = flat_rgb(8, 8, 0.9);
    let b = flat_rgb(8, 8, 0.6);
    assert!((rgb_l1(&a, &b).unwrap() - 0.3).abs() < 1e-12);
}

#[test]
fn size_mismatch_is_rejected() {
    let a = flat_rgb(8, 8, 0.5);
    let b = flat_rgb(8, 9, 0.5);
    assert!(matches!(
        psnr(&a, &b),
        Err(MetricsError::SizeMismatch { .. })
    ));
    assert!(matches!(
        rgb_l1(&a, &b),
        Err(MetricsError::SizeMismatch { .. })
    ));
}

#[test]
fn ssim_is_one_for_identical_images_and_rejects_tiny_ones() {
    let a = flat_rgb(12, 12, 0.4);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    let tiny = flat_rgb(10, 12, 0.4);
    assert!(matches!(
        ssim(&tiny, &tiny),
        Err(MetricsError::TooSmall { .. })
    ));
}

#[test]
fn soft_iou_matches_the_min_over_max_ratio() {
    let a = flat_rgba(4, 4, 0.5, 0.6);
    let b = flat_rgba(4, 4, 0.5, 0.3);
    assert!((alpha_soft_iou(&a, &b).unwrap() - 0.5).abs() < 1e-12);
    let empty = flat_rgba(4, 4, 0.5, 0.0);
    assert_eq!(alpha_soft_iou(&empty, &empty).unwrap(), 1.0);
}

#[test]
fn hard_masks_count_binarized_overlap() {
    // Left half of `a` opaque; top half of `b` opaque: overlap is one
    // quadrant of the 4x4 frame.
    let mut a = flat_rgba(4, 4, 0.5, 0.0);
    let mut b = flat_rgba(4, 4, 0.5, 0.0);
    for y in 0..4 {
        for x in 0..2 {
            a.set(3, y, x, 1.0);
        }
    }
    for y in 0..2 {
        for x in 0..4 {
            b.set(3, y, x, 1.0);
        }
    }
    // intersection 4, union 12
    assert!((mask_iou(&a, &b).unwrap() - 4.0 / 12.0).abs() < 1e-12);
    // f1 = 2*4 / (2*4 + 4 + 4)
    assert!((mask_f1(&a, &b).unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn unified_score_reproduces_reference_values() {
    // Two (color error, soft IoU) pairs with known combined scores.
    let cases = [(0.0474, 0.7771, 0.1352), (0.0653, 0.7055, 0.1799)];
    for (l1, siou, want) in cases {
        let got = unified_score(l1, siou).unwrap();
        assert!(
            (got - want).abs() <= 5e-5,
            "unified({l1}, {siou}) = {got}, expected about {want}"
        );
    }
    assert!(unified_score(1.2, 0.5).is_err());
    assert!(unified_score(0.5, -0.1).is_err());
}
