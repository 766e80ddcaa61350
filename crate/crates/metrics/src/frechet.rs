//! Fréchet distance between layer corpora under a fixed pixel embedding.
//!
//! Each layer is reduced to a 64-dimensional embedding by compositing onto
//! mid-gray, converting to grayscale and average-pooling to an 8x8 grid.
//! A corpus of layers becomes a Gaussian via its sample mean and unbiased
//! covariance, and two corpora are compared with the squared Fréchet
//! distance `|m1 - m2|^2 + tr(S1 + S2 - 2 (S1 S2)^(1/2))`.

use nalgebra::{DMatrix, DVector};

use layerflow_imaging::{rgba_to_rgb, RgbImage, RgbaImage};

use crate::error::{MetricsError, Result};

/// Embedding side; the vector is `POOL_GRID * POOL_GRID` long.
pub const POOL_GRID: usize = 8;
/// Embedding dimensionality.
pub const EMBED_DIM: usize = POOL_GRID * POOL_GRID;
/// Ridge added to both covariances when a matrix square root degenerates.
pub const COVARIANCE_RIDGE: f64 = 1e-6;

/// Grayscale 8x8 average pooling of an RGB image.
pub fn embed_rgb(image: &RgbImage) -> Result<Vec<f64>> {
    let (w, h) = (image.width(), image.height());
    if w < POOL_GRID || h < POOL_GRID {
        return Err(MetricsError::TooSmall {
            context: "pixel embedding",
            w,
            h,
            min: POOL_GRID,
        });
    }
    let mut out = vec![0.0; EMBED_DIM];
    for gy in 0..POOL_GRID {
        let y0 = gy * h / POOL_GRID;
        let y1 = (gy + 1) * h / POOL_GRID;
        for gx in 0..POOL_GRID {
            let x0 = gx * w / POOL_GRID;
            let x1 = (gx + 1) * w / POOL_GRID;
            let mut acc = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    for c in 0..3 {
                        acc += image.get(c, y, x);
                    }
                }
            }
            out[gy * POOL_GRID + gx] = acc / (3 * (y1 - y0) * (x1 - x0)) as f64;
        }
    }
    Ok(out)
}

/// Embedding of a transparent layer: composite onto mid-gray first.
pub fn embed_layer(layer: &RgbaImage) -> Result<Vec<f64>> {
    embed_rgb(&rgba_to_rgb(layer))
}

/// Sample mean and unbiased covariance of a set of embeddings.
pub struct CorpusMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub count: usize,
}

pub fn corpus_moments(embeddings: &[Vec<f64>]) -> Result<CorpusMoments> {
    let n = embeddings.len();
    if n < 2 {
        return Err(MetricsError::NotEnoughSamples {
            context: "corpus moments",
            got: n,
            min: 2,
        });
    }
    let d = EMBED_DIM;
    if embeddings.iter().any(|e| e.len() != d) {
        return Err(MetricsError::Empty {
            context: "embedding with a wrong dimensionality",
        });
    }
    let mut mean = DVector::zeros(d);
    for e in embeddings {
        for (i, &v) in e.iter().enumerate() {
            mean[i] += v;
        }
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for e in embeddings {
        let centered = DVector::from_iterator(d, e.iter().copied()) - &mean;
        cov += &centered * centered.transpose();
    }
    cov /= (n - 1) as f64;
    Ok(CorpusMoments {
        mean,
        cov,
        count: n,
    })
}

/// Symmetric PSD square root; eigenvalues below zero are clamped. Returns
/// the most negative eigenvalue seen so callers can detect degeneracy.
fn psd_sqrt(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let min_eig = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let sqrt_vals = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()),
    );
    let q = &eig.eigenvectors;
    let root = q * DMatrix::from_diagonal(&sqrt_vals) * q.transpose();
    (root, min_eig)
}

fn frechet_once(m1: &DVector<f64>, s1: &DMatrix<f64>, m2: &DVector<f64>, s2: &DMatrix<f64>) -> (f64, f64) {
    let (root1, e1) = psd_sqrt(s1);
    let (cross, e2) = psd_sqrt(&(&root1 * s2 * &root1));
    let mean_term = (m1 - m2).norm_squared();
    let trace_term = s1.trace() + s2.trace() - 2.0 * cross.trace();
    (mean_term + trace_term, e1.min(e2))
}

/// Squared Fréchet distance between two Gaussians. Falls back to ridge
/// regularization of both covariances when an eigenvalue drops below the
/// clamping tolerance, and warns on standard error when it does.
pub fn frechet_from_moments(
    m1: &DVector<f64>,
    s1: &DMatrix<f64>,
    m2: &DVector<f64>,
    s2: &DMatrix<f64>,
) -> f64 {
    let (value, min_eig) = frechet_once(m1, s1, m2, s2);
    // Clamping tiny negative eigenvalues is routine rounding; anything
    // materially negative means a degenerate covariance.
    if min_eig > -1e-8 && value.is_finite() {
        return value.max(0.0);
    }
    eprintln!(
        "warning: degenerate covariance (eigenvalue {min_eig:.3e}); \
         adding ridge {COVARIANCE_RIDGE:.0e} to both"
    );
    let d = s1.nrows();
    let ridge = DMatrix::identity(d, d) * COVARIANCE_RIDGE;
    let (value, _) = frechet_once(m1, &(s1 + &ridge), m2, &(s2 + &ridge));
    value.max(0.0)
}

/// Squared Fréchet distance between two corpora of layer embeddings.
pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let ma = corpus_moments(a)?;
    let mb = corpus_moments(b)?;
    Ok(frechet_from_moments(&ma.mean, &ma.cov, &mb.mean, &mb.cov))
}
