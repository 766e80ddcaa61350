//! Finite-difference gradient checking. The caller supplies a pure loss
//! closure over a flat f64 parameter vector; helpers perturb coordinates
//! with central differences and compare against analytic gradients using
//! a norm-based relative error.

use crate::error::Result;

/// Central difference of `f` along coordinate `i`. Restores `theta[i]`
/// before returning, also on error.
pub fn fd_partial<F>(f: &mut F, theta: &mut [f64], i: usize, h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let orig = theta[i];
    theta[i] = orig + h;
    let fp = f(theta);
    theta[i] = orig - h;
    let fm = f(theta);
    theta[i] = orig;
    Ok((fp? - fm?) / (2.0 * h))
}

/// `||a - b|| / max(||a||, ||b||, floor)` with a tiny floor so two
/// all-zero vectors compare equal instead of dividing by zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "relative_error length mismatch");
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        diff += (x - y) * (x - y);
        na += x * x;
        nb += y * y;
    }
    diff.sqrt() / na.sqrt().max(nb.sqrt()).max(1e-12)
}

/// Outcome of a sampled finite-difference comparison.
#[derive(Debug, Clone)]
pub struct GradCheckSummary {
    /// Norm-based relative error over the sampled coordinates.
    pub rel_err: f64,
    /// Coordinate (within `indices`) with the largest absolute deviation.
    pub worst: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Compare `analytic` against central differences of `f` at the sampled
/// `indices`. `analytic` is indexed like `theta` (full length).
pub fn check_sampled<F>(
    f: &mut F,
    theta: &mut [f64],
    analytic: &[f64],
    indices: &[usize],
    h: f64,
) -> Result<GradCheckSummary>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    assert_eq!(theta.len(), analytic.len(), "gradient length mismatch");
    let mut fd = Vec::with_capacity(indices.len());
    let mut an = Vec::with_capacity(indices.len());
    let mut worst = 0usize;
    let mut worst_dev = -1.0f64;
    for (slot, &i) in indices.iter().enumerate() {
        let d = fd_partial(f, theta, i, h)?;
        fd.push(d);
        an.push(analytic[i]);
        let dev = (d - analytic[i]).abs();
        if dev > worst_dev {
            worst_dev = dev;
            worst = slot;
        }
    }
    Ok(GradCheckSummary {
        rel_err: relative_error(&an, &fd),
        worst: indices[worst],
        worst_analytic: an[worst],
        worst_numeric: fd[worst],
    })
}

/// Indices of the `k` largest-magnitude entries, ties broken by position.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .abs()
            .partial_cmp(&scores[a].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

/// `k` evenly strided indices over `0..len`, deterministic and
/// duplicate-free. Covers the whole range even when `k` is small.
pub fn stride_indices(len: usize, k: usize) -> Vec<usize> {
    if len == 0 || k == 0 {
        return Vec::new();
    }
    let k = k.min(len);
    (0..k).map(|i| i * len / k).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_matches_analytic_on_polynomial() {
        // f = x0^2 + 3 x1, df = [2 x0, 3]
        let mut f = |t: &[f64]| Ok(t[0] * t[0] + 3.0 * t[1]);
        let mut theta = vec![1.5, -2.0];
        let d0 = fd_partial(&mut f, &mut theta, 0, 1e-6).unwrap();
        let d1 = fd_partial(&mut f, &mut theta, 1, 1e-6).unwrap();
        assert!((d0 - 3.0).abs() < 1e-8);
        assert!((d1 - 3.0).abs() < 1e-8);
        assert_eq!(theta, vec![1.5, -2.0]);
    }

    #[test]
    fn relative_error_handles_zero_vectors() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!(relative_error(&[1.0, 0.0], &[1.0, 1e-9]) < 1e-8);
    }

    #[test]
    fn top_k_orders_by_magnitude() {
        assert_eq!(top_k_indices(&[0.1, -5.0, 2.0, 2.0], 3), vec![1, 2, 3]);
    }

    #[test]
    fn stride_indices_cover_range_without_duplicates() {
        let idx = stride_indices(10, 4);
        assert_eq!(idx, vec![0, 2, 5, 7]);
        let all = stride_indices(3, 10);
        assert_eq!(all, vec![0, 1, 2]);
    }

    #[test]
    fn check_sampled_reports_worst_coordinate() {
        let mut f = |t: &[f64]| Ok(t.iter().map(|v| v * v).sum::<f64>());
        let mut theta = vec![1.0, 2.0, 3.0];
        let analytic = vec![2.0, 4.0, 5.9]; // wrong on purpose at index 2
        let summary = check_sampled(&mut f, &mut theta, &analytic, &[0, 1, 2], 1e-6).unwrap();
        assert_eq!(summary.worst, 2);
        assert!(summary.rel_err > 1e-3);
    }
}
