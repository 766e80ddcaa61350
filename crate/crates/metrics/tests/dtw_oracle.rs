//! Checks the dynamic-programming alignment against exhaustive path
//! enumeration on small cost matrices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use layerflow_metrics::dtw_align;

/// Minimal path cost by trying every monotone path.
fn brute_force(cost: &[Vec<f64>], i: usize, j: usize) -> f64 {
    let here = cost[i][j];
    if i == 0 && j == 0 {
        return here;
    }
    let mut best = f64::INFINITY;
    if i > 0 && j > 0 {
        best = best.min(brute_force(cost, i - 1, j - 1));
    }
    if i > 0 {
        best = best.min(brute_force(cost, i - 1, j));
    }
    if j > 0 {
        best = best.min(brute_force(cost, i, j - 1));
    }
    here + best
}

#[test]
fn alignment_cost_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..30 {
        let m = rng.gen_range(1..=4);
        let n = rng.gen_range(1..=4);
        let cost: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..n).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let (got, path) = dtw_align(&cost).unwrap();
        let want = brute_force(&cost, m - 1, n - 1);
        assert!(
            (got - want).abs() < 1e-12,
            "case {case} ({m}x{n}): dp {got} vs brute force {want}"
        );
        // The returned path must realize the returned cost.
        let path_cost: f64 = path.iter().map(|&(i, j)| cost[i][j]).sum();
        assert!((path_cost - got).abs() < 1e-12);
    }
}

#[test]
fn paths_are_monotone_and_span_both_sequences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let m = rng.gen_range(1..=5);
        let n = rng.gen_range(1..=5);
        let cost: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..n).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let (_, path) = dtw_align(&cost).unwrap();
        assert_eq!(path[0], (0, 0));
        assert_eq!(*path.last().unwrap(), (m - 1, n - 1));
        for w in path.windows(2) {
            let (di, dj) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
            assert!(di <= 1 && dj <= 1 && di + dj >= 1);
        }
    }
}

#[test]
fn degenerate_shapes_are_handled() {
    // A single row aligns everything to that row.
    let (cost, path) = dtw_align(&[vec![0.2, 0.4, 0.1]]).unwrap();
    assert!((cost - 0.7).abs() < 1e-12);
    assert_eq!(path, vec![(0, 0), (0, 1), (0, 2)]);
    assert!(dtw_align(&[]).is_err());
    assert!(dtw_align(&[vec![1.0], vec![1.0, 2.0]]).is_err());
}
