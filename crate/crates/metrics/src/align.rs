//! Monotone sequence alignment for comparing layer stacks of different
//! lengths.

use crate::error::{MetricsError, Result};

/// Dynamic-time-warping alignment over a rectangular cost matrix
/// (`cost[i][j]` is the price of pairing row item `i` with column item
/// `j`). Returns the minimal total cost and the pairs along one optimal
/// path from `(0, 0)` to the opposite corner, in order. Ties prefer the
/// diagonal, then the row step, so the result is deterministic.
pub fn dtw_align(cost: &[Vec<f64>]) -> Result<(f64, Vec<(usize, usize)>)> {
    let m = cost.len();
    if m == 0 || cost[0].is_empty() {
        return Err(MetricsError::Empty {
            context: "alignment cost matrix",
        });
    }
    let n = cost[0].len();
    if cost.iter().any(|row| row.len() != n) {
        return Err(MetricsError::Empty {
            context: "ragged alignment cost matrix",
        });
    }

    let mut acc = vec![vec![f64::INFINITY; n]; m];
    for i in 0..m {
        for j in 0..n {
            let best_prev = if i == 0 && j == 0 {
                0.0
            } else {
                let mut best = f64::INFINITY;
                if i > 0 && j > 0 {
                    best = best.min(acc[i - 1][j - 1]);
                }
                if i > 0 {
                    best = best.min(acc[i - 1][j]);
                }
                if j > 0 {
                    best = best.min(acc[i][j - 1]);
                }
                best
            };
            acc[i][j] = cost[i][j] + best_prev;
        }
    }

    let mut path = vec![(m - 1, n - 1)];
    let (mut i, mut j) = (m - 1, n - 1);
    while i > 0 || j > 0 {
        let diag = if i > 0 && j > 0 {
            acc[i - 1][j - 1]
        } else {
            f64::INFINITY
        };
        let up = if i > 0 { acc[i - 1][j] } else { f64::INFINITY };
        let left = if j > 0 { acc[i][j - 1] } else { f64::INFINITY };
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        path.push((i, j));
    }
    path.reverse();
    Ok((acc[m - 1][n - 1], path))
}
