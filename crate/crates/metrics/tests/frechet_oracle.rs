//! Independent checks of the Fréchet distance: a hand-rolled Jacobi
//! eigensolver replacing the library decomposition, the diagonal-Gaussian
//! closed form, and exactness on identical corpora.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use layerflow_metrics::{
    corpus_moments, frechet_distance, frechet_from_moments, EMBED_DIM,
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// (eigenvalues, eigenvectors as columns).
fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[p][q] * m[p][q];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let tau = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let eigenvalues = (0..n).map(|i| m[i][i]).collect();
    (eigenvalues, v)
}

fn jacobi_psd_sqrt(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let (vals, vecs) = jacobi_eigen(a);
    let roots: Vec<f64> = vals.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let mut out = vec![vec![0.0; n]; n];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..n).map(|k| vecs[i][k] * roots[k] * vecs[j][k]).sum();
        }
    }
    out
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i][k];
            for j in 0..n {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

/// Fréchet distance computed entirely with the Jacobi routines.
fn jacobi_frechet(m1: &[f64], s1: &[Vec<f64>], m2: &[f64], s2: &[Vec<f64>]) -> f64 {
    let n = m1.len();
    let root1 = jacobi_psd_sqrt(s1);
    let inner = matmul(&matmul(&root1, s2), &root1);
    // Symmetrize before the second square root, as rounding breaks it.
    let sym: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| 0.5 * (inner[i][j] + inner[j][i])).collect())
        .collect();
    let cross = jacobi_psd_sqrt(&sym);
    let mean_term: f64 = m1.iter().zip(m2).map(|(a, b)| (a - b) * (a - b)).sum();
    let trace = |m: &[Vec<f64>]| (0..n).map(|i| m[i][i]).sum::<f64>();
    mean_term + trace(s1) + trace(s2) - 2.0 * trace(&cross)
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<Vec<f64>> {
    let b: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| rng.gen::<f64>() - 0.5).collect())
        .collect();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            out[i][j] = scale * (0..n).map(|k| b[i][k] * b[j][k]).sum::<f64>();
            if i == j {
                out[i][j] += 0.05;
            }
        }
    }
    out
}

fn to_nalgebra(m: &[Vec<f64>]) -> DMatrix<f64> {
    let n = m.len();
    DMatrix::from_fn(n, n, |i, j| m[i][j])
}

#[test]
fn library_eigenroute_matches_the_jacobi_route() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for case in 0..5 {
        let n = 8;
        let s1 = random_spd(&mut rng, n, 0.3);
        let s2 = random_spd(&mut rng, n, 0.5);
        let m1: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let m2: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let want = jacobi_frechet(&m1, &s1, &m2, &s2);
        let got = frechet_from_moments(
            &DVector::from_vec(m1.clone()),
            &to_nalgebra(&s1),
            &DVector::from_vec(m2.clone()),
            &to_nalgebra(&s2),
        );
        assert!(
            (got - want).abs() < 1e-8 * want.abs().max(1.0),
            "case {case}: library {got} vs jacobi {want}"
        );
    }
}

#[test]
fn diagonal_gaussians_follow_the_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 16;
    let a: Vec<f64> = (0..n).map(|_| 0.1 + rng.gen::<f64>()).collect();
    let b: Vec<f64> = (0..n).map(|_| 0.1 + rng.gen::<f64>()).collect();
    let m1: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    let m2: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    let want: f64 = m1
        .iter()
        .zip(&m2)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        + a.iter()
            .zip(&b)
            .map(|(x, y)| (x.sqrt() - y.sqrt()) * (x.sqrt() - y.sqrt()))
            .sum::<f64>();
    let got = frechet_from_moments(
        &DVector::from_vec(m1),
        &DMatrix::from_diagonal(&DVector::from_vec(a)),
        &DVector::from_vec(m2),
        &DMatrix::from_diagonal(&DVector::from_vec(b)),
    );
    assert!((got - want).abs() < 1e-6, "closed form {want}, got {got}");
}

#[test]
fn identical_corpora_have_zero_distance() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let corpus: Vec<Vec<f64>> = (0..40)
        .map(|_| (0..EMBED_DIM).map(|_| rng.gen::<f64>()).collect())
        .collect();
    let d = frechet_distance(&corpus, &corpus).unwrap();
    assert!(d.abs() <= 1e-8, "distance of a corpus to itself is {d}");
}

#[test]
fn moments_match_a_hand_computation() {
    let mut e1 = vec![0.0; EMBED_DIM];
    let mut e2 = vec![0.0; EMBED_DIM];
    let mut e3 = vec![0.0; EMBED_DIM];
    (e1[0], e2[0], e3[0]) = (1.0, 2.0, 3.0);
    let m = corpus_moments(&[e1, e2, e3]).unwrap();
    assert_eq!(m.count, 3);
    assert!((m.mean[0] - 2.0).abs() < 1e-15);
    // Unbiased variance of {1, 2, 3} is 1.
    assert!((m.cov[(0, 0)] - 1.0).abs() < 1e-15);
    assert!(m.cov[(1, 1)].abs() < 1e-15);
    assert!(corpus_moments(&[vec![0.0; EMBED_DIM]]).is_err());
    assert!(corpus_moments(&[vec![0.0; 3], vec![0.0; 3]]).is_err());
}
