//! Checks rotary attention scores against an independent complex-arithmetic
//! evaluation: adjacent channel pairs form complex numbers, and the rotary
//! dot product must equal `sum_j Re[q_j * conj(k_j) * exp(i * dp * f_j)]`
//! where `dp` is the per-axis coordinate difference.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use layerflow_model::{attention_scores, Position, RopeConfig};
use layerflow_tensor::Tensor;

fn oracle_score(
    q: &[f64],
    k: &[f64],
    pq: &Position,
    pk: &Position,
    config: &RopeConfig,
) -> f64 {
    let (d_l, d_h, _) = config.axis_split;
    let freqs = config.pair_freqs();
    let mut total = 0.0;
    for (j, f) in freqs.iter().enumerate() {
        let delta = if j < d_l / 2 {
            pq.l - pk.l
        } else if j < (d_l + d_h) / 2 {
            pq.h - pk.h
        } else {
            pq.w - pk.w
        } as f64;
        let qc = Complex64::new(q[2 * j], q[2 * j + 1]);
        let kc = Complex64::new(k[2 * j], k[2 * j + 1]);
        let phase = Complex64::from_polar(1.0, delta * f);
        total += (qc * kc.conj() * phase).re;
    }
    total / (config.d_head as f64).sqrt()
}

#[test]
fn rotary_scores_match_complex_oracle() {
    let config = RopeConfig::with_default_split(24).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(24_001);
    // 100 random draws of small sequences with mixed layer and spatial
    // offsets, compared entrywise.
    for _ in 0..100 {
        let tokens = rng.gen_range(2..5);
        let positions: Vec<Position> = (0..tokens)
            .map(|_| Position {
                l: rng.gen_range(-1..6),
                h: rng.gen_range(0..12),
                w: rng.gen_range(0..12),
            })
            .collect();
        let draw = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
        };
        let q_data = draw(&mut rng, tokens * 24);
        let k_data = draw(&mut rng, tokens * 24);
        let q: Tensor<f64> = Tensor::from_f64_slice(vec![tokens, 1, 24], &q_data).unwrap();
        let k = Tensor::from_f64_slice(vec![tokens, 1, 24], &k_data).unwrap();
        let scores = attention_scores(&q, &k, &positions, &config).unwrap();
        for i in 0..tokens {
            for j in 0..tokens {
                let want = oracle_score(
                    &q_data[i * 24..(i + 1) * 24],
                    &k_data[j * 24..(j + 1) * 24],
                    &positions[i],
                    &positions[j],
                    &config,
                );
                let got = scores.data()[(i * tokens + j) as usize];
                assert!(
                    (got - want).abs() < 1e-10,
                    "score ({i},{j}) = {got}, oracle {want}"
                );
            }
        }
    }
}

#[test]
fn rotary_scores_shift_invariance_under_oracle_shifts() {
    // The oracle itself only sees coordinate differences, so agreement with
    // it at shifted positions is a second, independent invariance check.
    let config = RopeConfig::with_default_split(32).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let positions = vec![
        Position { l: 0, h: 0, w: 0 },
        Position { l: 2, h: 5, w: 1 },
        Position { l: 3, h: 7, w: 7 },
    ];
    let q_data: Vec<f64> = (0..3 * 32).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let k_data: Vec<f64> = (0..3 * 32).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let q: Tensor<f64> = Tensor::from_f64_slice(vec![3, 1, 32], &q_data).unwrap();
    let k = Tensor::from_f64_slice(vec![3, 1, 32], &k_data).unwrap();
    for shift in [(1, 0, 0), (0, 4, 0), (5, 3, 9)] {
        let moved: Vec<Position> = positions
            .iter()
            .map(|p| Position {
                l: p.l + shift.0,
                h: p.h + shift.1,
                w: p.w + shift.2,
            })
            .collect();
        let scores = attention_scores(&q, &k, &moved, &config).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = oracle_score(
                    &q_data[i * 32..(i + 1) * 32],
                    &k_data[j * 32..(j + 1) * 32],
                    &positions[i],
                    &positions[j],
                    &config,
                );
                assert!((scores.data()[i * 3 + j] - want).abs() < 1e-10);
            }
        }
    }
}
