//! Raw slice-level math kernels.
//!
//! Shared by the tape ops and by reference implementations elsewhere in the
//! workspace so that both paths execute identical arithmetic in identical
//! order (bit-for-bit at equal precision).

use crate::dtype::Element;

/// C[m,n] += A[m,k] @ B[k,n]. `c` must be pre-zeroed by the caller when a
/// plain product is wanted. i-k-j loop order keeps the inner loop contiguous.
pub fn matmul_acc<E: Element>(a: &[E], b: &[E], c: &mut [E], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// C[m,n] += A[m,k] @ B[n,k]^T (rows of both operands are contiguous).
pub fn matmul_transb_acc<E: Element>(a: &[E], b: &[E], c: &mut [E], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (j, cv) in c_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = E::zero();
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc = acc + av * bv;
            }
            *cv = *cv + acc;
        }
    }
}

/// C[k,n] += A[m,k]^T @ B[m,n]. Used by matmul backward for the rhs grad.
pub fn matmul_transa_acc<E: Element>(a: &[E], b: &[E], c: &mut [E], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let c_row = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// In-place stabilized softmax of one lane (`lane.len()` values).
pub fn softmax_lane<E: Element>(lane: &mut [E]) {
    let mut max = lane[0];
    for &v in lane.iter() {
        if v > max {
            max = v;
        }
    }
    let mut sum = E::zero();
    for v in lane.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    let inv = E::one() / sum;
    for v in lane.iter_mut() {
        *v = *v * inv;
    }
}

/// RMS-normalize one row: `out = x / sqrt(mean(x^2) + eps) * gain`.
/// Returns the reciprocal root used, for the backward pass.
pub fn rms_norm_row<E: Element>(x: &[E], gain: &[E], eps: E, out: &mut [E]) -> E {
    let d = E::from_f64(x.len() as f64);
    let mut ss = E::zero();
    for &v in x {
        ss = ss + v * v;
    }
    let r = E::one() / (ss / d + eps).sqrt();
    for ((o, &v), &g) in out.iter_mut().zip(x).zip(gain) {
        *o = v * r * g;
    }
    r
}

#[inline]
pub fn sigmoid<E: Element>(x: E) -> E {
    E::one() / (E::one() + (-x).exp())
}

#[inline]
pub fn silu<E: Element>(x: E) -> E {
    x * sigmoid(x)
}

#[inline]
pub fn silu_grad<E: Element>(x: E) -> E {
    let s = sigmoid(x);
    s * (E::one() + x * (E::one() - s))
}

/// tanh-approximated GELU.
#[inline]
pub fn gelu<E: Element>(x: E) -> E {
    let c = E::from_f64(0.797_884_560_802_865_4); // sqrt(2/pi)
    let k = E::from_f64(0.044715);
    let half = E::from_f64(0.5);
    let u = c * (x + k * x * x * x);
    half * x * (E::one() + u.tanh())
}

#[inline]
pub fn gelu_grad<E: Element>(x: E) -> E {
    let c = E::from_f64(0.797_884_560_802_865_4);
    let k = E::from_f64(0.044715);
    let half = E::from_f64(0.5);
    let three = E::from_f64(3.0);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let sech2 = E::one() - t * t;
    half * (E::one() + t) + half * x * sech2 * c * (E::one() + three * k * x * x)
}

/// Rotate channel pairs of one row by per-pair angles given as cos/sin.
/// Pairing convention: channels (2j, 2j+1).
pub fn rotate_pairs_row<E: Element>(x: &[E], cos: &[E], sin: &[E], out: &mut [E]) {
    debug_assert_eq!(x.len(), 2 * cos.len());
    for j in 0..cos.len() {
        let a = x[2 * j];
        let b = x[2 * j + 1];
        out[2 * j] = a * cos[j] - b * sin[j];
        out[2 * j + 1] = a * sin[j] + b * cos[j];
    }
}
