//! Layer-aware rotary position encoding and the reference attention path.
//!
//! Head channels are partitioned across the three position axes (layer,
//! row, column). Each axis gets its own geometric frequency ladder; the
//! layer axis uses a much smaller base because layer indices span a handful
//! of values while spatial indices span a whole patch grid. Applying the
//! per-axis rotations to queries and keys makes every dot product a
//! function of coordinate differences only, which the tests check both
//! against a complex-arithmetic oracle and by shifting all positions.

use serde::{Deserialize, Serialize};

use layerflow_tensor::{kernels, Element, RotationTable, Tensor};

use crate::error::{ModelError, Result};
use crate::tokenize::Position;

/// Frequency base for the layer axis.
pub const BASE_LAYER: f64 = 100.0;
/// Frequency base for the two spatial axes.
pub const BASE_SPATIAL: f64 = 10_000.0;

/// Rotary-encoding geometry for one attention head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RopeConfig {
    pub d_head: usize,
    /// Channels assigned to the (layer, row, column) axes; each even, at
    /// least two, summing to `d_head`.
    pub axis_split: (usize, usize, usize),
    pub base_layer: f64,
    pub base_spatial: f64,
}

/// Even split of `d_head` across axes: roughly a quarter for the layer
/// axis, the rest halved between rows and columns.
pub fn default_axis_split(d_head: usize) -> Result<(usize, usize, usize)> {
    if d_head < 6 || d_head % 2 != 0 {
        return Err(ModelError::Config {
            reason: format!("head dimension {d_head} cannot host three even axis blocks"),
        });
    }
    let down_even = |v: usize| (v / 2) * 2;
    let d_l = down_even(d_head / 4).max(2);
    let rest = d_head - d_l;
    let d_w = down_even(rest / 2).max(2);
    let d_h = rest - d_w;
    Ok((d_l, d_h, d_w))
}

impl RopeConfig {
    pub fn with_default_split(d_head: usize) -> Result<Self> {
        let config = RopeConfig {
            d_head,
            axis_split: default_axis_split(d_head)?,
            base_layer: BASE_LAYER,
            base_spatial: BASE_SPATIAL,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let (d_l, d_h, d_w) = self.axis_split;
        for (name, d) in [("layer", d_l), ("row", d_h), ("column", d_w)] {
            if d < 2 || d % 2 != 0 {
                return Err(ModelError::Config {
                    reason: format!("{name} axis block of {d} channels (need an even count >= 2)"),
                });
            }
        }
        if d_l + d_h + d_w != self.d_head {
            return Err(ModelError::Config {
                reason: format!(
                    "axis split {:?} does not sum to head dimension {}",
                    self.axis_split, self.d_head
                ),
            });
        }
        if !(self.base_layer > 1.0) || !(self.base_spatial > 1.0) {
            return Err(ModelError::Config {
                reason: "frequency bases must exceed one".into(),
            });
        }
        Ok(())
    }

    pub fn pairs(&self) -> usize {
        self.d_head / 2
    }

    /// Per-pair frequencies, layer pairs first, then row, then column.
    /// Within an axis of `d_c` channels, pair `j` rotates at
    /// `base^(-2j / d_c)`.
    pub fn pair_freqs(&self) -> Vec<f64> {
        let (d_l, d_h, d_w) = self.axis_split;
        let mut freqs = Vec::with_capacity(self.pairs());
        for (d_c, base) in [
            (d_l, self.base_layer),
            (d_h, self.base_spatial),
            (d_w, self.base_spatial),
        ] {
            for j in 0..d_c / 2 {
                freqs.push(base.powf(-2.0 * j as f64 / d_c as f64));
            }
        }
        freqs
    }

    /// Rotation angles of one token, pair by pair.
    pub fn angles_for(&self, position: &Position) -> Vec<f64> {
        let (d_l, d_h, _) = self.axis_split;
        let freqs = self.pair_freqs();
        let coords = |pair: usize| {
            if pair < d_l / 2 {
                position.l
            } else if pair < (d_l + d_h) / 2 {
                position.h
            } else {
                position.w
            }
        };
        freqs
            .iter()
            .enumerate()
            .map(|(j, f)| coords(j) as f64 * f)
            .collect()
    }

    /// Precomputed cosine/sine table for a whole sequence.
    pub fn rotation_table<E: Element>(&self, positions: &[Position]) -> RotationTable<E> {
        let pairs = self.pairs();
        let mut angles = Vec::with_capacity(positions.len() * pairs);
        for p in positions {
            angles.extend(self.angles_for(p));
        }
        RotationTable::from_angles(positions.len(), pairs, &angles)
    }
}

/// Applies the rotary encoding to `[tokens, heads, d_head]` data outside
/// the tape, using the same kernel as the recorded op.
pub fn apply_rope<E: Element>(
    x: &Tensor<E>,
    positions: &[Position],
    config: &RopeConfig,
) -> Result<Tensor<E>> {
    let shape = x.shape();
    if shape.len() != 3 || shape[0] != positions.len() || shape[2] != config.d_head {
        return Err(ModelError::Sequence {
            reason: format!(
                "rotary input shape {:?} does not match {} positions by head dim {}",
                shape,
                positions.len(),
                config.d_head
            ),
        });
    }
    let (tokens, heads, dh) = (shape[0], shape[1], shape[2]);
    let table = config.rotation_table::<E>(positions);
    let pairs = config.pairs();
    let src = x.data();
    let mut out = vec![E::zero(); src.len()];
    for t in 0..tokens {
        let cos = &table.cos[t * pairs..(t + 1) * pairs];
        let sin = &table.sin[t * pairs..(t + 1) * pairs];
        for h in 0..heads {
            let base = (t * heads + h) * dh;
            kernels::rotate_pairs_row(&src[base..base + dh], cos, sin, &mut out[base..base + dh]);
        }
    }
    Ok(Tensor::new(shape.to_vec(), out)?)
}

/// Scaled attention scores `[heads, tokens, tokens]` after rotary encoding,
/// before masking and softmax.
pub fn attention_scores<E: Element>(
    q: &Tensor<E>,
    k: &Tensor<E>,
    positions: &[Position],
    config: &RopeConfig,
) -> Result<Tensor<E>> {
    let qr = apply_rope(q, positions, config)?;
    let kr = apply_rope(k, positions, config)?;
    let (tokens, heads, dh) = dims3(q);
    let scale = E::from_f64(1.0 / (dh as f64).sqrt());
    let (qd, kd) = (qr.data(), kr.data());
    let mut out = vec![E::zero(); heads * tokens * tokens];
    for h in 0..heads {
        for i in 0..tokens {
            for j in 0..tokens {
                let (qb, kb) = ((i * heads + h) * dh, (j * heads + h) * dh);
                let mut acc = E::zero();
                for d in 0..dh {
                    acc += qd[qb + d] * kd[kb + d];
                }
                out[(h * tokens + i) * tokens + j] = acc * scale;
            }
        }
    }
    Ok(Tensor::new(vec![heads, tokens, tokens], out)?)
}

fn dims3<E: Element>(x: &Tensor<E>) -> (usize, usize, usize) {
    (x.shape()[0], x.shape()[1], x.shape()[2])
}

/// Naive attention over `[tokens, heads, d_head]` inputs, returning
/// `[tokens, heads * d_head]`. Matches the recorded attention graph
/// bit for bit: same rotation table, same kernels, same accumulation
/// order per output element.
pub fn reference_attention<E: Element>(
    q: &Tensor<E>,
    k: &Tensor<E>,
    v: &Tensor<E>,
    positions: &[Position],
    mask: Option<&Tensor<E>>,
    config: &RopeConfig,
) -> Result<Tensor<E>> {
    let (tokens, heads, dh) = dims3(q);
    let mut scores = attention_scores(q, k, positions, config)?;
    if let Some(m) = mask {
        if m.shape() != [tokens, tokens] {
            return Err(ModelError::Sequence {
                reason: format!("mask shape {:?} is not [{tokens}, {tokens}]", m.shape()),
            });
        }
        let md = m.data();
        for h in 0..heads {
            let block = &mut scores.data_mut()[h * tokens * tokens..(h + 1) * tokens * tokens];
            for (s, &a) in block.iter_mut().zip(md) {
                *s = *s + a;
            }
        }
    }
    for lane in scores.data_mut().chunks_mut(tokens) {
        kernels::softmax_lane(lane);
    }
    let (pd, vd) = (scores.data(), v.data());
    let mut out = vec![E::zero(); tokens * heads * dh];
    for h in 0..heads {
        for i in 0..tokens {
            for j in 0..tokens {
                let p = pd[(h * tokens + i) * tokens + j];
                let vb = (j * heads + h) * dh;
                let ob = (i * heads + h) * dh;
                for d in 0..dh {
                    out[ob + d] += p * vd[vb + d];
                }
            }
        }
    }
    Ok(Tensor::new(vec![tokens, heads * dh], out)?)
}
