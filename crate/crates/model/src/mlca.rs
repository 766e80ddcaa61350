//! Composite-image conditioning aligned with the token sequence.
//!
//! The conditioning composite is patchified on the same grid as the
//! generated tokens and linearly projected to the model width, giving one
//! feature per grid cell. Each sequence token then picks up the feature of
//! the cell it covers: full-frame segments read the whole grid, foreground
//! segments read their snapped box, so a foreground token and the composite
//! token over the same cell receive identical features. The resulting
//! guidance is fused into the image stream by exact addition after the
//! input projection (once, or at every block when configured).

use layerflow_imaging::RgbImage;
use layerflow_tensor::{Element, Tape, Tensor, Var};

use crate::error::{ModelError, Result};
use crate::tokenize::{patchify, SequenceLayout};

/// Patchifies an RGB conditioning image into `[cells, 3 * p * p]` tokens.
pub fn condition_tokens<E: Element>(image: &RgbImage, patch_size: usize) -> Result<Tensor<E>> {
    let flat = patchify(image.data(), 3, image.height(), image.width(), patch_size)?;
    let cells = (image.height() / patch_size) * (image.width() / patch_size);
    Ok(Tensor::from_f64_slice(
        vec![cells, 3 * patch_size * patch_size],
        &flat,
    )?)
}

/// Projects condition tokens to `[cells, d]` grid features on the tape.
pub fn encode_condition<E: Element>(
    tape: &mut Tape<E>,
    cond_w: Var,
    cond_b: Var,
    cond_tokens: Var,
) -> Result<Var> {
    let projected = tape.matmul(cond_tokens, cond_w)?;
    Ok(tape.add_bias(projected, cond_b)?)
}

/// Grid-cell index for every token of the layout, segment by segment.
pub fn guidance_cell_ids(layout: &SequenceLayout) -> Vec<usize> {
    let grid = layout.grid;
    let p = grid.patch_size;
    let mut ids = Vec::with_capacity(layout.len());
    for seg in &layout.segments {
        for gy in seg.bbox.y_l / p..seg.bbox.y_r / p {
            for gx in seg.bbox.x_l / p..seg.bbox.x_r / p {
                ids.push(gy * grid.grid_w + gx);
            }
        }
    }
    ids
}

/// Gathers grid features into a guidance row per token, padded with zero
/// rows when the caller pads the sequence.
pub fn build_guidance<E: Element>(
    tape: &mut Tape<E>,
    grid_features: Var,
    layout: &SequenceLayout,
    pad_extra: usize,
) -> Result<Var> {
    let shape = tape.shape(grid_features).to_vec();
    if shape.len() != 2 || shape[0] != layout.grid.n_cells() {
        return Err(ModelError::Sequence {
            reason: format!(
                "grid features have shape {:?}, expected [{}, d]",
                shape,
                layout.grid.n_cells()
            ),
        });
    }
    let ids = guidance_cell_ids(layout);
    debug_assert_eq!(ids.len(), layout.len());
    let gathered = tape.gather_rows(grid_features, &ids)?;
    if pad_extra == 0 {
        return Ok(gathered);
    }
    let zeros = tape.constant(Tensor::zeros(vec![pad_extra, shape[1]]))?;
    Ok(tape.concat0(&[gathered, zeros])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{init_params, register_params, ModelConfig};
    use crate::rope::RopeConfig;
    use crate::tokenize::assemble_sequence;
    use layerflow_imaging::{synth_stack, SynthConfig};

    fn config() -> ModelConfig {
        ModelConfig {
            d_model: 16,
            n_heads: 2,
            n_blocks: 1,
            patch_size: 8,
            frame_size: 32,
            max_layers: 3,
            max_text_tokens: 8,
            vocab: layerflow_imaging::vocabulary(),
            rope: RopeConfig::with_default_split(8).unwrap(),
            mlca_every_block: false,
        }
    }

    #[test]
    fn cell_ids_follow_segment_boxes() {
        let stack = synth_stack(
            13,
            &SynthConfig {
                frame_size: 32,
                n_layers: 2,
                ..SynthConfig::default()
            },
        )
        .unwrap();
        let seq = assemble_sequence::<f64>(&stack, 8, 3).unwrap();
        let ids = guidance_cell_ids(&seq.layout);
        assert_eq!(ids.len(), seq.len());
        // The two full-frame segments scan every cell in order.
        let cells: Vec<usize> = (0..16).collect();
        assert_eq!(&ids[..16], &cells[..]);
        assert_eq!(&ids[16..32], &cells[..]);
        // Foreground tokens point at the composite cells they overlap, so
        // their ids repeat ids already present in the full-frame run.
        for &id in &ids[32..] {
            assert!(id < 16);
        }
        let seg = &seq.layout.segments[2];
        let first_cell = (seg.bbox.y_l / 8) * 4 + seg.bbox.x_l / 8;
        assert_eq!(ids[32], first_cell);
    }

    #[test]
    fn zero_composite_gives_constant_bias_rows() {
        let params = init_params::<f64>(&config(), 5).unwrap();
        let mut tape = layerflow_tensor::Tape::new();
        let vars = register_params(&params, &mut tape).unwrap();
        let zero = RgbImage::new(32, 32);
        let cond = tape
            .constant(condition_tokens::<f64>(&zero, 8).unwrap())
            .unwrap();
        let feat = encode_condition(&mut tape, vars.cond_w, vars.cond_b, cond).unwrap();
        let out = tape.value(feat);
        let first = &out.data()[..16];
        for row in out.data().chunks(16) {
            assert_eq!(row, first, "zero image must encode uniformly");
        }
        assert_eq!(first, params.cond_b.data());
    }

    #[test]
    fn encoding_is_linear_in_the_image() {
        let mut params = init_params::<f64>(&config(), 6).unwrap();
        // Remove the bias so the projection is purely linear.
        for v in params.cond_b.data_mut() {
            *v = 0.0;
        }
        let mut img_a = RgbImage::new(32, 32);
        let mut img_b = RgbImage::new(32, 32);
        for y in 0..32 {
            for x in 0..32 {
                for c in 0..3 {
                    img_a.set(c, y, x, ((x + y + c) % 7) as f64 / 14.0);
                    img_b.set(c, y, x, ((x * 2 + y + c) % 5) as f64 / 10.0);
                }
            }
        }
        let mut img_sum = RgbImage::new(32, 32);
        for (i, v) in img_sum.data_mut().iter_mut().enumerate() {
            *v = img_a.data()[i] + img_b.data()[i];
        }
        let encode = |image: &RgbImage| -> Vec<f64> {
            let mut tape = layerflow_tensor::Tape::new();
            let vars = register_params(&params, &mut tape).unwrap();
            let tokens = patchify(image.data(), 3, 32, 32, 8).unwrap();
            let cond = tape
                .constant(Tensor::from_f64_slice(vec![16, 192], &tokens).unwrap())
                .unwrap();
            let feat = encode_condition(&mut tape, vars.cond_w, vars.cond_b, cond).unwrap();
            tape.value(feat).to_f64_vec()
        };
        let (a, b, s) = (encode(&img_a), encode(&img_b), encode(&img_sum));
        for i in 0..s.len() {
            assert!(
                (s[i] - (a[i] + b[i])).abs() < 1e-12,
                "projection is not additive at {i}"
            );
        }
    }

    #[test]
    fn guidance_aligns_one_feature_per_token() {
        let params = init_params::<f64>(&config(), 7).unwrap();
        let stack = synth_stack(
            41,
            &SynthConfig {
                frame_size: 32,
                n_layers: 3,
                ..SynthConfig::default()
            },
        )
        .unwrap();
        let seq = assemble_sequence::<f64>(&stack, 8, 3).unwrap();
        let mut tape = layerflow_tensor::Tape::new();
        let vars = register_params(&params, &mut tape).unwrap();
        let cond = tape
            .constant(condition_tokens::<f64>(&stack.composite, 8).unwrap())
            .unwrap();
        let feat = encode_condition(&mut tape, vars.cond_w, vars.cond_b, cond).unwrap();
        let guidance = build_guidance(&mut tape, feat, &seq.layout, 2).unwrap();
        assert_eq!(tape.shape(guidance), [seq.len() + 2, 16]);
        let g = tape.value(guidance).clone();
        let f = tape.value(feat).clone();
        // Composite token 3 and background token 3 share cell 3's feature.
        assert_eq!(&g.data()[3 * 16..4 * 16], &f.data()[3 * 16..4 * 16]);
        assert_eq!(&g.data()[(16 + 3) * 16..(16 + 4) * 16], &f.data()[3 * 16..4 * 16]);
        // Padded rows are zero.
        assert!(g.data()[seq.len() * 16..].iter().all(|&v| v == 0.0));
    }
}
