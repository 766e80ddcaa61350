//! Dual-stream transformer over text and image tokens.
//!
//! Text and image tokens keep separate weight sets but attend jointly: per
//! block, each stream normalizes and projects its own tokens, the
//! projections are concatenated, rotary-encoded by position, mixed by one
//! shared attention, and routed back to their streams. The sampling time
//! enters through adaptive layer-norm modulation: a small MLP turns the
//! timestep into shift, scale and gate vectors applied around every
//! attention and feed-forward sublayer. Only the image stream has an output
//! head; it predicts one velocity per token.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use layerflow_tensor::{Element, Tape, Tensor, Var};

use crate::error::{ModelError, Result};
use crate::rope::RopeConfig;
use crate::tokenize::{PatchGrid, Position, SequenceLayout, LAYER_CHANNELS};

/// Additive mask value for padded keys; large enough that the padded
/// column underflows to an exact zero after softmax.
pub const MASK_VALUE: f64 = -1e30;

/// Epsilon inside the root-mean-square normalizer.
pub const RMS_EPS: f64 = 1e-6;

/// Standard deviation of weight initialization.
pub const INIT_STD: f64 = 0.02;

/// Backbone geometry and vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub patch_size: usize,
    /// Square frame edge in pixels.
    pub frame_size: usize,
    /// Maximum number of foreground layers.
    pub max_layers: usize,
    pub max_text_tokens: usize,
    /// Words the text conditioner understands, id = list index.
    pub vocab: Vec<String>,
    pub rope: RopeConfig,
    /// Re-inject image-conditioning features at the start of every block
    /// instead of only once before the first.
    pub mlca_every_block: bool,
}

impl ModelConfig {
    /// Small configuration trainable on one desktop CPU core.
    pub fn desk_default() -> Self {
        ModelConfig {
            d_model: 128,
            n_heads: 4,
            n_blocks: 4,
            patch_size: 8,
            frame_size: 64,
            max_layers: 6,
            max_text_tokens: 24,
            vocab: layerflow_imaging::vocabulary(),
            rope: RopeConfig::with_default_split(32).expect("default head dim splits"),
            mlca_every_block: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Err(ModelError::Config { reason });
        if self.d_model == 0 || self.n_heads == 0 || self.n_blocks == 0 {
            return fail("model dimensions must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return fail(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.n_heads
            ));
        }
        self.rope.validate()?;
        if self.rope.d_head != self.d_model / self.n_heads {
            return fail(format!(
                "rotary head dim {} does not match d_model {} over {} heads",
                self.rope.d_head, self.d_model, self.n_heads
            ));
        }
        if self.max_layers == 0 || self.max_text_tokens == 0 {
            return fail("layer and text capacities must be positive".into());
        }
        if self.vocab.is_empty() {
            return fail("vocabulary is empty".into());
        }
        // Grid construction checks patch divisibility.
        self.grid()?;
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Per-token channel count of the generated sequence (RGBA patches).
    pub fn token_dim(&self) -> usize {
        LAYER_CHANNELS * self.patch_size * self.patch_size
    }

    /// Per-token channel count of the conditioning image (RGB patches).
    pub fn cond_dim(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }

    pub fn grid(&self) -> Result<PatchGrid> {
        PatchGrid::new(self.frame_size, self.frame_size, self.patch_size)
    }

    /// Longest admissible image sequence: composite, background and every
    /// foreground at full frame.
    pub fn max_sequence_len(&self) -> Result<usize> {
        Ok((2 + self.max_layers) * self.grid()?.n_cells())
    }

    pub fn word_id(&self, word: &str) -> Result<usize> {
        self.vocab
            .iter()
            .position(|w| w == word)
            .ok_or_else(|| ModelError::Vocabulary { word: word.into() })
    }

    /// Turns a prompt into token ids; rejects unknown words and prompts
    /// beyond the text capacity.
    pub fn encode_prompt(&self, words: &[String]) -> Result<Vec<usize>> {
        if words.len() > self.max_text_tokens {
            return Err(ModelError::Capacity {
                what: "prompt length",
                got: words.len(),
                max: self.max_text_tokens,
            });
        }
        words.iter().map(|w| self.word_id(w)).collect()
    }
}

/// Weights of one stream (text or image) within one block.
#[derive(Debug, Clone)]
pub struct StreamParams<E: Element> {
    pub q_w: Tensor<E>,
    pub q_b: Tensor<E>,
    pub k_w: Tensor<E>,
    pub k_b: Tensor<E>,
    pub v_w: Tensor<E>,
    pub v_b: Tensor<E>,
    pub out_w: Tensor<E>,
    pub out_b: Tensor<E>,
    pub norm_attn_g: Tensor<E>,
    pub norm_mlp_g: Tensor<E>,
    pub mlp_w1: Tensor<E>,
    pub mlp_b1: Tensor<E>,
    pub mlp_w2: Tensor<E>,
    pub mlp_b2: Tensor<E>,
    /// Timestep modulation: maps the time feature to six `[d]` vectors
    /// (shift, scale, gate for attention, then for the feed-forward).
    pub mod_w: Tensor<E>,
    pub mod_b: Tensor<E>,
}

const STREAM_FIELDS: [&str; 16] = [
    "q_w", "q_b", "k_w", "k_b", "v_w", "v_b", "out_w", "out_b", "norm_attn_g", "norm_mlp_g",
    "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2", "mod_w", "mod_b",
];

impl<E: Element> StreamParams<E> {
    fn fields(&self) -> [&Tensor<E>; 16] {
        [
            &self.q_w,
            &self.q_b,
            &self.k_w,
            &self.k_b,
            &self.v_w,
            &self.v_b,
            &self.out_w,
            &self.out_b,
            &self.norm_attn_g,
            &self.norm_mlp_g,
            &self.mlp_w1,
            &self.mlp_b1,
            &self.mlp_w2,
            &self.mlp_b2,
            &self.mod_w,
            &self.mod_b,
        ]
    }

    fn fields_mut(&mut self) -> [&mut Tensor<E>; 16] {
        [
            &mut self.q_w,
            &mut self.q_b,
            &mut self.k_w,
            &mut self.k_b,
            &mut self.v_w,
            &mut self.v_b,
            &mut self.out_w,
            &mut self.out_b,
            &mut self.norm_attn_g,
            &mut self.norm_mlp_g,
            &mut self.mlp_w1,
            &mut self.mlp_b1,
            &mut self.mlp_w2,
            &mut self.mlp_b2,
            &mut self.mod_w,
            &mut self.mod_b,
        ]
    }
}

/// One dual-stream block.
#[derive(Debug, Clone)]
pub struct BlockParams<E: Element> {
    pub txt: StreamParams<E>,
    pub img: StreamParams<E>,
}

/// All backbone weights plus the configuration they were built for.
#[derive(Debug, Clone)]
pub struct ModelParams<E: Element> {
    pub config: ModelConfig,
    /// `[vocab, d]` word embeddings.
    pub text_embed: Tensor<E>,
    /// `[max_text_tokens, d]` learned text position offsets.
    pub text_pos: Tensor<E>,
    /// `[1, d]` embedding standing in for an absent prompt.
    pub null_text: Tensor<E>,
    pub time_w1: Tensor<E>,
    pub time_b1: Tensor<E>,
    pub time_w2: Tensor<E>,
    pub time_b2: Tensor<E>,
    /// `[token_dim, d]` input projection of noisy patch tokens.
    pub patch_in_w: Tensor<E>,
    pub patch_in_b: Tensor<E>,
    /// `[cond_dim, d]` projection of conditioning-image patches.
    pub cond_w: Tensor<E>,
    pub cond_b: Tensor<E>,
    pub blocks: Vec<BlockParams<E>>,
    pub final_mod_w: Tensor<E>,
    pub final_mod_b: Tensor<E>,
    pub final_norm_g: Tensor<E>,
    /// `[d, token_dim]` velocity head.
    pub patch_out_w: Tensor<E>,
    pub patch_out_b: Tensor<E>,
    /// `[d, token_dim]` time-gated elementwise skip from the noisy input
    /// tokens to the velocity output. Pixel-space patches make token_dim
    /// exceed d_model, so the patch_in/patch_out pair alone is a rank
    /// bottleneck that cannot pass the full noise content through; the skip
    /// restores a full-rank input path with a per-channel gain set by the
    /// timestep.
    pub skip_gate_w: Tensor<E>,
    pub skip_gate_b: Tensor<E>,
}

const HEAD_FIELDS: [&str; 11] = [
    "text_embed", "text_pos", "null_text", "time_w1", "time_b1", "time_w2", "time_b2",
    "patch_in_w", "patch_in_b", "cond_w", "cond_b",
];
const TAIL_FIELDS: [&str; 7] = [
    "final_mod_w", "final_mod_b", "final_norm_g", "patch_out_w", "patch_out_b",
    "skip_gate_w", "skip_gate_b",
];

impl<E: Element> ModelParams<E> {
    fn head_fields(&self) -> [&Tensor<E>; 11] {
        [
            &self.text_embed,
            &self.text_pos,
            &self.null_text,
            &self.time_w1,
            &self.time_b1,
            &self.time_w2,
            &self.time_b2,
            &self.patch_in_w,
            &self.patch_in_b,
            &self.cond_w,
            &self.cond_b,
        ]
    }

    fn tail_fields(&self) -> [&Tensor<E>; 7] {
        [
            &self.final_mod_w,
            &self.final_mod_b,
            &self.final_norm_g,
            &self.patch_out_w,
            &self.patch_out_b,
            &self.skip_gate_w,
            &self.skip_gate_b,
        ]
    }

    /// Stable (name, tensor) enumeration; declaration order, blocks by
    /// index with per-stream prefixes.
    pub fn named(&self) -> Vec<(String, &Tensor<E>)> {
        let mut out: Vec<(String, &Tensor<E>)> = HEAD_FIELDS
            .iter()
            .zip(self.head_fields())
            .map(|(n, t)| (n.to_string(), t))
            .collect();
        for (b, block) in self.blocks.iter().enumerate() {
            for (stream, params) in [("txt", &block.txt), ("img", &block.img)] {
                for (n, t) in STREAM_FIELDS.iter().zip(params.fields()) {
                    out.push((format!("block{b:02}.{stream}.{n}"), t));
                }
            }
        }
        out.extend(
            TAIL_FIELDS
                .iter()
                .zip(self.tail_fields())
                .map(|(n, t)| (n.to_string(), t)),
        );
        out
    }

    /// Mutable enumeration in the same order as `named`.
    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<E>)> {
        // Destructure once so the head, block and tail borrows are disjoint.
        let ModelParams {
            config: _,
            text_embed,
            text_pos,
            null_text,
            time_w1,
            time_b1,
            time_w2,
            time_b2,
            patch_in_w,
            patch_in_b,
            cond_w,
            cond_b,
            blocks,
            final_mod_w,
            final_mod_b,
            final_norm_g,
            patch_out_w,
            patch_out_b,
            skip_gate_w,
            skip_gate_b,
        } = self;
        let head: [&mut Tensor<E>; 11] = [
            text_embed, text_pos, null_text, time_w1, time_b1, time_w2, time_b2, patch_in_w,
            patch_in_b, cond_w, cond_b,
        ];
        let mut out: Vec<(String, &mut Tensor<E>)> = HEAD_FIELDS
            .iter()
            .map(|n| n.to_string())
            .zip(head)
            .collect();
        for (b, block) in blocks.iter_mut().enumerate() {
            for (stream, params) in [("txt", &mut block.txt), ("img", &mut block.img)] {
                for (n, t) in STREAM_FIELDS.iter().zip(params.fields_mut()) {
                    out.push((format!("block{b:02}.{stream}.{n}"), t));
                }
            }
        }
        let tail: [&mut Tensor<E>; 7] = [
            final_mod_w,
            final_mod_b,
            final_norm_g,
            patch_out_w,
            patch_out_b,
            skip_gate_w,
            skip_gate_b,
        ];
        out.extend(TAIL_FIELDS.iter().map(|n| n.to_string()).zip(tail));
        out
    }

    pub fn n_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Draws freshly initialized weights: centered normal for projections and
/// embeddings, zeros for biases, ones for normalizer gains. Modulation
/// weights are also normal so the timestep influences the output from the
/// first step.
pub fn init_params<E: Element>(config: &ModelConfig, seed: u64) -> Result<ModelParams<E>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("fixed standard deviation");
    let mut w = |shape: Vec<usize>| -> Tensor<E> {
        let n = shape.iter().product();
        let data: Vec<E> = (0..n)
            .map(|_| E::from_f64(normal.sample(&mut rng)))
            .collect();
        Tensor::new(shape, data).expect("shape matches data")
    };
    let d = config.d_model;
    // Declaration order fixes the RNG draw order.
    let text_embed = w(vec![config.vocab.len(), d]);
    let text_pos = w(vec![config.max_text_tokens, d]);
    let null_text = w(vec![1, d]);
    let time_w1 = w(vec![d, d]);
    let time_w2 = w(vec![d, d]);
    let patch_in_w = w(vec![config.token_dim(), d]);
    let cond_w = w(vec![config.cond_dim(), d]);
    let blocks: Vec<BlockParams<E>> = {
        let mut stream = |d: usize| StreamParams {
            q_w: w(vec![d, d]),
            q_b: Tensor::zeros(vec![d]),
            k_w: w(vec![d, d]),
            k_b: Tensor::zeros(vec![d]),
            v_w: w(vec![d, d]),
            v_b: Tensor::zeros(vec![d]),
            out_w: w(vec![d, d]),
            out_b: Tensor::zeros(vec![d]),
            norm_attn_g: Tensor::ones(vec![d]),
            norm_mlp_g: Tensor::ones(vec![d]),
            mlp_w1: w(vec![d, 4 * d]),
            mlp_b1: Tensor::zeros(vec![4 * d]),
            mlp_w2: w(vec![4 * d, d]),
            mlp_b2: Tensor::zeros(vec![d]),
            mod_w: w(vec![d, 6 * d]),
            mod_b: Tensor::zeros(vec![6 * d]),
        };
        (0..config.n_blocks)
            .map(|_| BlockParams {
                txt: stream(d),
                img: stream(d),
            })
            .collect()
    };
    let final_mod_w = w(vec![d, 2 * d]);
    let patch_out_w = w(vec![d, config.token_dim()]);
    let skip_gate_w = w(vec![d, config.token_dim()]);
    Ok(ModelParams {
        config: config.clone(),
        text_embed,
        text_pos,
        null_text,
        time_w1,
        time_b1: Tensor::zeros(vec![d]),
        time_w2,
        time_b2: Tensor::zeros(vec![d]),
        patch_in_w,
        patch_in_b: Tensor::zeros(vec![d]),
        cond_w,
        cond_b: Tensor::zeros(vec![d]),
        blocks,
        final_mod_w,
        final_mod_b: Tensor::zeros(vec![2 * d]),
        final_norm_g: Tensor::ones(vec![d]),
        patch_out_w,
        patch_out_b: Tensor::zeros(vec![config.token_dim()]),
        skip_gate_w,
        skip_gate_b: Tensor::zeros(vec![config.token_dim()]),
    })
}

/// Tape handles of one stream's weights.
#[derive(Debug, Clone, Copy)]
pub struct StreamVars {
    pub q_w: Var,
    pub q_b: Var,
    pub k_w: Var,
    pub k_b: Var,
    pub v_w: Var,
    pub v_b: Var,
    pub out_w: Var,
    pub out_b: Var,
    pub norm_attn_g: Var,
    pub norm_mlp_g: Var,
    pub mlp_w1: Var,
    pub mlp_b1: Var,
    pub mlp_w2: Var,
    pub mlp_b2: Var,
    pub mod_w: Var,
    pub mod_b: Var,
}

impl StreamVars {
    fn from_slice(v: &[Var]) -> Self {
        let [q_w, q_b, k_w, k_b, v_w, v_b, out_w, out_b, norm_attn_g, norm_mlp_g, mlp_w1, mlp_b1, mlp_w2, mlp_b2, mod_w, mod_b]: [Var; 16] =
            v.try_into().expect("sixteen stream fields");
        StreamVars {
            q_w,
            q_b,
            k_w,
            k_b,
            v_w,
            v_b,
            out_w,
            out_b,
            norm_attn_g,
            norm_mlp_g,
            mlp_w1,
            mlp_b1,
            mlp_w2,
            mlp_b2,
            mod_w,
            mod_b,
        }
    }
}

/// Tape handles of one block.
#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub txt: StreamVars,
    pub img: StreamVars,
}

/// Tape handles of all weights, plus the flat registration order used to
/// collect gradients by name.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub text_embed: Var,
    pub text_pos: Var,
    pub null_text: Var,
    pub time_w1: Var,
    pub time_b1: Var,
    pub time_w2: Var,
    pub time_b2: Var,
    pub patch_in_w: Var,
    pub patch_in_b: Var,
    pub cond_w: Var,
    pub cond_b: Var,
    pub blocks: Vec<BlockVars>,
    pub final_mod_w: Var,
    pub final_mod_b: Var,
    pub final_norm_g: Var,
    pub patch_out_w: Var,
    pub patch_out_b: Var,
    pub skip_gate_w: Var,
    pub skip_gate_b: Var,
    /// Vars in `ModelParams::named` order.
    pub ordered: Vec<Var>,
}

/// Copies every weight onto a tape as gradient-bearing leaves.
pub fn register_params<E: Element>(
    params: &ModelParams<E>,
    tape: &mut Tape<E>,
) -> Result<ModelVars> {
    let named = params.named();
    let mut ordered = Vec::with_capacity(named.len());
    for (_, tensor) in &named {
        ordered.push(tape.leaf((*tensor).clone(), true)?);
    }
    let n_stream = STREAM_FIELDS.len();
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for b in 0..params.blocks.len() {
        let base = HEAD_FIELDS.len() + b * 2 * n_stream;
        blocks.push(BlockVars {
            txt: StreamVars::from_slice(&ordered[base..base + n_stream]),
            img: StreamVars::from_slice(&ordered[base + n_stream..base + 2 * n_stream]),
        });
    }
    let head = &ordered[..HEAD_FIELDS.len()];
    let tail = &ordered[ordered.len() - TAIL_FIELDS.len()..];
    Ok(ModelVars {
        text_embed: head[0],
        text_pos: head[1],
        null_text: head[2],
        time_w1: head[3],
        time_b1: head[4],
        time_w2: head[5],
        time_b2: head[6],
        patch_in_w: head[7],
        patch_in_b: head[8],
        cond_w: head[9],
        cond_b: head[10],
        blocks,
        final_mod_w: tail[0],
        final_mod_b: tail[1],
        final_norm_g: tail[2],
        patch_out_w: tail[3],
        patch_out_b: tail[4],
        skip_gate_w: tail[5],
        skip_gate_b: tail[6],
        ordered,
    })
}

/// Sinusoidal embedding of the sampling time, scaled by 1000 so nearby
/// timesteps in the unit interval stay distinguishable.
pub fn time_embedding(t: f64, d: usize) -> Vec<f64> {
    assert!(d % 2 == 0, "time embedding needs an even width");
    let half = d / 2;
    let scaled = t * 1000.0;
    let mut out = vec![0.0; d];
    for i in 0..half {
        let freq = 10_000f64.powf(-(i as f64) / half as f64);
        out[i] = (scaled * freq).sin();
        out[half + i] = (scaled * freq).cos();
    }
    out
}

/// One forward evaluation's inputs.
pub struct ForwardInput<'a> {
    /// `[len + pad_extra, token_dim]` noisy tokens already on the tape.
    pub noisy: Var,
    pub layout: &'a SequenceLayout,
    /// Sampling time in the unit interval.
    pub t: f64,
    /// Prompt ids; empty means unconditioned (the null embedding).
    pub text_ids: &'a [usize],
    /// `[len + pad_extra, d]` conditioning features to add after the input
    /// projection, if image conditioning is active.
    pub guidance: Option<Var>,
    /// Appended masked tokens, exercised by the masking tests.
    pub pad_extra: usize,
}

/// Runs the backbone and returns per-token velocities
/// `[len + pad_extra, token_dim]`; padded rows carry no meaning.
pub fn forward<E: Element>(
    tape: &mut Tape<E>,
    vars: &ModelVars,
    config: &ModelConfig,
    input: &ForwardInput<'_>,
) -> Result<Var> {
    let d = config.d_model;
    let (heads, dh) = (config.n_heads, config.d_head());
    let n_img = input.layout.len() + input.pad_extra;
    check_forward_input(tape, config, input, n_img)?;

    // Text stream: embedded prompt or the null token.
    let mut txt = if input.text_ids.is_empty() {
        vars.null_text
    } else {
        let embedded = tape.gather_rows(vars.text_embed, input.text_ids)?;
        let pos = tape.slice0(vars.text_pos, 0, input.text_ids.len())?;
        tape.add(embedded, pos)?
    };
    let n_txt = tape.shape(txt)[0];
    let total = n_txt + n_img;

    // Joint rotary table: text sentinels, image grid positions, then
    // padding sentinels on their own layer line.
    let mut positions: Vec<Position> = (0..n_txt).map(Position::text).collect();
    positions.extend_from_slice(&input.layout.positions);
    positions.extend((0..input.pad_extra).map(|i| Position {
        l: -2,
        h: 0,
        w: i as i64,
    }));
    check_unique_positions(&positions)?;
    let table = config.rope.rotation_table::<E>(&positions);

    // Additive attention mask, present only when padding is.
    let mask = if input.pad_extra > 0 {
        let mut m = vec![E::zero(); heads * total * total];
        for h in 0..heads {
            for i in 0..total {
                for j in total - input.pad_extra..total {
                    m[(h * total + i) * total + j] = E::from_f64(MASK_VALUE);
                }
            }
        }
        Some(tape.constant(Tensor::new(vec![heads, total, total], m)?)?)
    } else {
        None
    };

    // Time feature and the image-token input projection.
    let t_emb = tape.constant(Tensor::from_f64_slice(
        vec![1, d],
        &time_embedding(input.t, d),
    )?)?;
    let h1 = affine(tape, t_emb, vars.time_w1, vars.time_b1)?;
    let h1 = tape.silu(h1)?;
    let tau = affine(tape, h1, vars.time_w2, vars.time_b2)?;

    let mut img = affine(tape, input.noisy, vars.patch_in_w, vars.patch_in_b)?;
    if let Some(g) = input.guidance {
        img = tape.add(img, g)?;
    }

    for (b, block) in vars.blocks.iter().enumerate() {
        if b > 0 && config.mlca_every_block {
            if let Some(g) = input.guidance {
                img = tape.add(img, g)?;
            }
        }
        let txt_mod = Modulation::project(tape, tau, &block.txt, d)?;
        let img_mod = Modulation::project(tape, tau, &block.img, d)?;

        // Per-stream pre-attention projections.
        let txt_in = modulated_norm(tape, txt, block.txt.norm_attn_g, txt_mod.attn)?;
        let img_in = modulated_norm(tape, img, block.img.norm_attn_g, img_mod.attn)?;
        let q_txt = affine(tape, txt_in, block.txt.q_w, block.txt.q_b)?;
        let k_txt = affine(tape, txt_in, block.txt.k_w, block.txt.k_b)?;
        let v_txt = affine(tape, txt_in, block.txt.v_w, block.txt.v_b)?;
        let q_img = affine(tape, img_in, block.img.q_w, block.img.q_b)?;
        let k_img = affine(tape, img_in, block.img.k_w, block.img.k_b)?;
        let v_img = affine(tape, img_in, block.img.v_w, block.img.v_b)?;

        // Shared attention over the concatenated sequence.
        let to_heads = |tape: &mut Tape<E>, txt_part: Var, img_part: Var| -> Result<Var> {
            let joint = tape.concat0(&[txt_part, img_part])?;
            let shaped = tape.reshape(joint, vec![total, heads, dh])?;
            Ok(shaped)
        };
        let q = to_heads(tape, q_txt, q_img)?;
        let k = to_heads(tape, k_txt, k_img)?;
        let v = to_heads(tape, v_txt, v_img)?;
        let q = tape.rope(q, &table)?;
        let k = tape.rope(k, &table)?;
        let q = tape.permute(q, &[1, 0, 2])?;
        let k = tape.permute(k, &[1, 0, 2])?;
        let v = tape.permute(v, &[1, 0, 2])?;
        let mut scores = tape.matmul_transb(q, k)?;
        scores = tape.scale(scores, 1.0 / (dh as f64).sqrt())?;
        if let Some(m) = mask {
            scores = tape.add(scores, m)?;
        }
        let probs = tape.softmax(scores, 2)?;
        let ctx = tape.matmul(probs, v)?;
        let ctx = tape.permute(ctx, &[1, 0, 2])?;
        let ctx = tape.reshape(ctx, vec![total, d])?;
        let ctx_txt = tape.slice0(ctx, 0, n_txt)?;
        let ctx_img = tape.slice0(ctx, n_txt, n_img)?;

        txt = stream_post_attention(tape, txt, ctx_txt, &block.txt, &txt_mod)?;
        img = stream_post_attention(tape, img, ctx_img, &block.img, &img_mod)?;
        txt = stream_mlp(tape, txt, &block.txt, &txt_mod)?;
        img = stream_mlp(tape, img, &block.img, &img_mod)?;
    }

    // Image-stream head.
    let fm = affine(tape, tau, vars.final_mod_w, vars.final_mod_b)?;
    let fm = tape.reshape(fm, vec![2, d])?;
    let f_shift = row(tape, fm, 0, d)?;
    let f_scale = row(tape, fm, 1, d)?;
    let xn = tape.rms_norm(img, vars.final_norm_g, RMS_EPS)?;
    let xm = modulate(tape, xn, f_scale, f_shift)?;
    let head = affine(tape, xm, vars.patch_out_w, vars.patch_out_b)?;

    // Full-rank skip from the noisy tokens, gated per channel by the
    // timestep: the exact velocity depends linearly on x_t with a
    // t-dependent coefficient, and token_dim > d_model means that
    // dependence cannot survive the patch_in/patch_out compression.
    let beta = affine(tape, tau, vars.skip_gate_w, vars.skip_gate_b)?;
    let beta = tape.reshape(beta, vec![config.token_dim()])?;
    let anchored = tape.mul_bias(input.noisy, beta)?;
    Ok(tape.add(head, anchored)?)
}

fn check_forward_input<E: Element>(
    tape: &Tape<E>,
    config: &ModelConfig,
    input: &ForwardInput<'_>,
    n_img: usize,
) -> Result<()> {
    if input.layout.len() > config.max_sequence_len()? {
        return Err(ModelError::Capacity {
            what: "image sequence length",
            got: input.layout.len(),
            max: config.max_sequence_len()?,
        });
    }
    if input.text_ids.len() > config.max_text_tokens {
        return Err(ModelError::Capacity {
            what: "prompt length",
            got: input.text_ids.len(),
            max: config.max_text_tokens,
        });
    }
    for &id in input.text_ids {
        if id >= config.vocab.len() {
            return Err(ModelError::TokenId {
                id,
                vocab: config.vocab.len(),
            });
        }
    }
    if !(0.0..=1.0).contains(&input.t) {
        return Err(ModelError::Time { t: input.t });
    }
    let want = [n_img, config.token_dim()];
    if tape.shape(input.noisy) != want {
        return Err(ModelError::Sequence {
            reason: format!(
                "noisy tokens have shape {:?}, expected {:?}",
                tape.shape(input.noisy),
                want
            ),
        });
    }
    if let Some(g) = input.guidance {
        if tape.shape(g) != [n_img, config.d_model] {
            return Err(ModelError::Sequence {
                reason: format!(
                    "guidance has shape {:?}, expected [{n_img}, {}]",
                    tape.shape(g),
                    config.d_model
                ),
            });
        }
    }
    Ok(())
}

fn check_unique_positions(positions: &[Position]) -> Result<()> {
    let mut seen = std::collections::HashSet::with_capacity(positions.len());
    for p in positions {
        if !seen.insert((p.l, p.h, p.w)) {
            return Err(ModelError::Sequence {
                reason: format!("duplicate token position ({}, {}, {})", p.l, p.h, p.w),
            });
        }
    }
    Ok(())
}

/// Shift, scale and gate handles for one sublayer pair.
struct Modulation {
    attn: (Var, Var, Var),
    mlp: (Var, Var, Var),
}

impl Modulation {
    /// Projects the time feature into the six modulation vectors. Gates are
    /// parameterized around identity (the branch is multiplied by 1 + g) so
    /// residual branches carry full strength at initialization; a zero-centered
    /// gate would scale every branch by the init noise and stall training.
    fn project<E: Element>(
        tape: &mut Tape<E>,
        tau: Var,
        stream: &StreamVars,
        d: usize,
    ) -> Result<Self> {
        let m = affine(tape, tau, stream.mod_w, stream.mod_b)?;
        let m = tape.reshape(m, vec![6, d])?;
        let mut rows = Vec::with_capacity(6);
        for r in 0..6 {
            rows.push(row(tape, m, r, d)?);
        }
        let attn_gate = tape.add_const(rows[2], 1.0)?;
        let mlp_gate = tape.add_const(rows[5], 1.0)?;
        Ok(Modulation {
            attn: (rows[0], rows[1], attn_gate),
            mlp: (rows[3], rows[4], mlp_gate),
        })
    }
}

fn row<E: Element>(tape: &mut Tape<E>, m: Var, r: usize, d: usize) -> Result<Var> {
    let s = tape.slice0(m, r, 1)?;
    Ok(tape.reshape(s, vec![d])?)
}

fn affine<E: Element>(tape: &mut Tape<E>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    Ok(tape.add_bias(y, b)?)
}

/// `x * (1 + scale) + shift` with per-channel vectors.
fn modulate<E: Element>(tape: &mut Tape<E>, x: Var, scale: Var, shift: Var) -> Result<Var> {
    let s1 = tape.add_const(scale, 1.0)?;
    let y = tape.mul_bias(x, s1)?;
    Ok(tape.add_bias(y, shift)?)
}

fn modulated_norm<E: Element>(
    tape: &mut Tape<E>,
    x: Var,
    gain: Var,
    (shift, scale, _gate): (Var, Var, Var),
) -> Result<Var> {
    let n = tape.rms_norm(x, gain, RMS_EPS)?;
    modulate(tape, n, scale, shift)
}

fn stream_post_attention<E: Element>(
    tape: &mut Tape<E>,
    x: Var,
    ctx: Var,
    stream: &StreamVars,
    m: &Modulation,
) -> Result<Var> {
    let o = affine(tape, ctx, stream.out_w, stream.out_b)?;
    let gated = tape.mul_bias(o, m.attn.2)?;
    Ok(tape.add(x, gated)?)
}

fn stream_mlp<E: Element>(
    tape: &mut Tape<E>,
    x: Var,
    stream: &StreamVars,
    m: &Modulation,
) -> Result<Var> {
    let xm = modulated_norm(tape, x, stream.norm_mlp_g, m.mlp)?;
    let h = affine(tape, xm, stream.mlp_w1, stream.mlp_b1)?;
    let h = tape.gelu(h)?;
    let o = affine(tape, h, stream.mlp_w2, stream.mlp_b2)?;
    let gated = tape.mul_bias(o, m.mlp.2)?;
    Ok(tape.add(x, gated)?)
}
