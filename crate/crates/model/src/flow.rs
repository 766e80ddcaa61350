//! Rectified-flow training and sampling around the backbone.
//!
//! Training regresses per-token velocities: a clean sequence is mixed with
//! Gaussian noise at a random time, and the backbone must predict
//! `noise - clean`. Sampling integrates that velocity field backwards from
//! pure noise with explicit Euler steps, optionally steering each step by
//! classifier-free guidance: the prompt-free branch keeps the composite
//! conditioning and only swaps the text for the null embedding.
//!
//! Every training step derives its randomness from `(seed, step)` alone,
//! so training N+M steps bitwise-equals training N, checkpointing, and
//! resuming for M.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use layerflow_imaging::{BBox, LayerStack, RgbImage};
use layerflow_tensor::{
    adam_step, load_checkpoint, save_checkpoint, AdamConfig, AdamState, Element, Tape, Tensor,
    Var,
};

use crate::backbone::{forward, register_params, ForwardInput, ModelConfig, ModelParams, ModelVars};
use crate::error::{ModelError, Result};
use crate::mlca::{build_guidance, condition_tokens, encode_condition, guidance_cell_ids};
use crate::tokenize::{assemble_layout, assemble_sequence, scatter_to_layers, SequenceLayout,
    TokenSequence, COMPOSITE_LAYER};

/// Optimization schedule and loss shaping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Per-sample probability of replacing the prompt with the null
    /// embedding during training.
    pub text_drop: f64,
    /// Loss weight on background and foreground tokens.
    pub weight_layers: f64,
    /// Loss weight on composite tokens; zero turns that supervision off.
    pub weight_composite: f64,
    /// Worker threads for the batch; gradients are reduced in sample order
    /// so the count does not change results.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 3000,
            batch_size: 4,
            lr: 1e-3,
            seed: 0,
            text_drop: 0.1,
            weight_layers: 1.0,
            weight_composite: 1.0,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Err(ModelError::Config { reason });
        if self.steps == 0 || self.batch_size == 0 || self.threads == 0 {
            return fail("steps, batch size and threads must be positive".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return fail(format!("learning rate {} must be finite and positive", self.lr));
        }
        if !(0.0..=1.0).contains(&self.text_drop) {
            return fail(format!("text-drop probability {} outside [0, 1]", self.text_drop));
        }
        if self.weight_layers < 0.0 || self.weight_composite < 0.0 {
            return fail("loss weights must be non-negative".into());
        }
        if self.weight_layers + self.weight_composite == 0.0 {
            return fail("at least one loss weight must be positive".into());
        }
        Ok(())
    }
}

/// Sampler controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    /// Euler steps from t = 1 down to t = 0.
    pub n_steps: usize,
    /// Guidance strength; exactly one skips the unconditional branch.
    pub cfg_scale: f64,
    pub seed: u64,
    /// Keep composite conditioning in the unconditional branch (the
    /// default); disabling it reproduces the conditioning-drop ablation.
    pub image_cond_in_uncond: bool,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            n_steps: 20,
            cfg_scale: 2.0,
            seed: 0,
            image_cond_in_uncond: true,
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(ModelError::Config {
                reason: "sampler needs at least one step".into(),
            });
        }
        if !(self.cfg_scale.is_finite() && self.cfg_scale >= 0.0) {
            return Err(ModelError::Config {
                reason: format!("guidance scale {} must be finite and >= 0", self.cfg_scale),
            });
        }
        Ok(())
    }
}

/// Straight-line mix `(1 - t) * clean + t * noise`.
pub fn interpolate<E: Element>(clean: &Tensor<E>, noise: &Tensor<E>, t: f64) -> Result<Tensor<E>> {
    if clean.shape() != noise.shape() {
        return Err(ModelError::Sequence {
            reason: format!(
                "interpolation endpoints differ in shape: {:?} vs {:?}",
                clean.shape(),
                noise.shape()
            ),
        });
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(ModelError::Time { t });
    }
    let (a, b) = (E::from_f64(1.0 - t), E::from_f64(t));
    let data = clean
        .data()
        .iter()
        .zip(noise.data())
        .map(|(&x0, &x1)| a * x0 + b * x1)
        .collect();
    Ok(Tensor::new(clean.shape().to_vec(), data)?)
}

/// One stack readied for training.
#[derive(Debug, Clone)]
pub struct PreparedSample<E: Element> {
    pub seq: TokenSequence<E>,
    /// `[cells, cond_dim]` patchified composite.
    pub cond: Tensor<E>,
    pub text_ids: Vec<usize>,
}

pub fn prepare_sample<E: Element>(
    stack: &LayerStack,
    config: &ModelConfig,
) -> Result<PreparedSample<E>> {
    if stack.width() != config.frame_size || stack.height() != config.frame_size {
        return Err(ModelError::Config {
            reason: format!(
                "stack is {}x{} but the model expects {} pixel frames",
                stack.width(),
                stack.height(),
                config.frame_size
            ),
        });
    }
    Ok(PreparedSample {
        seq: assemble_sequence(stack, config.patch_size, config.max_layers)?,
        cond: condition_tokens(&stack.composite, config.patch_size)?,
        text_ids: config.encode_prompt(&stack.global_prompt)?,
    })
}

/// Per-token loss weights and the weighted normalizer `sum(w) * token_dim`.
fn token_weights(layout: &SequenceLayout, train: &TrainConfig) -> (Vec<f64>, f64) {
    let mut weights = vec![0.0; layout.len()];
    for seg in &layout.segments {
        let w = if seg.layer_id == COMPOSITE_LAYER {
            train.weight_composite
        } else {
            train.weight_layers
        };
        for v in &mut weights[seg.start..seg.start + seg.len] {
            *v = w;
        }
    }
    let total: f64 = weights.iter().sum();
    (weights, total)
}

/// Builds one sample's weighted flow-matching loss on the tape and returns
/// the scalar node. `loss_scale` multiplies the normalized loss (the batch
/// average is formed by passing `1 / batch_size`).
#[allow(clippy::too_many_arguments)]
pub fn sample_loss<E: Element>(
    tape: &mut Tape<E>,
    vars: &ModelVars,
    config: &ModelConfig,
    train: &TrainConfig,
    sample: &PreparedSample<E>,
    t: f64,
    noise: &Tensor<E>,
    drop_text: bool,
    loss_scale: f64,
) -> Result<Var> {
    let x_t = interpolate(&sample.seq.tokens, noise, t)?;
    let noisy = tape.constant(x_t)?;
    let cond = tape.constant(sample.cond.clone())?;
    let grid_feat = encode_condition(tape, vars.cond_w, vars.cond_b, cond)?;
    let guidance = build_guidance(tape, grid_feat, &sample.seq.layout, 0)?;
    let ids: &[usize] = if drop_text { &[] } else { &sample.text_ids };
    let velocity = forward(
        tape,
        vars,
        config,
        &ForwardInput {
            noisy,
            layout: &sample.seq.layout,
            t,
            text_ids: ids,
            guidance: Some(guidance),
            pad_extra: 0,
        },
    )?;

    let dim = sample.seq.token_dim();
    let mut target = vec![E::zero(); sample.seq.len() * dim];
    for (i, v) in target.iter_mut().enumerate() {
        *v = noise.data()[i] - sample.seq.tokens.data()[i];
    }
    let target = tape.constant(Tensor::new(vec![sample.seq.len(), dim], target)?)?;

    let (weights, total_w) = token_weights(&sample.seq.layout, train);
    if total_w == 0.0 {
        return Err(ModelError::Config {
            reason: "loss weights zero out every token of this sample".into(),
        });
    }
    let mut wmask = vec![E::zero(); sample.seq.len() * dim];
    for (row, &w) in weights.iter().enumerate() {
        let w = E::from_f64(w);
        for v in &mut wmask[row * dim..(row + 1) * dim] {
            *v = w;
        }
    }
    let wmask = tape.constant(Tensor::new(vec![sample.seq.len(), dim], wmask)?)?;

    let diff = tape.sub(velocity, target)?;
    let sq = tape.mul(diff, diff)?;
    let weighted = tape.mul(sq, wmask)?;
    let sum = tape.sum_all(weighted)?;
    Ok(tape.scale(sum, loss_scale / (total_w * dim as f64))?)
}

/// Plain-tensor recomputation of the weighted loss from a velocity value;
/// the tape-built loss must agree with this.
pub fn reference_loss<E: Element>(
    velocity: &Tensor<E>,
    sample: &PreparedSample<E>,
    noise: &Tensor<E>,
    train: &TrainConfig,
) -> f64 {
    let dim = sample.seq.token_dim();
    let (weights, total_w) = token_weights(&sample.seq.layout, train);
    let mut acc = 0.0;
    for row in 0..sample.seq.len() {
        let w = weights[row];
        for c in 0..dim {
            let i = row * dim + c;
            let target = Element::to_f64(noise.data()[i]) - Element::to_f64(sample.seq.tokens.data()[i]);
            let d = Element::to_f64(velocity.data()[i]) - target;
            acc += w * d * d;
        }
    }
    acc / (total_w * dim as f64)
}

/// Conditional/unconditional evaluation counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CfgStats {
    pub cond_evals: u64,
    pub uncond_evals: u64,
}

/// Conditioning features precomputed once per sampling run.
pub struct SamplingCondition<E: Element> {
    layout: SequenceLayout,
    /// `[len, d]` guidance rows, one per token.
    guidance: Tensor<E>,
    text_ids: Vec<usize>,
}

impl<E: Element> SamplingCondition<E> {
    pub fn layout(&self) -> &SequenceLayout {
        &self.layout
    }
}

/// Encodes the composite and gathers per-token guidance outside any
/// training tape.
pub fn prepare_condition<E: Element>(
    params: &ModelParams<E>,
    composite: &RgbImage,
    layout: SequenceLayout,
    prompt: &[String],
) -> Result<SamplingCondition<E>> {
    let config = &params.config;
    if composite.width() != config.frame_size || composite.height() != config.frame_size {
        return Err(ModelError::Config {
            reason: format!(
                "composite is {}x{} but the model expects {} pixel frames",
                composite.width(),
                composite.height(),
                config.frame_size
            ),
        });
    }
    let text_ids = config.encode_prompt(prompt)?;
    let mut tape: Tape<E> = Tape::new();
    let cond_w = tape.leaf(params.cond_w.clone(), false)?;
    let cond_b = tape.leaf(params.cond_b.clone(), false)?;
    let cond = tape.constant(condition_tokens(composite, config.patch_size)?)?;
    let feat = encode_condition(&mut tape, cond_w, cond_b, cond)?;
    let guidance = build_guidance(&mut tape, feat, &layout, 0)?;
    let guidance = tape.value(guidance).clone();
    debug_assert_eq!(guidance_cell_ids(&layout).len(), layout.len());
    Ok(SamplingCondition {
        layout,
        guidance,
        text_ids,
    })
}

/// Guided velocity at one timestep. Guidance scale one evaluates only the
/// conditional branch; zero only the unconditional one. The unconditional
/// branch keeps the composite conditioning unless configured otherwise.
pub fn cfg_velocity<E: Element>(
    params: &ModelParams<E>,
    condition: &SamplingCondition<E>,
    x: &Tensor<E>,
    t: f64,
    sampling: &SampleConfig,
    stats: &mut CfgStats,
) -> Result<Tensor<E>> {
    let eval = |text_ids: &[usize], with_image: bool| -> Result<Tensor<E>> {
        let mut tape: Tape<E> = Tape::new();
        let vars = register_params(params, &mut tape)?;
        let noisy = tape.constant(x.clone())?;
        let guidance = if with_image {
            Some(tape.constant(condition.guidance.clone())?)
        } else {
            None
        };
        let out = forward(
            &mut tape,
            &vars,
            &params.config,
            &ForwardInput {
                noisy,
                layout: &condition.layout,
                t,
                text_ids,
                guidance,
                pad_extra: 0,
            },
        )?;
        Ok(tape.value(out).clone())
    };
    if sampling.cfg_scale == 1.0 {
        stats.cond_evals += 1;
        return eval(&condition.text_ids, true);
    }
    if sampling.cfg_scale == 0.0 {
        stats.uncond_evals += 1;
        return eval(&[], sampling.image_cond_in_uncond);
    }
    stats.cond_evals += 1;
    stats.uncond_evals += 1;
    let cond = eval(&condition.text_ids, true)?;
    let uncond = eval(&[], sampling.image_cond_in_uncond)?;
    let s = E::from_f64(sampling.cfg_scale);
    let data = uncond
        .data()
        .iter()
        .zip(cond.data())
        .map(|(&u, &c)| u + s * (c - u))
        .collect();
    Ok(Tensor::new(cond.shape().to_vec(), data)?)
}

/// Decomposes a composite into layers: Euler-integrates the velocity field
/// from Gaussian noise at t = 1 down to t = 0, then decodes the tokens.
/// Token values are never clamped during integration, only at decode.
pub fn sample<E: Element>(
    params: &ModelParams<E>,
    composite: &RgbImage,
    boxes: &[BBox],
    prompt: &[String],
    sampling: &SampleConfig,
) -> Result<(LayerStack, CfgStats)> {
    sampling.validate()?;
    let config = &params.config;
    let layout = assemble_layout(
        config.frame_size,
        config.frame_size,
        boxes,
        config.patch_size,
        config.max_layers,
    )?;
    let condition = prepare_condition(params, composite, layout, prompt)?;
    let dim = config.token_dim();
    let len = condition.layout.len();

    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    let data: Vec<E> = (0..len * dim)
        .map(|_| E::from_f64(rng.sample(StandardNormal)))
        .collect();
    let mut x = Tensor::new(vec![len, dim], data)?;

    let mut stats = CfgStats::default();
    let dt = 1.0 / sampling.n_steps as f64;
    for k in 0..sampling.n_steps {
        let t = 1.0 - k as f64 * dt;
        let v = cfg_velocity(params, &condition, &x, t, sampling, &mut stats)?;
        let step = E::from_f64(dt);
        for (xe, &ve) in x.data_mut().iter_mut().zip(v.data()) {
            *xe -= step * ve;
        }
        if !x.is_finite() {
            return Err(ModelError::Numeric {
                step: k as u64,
                reason: "sampler state became non-finite".into(),
            });
        }
    }

    let seq = TokenSequence {
        tokens: x,
        layout: condition.layout.clone(),
    };
    let mut stack = scatter_to_layers(&seq)?;
    stack.global_prompt = prompt.to_vec();
    Ok((stack, stats))
}

/// Training driver owning the weights and optimizer state.
pub struct Trainer<E: Element> {
    pub params: ModelParams<E>,
    pub train: TrainConfig,
    opt: AdamState<E>,
    completed: u64,
}

impl<E: Element> Trainer<E> {
    pub fn new(params: ModelParams<E>, train: TrainConfig) -> Result<Self> {
        train.validate()?;
        let shapes: Vec<Vec<usize>> = params
            .named()
            .iter()
            .map(|(_, t)| t.shape().to_vec())
            .collect();
        Ok(Trainer {
            params,
            train,
            opt: AdamState::new(&shapes),
            completed: 0,
        })
    }

    /// Steps applied so far.
    pub fn completed(&self) -> u64 {
        self.completed
    }

    /// RNG for one step, derived from the seed and step index only.
    fn step_rng(&self, step: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.train.seed);
        rng.set_stream(step);
        rng
    }

    /// Runs one optimization step over a batch drawn from `data` and
    /// returns the batch loss.
    pub fn step(&mut self, data: &[PreparedSample<E>]) -> Result<f64> {
        if data.is_empty() {
            return Err(ModelError::Config {
                reason: "training dataset is empty".into(),
            });
        }
        let step = self.completed;
        let mut rng = self.step_rng(step);
        let batch = self.train.batch_size;
        let mut draws = Vec::with_capacity(batch);
        for _ in 0..batch {
            let index = rng.gen_range(0..data.len());
            let t: f64 = rng.gen();
            let drop_text = rng.gen_bool(self.train.text_drop);
            let sample = &data[index];
            let noise: Vec<E> = (0..sample.seq.tokens.numel())
                .map(|_| E::from_f64(rng.sample(StandardNormal)))
                .collect();
            let noise = Tensor::new(sample.seq.tokens.shape().to_vec(), noise)?;
            draws.push((index, t, drop_text, noise));
        }

        let loss_scale = 1.0 / batch as f64;
        let jobs: Vec<SampleJob<'_, E>> = draws
            .iter()
            .map(|(index, t, drop_text, noise)| SampleJob {
                params: &self.params,
                train: &self.train,
                sample: &data[*index],
                t: *t,
                drop_text: *drop_text,
                noise,
                loss_scale,
            })
            .collect();
        let results = run_jobs(&jobs, self.train.threads)?;

        // Reduce in sample order so the thread count cannot change sums.
        let n_params = self.opt.m.len();
        let mut total_loss = 0.0;
        let mut grads: Vec<Option<Tensor<E>>> = (0..n_params).map(|_| None).collect();
        for (loss, sample_grads) in results {
            total_loss += loss;
            for (slot, g) in grads.iter_mut().zip(sample_grads) {
                match (slot.as_mut(), g) {
                    (Some(acc), Some(g)) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += *b;
                        }
                    }
                    (None, Some(g)) => *slot = Some(g),
                    _ => {}
                }
            }
        }
        if !total_loss.is_finite() {
            return Err(ModelError::Numeric {
                step,
                reason: format!("loss became {total_loss}"),
            });
        }

        let adam = AdamConfig::with_lr(self.train.lr);
        let mut named = self.params.named_mut();
        let mut refs: Vec<&mut Tensor<E>> = named.iter_mut().map(|(_, t)| &mut **t).collect();
        adam_step(&adam, &mut self.opt, &mut refs, &grads)?;
        self.completed += 1;
        Ok(total_loss)
    }

    /// Writes weights, optimizer state and both configurations.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let meta = serde_json::to_value(CheckpointMeta {
            model_config: self.params.config.clone(),
            train: Some(self.train.clone()),
            completed_steps: self.completed,
            adam_step: self.opt.step,
        })
        .expect("checkpoint metadata serializes");
        let named = self.params.named();
        let mut entries: Vec<(String, &Tensor<E>)> = named
            .iter()
            .map(|(n, t)| (n.clone(), *t))
            .collect();
        for (i, (name, _)) in named.iter().enumerate() {
            entries.push((format!("opt.m.{name}"), &self.opt.m[i]));
        }
        for (i, (name, _)) in named.iter().enumerate() {
            entries.push((format!("opt.v.{name}"), &self.opt.v[i]));
        }
        save_checkpoint(path, &meta, &entries)?;
        Ok(())
    }

    /// Restores a trainer, including optimizer state, for resumption.
    pub fn resume(path: &std::path::Path) -> Result<Self> {
        let mut checkpoint = load_checkpoint::<E>(path)?;
        let meta: CheckpointMeta =
            serde_json::from_value(checkpoint.meta.clone()).map_err(|e| {
                ModelError::Checkpoint {
                    reason: format!("bad metadata: {e}"),
                }
            })?;
        let train = meta.train.clone().ok_or_else(|| ModelError::Checkpoint {
            reason: "checkpoint lacks training state".into(),
        })?;
        let params = params_from_checkpoint(&meta.model_config, &mut checkpoint)?;
        let named = params.named();
        let mut m = Vec::with_capacity(named.len());
        let mut v = Vec::with_capacity(named.len());
        for (name, tensor) in &named {
            let mt = take_entry(&mut checkpoint, &format!("opt.m.{name}"), tensor.shape())?;
            m.push(mt);
        }
        for (name, tensor) in &named {
            let vt = take_entry(&mut checkpoint, &format!("opt.v.{name}"), tensor.shape())?;
            v.push(vt);
        }
        drop(named);
        Ok(Trainer {
            params,
            train,
            opt: AdamState {
                step: meta.adam_step,
                m,
                v,
            },
            completed: meta.completed_steps,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    model_config: ModelConfig,
    /// Present when the checkpoint carries optimizer state.
    train: Option<TrainConfig>,
    completed_steps: u64,
    adam_step: u64,
}

/// Reads the model configuration stored in a checkpoint.
pub fn checkpoint_config(path: &std::path::Path) -> Result<ModelConfig> {
    let (_, meta) = layerflow_tensor::read_checkpoint_info(path)?;
    let meta: CheckpointMeta = serde_json::from_value(meta).map_err(|e| ModelError::Checkpoint {
        reason: format!("bad metadata: {e}"),
    })?;
    Ok(meta.model_config)
}

/// Loads weights only (sampling does not need optimizer state).
pub fn load_params<E: Element>(path: &std::path::Path) -> Result<ModelParams<E>> {
    let mut checkpoint = load_checkpoint::<E>(path)?;
    let meta: CheckpointMeta =
        serde_json::from_value(checkpoint.meta.clone()).map_err(|e| ModelError::Checkpoint {
            reason: format!("bad metadata: {e}"),
        })?;
    params_from_checkpoint(&meta.model_config, &mut checkpoint)
}

fn take_entry<E: Element>(
    checkpoint: &mut layerflow_tensor::Checkpoint<E>,
    name: &str,
    shape: &[usize],
) -> Result<Tensor<E>> {
    let tensor = checkpoint.take(name)?;
    if tensor.shape() != shape {
        return Err(ModelError::Checkpoint {
            reason: format!(
                "entry {name} has shape {:?}, expected {:?}",
                tensor.shape(),
                shape
            ),
        });
    }
    Ok(tensor)
}

fn params_from_checkpoint<E: Element>(
    config: &ModelConfig,
    checkpoint: &mut layerflow_tensor::Checkpoint<E>,
) -> Result<ModelParams<E>> {
    // Materialize the structure, then overwrite every tensor by name.
    let mut params = crate::backbone::init_params::<E>(config, 0)?;
    for (name, tensor) in params.named_mut() {
        *tensor = take_entry(checkpoint, &name, tensor.shape())?;
    }
    Ok(params)
}

/// One sample's gradient job.
struct SampleJob<'a, E: Element> {
    params: &'a ModelParams<E>,
    train: &'a TrainConfig,
    sample: &'a PreparedSample<E>,
    t: f64,
    drop_text: bool,
    noise: &'a Tensor<E>,
    loss_scale: f64,
}

impl<E: Element> SampleJob<'_, E> {
    fn run(&self) -> Result<(f64, Vec<Option<Tensor<E>>>)> {
        let mut tape: Tape<E> = Tape::new();
        let vars = register_params(self.params, &mut tape)?;
        let loss = sample_loss(
            &mut tape,
            &vars,
            &self.params.config,
            self.train,
            self.sample,
            self.t,
            self.noise,
            self.drop_text,
            self.loss_scale,
        )?;
        let loss_value = Element::to_f64(tape.value(loss).item()?);
        let ordered = vars.ordered.clone();
        let mut grads = tape.backward(loss)?;
        let collected = ordered.iter().map(|&v| grads.take(v)).collect();
        Ok((loss_value, collected))
    }
}

type JobOutput<E> = Result<(f64, Vec<Option<Tensor<E>>>)>;

/// Runs jobs serially or fanned out over scoped threads; results come back
/// in job order either way.
fn run_jobs<E: Element>(
    jobs: &[SampleJob<'_, E>],
    threads: usize,
) -> Result<Vec<(f64, Vec<Option<Tensor<E>>>)>> {
    if threads <= 1 || jobs.len() <= 1 {
        return jobs.iter().map(|j| j.run()).collect();
    }
    let workers = threads.min(jobs.len());
    let mut slots: Vec<Option<JobOutput<E>>> = (0..jobs.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        // Round-robin assignment keeps the partition deterministic.
        let mut work: Vec<Vec<(&SampleJob<'_, E>, &mut Option<JobOutput<E>>)>> =
            (0..workers).map(|_| Vec::new()).collect();
        for (i, (job, slot)) in jobs.iter().zip(slots.iter_mut()).enumerate() {
            work[i % workers].push((job, slot));
        }
        for chunk in work {
            scope.spawn(move || {
                for (job, slot) in chunk {
                    *slot = Some(job.run());
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("every job slot filled"))
        .collect()
}
