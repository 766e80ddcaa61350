//! Layer-decomposition model: tokenizer, rotary joint attention, dual-stream
//! transformer backbone, composite-image conditioning, and rectified-flow
//! training and sampling.

pub mod backbone;
pub mod error;
pub mod flow;
pub mod gradcheck;
pub mod mlca;
pub mod rope;
pub mod tokenize;

pub use backbone::{
    forward, init_params, register_params, time_embedding, BlockParams, BlockVars, ForwardInput,
    ModelConfig, ModelParams, ModelVars, StreamParams, StreamVars, INIT_STD, MASK_VALUE, RMS_EPS,
};

pub use error::{ModelError, Result};
pub use flow::{
    cfg_velocity, checkpoint_config, interpolate, load_params, prepare_condition, prepare_sample,
    reference_loss, sample, sample_loss, CfgStats, PreparedSample, SampleConfig,
    SamplingCondition, TrainConfig, Trainer,
};
pub use gradcheck::{gradient_check, GradientCheckReport};
pub use mlca::{build_guidance, condition_tokens, encode_condition, guidance_cell_ids};
pub use rope::{
    apply_rope, attention_scores, default_axis_split, reference_attention, RopeConfig,
    BASE_LAYER, BASE_SPATIAL,
};
pub use tokenize::{
    assemble_layout, assemble_sequence, patchify, scatter_to_layers, snap_bbox, unpatchify,
    PatchGrid, Position, Segment, SequenceLayout, TokenSequence, BACKGROUND_LAYER,
    COMPOSITE_LAYER, FOREGROUND_BASE, LAYER_CHANNELS,
};
