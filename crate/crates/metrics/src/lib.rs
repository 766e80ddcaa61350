//! Evaluation metrics for layered image decompositions: pixel fidelity,
//! alpha agreement, distributional distance between layer corpora, and
//! sequence alignment for stacks whose layer counts differ.

pub mod align;
pub mod alpha;
pub mod error;
pub mod frechet;
pub mod pixel;
pub mod report;

pub use align::dtw_align;
pub use alpha::{
    alpha_soft_iou, layer_l1, mask_f1, mask_iou, unified_layer_score, unified_score,
    MASK_THRESHOLD,
};
pub use error::{MetricsError, Result};
pub use frechet::{
    corpus_moments, embed_layer, embed_rgb, frechet_distance, frechet_from_moments,
    CorpusMoments, COVARIANCE_RIDGE, EMBED_DIM, POOL_GRID,
};
pub use pixel::{mse, psnr, rgb_l1, ssim, PSNR_CAP, SSIM_WINDOW};
pub use report::{evaluate_corpus, evaluate_stack, CorpusEval, LayerEval, Matching, StackEval};
