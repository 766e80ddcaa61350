//! Stack- and corpus-level evaluation reports.

use serde::{Deserialize, Serialize};

use layerflow_imaging::{over_composite, rgba_to_rgb, LayerStack};

use crate::align::dtw_align;
use crate::alpha::{alpha_soft_iou, layer_l1, mask_f1, mask_iou, unified_layer_score, unified_score};
use crate::error::Result;
use crate::frechet::{embed_layer, frechet_distance};
use crate::pixel::{psnr, rgb_l1, ssim};

/// Scores for one matched foreground pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerEval {
    pub pred_index: usize,
    pub truth_index: usize,
    pub l1: f64,
    pub soft_iou: f64,
    pub unified: f64,
    pub mask_iou: f64,
    pub mask_f1: f64,
}

/// Scores for one predicted stack against its reference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StackEval {
    pub background_psnr: f64,
    pub background_ssim: f64,
    pub background_l1: f64,
    /// Decoded composite layer against the true composite.
    pub composite_psnr: f64,
    /// Predicted layers re-composited and compared to the true composite.
    pub recomposite_psnr: f64,
    pub recomposite_ssim: f64,
    pub layers: Vec<LayerEval>,
    /// Foregrounds left unmatched because the counts differed.
    pub skipped_layers: usize,
    /// Means over the matched pairs; absent when nothing was matched.
    pub mean_unified: Option<f64>,
    pub mean_mask_iou: Option<f64>,
    pub mean_mask_f1: Option<f64>,
    pub mean_soft_iou: Option<f64>,
}

/// How foregrounds are put into correspondence before scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matching {
    /// Pair by index; surplus layers on either side are skipped.
    Positional,
    /// Dynamic-time-warping alignment on the combined layer score.
    Dtw,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Scores one prediction. Foregrounds are matched per `matching`; when one
/// side has no foregrounds at all, every foreground on the other side is
/// skipped (and counted) rather than scored against nothing.
pub fn evaluate_stack(
    pred: &LayerStack,
    truth: &LayerStack,
    matching: Matching,
) -> Result<StackEval> {
    let pred_bg = rgba_to_rgb(&pred.background);
    let truth_bg = rgba_to_rgb(&truth.background);
    let background_psnr = psnr(&pred_bg, &truth_bg)?;
    let background_ssim = ssim(&pred_bg, &truth_bg)?;
    let background_l1 = rgb_l1(&pred_bg, &truth_bg)?;
    let composite_psnr = psnr(&pred.composite, &truth.composite)?;
    let recomposited = over_composite(pred)?;
    let recomposite_psnr = psnr(&recomposited, &truth.composite)?;
    let recomposite_ssim = ssim(&recomposited, &truth.composite)?;

    let (np, nt) = (pred.foregrounds.len(), truth.foregrounds.len());
    let pairs: Vec<(usize, usize)> = match matching {
        _ if np == 0 || nt == 0 => Vec::new(),
        Matching::Positional => (0..np.min(nt)).map(|i| (i, i)).collect(),
        Matching::Dtw => {
            let mut cost = vec![vec![0.0; nt]; np];
            for (i, row) in cost.iter_mut().enumerate() {
                for (j, cell) in row.iter_mut().enumerate() {
                    *cell = unified_layer_score(
                        &pred.foregrounds[i].image,
                        &truth.foregrounds[j].image,
                    )?;
                }
            }
            dtw_align(&cost)?.1
        }
    };
    // DTW visits every index at least once; positional pairing and the
    // empty cases leave the surplus unmatched.
    let matched_p: std::collections::HashSet<usize> = pairs.iter().map(|&(i, _)| i).collect();
    let matched_t: std::collections::HashSet<usize> = pairs.iter().map(|&(_, j)| j).collect();
    let skipped_layers = (np - matched_p.len()) + (nt - matched_t.len());

    let mut layers = Vec::with_capacity(pairs.len());
    for (i, j) in pairs {
        let a = &pred.foregrounds[i].image;
        let b = &truth.foregrounds[j].image;
        let l1 = layer_l1(a, b)?;
        let soft_iou = alpha_soft_iou(a, b)?;
        layers.push(LayerEval {
            pred_index: i,
            truth_index: j,
            l1,
            soft_iou,
            unified: unified_score(l1, soft_iou)?,
            mask_iou: mask_iou(a, b)?,
            mask_f1: mask_f1(a, b)?,
        });
    }

    Ok(StackEval {
        background_psnr,
        background_ssim,
        background_l1,
        composite_psnr,
        recomposite_psnr,
        recomposite_ssim,
        mean_unified: mean(layers.iter().map(|l| l.unified)),
        mean_mask_iou: mean(layers.iter().map(|l| l.mask_iou)),
        mean_mask_f1: mean(layers.iter().map(|l| l.mask_f1)),
        mean_soft_iou: mean(layers.iter().map(|l| l.soft_iou)),
        layers,
        skipped_layers,
    })
}

/// Corpus-level summary: stack scores averaged evenly over stacks, layer
/// scores averaged evenly over all matched pairs, plus the squared Fréchet
/// distance between the generated and reference layer corpora (background
/// and foregrounds of every stack).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusEval {
    pub stacks: Vec<StackEval>,
    pub mean_background_psnr: f64,
    pub mean_background_ssim: f64,
    pub mean_recomposite_psnr: f64,
    pub mean_recomposite_ssim: f64,
    pub mean_unified: Option<f64>,
    pub mean_mask_iou: Option<f64>,
    pub mean_mask_f1: Option<f64>,
    pub frechet: f64,
    pub skipped_layers: usize,
}

pub fn evaluate_corpus(
    pairs: &[(&LayerStack, &LayerStack)],
    matching: Matching,
) -> Result<CorpusEval> {
    if pairs.is_empty() {
        return Err(crate::error::MetricsError::Empty {
            context: "evaluation corpus",
        });
    }
    let mut stacks = Vec::with_capacity(pairs.len());
    let (mut pred_embed, mut truth_embed) = (Vec::new(), Vec::new());
    for (pred, truth) in pairs {
        stacks.push(evaluate_stack(pred, truth, matching)?);
        for (stack, out) in [(pred, &mut pred_embed), (truth, &mut truth_embed)] {
            out.push(embed_layer(&stack.background)?);
            for fg in &stack.foregrounds {
                out.push(embed_layer(&fg.image)?);
            }
        }
    }
    let n = stacks.len() as f64;
    Ok(CorpusEval {
        mean_background_psnr: stacks.iter().map(|s| s.background_psnr).sum::<f64>() / n,
        mean_background_ssim: stacks.iter().map(|s| s.background_ssim).sum::<f64>() / n,
        mean_recomposite_psnr: stacks.iter().map(|s| s.recomposite_psnr).sum::<f64>() / n,
        mean_recomposite_ssim: stacks.iter().map(|s| s.recomposite_ssim).sum::<f64>() / n,
        mean_unified: mean(stacks.iter().flat_map(|s| s.layers.iter().map(|l| l.unified))),
        mean_mask_iou: mean(stacks.iter().flat_map(|s| s.layers.iter().map(|l| l.mask_iou))),
        mean_mask_f1: mean(stacks.iter().flat_map(|s| s.layers.iter().map(|l| l.mask_f1))),
        skipped_layers: stacks.iter().map(|s| s.skipped_layers).sum(),
        frechet: frechet_distance(&pred_embed, &truth_embed)?,
        stacks,
    })
}
