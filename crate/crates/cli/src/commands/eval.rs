//! `layerflow eval`: scores predicted stacks against a reference dataset.
//!
//! The reference directory must carry an `index.json`; predictions are
//! looked up under the prediction root at the same relative paths. A
//! missing predicted stack is skipped with a warning so a partial run can
//! still be scored, but every error inside a stack that does exist is
//! fatal. Writes, when an output directory is given, one JSON report per
//! stack, a `summary.csv` with one row per stack, and `corpus.json` with
//! the corpus-level means and the squared Fréchet distance.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;

use layerflow_imaging::{load_stack, read_index, ImagingError, LayerStack};
use layerflow_metrics::{evaluate_corpus, CorpusEval, Matching, EMBED_DIM, POOL_GRID, PSNR_CAP};

use crate::config::echo_effective;
use crate::error::{CliError, Result};

/// Recompositing quantized layer PNGs never reproduces the stored
/// composite bit for bit, so the self-check allows 8-bit rounding error.
const SELF_CHECK_RECOMPOSITE_DB: f64 = 40.0;

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of predicted stacks laid out like the reference tree.
    /// Defaults to the reference directory under --self-check.
    #[arg(long)]
    pub pred: Option<PathBuf>,

    /// Reference dataset directory (must contain index.json).
    #[arg(long)]
    pub gt: PathBuf,

    /// Align foregrounds by dynamic time warping on layer scores instead
    /// of pairing them by stack position.
    #[arg(long)]
    pub dtw: bool,

    /// Directory for the per-stack reports, summary.csv and corpus.json.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Score the reference corpus against itself and fail unless the
    /// result is perfect up to PNG quantization.
    #[arg(long)]
    pub self_check: bool,
}

#[derive(Serialize)]
struct EvalSection<'a> {
    matching: Matching,
    self_check: bool,
    embedding: &'a str,
}

#[derive(Serialize)]
struct EffectiveEval<'a> {
    eval: EvalSection<'a>,
}

#[derive(Serialize)]
struct CorpusReport<'a> {
    matching: Matching,
    /// What the Fréchet distance is computed over.
    embedding: &'a str,
    /// Stacks named by the index but absent from the prediction tree.
    missing_predictions: &'a [String],
    #[serde(flatten)]
    corpus: &'a CorpusEval,
}

pub fn run(args: &EvalArgs) -> Result<()> {
    let pred_root = match (&args.pred, args.self_check) {
        (Some(p), _) => p.clone(),
        (None, true) => args.gt.clone(),
        (None, false) => {
            return Err(CliError::Validation(
                "either --pred or --self-check is required".into(),
            ))
        }
    };
    let matching = if args.dtw {
        Matching::Dtw
    } else {
        Matching::Positional
    };
    let embedding = format!(
        "grayscale {POOL_GRID}x{POOL_GRID} mean pool over gray-composited layers ({EMBED_DIM}-d)"
    );

    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
    }
    echo_effective(
        &EffectiveEval {
            eval: EvalSection {
                matching,
                self_check: args.self_check,
                embedding: &embedding,
            },
        },
        args.out.as_deref(),
    )?;

    let (names, pairs, missing) = load_pairs(&args.gt, &pred_root)?;
    let borrowed: Vec<(&LayerStack, &LayerStack)> =
        pairs.iter().map(|(p, t)| (p, t)).collect();
    let corpus = evaluate_corpus(&borrowed, matching).map_err(CliError::from)?;

    if let Some(out) = &args.out {
        write_reports(out, &names, &corpus, &missing, matching, &embedding)?;
    }
    print_summary(&names, &corpus, &missing);

    if args.self_check {
        self_check(&names, &corpus)?;
        println!("self-check passed: {} stacks", names.len());
    }
    Ok(())
}

/// Loads every (prediction, reference) pair named by the reference index.
/// Returns the stack names, the pairs, and the names whose prediction was
/// missing.
fn load_pairs(
    gt_root: &Path,
    pred_root: &Path,
) -> Result<(Vec<String>, Vec<(LayerStack, LayerStack)>, Vec<String>)> {
    let manifests = read_index(gt_root).map_err(CliError::from)?;
    let mut names = Vec::new();
    let mut pairs = Vec::new();
    let mut missing = Vec::new();
    for (i, gt_manifest) in manifests.iter().enumerate() {
        let rel = gt_manifest.strip_prefix(gt_root).unwrap_or(gt_manifest);
        let name = rel
            .parent()
            .and_then(Path::file_name)
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("stack_{i:05}"));
        let pred_manifest = pred_root.join(rel);
        let pred = match load_stack(&pred_manifest) {
            Ok(stack) => stack,
            Err(ImagingError::MissingFile { path }) => {
                eprintln!("warning: skipping {name}: missing {}", path.display());
                missing.push(name);
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let truth = load_stack(gt_manifest).map_err(CliError::from)?;
        names.push(name);
        pairs.push((pred, truth));
    }
    if pairs.is_empty() {
        return Err(CliError::Validation(format!(
            "no predicted stacks found under {}",
            pred_root.display()
        )));
    }
    Ok((names, pairs, missing))
}

fn write_reports(
    out: &Path,
    names: &[String],
    corpus: &CorpusEval,
    missing: &[String],
    matching: Matching,
    embedding: &str,
) -> Result<()> {
    for (name, stack) in names.iter().zip(&corpus.stacks) {
        let json = serde_json::to_string_pretty(stack)
            .map_err(|e| CliError::Io(format!("encoding report for {name}: {e}")))?;
        fs::write(out.join(format!("{name}.json")), json + "\n")?;
    }

    let mut csv = String::from(
        "name,background_psnr,background_ssim,composite_psnr,recomposite_psnr,\
         recomposite_ssim,mean_unified,mean_mask_iou,mean_mask_f1,skipped_layers\n",
    );
    for (name, s) in names.iter().zip(&corpus.stacks) {
        let _ = writeln!(
            csv,
            "{name},{},{},{},{},{},{},{},{},{}",
            s.background_psnr,
            s.background_ssim,
            s.composite_psnr,
            s.recomposite_psnr,
            s.recomposite_ssim,
            cell(s.mean_unified),
            cell(s.mean_mask_iou),
            cell(s.mean_mask_f1),
            s.skipped_layers,
        );
    }
    fs::write(out.join("summary.csv"), csv)?;

    let report = CorpusReport {
        matching,
        embedding,
        missing_predictions: missing,
        corpus,
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Io(format!("encoding corpus report: {e}")))?;
    fs::write(out.join("corpus.json"), json + "\n")?;
    Ok(())
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn print_summary(names: &[String], corpus: &CorpusEval, missing: &[String]) {
    println!("scored {} stacks ({} missing)", names.len(), missing.len());
    println!("mean recomposite psnr: {:.4} dB", corpus.mean_recomposite_psnr);
    println!("mean background psnr:  {:.4} dB", corpus.mean_background_psnr);
    match corpus.mean_unified {
        Some(v) => println!("mean unified score:    {v:.6}"),
        None => println!("mean unified score:    n/a (no matched layers)"),
    }
    match corpus.mean_mask_iou {
        Some(v) => println!("mean mask iou:         {v:.6}"),
        None => println!("mean mask iou:         n/a (no matched layers)"),
    }
    println!("frechet distance:      {:.6e}", corpus.frechet);
    println!("skipped layers:        {}", corpus.skipped_layers);
}

/// A corpus scored against itself must be perfect: identical PNGs give
/// exact backgrounds, composites and layer scores, and only the
/// recomposite is allowed the 8-bit rounding slack.
fn self_check(names: &[String], corpus: &CorpusEval) -> Result<()> {
    let fail = |name: &str, what: String| {
        Err(CliError::Validation(format!(
            "self-check failed on {name}: {what}"
        )))
    };
    for (name, s) in names.iter().zip(&corpus.stacks) {
        if s.background_psnr != PSNR_CAP {
            return fail(name, format!("background psnr {}", s.background_psnr));
        }
        if s.composite_psnr != PSNR_CAP {
            return fail(name, format!("composite psnr {}", s.composite_psnr));
        }
        if s.recomposite_psnr < SELF_CHECK_RECOMPOSITE_DB {
            return fail(name, format!("recomposite psnr {}", s.recomposite_psnr));
        }
        if s.mean_unified.map_or(false, |v| v != 0.0) {
            return fail(name, format!("mean unified {:?}", s.mean_unified));
        }
        if s.mean_mask_iou.map_or(false, |v| v != 1.0) {
            return fail(name, format!("mean mask iou {:?}", s.mean_mask_iou));
        }
        if s.skipped_layers != 0 {
            return fail(name, format!("{} skipped layers", s.skipped_layers));
        }
    }
    if corpus.frechet > 1e-8 {
        return Err(CliError::Validation(format!(
            "self-check failed: frechet distance {:.3e} exceeds 1e-8",
            corpus.frechet
        )));
    }
    Ok(())
}
