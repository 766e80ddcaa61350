//! Finite-difference verification of backpropagated gradients.
//!
//! Runs the full training loss once with backpropagation, then re-derives a
//! sampled subset of parameter gradients by central differences and reports
//! the worst relative disagreement. Works in f64 only; the step size would
//! drown in f32 rounding.

use std::collections::BTreeSet;

use layerflow_tensor::{Element, Tape, Tensor};

use crate::backbone::{register_params, ModelParams};
use crate::error::Result;
use crate::flow::{sample_loss, PreparedSample, TrainConfig};

/// Outcome of one finite-difference sweep.
#[derive(Debug, Clone)]
pub struct GradientCheckReport {
    /// Parameter entries compared.
    pub checked: usize,
    pub max_rel_err: f64,
    /// Name of the tensor holding the worst entry.
    pub worst_param: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Loss of one sample at fixed time, noise and prompt, as a plain number.
fn loss_at(
    params: &ModelParams<f64>,
    train: &TrainConfig,
    sample: &PreparedSample<f64>,
    t: f64,
    noise: &Tensor<f64>,
) -> Result<f64> {
    let mut tape: Tape<f64> = Tape::new();
    let vars = register_params(params, &mut tape)?;
    let loss = sample_loss(&mut tape, &vars, &params.config, train, sample, t, noise, false, 1.0)?;
    Ok(tape.value(loss).item()?)
}

/// Entries to probe: the largest-magnitude half plus an evenly strided half,
/// so both dominant and incidental coordinates get covered.
fn pick_indices(grad: &Tensor<f64>, per_tensor: usize) -> Vec<usize> {
    let n = grad.numel();
    if n <= per_tensor {
        return (0..n).collect();
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        grad.data()[b]
            .abs()
            .partial_cmp(&grad.data()[a].abs())
            .expect("finite gradients")
    });
    let mut chosen: BTreeSet<usize> = order[..per_tensor / 2].iter().copied().collect();
    let strided = per_tensor - chosen.len();
    for j in 0..strided {
        chosen.insert(j * n / strided);
    }
    chosen.into_iter().collect()
}

fn nudge(params: &mut ModelParams<f64>, tensor: usize, index: usize, delta: f64) {
    let mut named = params.named_mut();
    named[tensor].1.data_mut()[index] += delta;
}

/// Compares backpropagated gradients of the training loss against central
/// differences with step `h` on up to `per_tensor` entries of every weight.
///
/// Differences are judged relative to `max(|analytic|, |numeric|,
/// scale_floor)`. The floor turns the relative tolerance into an absolute
/// one for near-zero gradients, which central differences cannot resolve
/// beyond their rounding noise of roughly `eps * loss / h`.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check(
    params: &ModelParams<f64>,
    train: &TrainConfig,
    sample: &PreparedSample<f64>,
    t: f64,
    noise: &Tensor<f64>,
    per_tensor: usize,
    h: f64,
    scale_floor: f64,
) -> Result<GradientCheckReport> {
    let mut tape: Tape<f64> = Tape::new();
    let vars = register_params(params, &mut tape)?;
    let loss = sample_loss(&mut tape, &vars, &params.config, train, sample, t, noise, false, 1.0)?;
    let mut grads = tape.backward(loss)?;
    let names: Vec<String> = params.named().iter().map(|(n, _)| n.clone()).collect();
    let analytic: Vec<Option<Tensor<f64>>> =
        vars.ordered.iter().map(|&v| grads.take(v)).collect();

    let mut work = params.clone();
    let mut report = GradientCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for (i, grad) in analytic.iter().enumerate() {
        let Some(grad) = grad else { continue };
        for index in pick_indices(grad, per_tensor) {
            nudge(&mut work, i, index, h);
            let plus = loss_at(&work, train, sample, t, noise)?;
            nudge(&mut work, i, index, -2.0 * h);
            let minus = loss_at(&work, train, sample, t, noise)?;
            nudge(&mut work, i, index, h);
            let fd = (plus - minus) / (2.0 * h);
            let a = Element::to_f64(grad.data()[index]);
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(scale_floor);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = names[i].clone();
                report.worst_index = index;
                report.worst_analytic = a;
                report.worst_numeric = fd;
            }
        }
    }
    Ok(report)
}
