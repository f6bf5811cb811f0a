//! Validation-set evaluation: classification accuracy for shapes, per-step
//! MSE curves plus peak-localization error for pose.

use std::path::Path;

use crate::checkpoint;
use crate::config::{ExperimentConfig, TaskKind};
use crate::crn::{argmax_class, predict_classification, CrnModel, StepOutputs};
use crate::error::{CrnError, Result};
use crate::metrics::Record;
use crate::synthdata::shapes::SplitKind;
use crate::synthdata::Targets;
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub enum EvalReport {
    Shapes {
        accuracy: f64,
        samples: usize,
    },
    Pose {
        /// Mean heatmap MSE at steps 1..=T.
        mse_heatmap_steps: Vec<f64>,
        /// Mean limb-field MSE at steps 1..=T.
        mse_field_steps: Vec<f64>,
        /// Mean distance (px) from each predicted heatmap argmax to the
        /// nearest true joint of that channel, at the final step.
        peak_err: f64,
        samples: usize,
    },
}

impl EvalReport {
    /// The scalar a run is summarized by: accuracy for shapes (higher is
    /// better), final-step heatmap+field MSE for pose (lower is better).
    pub fn final_metric(&self) -> f64 {
        match self {
            EvalReport::Shapes { accuracy, .. } => *accuracy,
            EvalReport::Pose {
                mse_heatmap_steps,
                mse_field_steps,
                ..
            } => mse_heatmap_steps.last().unwrap() + mse_field_steps.last().unwrap(),
        }
    }

    /// Append the report's fields to a metrics record in a stable order.
    pub fn append_to(&self, record: &mut Record) -> Result<()> {
        match self {
            EvalReport::Shapes { accuracy, samples } => {
                record.push_f64("val_accuracy", *accuracy)?;
                record.push("val_samples", samples)?;
            }
            EvalReport::Pose {
                mse_heatmap_steps,
                mse_field_steps,
                peak_err,
                samples,
            } => {
                record.push_vec("val_mse_heatmap_steps", mse_heatmap_steps)?;
                record.push_vec("val_mse_field_steps", mse_field_steps)?;
                record.push_f64("val_peak_err", *peak_err)?;
                record.push("val_samples", samples)?;
            }
        }
        Ok(())
    }

    pub fn record(&self) -> Result<Record> {
        let mut r = Record::new();
        self.append_to(&mut r)?;
        Ok(r)
    }
}

/// Evaluate `model` on `config.val_samples` fresh validation samples.
pub fn evaluate(model: &CrnModel, cfg: &ExperimentConfig, seed: u64) -> Result<EvalReport> {
    match cfg.task {
        TaskKind::Shapes => eval_shapes(model, cfg, seed),
        TaskKind::Pose => eval_pose(model, cfg, seed),
    }
}

/// Build the model for a run directory's checkpoint and evaluate it.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint_base: &Path, seed: u64) -> Result<EvalReport> {
    let mut model = CrnModel::build(cfg.to_spec()?, seed)?;
    checkpoint::load_params(checkpoint_base, model.params_mut())?;
    evaluate(&model, cfg, seed)
}

fn val_batches(total: usize, batch: usize) -> impl Iterator<Item = (u64, usize)> {
    let mut start = 0usize;
    std::iter::from_fn(move || {
        if start >= total {
            return None;
        }
        let n = batch.min(total - start);
        let item = (start as u64, n);
        start += n;
        Some(item)
    })
}

fn eval_shapes(model: &CrnModel, cfg: &ExperimentConfig, seed: u64) -> Result<EvalReport> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for (start, n) in val_batches(cfg.val_samples, cfg.batch) {
        let data = super::task_batch(cfg, seed, SplitKind::Val, start, n)?;
        let labels = match &data.targets {
            Targets::Labels(l) => l.clone(),
            _ => {
                return Err(CrnError::InvalidArgument(
                    "shapes evaluation expects class labels".into(),
                ))
            }
        };
        let mut tape = Tape::new();
        let bind = model.bind(&mut tape, false);
        let outputs = model.forward_unroll(&mut tape, &bind, &data)?;
        let dists = predict_classification(&tape, &outputs)?;
        for (dist, label) in dists.iter().zip(&labels) {
            if argmax_class(dist) == *label {
                correct += 1;
            }
        }
        total += n;
    }
    Ok(EvalReport::Shapes {
        accuracy: correct as f64 / total as f64,
        samples: total,
    })
}

fn eval_pose(model: &CrnModel, cfg: &ExperimentConfig, seed: u64) -> Result<EvalReport> {
    let t_steps = cfg.steps();
    let mut heat_sums = vec![0.0; t_steps];
    let mut field_sums = vec![0.0; t_steps];
    let mut peak_sum = 0.0;
    let mut total = 0usize;
    for (start, n) in val_batches(cfg.val_samples, cfg.batch) {
        let data = super::task_batch(cfg, seed, SplitKind::Val, start, n)?;
        let (heat_target, field_target) = match &data.targets {
            Targets::Maps { a, b } => (a.clone(), b.clone()),
            _ => {
                return Err(CrnError::InvalidArgument(
                    "pose evaluation expects dense map targets".into(),
                ))
            }
        };
        let mut tape = Tape::new();
        let bind = model.bind(&mut tape, false);
        let outputs = model.forward_unroll(&mut tape, &bind, &data)?;
        let per_step = match &outputs {
            StepOutputs::Dual(steps) => steps,
            StepOutputs::Single(_) => {
                return Err(CrnError::InvalidArgument(
                    "pose evaluation needs per-branch outputs".into(),
                ))
            }
        };
        let heat_const = tape.constant(heat_target.clone());
        let field_const = tape.constant(field_target.clone());
        let mut final_heat_pred = None;
        for (t, (qa, qb)) in per_step.iter().enumerate() {
            let ha = tape.mse_loss(*qa, heat_const)?;
            let fb = tape.mse_loss(*qb, field_const)?;
            heat_sums[t] += tape.value(ha).scalar_value() * n as f64;
            field_sums[t] += tape.value(fb).scalar_value() * n as f64;
            if t + 1 == t_steps {
                final_heat_pred = Some(tape.value(*qa).clone());
            }
        }
        peak_sum += peak_error(&final_heat_pred.unwrap(), &heat_target)? * n as f64;
        total += n;
    }
    let norm = total as f64;
    Ok(EvalReport::Pose {
        mse_heatmap_steps: heat_sums.iter().map(|s| s / norm).collect(),
        mse_field_steps: field_sums.iter().map(|s| s / norm).collect(),
        peak_err: peak_sum / norm,
        samples: total,
    })
}

/// Mean distance from each predicted channel's argmax to the nearest true
/// peak of that channel. True peaks are the target pixels at the Gaussian
/// maximum of 1.0 (one per figure).
fn peak_error(pred: &Tensor, target: &Tensor) -> Result<f64> {
    let shape = pred.shape();
    if shape != target.shape() {
        return Err(CrnError::ShapeMismatch(format!(
            "peak error needs matching shapes, got {} vs {}",
            shape,
            target.shape()
        )));
    }
    let (n, c, h, w) = (shape.n, shape.c, shape.h, shape.w);
    let plane = h * w;
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * plane;
            let p = &pred.data()[base..base + plane];
            let t = &target.data()[base..base + plane];
            let argmax = p
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(idx, _)| idx)
                .unwrap();
            let (py, px) = (argmax / w, argmax % w);
            let best = t
                .iter()
                .enumerate()
                .filter(|(_, v)| **v >= 1.0 - 1e-9)
                .map(|(idx, _)| {
                    let (ty, tx) = (idx / w, idx % w);
                    let (dy, dx) = (py as f64 - ty as f64, px as f64 - tx as f64);
                    (dy * dy + dx * dx).sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            if best.is_finite() {
                sum += best;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(CrnError::InvalidArgument(
            "target heatmaps contain no unit peaks".into(),
        ));
    }
    Ok(sum / count as f64)
}
