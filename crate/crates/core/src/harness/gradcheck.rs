//! End-to-end gradient verification: central finite differences over every
//! scalar parameter of a model against the tape's analytic gradients.
//!
//! The check runs on deliberately tiny dimensions (the config controls
//! widths; inputs are fixed 6×6 random frames) so perturbing several
//! thousand scalars twice each stays fast.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, TaskKind};
use crate::crn::{CrnModel, HeadLayout, HeadSpec};
use crate::error::{CrnError, Result};
use crate::objective::total_loss;
use crate::params::splitmix64;
use crate::synthdata::{SequenceBatch, Targets};
use crate::tensor::{Shape, Tape, Tensor};

/// Spatial extent of the synthetic gradcheck inputs.
pub const GRID: usize = 6;
/// Central-difference step.
pub const FD_EPSILON: f64 = 1e-5;
/// Acceptance threshold on the worst relative error.
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
const DATA_TAG: u64 = 0x6772_6164_6461_7461;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub scalars_checked: usize,
}

/// Error between an analytic and a numeric derivative, relative to their
/// magnitude. The floor in the denominator turns the comparison into an
/// absolute one near zero, where finite differences bottom out in rounding
/// noise long before 1e-4 of a meaningful gradient.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// A deterministic random batch at the model's input/output dims: uniform
/// frames in [−1, 1] and random labels or dense targets per the head
/// layout.
pub fn random_batch(cfg: &ExperimentConfig, seed: u64) -> Result<SequenceBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ DATA_TAG));
    let n = cfg.batch;
    let t = cfg.steps();
    let frame_shape = Shape::new(n, 1, GRID, GRID);
    let mut frames = |count: usize| -> Vec<Tensor> {
        (0..count)
            .map(|_| Tensor::uniform(frame_shape, -1.0, 1.0, &mut rng))
            .collect()
    };
    let a = frames(t);
    let b = frames(t);
    let targets = match (cfg.task, cfg.head_layout()?) {
        (TaskKind::Shapes, layout) => {
            let classes = match layout {
                HeadLayout::PerBranch(HeadSpec::Classification { classes }, _)
                | HeadLayout::Single(HeadSpec::Classification { classes }) => classes,
                other => {
                    return Err(CrnError::InvalidArgument(format!(
                        "gradcheck on the shapes task needs classification heads, got {other:?}"
                    )))
                }
            };
            Targets::Labels((0..n).map(|_| rng.gen_range(0..classes)).collect())
        }
        (TaskKind::Pose, HeadLayout::PerBranch(ha, hb)) => {
            let maps = |h: HeadSpec| -> Result<usize> {
                match h {
                    HeadSpec::Regression { maps } => Ok(maps),
                    other => Err(CrnError::InvalidArgument(format!(
                        "gradcheck on the pose task needs regression heads, got {other:?}"
                    ))),
                }
            };
            let (ma, mb) = (maps(ha)?, maps(hb)?);
            Targets::Maps {
                a: Tensor::uniform(Shape::new(n, ma, GRID, GRID), 0.0, 1.0, &mut rng),
                b: Tensor::uniform(Shape::new(n, mb, GRID, GRID), 0.0, 1.0, &mut rng),
            }
        }
        (TaskKind::Pose, layout) => {
            return Err(CrnError::InvalidArgument(format!(
                "gradcheck on the pose task needs two regression heads, got {layout:?}"
            )))
        }
    };
    Ok(SequenceBatch { a, b, targets })
}

fn forward_loss(model: &CrnModel, data: &SequenceBatch, steps: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let bind = model.bind(&mut tape, false);
    let outputs = model.forward_unroll(&mut tape, &bind, data)?;
    let loss = total_loss(&mut tape, &outputs, &data.targets, steps)?;
    Ok(tape.value(loss.total).scalar_value())
}

/// One backward pass; returns the gradient buffer of every parameter in
/// registration order.
pub fn analytic_grads(
    model: &CrnModel,
    data: &SequenceBatch,
    steps: &[usize],
) -> Result<Vec<Vec<f64>>> {
    let mut tape = Tape::new();
    let bind = model.bind(&mut tape, true);
    let outputs = model.forward_unroll(&mut tape, &bind, data)?;
    let loss = total_loss(&mut tape, &outputs, &data.targets, steps)?;
    tape.backward(loss.total)?;
    model
        .params()
        .ids()
        .map(|id| {
            tape.grad(bind.var(id))
                .map(|g| g.to_vec())
                .ok_or_else(|| CrnError::InvalidArgument("parameter missing gradient".into()))
        })
        .collect()
}

/// Central finite differences on every scalar parameter, compared entry by
/// entry against `analytic`. Parameters are restored exactly afterwards.
pub fn fd_check(
    model: &mut CrnModel,
    data: &SequenceBatch,
    steps: &[usize],
    analytic: &[Vec<f64>],
    tolerance: f64,
) -> Result<GradCheckReport> {
    let ids: Vec<_> = model.params().ids().collect();
    if analytic.len() != ids.len() {
        return Err(CrnError::InvalidArgument(format!(
            "gradient table has {} entries for {} parameters",
            analytic.len(),
            ids.len()
        )));
    }
    let mut max_rel_err = 0.0f64;
    let mut worst_param = String::new();
    let mut scalars_checked = 0usize;
    for (slot, id) in ids.iter().enumerate() {
        let len = model.params().value(*id).data().len();
        if analytic[slot].len() != len {
            return Err(CrnError::ShapeMismatch(format!(
                "gradient length {} for parameter {} of {len} scalars",
                analytic[slot].len(),
                model.params().name(*id)
            )));
        }
        for j in 0..len {
            let original = model.params().value(*id).data()[j];
            model.params_mut().value_mut(*id).data_mut()[j] = original + FD_EPSILON;
            let plus = forward_loss(model, data, steps)?;
            model.params_mut().value_mut(*id).data_mut()[j] = original - FD_EPSILON;
            let minus = forward_loss(model, data, steps)?;
            model.params_mut().value_mut(*id).data_mut()[j] = original;
            let numeric = (plus - minus) / (2.0 * FD_EPSILON);
            let rel = relative_error(analytic[slot][j], numeric);
            if rel > max_rel_err {
                max_rel_err = rel;
                worst_param = format!("{}[{j}]", model.params().name(*id));
            }
            scalars_checked += 1;
        }
    }
    if max_rel_err > tolerance {
        return Err(CrnError::GradCheckFailed {
            max_rel_err,
            param: worst_param,
        });
    }
    Ok(GradCheckReport {
        max_rel_err,
        worst_param,
        scalars_checked,
    })
}

/// Full check for a config: analytic backward once, then finite
/// differences over every parameter. Supervises every step so all adjoint
/// paths are live.
pub fn cmd_gradcheck(
    cfg: &ExperimentConfig,
    seed: u64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let mut model = CrnModel::build(cfg.to_spec()?, seed)?;
    let data = random_batch(cfg, seed)?;
    let steps: Vec<usize> = (1..=cfg.steps()).collect();
    let analytic = analytic_grads(&model, &data, &steps)?;
    let report = fd_check(&mut model, &data, &steps, &analytic, tolerance)?;
    println!(
        "gradcheck seed={seed} scalars={} max_rel_err={:.3e} worst={}",
        report.scalars_checked, report.max_rel_err, report.worst_param
    );
    Ok(report)
}
