//! The training loop: epochs of select-steps → unroll → loss → backward →
//! SGD, with per-epoch validation records and a final checkpoint.
//!
//! Everything a run writes is deterministic for a fixed config and seed;
//! wall time goes to stdout only so logs and checkpoints stay
//! byte-comparable across reruns.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::config::ExperimentConfig;
use crate::crn::CrnModel;
use crate::error::{CrnError, Result};
use crate::metrics::{MetricsWriter, Record};
use crate::objective::{select_steps, total_loss};
use crate::optim::Sgd;
use crate::params::splitmix64;
use crate::synthdata::shapes::SplitKind;
use crate::synthdata::SequenceBatch;
use crate::tensor::Tape;

use super::eval::{evaluate, EvalReport};
use super::{CHECKPOINT_BASE, CONFIG_FILE, METRICS_FILE};

/// Stream tag for the RNG that draws supervised timesteps.
const STRATEGY_TAG: u64 = 0x7374_6570_7365_6c00;

pub struct TrainRequest<'a> {
    pub config: &'a ExperimentConfig,
    /// Original config text, copied verbatim into the run directory.
    pub config_text: &'a str,
    pub seed: u64,
    pub out: &'a Path,
}

pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub checkpoint_base: PathBuf,
    /// Last epoch's validation report; absent when `epochs = 0`.
    pub final_eval: Option<EvalReport>,
    pub wall_seconds: f64,
}

struct IterationStats {
    total: f64,
    branch_a: f64,
    branch_b: f64,
}

fn train_iteration(
    model: &mut CrnModel,
    sgd: &mut Sgd,
    data: &SequenceBatch,
    steps: &[usize],
) -> Result<IterationStats> {
    let mut tape = Tape::new();
    let bind = model.bind(&mut tape, true);
    let outputs = model.forward_unroll(&mut tape, &bind, data)?;
    let loss = total_loss(&mut tape, &outputs, &data.targets, steps)?;
    let total = tape.value(loss.total).scalar_value();
    let mut branch_a = 0.0;
    let mut branch_b = 0.0;
    for step in &loss.per_step {
        branch_a += tape.value(step.a).scalar_value();
        if let Some(b) = step.b {
            branch_b += tape.value(b).scalar_value();
        }
    }
    if !total.is_finite() {
        // Position is filled in by the caller, which knows epoch and batch.
        return Err(CrnError::NonFiniteLoss {
            epoch: 0,
            batch: 0,
            value: total,
        });
    }
    tape.backward(loss.total)?;
    sgd.step(model.params_mut(), &tape, &bind)?;
    Ok(IterationStats {
        total,
        branch_a,
        branch_b,
    })
}

pub fn cmd_train(req: &TrainRequest) -> Result<TrainOutcome> {
    let cfg = req.config;
    cfg.validate()?;
    let started = Instant::now();
    std::fs::create_dir_all(req.out)?;
    std::fs::write(req.out.join(CONFIG_FILE), req.config_text)?;

    let mut model = CrnModel::build(cfg.to_spec()?, req.seed)?;
    let mut sgd = Sgd::new(&cfg.sgd(), model.params())?;
    let mut step_rng = ChaCha8Rng::seed_from_u64(splitmix64(req.seed ^ STRATEGY_TAG));
    let mut metrics = MetricsWriter::create(&req.out.join(METRICS_FILE))?;
    let strategy = cfg.supervision();
    let t_steps = cfg.steps();
    let mut final_eval = None;

    for epoch in 1..=cfg.epochs {
        let mut sums = IterationStats {
            total: 0.0,
            branch_a: 0.0,
            branch_b: 0.0,
        };
        for it in 0..cfg.train_batches {
            let start = ((epoch - 1) * cfg.train_batches + it) as u64 * cfg.batch as u64;
            let data = super::task_batch(cfg, req.seed, SplitKind::Train, start, cfg.batch)?;
            let steps = select_steps(strategy, t_steps, &mut step_rng)?;
            let stats =
                train_iteration(&mut model, &mut sgd, &data, &steps).map_err(|e| match e {
                    // Any non-finite value surfacing mid-iteration means the
                    // loss diverged; report it as such with its position.
                    CrnError::NonFiniteLoss { value, .. } => CrnError::NonFiniteLoss {
                        epoch,
                        batch: it,
                        value,
                    },
                    CrnError::NonFinite(_) => CrnError::NonFiniteLoss {
                        epoch,
                        batch: it,
                        value: f64::NAN,
                    },
                    other => other,
                })?;
            sums.total += stats.total;
            sums.branch_a += stats.branch_a;
            sums.branch_b += stats.branch_b;
        }
        let denom = cfg.train_batches as f64;
        let report = evaluate(&model, cfg, req.seed)?;
        let mut record = Record::new();
        record
            .push("epoch", epoch)?
            .push_f64("train_loss", sums.total / denom)?
            .push_f64("train_loss_a", sums.branch_a / denom)?
            .push_f64("train_loss_b", sums.branch_b / denom)?;
        report.append_to(&mut record)?;
        metrics.append(&record)?;
        final_eval = Some(report);
    }

    let checkpoint_base = req.out.join(CHECKPOINT_BASE);
    checkpoint::save_params(&checkpoint_base, model.params())?;
    let wall_seconds = started.elapsed().as_secs_f64();
    println!(
        "train seed={} epochs={} out={} wall_s={:.2}",
        req.seed,
        cfg.epochs,
        req.out.display(),
        wall_seconds
    );
    Ok(TrainOutcome {
        run_dir: req.out.to_path_buf(),
        checkpoint_base,
        final_eval,
        wall_seconds,
    })
}
