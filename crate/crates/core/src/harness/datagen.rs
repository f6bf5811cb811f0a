//! Sample export for inspection: writes task samples in the same
//! manifest + binary layout checkpoints use, one file pair per sample.

use std::path::{Path, PathBuf};

use crate::checkpoint::save_tensors;
use crate::config::{ExperimentConfig, TaskKind};
use crate::error::{CrnError, Result};
use crate::synthdata::shapes::SplitKind;
use crate::synthdata::Targets;
use crate::tensor::Tensor;

/// Export `export_n` training-split samples to `out/sampleNNNN.{manifest,bin}`.
pub fn cmd_datagen(
    cfg: &ExperimentConfig,
    out: &Path,
    export_n: usize,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    if export_n == 0 {
        return Err(CrnError::InvalidArgument(
            "datagen needs a positive --export-n".into(),
        ));
    }
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let mut bases = Vec::with_capacity(export_n);
    for i in 0..export_n {
        let data = super::task_batch(cfg, seed, SplitKind::Train, i as u64, 1)?;
        let mut entries: Vec<(String, Tensor)> = Vec::new();
        match cfg.task {
            TaskKind::Shapes => {
                for (t, frame) in data.a.iter().enumerate() {
                    entries.push((format!("a.step{}", t + 1), frame.clone()));
                }
                for (t, frame) in data.b.iter().enumerate() {
                    entries.push((format!("b.step{}", t + 1), frame.clone()));
                }
                match &data.targets {
                    Targets::Labels(labels) => {
                        entries.push(("label".into(), Tensor::scalar(labels[0] as f64)))
                    }
                    _ => unreachable!("shapes batches carry labels"),
                }
            }
            TaskKind::Pose => {
                entries.push(("image".into(), data.a[0].clone()));
                match &data.targets {
                    Targets::Maps { a, b } => {
                        entries.push(("heatmap".into(), a.clone()));
                        entries.push(("field".into(), b.clone()));
                    }
                    _ => unreachable!("pose batches carry maps"),
                }
            }
        }
        let base = out.join(format!("sample{i:04}"));
        save_tensors(&base, &entries)?;
        bases.push(base);
    }
    println!(
        "datagen task={:?} exported={} out={}",
        cfg.task,
        export_n,
        out.display()
    );
    Ok(bases)
}
