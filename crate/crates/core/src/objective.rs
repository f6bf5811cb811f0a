//! Selected-timestep supervision.
//!
//! Training applies the per-branch losses at a set 𝒯 of step indices and
//! sums them: `L = Σ_{t∈𝒯} (L^a_t + L^b_t)` — a sum, not a mean, so adding
//! steps adds loss mass. Four strategies pick 𝒯:
//!
//! | letter | rule                                  |
//! |--------|---------------------------------------|
//! | a      | final step only                       |
//! | b      | every step 1..T                       |
//! | c      | final step + 1 random earlier step    |
//! | d      | final step + 2 random earlier steps   |
//!
//! Random earlier steps are drawn uniformly without replacement from
//! {1..T−1}, fresh each training iteration. Both branches are always
//! supervised at the same steps with the same target.

use rand::Rng;

use crate::crn::StepOutputs;
use crate::error::{CrnError, Result};
use crate::synthdata::Targets;
use crate::tensor::{Tape, Var};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SupervisionStrategy {
    EndOnly,
    EveryStep,
    EndPlusRandom { k: usize },
}

impl SupervisionStrategy {
    /// Parse the single-letter name used in config files.
    pub fn from_letter(s: &str) -> Result<Self> {
        match s {
            "a" => Ok(Self::EndOnly),
            "b" => Ok(Self::EveryStep),
            "c" => Ok(Self::EndPlusRandom { k: 1 }),
            "d" => Ok(Self::EndPlusRandom { k: 2 }),
            other => Err(CrnError::Config(format!(
                "unknown strategy {other:?}, expected one of a, b, c, d"
            ))),
        }
    }

    pub fn letter(&self) -> &'static str {
        match self {
            Self::EndOnly => "a",
            Self::EveryStep => "b",
            Self::EndPlusRandom { k: 1 } => "c",
            Self::EndPlusRandom { k: 2 } => "d",
            Self::EndPlusRandom { .. } => "custom",
        }
    }
}

/// Pick the supervised steps 𝒯 for one iteration, ascending and 1-based.
/// The final step is always included except for strategies that already
/// cover it.
pub fn select_steps(
    strategy: SupervisionStrategy,
    t: usize,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    if t == 0 {
        return Err(CrnError::InvalidArgument("T must be at least 1".into()));
    }
    match strategy {
        SupervisionStrategy::EndOnly => Ok(vec![t]),
        SupervisionStrategy::EveryStep => Ok((1..=t).collect()),
        SupervisionStrategy::EndPlusRandom { k } => {
            if k > t - 1 {
                return Err(CrnError::InvalidArgument(format!(
                    "cannot sample {k} distinct earlier steps from 1..{}",
                    t as i64 - 1
                )));
            }
            let mut steps: Vec<usize> = rand::seq::index::sample(rng, t - 1, k)
                .into_iter()
                .map(|i| i + 1)
                .collect();
            steps.push(t);
            steps.sort_unstable();
            Ok(steps)
        }
    }
}

/// The scalar losses recorded at one supervised step.
pub struct StepLoss {
    pub step: usize,
    /// Branch A's loss, or the single fused loss.
    pub a: Var,
    /// Branch B's loss (absent for fusion topologies).
    pub b: Option<Var>,
}

/// Total loss plus the per-step terms it sums (for metrics).
pub struct LossBreakdown {
    pub total: Var,
    pub per_step: Vec<StepLoss>,
}

/// Build `L = Σ_{t∈𝒯} (L^a_t + L^b_t)` on the tape.
///
/// Classification targets use softmax cross-entropy; dense targets use mean
/// squared error against each branch's map.
pub fn total_loss(
    tape: &mut Tape,
    outputs: &StepOutputs,
    targets: &Targets,
    steps: &[usize],
) -> Result<LossBreakdown> {
    if steps.is_empty() {
        return Err(CrnError::InvalidArgument(
            "at least one supervised step is required".into(),
        ));
    }
    let t_max = outputs.steps();
    for &s in steps {
        if s < 1 || s > t_max {
            return Err(CrnError::InvalidArgument(format!(
                "selected step {s} outside 1..={t_max}"
            )));
        }
    }
    // Dense targets go on the tape once, not once per step.
    let map_targets = match targets {
        Targets::Maps { a, b } => Some((tape.constant(a.clone()), tape.constant(b.clone()))),
        Targets::Labels(_) => None,
    };
    let branch_loss = |tape: &mut Tape, q: Var, which_b: bool| -> Result<Var> {
        match targets {
            Targets::Labels(labels) => tape.softmax_cross_entropy(q, labels),
            Targets::Maps { .. } => {
                let (ta, tb) = map_targets.expect("dense targets registered above");
                tape.mse_loss(q, if which_b { tb } else { ta })
            }
        }
    };
    let mut per_step = Vec::with_capacity(steps.len());
    let mut terms = Vec::new();
    for &s in steps {
        match outputs {
            StepOutputs::Dual(all) => {
                let (qa, qb) = all[s - 1];
                let la = branch_loss(tape, qa, false)?;
                let lb = branch_loss(tape, qb, true)?;
                terms.push(la);
                terms.push(lb);
                per_step.push(StepLoss {
                    step: s,
                    a: la,
                    b: Some(lb),
                });
            }
            StepOutputs::Single(all) => {
                let q = all[s - 1];
                let l = branch_loss(tape, q, false)?;
                terms.push(l);
                per_step.push(StepLoss {
                    step: s,
                    a: l,
                    b: None,
                });
            }
        }
    }
    let total = tape.sum_scalars(&terms)?;
    Ok(LossBreakdown { total, per_step })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::RibKind;
    use crate::crn::{CrnModel, CrnSpec, HeadLayout, HeadSpec, Topology};
    use crate::synthdata::SequenceBatch;
    use crate::tensor::{Shape, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fixed_strategies_are_literal() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            select_steps(SupervisionStrategy::EndOnly, 8, &mut rng).unwrap(),
            vec![8]
        );
        assert_eq!(
            select_steps(SupervisionStrategy::EveryStep, 5, &mut rng).unwrap(),
            vec![1, 2, 3, 4, 5]
        );
    }

    #[test]
    fn end_plus_random_is_uniform_over_earlier_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut counts = [0usize; 8];
        let draws = 10_000;
        for _ in 0..draws {
            let steps =
                select_steps(SupervisionStrategy::EndPlusRandom { k: 1 }, 8, &mut rng).unwrap();
            assert_eq!(steps.len(), 2);
            assert_eq!(*steps.last().unwrap(), 8);
            counts[steps[0] - 1] += 1;
        }
        assert_eq!(counts[7], 0, "step 8 double-counted");
        for (i, c) in counts[..7].iter().enumerate() {
            let freq = *c as f64 / draws as f64;
            assert!(
                (freq - 1.0 / 7.0).abs() < 0.02,
                "step {} frequency {freq:.4}",
                i + 1
            );
        }
    }

    #[test]
    fn end_plus_two_random_picks_distinct_earlier_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let steps =
                select_steps(SupervisionStrategy::EndPlusRandom { k: 2 }, 6, &mut rng).unwrap();
            assert_eq!(steps.len(), 3);
            assert!(steps[0] < steps[1] && steps[1] < steps[2]);
            assert_eq!(steps[2], 6);
            assert!(steps[0] >= 1 && steps[1] <= 5);
        }
        assert!(
            select_steps(SupervisionStrategy::EndPlusRandom { k: 2 }, 2, &mut rng).is_err(),
            "k=2 needs at least 3 steps"
        );
    }

    #[test]
    fn letters_round_trip() {
        for letter in ["a", "b", "c", "d"] {
            assert_eq!(
                SupervisionStrategy::from_letter(letter).unwrap().letter(),
                letter
            );
        }
        assert!(SupervisionStrategy::from_letter("e").is_err());
    }

    fn tiny_model(steps: usize) -> CrnModel {
        CrnModel::build(
            CrnSpec {
                topology: Topology::Coupled,
                steps,
                in_channels: (1, 1),
                stem_channels: 2,
                lstm_layers: 1,
                lstm_hidden: 2,
                lstm_kernel: 3,
                lstm_bias: true,
                rib_kind: Some(RibKind::Srib),
                rib_channels: 2,
                heads: HeadLayout::PerBranch(
                    HeadSpec::Classification { classes: 3 },
                    HeadSpec::Classification { classes: 3 },
                ),
            },
            5,
        )
        .unwrap()
    }

    fn tiny_batch(steps: usize, seed: u64) -> SequenceBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = Shape::new(2, 1, 4, 4);
        SequenceBatch {
            a: (0..steps)
                .map(|_| Tensor::uniform(shape, -1.0, 1.0, &mut rng))
                .collect(),
            b: (0..steps)
                .map(|_| Tensor::uniform(shape, -1.0, 1.0, &mut rng))
                .collect(),
            targets: Targets::Labels(vec![0, 2]),
        }
    }

    #[test]
    fn total_is_the_sum_of_branch_terms() {
        let model = tiny_model(3);
        let batch = tiny_batch(3, 1);
        let mut tape = Tape::new();
        let bind = model.bind(&mut tape, false);
        let outputs = model.forward_unroll(&mut tape, &bind, &batch).unwrap();
        let breakdown = total_loss(&mut tape, &outputs, &batch.targets, &[1, 3]).unwrap();
        let mut by_hand = 0.0;
        for sl in &breakdown.per_step {
            by_hand += tape.value(sl.a).scalar_value();
            by_hand += tape.value(sl.b.unwrap()).scalar_value();
        }
        let total = tape.value(breakdown.total).scalar_value();
        assert!((total - by_hand).abs() < 1e-15);

        // Superset of steps can only add nonnegative cross-entropy mass.
        let every = total_loss(&mut tape, &outputs, &batch.targets, &[1, 2, 3]).unwrap();
        let end_only = total_loss(&mut tape, &outputs, &batch.targets, &[3]).unwrap();
        let le = tape.value(every.total).scalar_value();
        let lo = tape.value(end_only.total).scalar_value();
        assert!(le >= lo && lo >= 0.0);
    }

    #[test]
    fn out_of_range_step_is_rejected() {
        let model = tiny_model(3);
        let batch = tiny_batch(3, 2);
        let mut tape = Tape::new();
        let bind = model.bind(&mut tape, false);
        let outputs = model.forward_unroll(&mut tape, &bind, &batch).unwrap();
        assert!(total_loss(&mut tape, &outputs, &batch.targets, &[4]).is_err());
        assert!(total_loss(&mut tape, &outputs, &batch.targets, &[0]).is_err());
        assert!(total_loss(&mut tape, &outputs, &batch.targets, &[]).is_err());
    }

    #[test]
    fn unselected_steps_receive_no_gradient() {
        let model = tiny_model(3);
        let batch = tiny_batch(3, 4);
        let mut tape = Tape::new();
        let bind = model.bind(&mut tape, true);
        let frames_a: Vec<_> = batch.a.iter().map(|f| tape.leaf(f.clone(), true)).collect();
        let frames_b: Vec<_> = batch.b.iter().map(|f| tape.leaf(f.clone(), true)).collect();
        let outputs = model
            .forward_unroll_vars(&mut tape, &bind, &frames_a, &frames_b)
            .unwrap();
        let breakdown = total_loss(&mut tape, &outputs, &batch.targets, &[2]).unwrap();
        tape.backward(breakdown.total).unwrap();
        let grad_mass = |v| tape.grad(v).unwrap().iter().map(|g: &f64| g.abs()).sum::<f64>();
        // Frames after max 𝒯 never influence the loss; frames at or before
        // do (both branches, coupled topology).
        assert_eq!(grad_mass(frames_a[2]), 0.0);
        assert_eq!(grad_mass(frames_b[2]), 0.0);
        assert!(grad_mass(frames_a[0]) > 0.0);
        assert!(grad_mass(frames_a[1]) > 0.0);
        assert!(grad_mass(frames_b[1]) > 0.0);
        // Head outputs at unselected steps carry zero adjoint.
        if let StepOutputs::Dual(all) = &outputs {
            for (t, (qa, qb)) in all.iter().enumerate() {
                let mass = grad_mass(*qa) + grad_mass(*qb);
                if t + 1 == 2 {
                    assert!(mass > 0.0);
                } else {
                    assert_eq!(mass, 0.0, "step {} head got gradient", t + 1);
                }
            }
        }
    }

    #[test]
    fn dense_targets_use_mse_per_branch() {
        let mut spec = CrnSpec {
            topology: Topology::Coupled,
            steps: 2,
            in_channels: (1, 1),
            stem_channels: 2,
            lstm_layers: 1,
            lstm_hidden: 2,
            lstm_kernel: 3,
            lstm_bias: true,
            rib_kind: Some(RibKind::Identity),
            rib_channels: 2,
            heads: HeadLayout::PerBranch(
                HeadSpec::Regression { maps: 2 },
                HeadSpec::Regression { maps: 3 },
            ),
        };
        spec.rib_channels = spec.lstm_hidden;
        let model = CrnModel::build(spec, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let shape = Shape::new(1, 1, 4, 4);
        let batch = SequenceBatch {
            a: (0..2)
                .map(|_| Tensor::uniform(shape, -1.0, 1.0, &mut rng))
                .collect(),
            b: (0..2)
                .map(|_| Tensor::uniform(shape, -1.0, 1.0, &mut rng))
                .collect(),
            targets: Targets::Maps {
                a: Tensor::zeros(Shape::new(1, 2, 4, 4)),
                b: Tensor::zeros(Shape::new(1, 3, 4, 4)),
            },
        };
        let mut tape = Tape::new();
        let bind = model.bind(&mut tape, false);
        let outputs = model.forward_unroll(&mut tape, &bind, &batch).unwrap();
        let breakdown = total_loss(&mut tape, &outputs, &batch.targets, &[2]).unwrap();
        // MSE against zero targets is the mean square of the outputs.
        if let StepOutputs::Dual(all) = &outputs {
            let (qa, _) = all[1];
            let expect: f64 = tape
                .value(qa)
                .data()
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                / tape.shape(qa).len() as f64;
            let got = tape.value(breakdown.per_step[0].a).scalar_value();
            assert!((got - expect).abs() < 1e-15);
        }
    }
}
