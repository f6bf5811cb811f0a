//! Deterministic synthetic tasks.
//!
//! Two generators exercise the two application shapes of the network:
//! [`shapes`] produces paired appearance/motion streams for 9-way sequence
//! classification, and [`pose`] produces repeated still images with joint
//! heatmap and limb-field regression targets. Both are seed-parameterized
//! pure functions: one seed, one bit-identical sample.

pub mod pose;
pub mod shapes;

use crate::error::{CrnError, Result};
use crate::tensor::Tensor;

/// Paired input streams plus supervision targets for one minibatch.
///
/// `a[t]` and `b[t]` are `[n, c, h, w]` frames at step t (0-based here;
/// step indices are 1-based in supervision sets).
pub struct SequenceBatch {
    pub a: Vec<Tensor>,
    pub b: Vec<Tensor>,
    pub targets: Targets,
}

/// Supervision applied at every selected step.
pub enum Targets {
    /// One class index per batch row, shared by both branches.
    Labels(Vec<usize>),
    /// Dense per-branch regression targets `[n, m, h, w]`.
    Maps { a: Tensor, b: Tensor },
}

impl SequenceBatch {
    pub fn steps(&self) -> usize {
        self.a.len()
    }

    pub fn batch_size(&self) -> usize {
        if self.a.is_empty() {
            0
        } else {
            self.a[0].shape().n
        }
    }

    /// Check the stream invariants: equal length, consistent shapes.
    pub fn validate(&self) -> Result<()> {
        if self.a.len() != self.b.len() || self.a.is_empty() {
            return Err(CrnError::ShapeMismatch(format!(
                "sources have {} and {} steps",
                self.a.len(),
                self.b.len()
            )));
        }
        let sa = self.a[0].shape();
        let sb = self.b[0].shape();
        for (t, (fa, fb)) in self.a.iter().zip(&self.b).enumerate() {
            if fa.shape() != sa || fb.shape() != sb {
                return Err(CrnError::ShapeMismatch(format!(
                    "frame shapes change at step {}",
                    t + 1
                )));
            }
            if fa.shape().n != sb.n || fa.shape().h != sb.h || fa.shape().w != sb.w {
                return Err(CrnError::ShapeMismatch(format!(
                    "sources disagree on batch/spatial size: {} vs {}",
                    fa.shape(),
                    fb.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Frame-to-frame differences: `D_t = X_{t+1} − X_t`, mapping T frames to
/// T−1 difference frames.
pub fn rgb_diff(frames: &[Tensor]) -> Result<Vec<Tensor>> {
    if frames.len() < 2 {
        return Err(CrnError::InvalidArgument(format!(
            "rgb_diff needs at least 2 frames, got {}",
            frames.len()
        )));
    }
    let shape = frames[0].shape();
    let mut out = Vec::with_capacity(frames.len() - 1);
    for pair in frames.windows(2) {
        if pair[1].shape() != shape {
            return Err(CrnError::ShapeMismatch(
                "rgb_diff frames must share one shape".into(),
            ));
        }
        let data: Vec<f64> = pair[1]
            .data()
            .iter()
            .zip(pair[0].data())
            .map(|(next, cur)| next - cur)
            .collect();
        out.push(Tensor::from_vec(shape, data)?);
    }
    Ok(out)
}

/// Per-sample seed stream: sample i of a split draws from
/// `splitmix64(base ⊕ i)` so splits with disjoint bases never collide.
pub fn sample_seed(base: u64, index: u64) -> u64 {
    crate::params::splitmix64(base ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rgb_diff_of_constant_sequence_is_zero() {
        let frames = vec![Tensor::filled(Shape::new(1, 1, 4, 4), 0.3); 5];
        for d in rgb_diff(&frames).unwrap() {
            assert!(d.data().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn rgb_diff_of_ramp_is_ones() {
        let shape = Shape::new(1, 2, 3, 3);
        let frames: Vec<Tensor> = (0..4).map(|t| Tensor::filled(shape, t as f64)).collect();
        let diffs = rgb_diff(&frames).unwrap();
        assert_eq!(diffs.len(), 3);
        for d in diffs {
            assert!(d.data().iter().all(|v| *v == 1.0));
        }
    }

    #[test]
    fn rgb_diff_telescopes() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let shape = Shape::new(2, 3, 5, 5);
        let frames: Vec<Tensor> = (0..7)
            .map(|_| Tensor::uniform(shape, -1.0, 1.0, &mut rng))
            .collect();
        let diffs = rgb_diff(&frames).unwrap();
        let mut total = vec![0.0; shape.len()];
        for d in &diffs {
            for (acc, v) in total.iter_mut().zip(d.data()) {
                *acc += v;
            }
        }
        let last = frames.last().unwrap().data();
        let first = frames[0].data();
        for ((acc, l), f) in total.iter().zip(last).zip(first) {
            assert!((acc - (l - f)).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_seed_streams_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for base in [0u64, 1 << 32] {
            for i in 0..1000 {
                assert!(seen.insert(sample_seed(base, i)), "seed collision");
            }
        }
    }
}
