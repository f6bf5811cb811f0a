//! Coupled-shapes: 9-way classification of (shape × motion) from paired
//! streams over a 16×16 torus.
//!
//! A 7×7 stencil (square, cross, or diamond) translates 2 px per step
//! left, right, or down. The two sources split the evidence:
//!
//! * **A** (appearance) shows the filled stencil, but its position carries
//!   fresh uniform ±2 px jitter each frame — as large as the per-step
//!   displacement — and every pixel gets Gaussian noise. Shape is easy to
//!   read; motion is not.
//! * **B** (motion) shows frame-to-frame differences of the *un-jittered*
//!   trajectory, rendered as the 1-px outline of the stencil's bounding
//!   box. All three stencils share that 7×7 box, so B's frames are
//!   identical across shapes by construction: motion is clean, shape is
//!   absent.
//!
//! The class label is only recoverable from both streams together.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{sample_seed, SequenceBatch, Targets};
use crate::error::{CrnError, Result};
use crate::tensor::{Shape, Tensor};

pub const IMAGE: usize = 16;
pub const STENCIL: usize = 7;
pub const CLASSES: usize = 9;
const STEP_PX: i64 = 2;
const JITTER_PX: i64 = 2;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ShapeKind {
    Square,
    Cross,
    Diamond,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Motion {
    Left,
    Right,
    Down,
}

impl Motion {
    /// Per-step displacement as (dy, dx).
    fn velocity(self) -> (i64, i64) {
        match self {
            Motion::Left => (0, -STEP_PX),
            Motion::Right => (0, STEP_PX),
            Motion::Down => (STEP_PX, 0),
        }
    }
}

pub const SHAPES: [ShapeKind; 3] = [ShapeKind::Square, ShapeKind::Cross, ShapeKind::Diamond];
pub const MOTIONS: [Motion; 3] = [Motion::Left, Motion::Right, Motion::Down];

pub fn class_of(shape: ShapeKind, motion: Motion) -> usize {
    let s = SHAPES.iter().position(|k| *k == shape).unwrap();
    let m = MOTIONS.iter().position(|k| *k == motion).unwrap();
    s * MOTIONS.len() + m
}

/// What source B carries.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BSource {
    /// Differences of the clean outline trajectory (the default).
    CleanMotion,
    /// Differences of the noisy A frames themselves (first frame zero).
    RgbDiff,
}

#[derive(Clone, Copy, Debug)]
pub struct ShapesConfig {
    /// Sequence length T.
    pub steps: usize,
    /// Standard deviation of the Gaussian pixel noise on A.
    pub noise_sigma: f64,
    pub b_source: BSource,
}

impl Default for ShapesConfig {
    fn default() -> Self {
        ShapesConfig {
            steps: 8,
            noise_sigma: 0.3,
            b_source: BSource::CleanMotion,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SplitKind {
    Train,
    Val,
}

impl SplitKind {
    /// Disjoint per-split seed bases carved out of the experiment seed.
    pub(crate) fn base(self, seed: u64) -> u64 {
        let tag: u64 = match self {
            SplitKind::Train => 0x7472_6169_6e00_0001,
            SplitKind::Val => 0x7661_6c00_0000_0002,
        };
        crate::params::splitmix64(seed ^ tag)
    }
}

fn stencil(kind: ShapeKind) -> [[bool; STENCIL]; STENCIL] {
    let mut mask = [[false; STENCIL]; STENCIL];
    let c = (STENCIL / 2) as i64;
    for (i, row) in mask.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let (di, dj) = (i as i64 - c, j as i64 - c);
            *cell = match kind {
                ShapeKind::Square => true,
                ShapeKind::Cross => di.abs() <= 1 || dj.abs() <= 1,
                ShapeKind::Diamond => di.abs() + dj.abs() <= c,
            };
        }
    }
    mask
}

/// 1-px outline of the stencils' shared 7×7 bounding box.
fn box_ring() -> [[bool; STENCIL]; STENCIL] {
    let mut mask = [[false; STENCIL]; STENCIL];
    for (i, row) in mask.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = i == 0 || i == STENCIL - 1 || j == 0 || j == STENCIL - 1;
        }
    }
    mask
}

/// Stamp `mask` centered at (cy, cx) onto a toroidal 16×16 plane.
fn stamp(plane: &mut [f64], cy: i64, cx: i64, mask: &[[bool; STENCIL]; STENCIL]) {
    let c = (STENCIL / 2) as i64;
    let n = IMAGE as i64;
    for (i, row) in mask.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            if *cell {
                let y = (cy - c + i as i64).rem_euclid(n) as usize;
                let x = (cx - c + j as i64).rem_euclid(n) as usize;
                plane[y * IMAGE + x] = 1.0;
            }
        }
    }
}

/// One generated sequence, frame planes flattened row-major.
pub struct ShapesSample {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub label: usize,
}

/// Deterministically generate the sample for one seed.
pub fn generate(cfg: &ShapesConfig, seed: u64) -> Result<ShapesSample> {
    if cfg.steps < 1 {
        return Err(CrnError::InvalidArgument("shapes task needs T >= 1".into()));
    }
    if cfg.noise_sigma < 0.0 {
        return Err(CrnError::InvalidArgument(
            "noise_sigma must be nonnegative".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = SHAPES[rng.gen_range(0..SHAPES.len())];
    let motion = MOTIONS[rng.gen_range(0..MOTIONS.len())];
    let label = class_of(shape, motion);
    let start = (
        rng.gen_range(0..IMAGE as i64),
        rng.gen_range(0..IMAGE as i64),
    );
    let (vy, vx) = motion.velocity();
    let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");

    let mask = stencil(shape);
    let plane = IMAGE * IMAGE;
    let mut a = Vec::with_capacity(cfg.steps);
    for t in 0..cfg.steps as i64 {
        let jy = rng.gen_range(-JITTER_PX..=JITTER_PX);
        let jx = rng.gen_range(-JITTER_PX..=JITTER_PX);
        let mut frame = vec![0.0; plane];
        stamp(&mut frame, start.0 + t * vy + jy, start.1 + t * vx + jx, &mask);
        if cfg.noise_sigma > 0.0 {
            for p in &mut frame {
                *p = (*p + noise.sample(&mut rng)).clamp(-1.0, 1.0);
            }
        }
        a.push(frame);
    }

    let b = match cfg.b_source {
        BSource::CleanMotion => {
            let ring = box_ring();
            // Outline positions from one step before the first frame, so the
            // T differences cover exactly the frames of A.
            let outline: Vec<Vec<f64>> = (-1..cfg.steps as i64)
                .map(|t| {
                    let mut frame = vec![0.0; plane];
                    stamp(&mut frame, start.0 + t * vy, start.1 + t * vx, &ring);
                    frame
                })
                .collect();
            outline
                .windows(2)
                .map(|w| w[1].iter().zip(&w[0]).map(|(n, c)| n - c).collect())
                .collect()
        }
        BSource::RgbDiff => {
            let mut diffs: Vec<Vec<f64>> = vec![vec![0.0; plane]];
            for w in a.windows(2) {
                diffs.push(w[1].iter().zip(&w[0]).map(|(n, c)| n - c).collect());
            }
            diffs
        }
    };

    Ok(ShapesSample { a, b, label })
}

/// Assemble a batch from samples `start .. start+n` of a split, stacked
/// per step into `[n, 1, 16, 16]` frames.
pub fn batch(
    cfg: &ShapesConfig,
    seed: u64,
    split: SplitKind,
    start: u64,
    n: usize,
) -> Result<SequenceBatch> {
    if n == 0 {
        return Err(CrnError::InvalidArgument("batch size must be positive".into()));
    }
    let base = split.base(seed);
    let samples: Vec<ShapesSample> = (0..n as u64)
        .map(|i| generate(cfg, sample_seed(base, start + i)))
        .collect::<Result<_>>()?;
    let frame_shape = Shape::new(n, 1, IMAGE, IMAGE);
    let plane = IMAGE * IMAGE;
    let stack = |pick: &dyn Fn(&ShapesSample) -> &Vec<Vec<f64>>| -> Result<Vec<Tensor>> {
        (0..cfg.steps)
            .map(|t| {
                let mut data = Vec::with_capacity(n * plane);
                for s in &samples {
                    data.extend_from_slice(&pick(s)[t]);
                }
                Tensor::from_vec(frame_shape, data)
            })
            .collect()
    };
    Ok(SequenceBatch {
        a: stack(&|s| &s.a)?,
        b: stack(&|s| &s.b)?,
        targets: Targets::Labels(samples.iter().map(|s| s.label).collect()),
    })
}
