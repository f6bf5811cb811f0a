//! Dots-and-limbs: dense pose regression on a 32×32 canvas.
//!
//! Each sample draws two stick figures (4 joints, 3 limbs radiating from a
//! central hub joint) at random non-overlapping poses, renders them once,
//! and feeds that single image to both branches at every step. The heads
//! regress complementary targets:
//!
//! * branch A — four joint heatmaps: Gaussian peaks (σ = 1.5 px, height
//!   1.0) at the joint pixels, max-combined across figures;
//! * branch B — six limb-field channels: for each limb, the unit direction
//!   vector on pixels within 1.5 px of the segment, zero elsewhere.
//!
//! Figures keep to disjoint horizontal bands so limb fields never collide
//! and every field pixel holds either a unit vector or zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{sample_seed, SequenceBatch, Targets};
use crate::error::{CrnError, Result};
use crate::synthdata::shapes::SplitKind;
use crate::tensor::{Shape, Tensor};

pub const IMAGE: usize = 32;
pub const JOINTS: usize = 4;
/// Limbs as (parent, child) joint indices; joint 1 is the hub.
pub const LIMBS: [(usize, usize); 3] = [(0, 1), (1, 2), (1, 3)];
pub const SIGMA: f64 = 1.5;
/// A pixel belongs to a limb's field when its distance to the segment is
/// at most this many pixels.
pub const FIELD_HALF_WIDTH: f64 = 1.5;
const LIMB_SHADE: f64 = 0.6;
const JOINT_SHADE: f64 = 1.0;

/// Joint coordinates as (y, x) pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoseFigure {
    pub joints: [(i64, i64); JOINTS],
}

#[derive(Clone, Copy, Debug)]
pub struct PoseConfig {
    /// Sequence length T; the image repeats this many times.
    pub steps: usize,
}

impl Default for PoseConfig {
    fn default() -> Self {
        PoseConfig { steps: 6 }
    }
}

pub struct PoseSample {
    pub image: Vec<f64>,
    /// `[JOINTS, IMAGE, IMAGE]` flattened.
    pub heatmap: Vec<f64>,
    /// `[2·LIMBS, IMAGE, IMAGE]` flattened, channel pair (2l, 2l+1) holding
    /// the (x, y) components of limb l's direction.
    pub field: Vec<f64>,
    pub figures: [PoseFigure; 2],
}

/// Horizontal bands the two figures are confined to: all joints of figure
/// 0 satisfy x ≤ 14 and of figure 1 x ≥ 17, so their limb fields (half
/// width 1.5) can never claim the same pixel.
const BANDS: [(i64, i64); 2] = [(1, 14), (17, 30)];
const HUB_MARGIN: i64 = 5;

fn draw_figure(rng: &mut ChaCha8Rng, band: (i64, i64)) -> Result<PoseFigure> {
    let (lo, hi) = band;
    for _ in 0..1000 {
        let hub = (
            rng.gen_range(1 + HUB_MARGIN..=(IMAGE as i64 - 2 - HUB_MARGIN)),
            rng.gen_range(lo + HUB_MARGIN..=hi - HUB_MARGIN),
        );
        let mut joints = [hub; JOINTS];
        let mut ok = true;
        for idx in [0usize, 2, 3] {
            let mut placed = false;
            for _ in 0..200 {
                let dy = rng.gen_range(-5i64..=5);
                let dx = rng.gen_range(-5i64..=5);
                if dy * dy + dx * dx < 4 {
                    continue; // limb too short to orient
                }
                let p = (hub.0 + dy, hub.1 + dx);
                let in_canvas = (1..IMAGE as i64 - 1).contains(&p.0);
                let in_band = (lo..=hi).contains(&p.1);
                let distinct = joints[..idx].iter().all(|j| *j != p) && p != hub;
                if in_canvas && in_band && distinct {
                    joints[idx] = p;
                    placed = true;
                    break;
                }
            }
            if !placed {
                ok = false;
                break;
            }
        }
        if ok {
            joints[1] = hub;
            return Ok(PoseFigure { joints });
        }
    }
    Err(CrnError::InvalidArgument(
        "could not place a pose figure inside its band".into(),
    ))
}

fn draw_line(plane: &mut [f64], from: (i64, i64), to: (i64, i64), value: f64) {
    // Bresenham over integer pixel coordinates.
    let (mut y, mut x) = from;
    let dy = (to.0 - from.0).abs();
    let dx = (to.1 - from.1).abs();
    let sy = if from.0 < to.0 { 1 } else { -1 };
    let sx = if from.1 < to.1 { 1 } else { -1 };
    let mut err = dx - dy;
    loop {
        if (0..IMAGE as i64).contains(&y) && (0..IMAGE as i64).contains(&x) {
            plane[y as usize * IMAGE + x as usize] = value;
        }
        if (y, x) == to {
            break;
        }
        let e2 = 2 * err;
        if e2 > -dy {
            err -= dy;
            x += sx;
        }
        if e2 < dx {
            err += dx;
            y += sy;
        }
    }
}

pub fn render_image(figures: &[PoseFigure]) -> Vec<f64> {
    let mut plane = vec![0.0; IMAGE * IMAGE];
    for fig in figures {
        for (p, q) in LIMBS {
            draw_line(&mut plane, fig.joints[p], fig.joints[q], LIMB_SHADE);
        }
    }
    for fig in figures {
        for (y, x) in fig.joints {
            plane[y as usize * IMAGE + x as usize] = JOINT_SHADE;
        }
    }
    plane
}

/// Max-combined joint heatmaps for any set of figures.
pub fn render_heatmap(figures: &[PoseFigure]) -> Vec<f64> {
    let mut maps = vec![0.0; JOINTS * IMAGE * IMAGE];
    let denom = 2.0 * SIGMA * SIGMA;
    for (j, channel) in maps.chunks_mut(IMAGE * IMAGE).enumerate() {
        for y in 0..IMAGE {
            for x in 0..IMAGE {
                let mut best = 0.0f64;
                for fig in figures {
                    let (jy, jx) = fig.joints[j];
                    let d2 = (y as f64 - jy as f64).powi(2) + (x as f64 - jx as f64).powi(2);
                    best = best.max((-d2 / denom).exp());
                }
                channel[y * IMAGE + x] = best;
            }
        }
    }
    maps
}

fn segment_distance(py: f64, px: f64, a: (i64, i64), b: (i64, i64)) -> f64 {
    let (ay, ax) = (a.0 as f64, a.1 as f64);
    let (by, bx) = (b.0 as f64, b.1 as f64);
    let (vy, vx) = (by - ay, bx - ax);
    let len2 = vy * vy + vx * vx;
    let t = (((py - ay) * vy + (px - ax) * vx) / len2).clamp(0.0, 1.0);
    let (cy, cx) = (ay + t * vy, ax + t * vx);
    ((py - cy).powi(2) + (px - cx).powi(2)).sqrt()
}

/// Limb fields for any set of figures. Figures whose fields overlap on the
/// same limb channel overwrite each other; `generate` keeps figures in
/// disjoint bands so that never happens.
pub fn render_field(figures: &[PoseFigure]) -> Vec<f64> {
    let plane = IMAGE * IMAGE;
    let mut maps = vec![0.0; 2 * LIMBS.len() * plane];
    for fig in figures {
        for (l, (p, q)) in LIMBS.iter().enumerate() {
            let a = fig.joints[*p];
            let b = fig.joints[*q];
            let (vy, vx) = ((b.0 - a.0) as f64, (b.1 - a.1) as f64);
            let len = (vy * vy + vx * vx).sqrt();
            let (uy, ux) = (vy / len, vx / len);
            for y in 0..IMAGE {
                for x in 0..IMAGE {
                    if segment_distance(y as f64, x as f64, a, b) <= FIELD_HALF_WIDTH {
                        maps[2 * l * plane + y * IMAGE + x] = ux;
                        maps[(2 * l + 1) * plane + y * IMAGE + x] = uy;
                    }
                }
            }
        }
    }
    maps
}

pub fn generate(cfg: &PoseConfig, seed: u64) -> Result<PoseSample> {
    if cfg.steps < 1 {
        return Err(CrnError::InvalidArgument("pose task needs T >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let figures = [
        draw_figure(&mut rng, BANDS[0])?,
        draw_figure(&mut rng, BANDS[1])?,
    ];
    Ok(PoseSample {
        image: render_image(&figures),
        heatmap: render_heatmap(&figures),
        field: render_field(&figures),
        figures,
    })
}

/// Assemble a batch from samples `start .. start+n` of a split. Both
/// branches receive the same `[n, 1, 32, 32]` frame at every one of the
/// `cfg.steps` steps; targets are the stacked heatmaps `[n, 4, 32, 32]`
/// and fields `[n, 6, 32, 32]`.
pub fn batch(
    cfg: &PoseConfig,
    seed: u64,
    split: SplitKind,
    start: u64,
    n: usize,
) -> Result<SequenceBatch> {
    if n == 0 {
        return Err(CrnError::InvalidArgument("batch size must be positive".into()));
    }
    let base = split.base(seed);
    let samples: Vec<PoseSample> = (0..n as u64)
        .map(|i| generate(cfg, sample_seed(base, start + i)))
        .collect::<Result<_>>()?;
    let plane = IMAGE * IMAGE;
    let mut image = Vec::with_capacity(n * plane);
    let mut heat = Vec::with_capacity(n * JOINTS * plane);
    let mut field = Vec::with_capacity(n * 2 * LIMBS.len() * plane);
    for s in &samples {
        image.extend_from_slice(&s.image);
        heat.extend_from_slice(&s.heatmap);
        field.extend_from_slice(&s.field);
    }
    let frame = Tensor::from_vec(Shape::new(n, 1, IMAGE, IMAGE), image)?;
    Ok(SequenceBatch {
        a: vec![frame.clone(); cfg.steps],
        b: vec![frame; cfg.steps],
        targets: Targets::Maps {
            a: Tensor::from_vec(Shape::new(n, JOINTS, IMAGE, IMAGE), heat)?,
            b: Tensor::from_vec(Shape::new(n, 2 * LIMBS.len(), IMAGE, IMAGE), field)?,
        },
    })
}
