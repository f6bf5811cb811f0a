//! Named parameter registry.
//!
//! Every trainable tensor lives in a [`ParamSet`] under a dotted path such as
//! `brancha.layer0.Wxc`. The set fixes enumeration order (insertion order),
//! which the checkpoint manifest, the optimizer, and the gradient checker all
//! share, so "parameter i" means the same thing everywhere.
//!
//! Initialization is keyed by name: each parameter draws from its own RNG
//! stream seeded from `(global_seed, name)`. Two models that share a
//! parameter name and shape therefore share its initial value regardless of
//! what other parameters exist — the property that makes topology ablations
//! controlled comparisons.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CrnError, Result};
use crate::tensor::{Shape, Tape, Tensor, Var};

/// Index of a parameter within its [`ParamSet`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ParamId(usize);

impl ParamId {
    /// Position in the set's enumeration order.
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, name-unique collection of parameter tensors.
#[derive(Default)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar entries across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.shape().len()).sum()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(CrnError::InvalidArgument(format!(
                "duplicate parameter name {name:?}"
            )));
        }
        let id = ParamId(self.entries.len());
        self.index.insert(name.clone(), id.0);
        self.entries.push((name, value));
        Ok(id)
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].1
    }

    /// Replace a parameter's tensor; the shape must be unchanged.
    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let current = &self.entries[id.0];
        if current.1.shape() != value.shape() {
            return Err(CrnError::ShapeMismatch(format!(
                "parameter {:?} has shape {}, got {}",
                current.0,
                current.1.shape(),
                value.shape()
            )));
        }
        self.entries[id.0].1 = value;
        Ok(())
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].1
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// `(name, shape)` pairs in enumeration order; the checkpoint manifest.
    pub fn manifest(&self) -> Vec<(String, Shape)> {
        self.entries
            .iter()
            .map(|(n, t)| (n.clone(), t.shape()))
            .collect()
    }

    /// Register every parameter as a tape leaf, in enumeration order.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> ParamBinding {
        let vars = self
            .entries
            .iter()
            .map(|(_, t)| tape.leaf(t.clone(), requires_grad))
            .collect();
        ParamBinding { vars }
    }
}

/// Tape handles for a bound [`ParamSet`], parallel to its enumeration order.
pub struct ParamBinding {
    vars: Vec<Var>,
}

impl ParamBinding {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

// ── name-keyed initialization ───────────────────────────────────────────

/// FNV-1a over the parameter name; stable across platforms.
fn fnv1a64(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// SplitMix64 finalizer; decorrelates nearby seed values.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Dedicated RNG stream for one `(seed, name)` pair.
pub fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ fnv1a64(name)))
}

/// Weight initializer: uniform in `±sqrt(1/fan_in)`, drawn from the
/// parameter's own stream.
pub fn init_uniform(shape: Shape, fan_in: usize, seed: u64, name: &str) -> Tensor {
    let bound = (1.0 / fan_in as f64).sqrt();
    let mut rng = param_rng(seed, name);
    Tensor::uniform(shape, -bound, bound, &mut rng)
}
