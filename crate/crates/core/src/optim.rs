//! SGD with momentum, weight decay, and per-group learning rates.
//!
//! The update per parameter θ with gradient g is
//!
//! ```text
//! v ← μ·v + g + λ·θ
//! θ ← θ − η_group·v
//! ```
//!
//! with weight decay folded into the gradient before the momentum update
//! (classic SGD-M). Learning-rate groups are name prefixes; each parameter
//! takes the rate of its longest matching prefix, which lets the stems
//! ("backbone") train slower than the recurrent core.

use crate::error::{CrnError, Result};
use crate::params::{ParamBinding, ParamId, ParamSet};
use crate::tensor::Tape;

#[derive(Clone, Debug)]
pub struct SgdConfig {
    /// `(name prefix, learning rate)`; longest matching prefix wins.
    pub groups: Vec<(String, f64)>,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl SgdConfig {
    /// One rate for everything.
    pub fn single_rate(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        SgdConfig {
            groups: vec![(String::new(), lr)],
            momentum,
            weight_decay,
        }
    }

    /// The two-rate split used throughout: stems at `backbone_lr`,
    /// everything else at `crn_lr`.
    pub fn two_rate(crn_lr: f64, backbone_lr: f64, momentum: f64, weight_decay: f64) -> Self {
        SgdConfig {
            groups: vec![
                ("brancha.stem".into(), backbone_lr),
                ("branchb.stem".into(), backbone_lr),
                (String::new(), crn_lr),
            ],
            momentum,
            weight_decay,
        }
    }
}

/// Optimizer state: one velocity buffer and one resolved rate per parameter.
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    rates: Vec<f64>,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    /// Resolve group membership against a parameter set. Every parameter
    /// must match some group prefix.
    pub fn new(cfg: &SgdConfig, params: &ParamSet) -> Result<Sgd> {
        let mut rates = Vec::with_capacity(params.len());
        let mut velocity = Vec::with_capacity(params.len());
        for (_, name, tensor) in params.iter() {
            let best = cfg
                .groups
                .iter()
                .filter(|(prefix, _)| name.starts_with(prefix.as_str()))
                .max_by_key(|(prefix, _)| prefix.len());
            match best {
                Some((_, lr)) => rates.push(*lr),
                None => {
                    return Err(CrnError::InvalidArgument(format!(
                        "parameter {name:?} matches no learning-rate group"
                    )))
                }
            }
            velocity.push(vec![0.0; tensor.shape().len()]);
        }
        Ok(Sgd {
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
            rates,
            velocity,
        })
    }

    /// Learning rate resolved for one parameter.
    pub fn rate(&self, id: ParamId) -> f64 {
        self.rates[id.index()]
    }

    /// Apply one update from gradients accumulated on a tape.
    pub fn step(&mut self, params: &mut ParamSet, tape: &Tape, bind: &ParamBinding) -> Result<()> {
        for id in params.ids() {
            let var = bind.var(id);
            let grad = tape.grad(var).ok_or_else(|| {
                CrnError::InvalidArgument(format!(
                    "parameter {:?} was bound without gradients",
                    params.name(id)
                ))
            })?;
            // Split borrows: grad lives on the tape, θ and v are ours.
            let idx = id.index();
            let lr = self.rates[idx];
            let v = &mut self.velocity[idx];
            let theta = params.value_mut(id).data_mut();
            for ((th, vel), g) in theta.iter_mut().zip(v.iter_mut()).zip(grad) {
                *vel = self.momentum * *vel + g + self.weight_decay * *th;
                *th -= lr * *vel;
            }
        }
        Ok(())
    }

    /// Apply one update from explicitly supplied gradients (tests, FFI).
    pub fn step_with(
        &mut self,
        params: &mut ParamSet,
        grad_of: impl Fn(ParamId) -> Vec<f64>,
    ) -> Result<()> {
        for id in params.ids() {
            let grad = grad_of(id);
            let theta_len = params.value(id).shape().len();
            if grad.len() != theta_len {
                return Err(CrnError::ShapeMismatch(format!(
                    "gradient for {:?} has {} entries, expected {}",
                    params.name(id),
                    grad.len(),
                    theta_len
                )));
            }
            let idx = id.index();
            let lr = self.rates[idx];
            let v = &mut self.velocity[idx];
            let theta = params.value_mut(id).data_mut();
            for ((th, vel), g) in theta.iter_mut().zip(v.iter_mut()).zip(&grad) {
                *vel = self.momentum * *vel + g + self.weight_decay * *th;
                *th -= lr * *vel;
            }
        }
        Ok(())
    }
}
