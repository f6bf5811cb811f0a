//! Network assembly: two branches over paired input streams, with four
//! wirings.
//!
//! * `coupled` — each branch interprets the *opposite* branch's previous
//!   top hidden state through its RIB and adapts it into its LSTM input
//!   through its RAB.
//! * `non-coupled` — identical pipeline, but each branch feeds its *own*
//!   previous top hidden state through its RIB (no information exchange).
//! * `early-fusion` — the two stem outputs are concatenated into a single
//!   LSTM with one head.
//! * `late-fusion` — two plain stem+LSTM branches; their top hidden states
//!   are merged by a 1×1 convolution in front of one head.
//!
//! Per coupled branch and step t:
//! `ĥ^b = RIB_a(H^b_{t−1})`, `x̂^a = RAB_a(stem_a(X^a_t) ⊕ ĥ^b)`, then the
//! ConvLSTM stack advances and the head reads the new top hidden state.
//! At t = 1 the opposite hidden is the all-zero initial state passed through
//! the RIB.

use crate::convlstm::{ConvLstmStack, LstmState};
use crate::coupling::{ConvParams, Rab, Rib, RibKind};
use crate::error::{CrnError, Result};
use crate::params::{init_uniform, ParamBinding, ParamId, ParamSet};
use crate::synthdata::SequenceBatch;
use crate::tensor::{Shape, Tape, Tensor, Var};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Topology {
    Coupled,
    NonCoupled,
    EarlyFusion,
    LateFusion,
}

/// What a head produces at every step.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum HeadSpec {
    /// Global max pool + linear to `classes` logits, `[n, classes, 1, 1]`.
    /// Max rather than mean pooling keeps the gradient reaching the
    /// convolutional stack at the same scale as the bias gradients, which
    /// average pooling divides by the plane size.
    Classification { classes: usize },
    /// 1×1 convolution to `maps` dense channels, `[n, maps, h, w]`.
    Regression { maps: usize },
}

/// Head layout over the two output streams.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum HeadLayout {
    /// One head per branch (coupled / non-coupled topologies).
    PerBranch(HeadSpec, HeadSpec),
    /// One head on the fused stream (early / late fusion).
    Single(HeadSpec),
}

/// Build recipe for [`CrnModel`]. Width fields follow the config file:
/// `stem_channels` is c_x, `lstm_hidden` is ch.
#[derive(Clone, Copy, Debug)]
pub struct CrnSpec {
    pub topology: Topology,
    pub steps: usize,
    /// Input channels of source A and source B.
    pub in_channels: (usize, usize),
    pub stem_channels: usize,
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    pub lstm_kernel: usize,
    pub lstm_bias: bool,
    /// Interpretation block variant; `None` removes RIB *and* RAB, so the
    /// LSTM consumes the stem output directly.
    pub rib_kind: Option<RibKind>,
    /// RIB output width (ignored for the identity variant, which keeps ch).
    pub rib_channels: usize,
    pub heads: HeadLayout,
}

impl CrnSpec {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(CrnError::InvalidArgument("T must be at least 1".into()));
        }
        if self.in_channels.0 == 0
            || self.in_channels.1 == 0
            || self.stem_channels == 0
            || self.lstm_hidden == 0
        {
            return Err(CrnError::InvalidArgument(
                "channel widths must be positive".into(),
            ));
        }
        let two_branch = matches!(self.topology, Topology::Coupled | Topology::NonCoupled);
        match (two_branch, &self.heads) {
            (true, HeadLayout::PerBranch(..)) | (false, HeadLayout::Single(..)) => Ok(()),
            (true, HeadLayout::Single(..)) => Err(CrnError::InvalidArgument(
                "coupled/non-coupled topologies need one head per branch".into(),
            )),
            (false, HeadLayout::PerBranch(..)) => Err(CrnError::InvalidArgument(
                "fusion topologies use a single head".into(),
            )),
        }
    }
}

/// Two tanh-activated 3×3 convolutions, cin → c_x → c_x; the trainable
/// feature extractor standing in for a pretrained backbone.
struct Stem {
    conv0: ConvParams,
    conv1: ConvParams,
}

const STEM_KERNEL: usize = 3;

impl Stem {
    fn new(params: &mut ParamSet, prefix: &str, cin: usize, c_x: usize, seed: u64) -> Result<Stem> {
        Ok(Stem {
            conv0: ConvParams::new(
                params,
                &format!("{prefix}.conv0"),
                c_x,
                cin,
                STEM_KERNEL,
                seed,
            )?,
            conv1: ConvParams::new(
                params,
                &format!("{prefix}.conv1"),
                c_x,
                c_x,
                STEM_KERNEL,
                seed,
            )?,
        })
    }

    fn forward(&self, tape: &mut Tape, bind: &ParamBinding, x: Var) -> Result<Var> {
        let y0 = self.conv0.forward(tape, bind, x, 1)?;
        let a0 = tape.tanh(y0)?;
        let y1 = self.conv1.forward(tape, bind, a0, 1)?;
        tape.tanh(y1)
    }
}

enum Head {
    Classification {
        w: ParamId,
        b: ParamId,
    },
    Regression {
        conv: ConvParams,
    },
}

impl Head {
    fn new(
        params: &mut ParamSet,
        prefix: &str,
        spec: HeadSpec,
        ch: usize,
        seed: u64,
    ) -> Result<Head> {
        match spec {
            HeadSpec::Classification { classes } => {
                if classes == 0 {
                    return Err(CrnError::InvalidArgument(
                        "classification head needs at least one class".into(),
                    ));
                }
                let w_name = format!("{prefix}.w");
                let w = params.add(
                    w_name.clone(),
                    init_uniform(Shape::new(classes, ch, 1, 1), ch, seed, &w_name),
                )?;
                let b = params.add(
                    format!("{prefix}.b"),
                    Tensor::zeros(Shape::channel_vec(classes)),
                )?;
                Ok(Head::Classification { w, b })
            }
            HeadSpec::Regression { maps } => {
                if maps == 0 {
                    return Err(CrnError::InvalidArgument(
                        "regression head needs at least one map".into(),
                    ));
                }
                Ok(Head::Regression {
                    conv: ConvParams::new(params, prefix, maps, ch, 1, seed)?,
                })
            }
        }
    }

    fn forward(&self, tape: &mut Tape, bind: &ParamBinding, hidden: Var) -> Result<Var> {
        match self {
            Head::Classification { w, b } => {
                let pooled = tape.global_max_pool(hidden)?;
                tape.linear(pooled, bind.var(*w), bind.var(*b))
            }
            Head::Regression { conv } => conv.forward(tape, bind, hidden, 1),
        }
    }
}

/// One branch of a two-branch topology.
struct Branch {
    stem: Stem,
    rib: Option<Rib>,
    rab: Option<Rab>,
    lstm: ConvLstmStack,
    head: Head,
}

impl Branch {
    fn new(
        params: &mut ParamSet,
        prefix: &str,
        cin: usize,
        spec: &CrnSpec,
        head_spec: HeadSpec,
        seed: u64,
    ) -> Result<Branch> {
        let c_x = spec.stem_channels;
        let stem = Stem::new(params, &format!("{prefix}.stem"), cin, c_x, seed)?;
        let (rib, rab) = match spec.rib_kind {
            Some(kind) => {
                let rib = Rib::new(
                    params,
                    &format!("{prefix}.rib"),
                    kind,
                    spec.lstm_hidden,
                    spec.rib_channels,
                    seed,
                )?;
                let rab = Rab::new(
                    params,
                    &format!("{prefix}.rab"),
                    c_x,
                    rib.out_channels(),
                    seed,
                )?;
                (Some(rib), Some(rab))
            }
            None => (None, None),
        };
        let lstm = ConvLstmStack::new(
            params,
            prefix,
            c_x,
            spec.lstm_hidden,
            spec.lstm_layers,
            spec.lstm_kernel,
            spec.lstm_bias,
            seed,
        )?;
        let head = Head::new(
            params,
            &format!("{prefix}.head"),
            head_spec,
            spec.lstm_hidden,
            seed,
        )?;
        Ok(Branch {
            stem,
            rib,
            rab,
            lstm,
            head,
        })
    }

    /// Advance one step given this branch's frame and the hidden state the
    /// RIB should interpret (opposite branch's in coupled mode, own in
    /// non-coupled mode; ignored when coupling is absent).
    fn step(
        &self,
        tape: &mut Tape,
        bind: &ParamBinding,
        frame: Var,
        interpreted_hidden: Var,
        prev: &[LstmState],
    ) -> Result<(Vec<LstmState>, Var)> {
        let features = self.stem.forward(tape, bind, frame)?;
        let x_hat = match (&self.rib, &self.rab) {
            (Some(rib), Some(rab)) => {
                let h_hat = rib.forward(tape, bind, interpreted_hidden)?;
                rab.forward(tape, bind, features, h_hat)?
            }
            _ => features,
        };
        let (states, top) = self.lstm.step(tape, bind, x_hat, prev)?;
        let q = self.head.forward(tape, bind, top)?;
        Ok((states, q))
    }
}

enum Assembly {
    TwoBranch {
        a: Branch,
        b: Branch,
        exchange: bool,
    },
    Early {
        stem_a: Stem,
        stem_b: Stem,
        lstm: ConvLstmStack,
        head: Head,
    },
    Late {
        stem_a: Stem,
        lstm_a: ConvLstmStack,
        stem_b: Stem,
        lstm_b: ConvLstmStack,
        fuse: ConvParams,
        head: Head,
    },
}

/// Per-step head outputs of a forward unroll, indexed 0..T−1 (step t is
/// entry t−1).
pub enum StepOutputs {
    /// `(Q^a_t, Q^b_t)` per step.
    Dual(Vec<(Var, Var)>),
    /// Fused `Q_t` per step.
    Single(Vec<Var>),
}

impl StepOutputs {
    pub fn steps(&self) -> usize {
        match self {
            StepOutputs::Dual(v) => v.len(),
            StepOutputs::Single(v) => v.len(),
        }
    }
}

/// A fully assembled model: parameter set plus wiring.
pub struct CrnModel {
    pub spec: CrnSpec,
    params: ParamSet,
    assembly: Assembly,
}

impl CrnModel {
    /// Build and initialize. Parameter initial values depend only on the
    /// seed and the parameter's name, so assemblies that share a component
    /// (same name, same shape) share its exact initial weights.
    pub fn build(spec: CrnSpec, seed: u64) -> Result<CrnModel> {
        spec.validate()?;
        let mut params = ParamSet::new();
        let assembly = match (spec.topology, spec.heads) {
            (Topology::Coupled | Topology::NonCoupled, HeadLayout::PerBranch(ha, hb)) => {
                Assembly::TwoBranch {
                    a: Branch::new(&mut params, "brancha", spec.in_channels.0, &spec, ha, seed)?,
                    b: Branch::new(&mut params, "branchb", spec.in_channels.1, &spec, hb, seed)?,
                    exchange: spec.topology == Topology::Coupled,
                }
            }
            (Topology::EarlyFusion, HeadLayout::Single(h)) => {
                let stem_a = Stem::new(
                    &mut params,
                    "brancha.stem",
                    spec.in_channels.0,
                    spec.stem_channels,
                    seed,
                )?;
                let stem_b = Stem::new(
                    &mut params,
                    "branchb.stem",
                    spec.in_channels.1,
                    spec.stem_channels,
                    seed,
                )?;
                let lstm = ConvLstmStack::new(
                    &mut params,
                    "fused",
                    2 * spec.stem_channels,
                    spec.lstm_hidden,
                    spec.lstm_layers,
                    spec.lstm_kernel,
                    spec.lstm_bias,
                    seed,
                )?;
                let head = Head::new(&mut params, "fused.head", h, spec.lstm_hidden, seed)?;
                Assembly::Early {
                    stem_a,
                    stem_b,
                    lstm,
                    head,
                }
            }
            (Topology::LateFusion, HeadLayout::Single(h)) => {
                let stem_a = Stem::new(
                    &mut params,
                    "brancha.stem",
                    spec.in_channels.0,
                    spec.stem_channels,
                    seed,
                )?;
                let lstm_a = ConvLstmStack::new(
                    &mut params,
                    "brancha",
                    spec.stem_channels,
                    spec.lstm_hidden,
                    spec.lstm_layers,
                    spec.lstm_kernel,
                    spec.lstm_bias,
                    seed,
                )?;
                let stem_b = Stem::new(
                    &mut params,
                    "branchb.stem",
                    spec.in_channels.1,
                    spec.stem_channels,
                    seed,
                )?;
                let lstm_b = ConvLstmStack::new(
                    &mut params,
                    "branchb",
                    spec.stem_channels,
                    spec.lstm_hidden,
                    spec.lstm_layers,
                    spec.lstm_kernel,
                    spec.lstm_bias,
                    seed,
                )?;
                let fuse = ConvParams::new(
                    &mut params,
                    "fuse",
                    spec.lstm_hidden,
                    2 * spec.lstm_hidden,
                    1,
                    seed,
                )?;
                let head = Head::new(&mut params, "fused.head", h, spec.lstm_hidden, seed)?;
                Assembly::Late {
                    stem_a,
                    lstm_a,
                    stem_b,
                    lstm_b,
                    fuse,
                    head,
                }
            }
            _ => unreachable!("validate() pairs topology and head layout"),
        };
        Ok(CrnModel {
            spec,
            params,
            assembly,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> ParamBinding {
        self.params.bind(tape, requires_grad)
    }

    /// Unroll over a batch, registering each frame as a tape constant.
    pub fn forward_unroll(
        &self,
        tape: &mut Tape,
        bind: &ParamBinding,
        batch: &SequenceBatch,
    ) -> Result<StepOutputs> {
        batch.validate()?;
        let a: Vec<Var> = batch
            .a
            .iter()
            .map(|f| tape.constant(f.clone()))
            .collect();
        let b: Vec<Var> = batch
            .b
            .iter()
            .map(|f| tape.constant(f.clone()))
            .collect();
        self.forward_unroll_vars(tape, bind, &a, &b)
    }

    /// Unroll over frames already on the tape (lets callers differentiate
    /// with respect to inputs or probe input sensitivity).
    pub fn forward_unroll_vars(
        &self,
        tape: &mut Tape,
        bind: &ParamBinding,
        frames_a: &[Var],
        frames_b: &[Var],
    ) -> Result<StepOutputs> {
        if frames_a.len() != self.spec.steps || frames_b.len() != self.spec.steps {
            return Err(CrnError::ShapeMismatch(format!(
                "model unrolls T={} steps, got {} / {} frames",
                self.spec.steps,
                frames_a.len(),
                frames_b.len()
            )));
        }
        let sa = tape.shape(frames_a[0]);
        let (n, h, w) = (sa.n, sa.h, sa.w);
        match &self.assembly {
            Assembly::TwoBranch { a, b, exchange } => {
                let mut states_a = a.lstm.zero_states(tape, n, h, w);
                let mut states_b = b.lstm.zero_states(tape, n, h, w);
                let mut top_a = states_a.last().unwrap().h;
                let mut top_b = states_b.last().unwrap().h;
                let mut outputs = Vec::with_capacity(self.spec.steps);
                for t in 0..self.spec.steps {
                    let (for_a, for_b) = if *exchange {
                        (top_b, top_a)
                    } else {
                        (top_a, top_b)
                    };
                    let (next_a, qa) = a.step(tape, bind, frames_a[t], for_a, &states_a)?;
                    let (next_b, qb) = b.step(tape, bind, frames_b[t], for_b, &states_b)?;
                    states_a = next_a;
                    states_b = next_b;
                    top_a = states_a.last().unwrap().h;
                    top_b = states_b.last().unwrap().h;
                    outputs.push((qa, qb));
                }
                Ok(StepOutputs::Dual(outputs))
            }
            Assembly::Early {
                stem_a,
                stem_b,
                lstm,
                head,
            } => {
                let mut states = lstm.zero_states(tape, n, h, w);
                let mut outputs = Vec::with_capacity(self.spec.steps);
                for t in 0..self.spec.steps {
                    let fa = stem_a.forward(tape, bind, frames_a[t])?;
                    let fb = stem_b.forward(tape, bind, frames_b[t])?;
                    let joined = tape.concat_channels(fa, fb)?;
                    let (next, top) = lstm.step(tape, bind, joined, &states)?;
                    states = next;
                    outputs.push(head.forward(tape, bind, top)?);
                }
                Ok(StepOutputs::Single(outputs))
            }
            Assembly::Late {
                stem_a,
                lstm_a,
                stem_b,
                lstm_b,
                fuse,
                head,
            } => {
                let mut states_a = lstm_a.zero_states(tape, n, h, w);
                let mut states_b = lstm_b.zero_states(tape, n, h, w);
                let mut outputs = Vec::with_capacity(self.spec.steps);
                for t in 0..self.spec.steps {
                    let fa = stem_a.forward(tape, bind, frames_a[t])?;
                    let fb = stem_b.forward(tape, bind, frames_b[t])?;
                    let (next_a, top_a) = lstm_a.step(tape, bind, fa, &states_a)?;
                    let (next_b, top_b) = lstm_b.step(tape, bind, fb, &states_b)?;
                    states_a = next_a;
                    states_b = next_b;
                    let joined = tape.concat_channels(top_a, top_b)?;
                    let merged = fuse.forward(tape, bind, joined, 1)?;
                    outputs.push(head.forward(tape, bind, merged)?);
                }
                Ok(StepOutputs::Single(outputs))
            }
        }
    }
}

/// Softmax of one logit row.
fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Final-step class distributions: the two branch softmaxes averaged
/// elementwise (or the single fused softmax). One distribution per row.
pub fn predict_classification(tape: &Tape, outputs: &StepOutputs) -> Result<Vec<Vec<f64>>> {
    let logit_rows = |tape: &Tape, v: Var| -> Result<Vec<Vec<f64>>> {
        let s = tape.shape(v);
        if s.h != 1 || s.w != 1 {
            return Err(CrnError::ShapeMismatch(format!(
                "classification outputs must be [n, k, 1, 1], got {s}"
            )));
        }
        let data = tape.value(v).data();
        Ok((0..s.n)
            .map(|i| data[i * s.c..(i + 1) * s.c].to_vec())
            .collect())
    };
    match outputs {
        StepOutputs::Dual(steps) => {
            let (qa, qb) = *steps.last().ok_or_else(|| {
                CrnError::InvalidArgument("no step outputs to predict from".into())
            })?;
            let rows_a = logit_rows(tape, qa)?;
            let rows_b = logit_rows(tape, qb)?;
            Ok(rows_a
                .iter()
                .zip(&rows_b)
                .map(|(ra, rb)| {
                    let pa = softmax(ra);
                    let pb = softmax(rb);
                    pa.iter().zip(&pb).map(|(x, y)| 0.5 * (x + y)).collect()
                })
                .collect())
        }
        StepOutputs::Single(steps) => {
            let q = *steps.last().ok_or_else(|| {
                CrnError::InvalidArgument("no step outputs to predict from".into())
            })?;
            Ok(logit_rows(tape, q)?.iter().map(|r| softmax(r)).collect())
        }
    }
}

/// Argmax with ties broken toward the lowest class index.
pub fn argmax_class(dist: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in dist.iter().enumerate().skip(1) {
        if *v > dist[best] {
            best = i;
        }
    }
    best
}
