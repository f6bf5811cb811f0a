//! Wengert tape: records primitive applications during the forward pass and
//! replays them in reverse to accumulate adjoints.
//!
//! A tape is single-owner and single-threaded. Handles ([`Var`]) index into
//! the tape's node list; every input of a node was produced earlier, so one
//! reverse sweep visits each node exactly once. Gradients accumulate with
//! `+=` and persist until [`Tape::zero_grads`].

use super::kernels::{
    conv2d_backward_bias, conv2d_backward_input, conv2d_backward_kernel, conv2d_forward,
    conv2d_output_extent,
};
use super::{Shape, Tensor};
use crate::error::{CrnError, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(pub(crate) usize);

#[derive(Clone)]
enum OpRecord {
    Leaf,
    Conv2d {
        x: Var,
        k: Var,
        bias: Option<Var>,
        pad: (usize, usize),
        dilation: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Hadamard {
        a: Var,
        b: Var,
    },
    Sigmoid {
        x: Var,
    },
    Tanh {
        x: Var,
    },
    ConcatChannels {
        a: Var,
        b: Var,
    },
    GlobalAvgPool {
        x: Var,
    },
    GlobalMaxPool {
        x: Var,
        /// Flat within-plane index of the winning pixel per (n, c), saved
        /// for the adjoint. Ties resolve to the first occurrence.
        argmax: Vec<usize>,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        /// Stabilized softmax probabilities saved for the adjoint.
        probs: Vec<f64>,
    },
    MseLoss {
        pred: Var,
        target: Var,
    },
    Sum {
        x: Var,
    },
    SumScalars {
        terms: Vec<Var>,
    },
}

struct Node {
    value: Tensor,
    op: OpRecord,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Recording tape for reverse-mode differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Register an input value. Only leaves with `requires_grad` receive
    /// gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, OpRecord::Leaf, requires_grad)
            .expect("leaf construction cannot fail")
    }

    /// Convenience: register a constant (no gradient).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of `v`, if it participates in differentiation.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            if let Some(g) = node.grad.as_mut() {
                g.fill(0.0);
            }
        }
    }

    fn push(&mut self, value: Tensor, op: OpRecord, requires_grad: bool) -> Result<Var> {
        #[cfg(debug_assertions)]
        value.check_finite(op_name(&op))?;
        let grad = requires_grad.then(|| vec![0.0; value.shape().len()]);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ── primitives ──────────────────────────────────────────────────────

    /// 2-D cross-correlation with zero padding and optional per-channel bias.
    /// `x` is `[n, ci, h, w]`, `k` is `[co, ci, kh, kw]`, bias has `co`
    /// elements; stride is 1.
    pub fn conv2d(
        &mut self,
        x: Var,
        k: Var,
        bias: Option<Var>,
        pad: (usize, usize),
        dilation: usize,
    ) -> Result<Var> {
        let xs = self.shape(x);
        let ks = self.shape(k);
        if dilation < 1 {
            return Err(CrnError::InvalidArgument(format!(
                "conv2d dilation must be >= 1, got {dilation}"
            )));
        }
        if xs.n < 1 || xs.c < 1 || xs.h < 1 || xs.w < 1 || ks.n < 1 || ks.h < 1 || ks.w < 1 {
            return Err(CrnError::InvalidArgument(format!(
                "conv2d requires positive extents, got input {xs} kernel {ks}"
            )));
        }
        if xs.c != ks.c {
            return Err(CrnError::ChannelMismatch(format!(
                "conv2d input has {} channels but kernel expects {}",
                xs.c, ks.c
            )));
        }
        let oh = conv2d_output_extent(xs.h, ks.h, pad.0, dilation).ok_or_else(|| {
            CrnError::InvalidArgument(format!(
                "conv2d kernel {ks} with dilation {dilation} does not fit input {xs}"
            ))
        })?;
        let ow = conv2d_output_extent(xs.w, ks.w, pad.1, dilation).ok_or_else(|| {
            CrnError::InvalidArgument(format!(
                "conv2d kernel {ks} with dilation {dilation} does not fit input {xs}"
            ))
        })?;
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs.len() != ks.n {
                return Err(CrnError::ShapeMismatch(format!(
                    "conv2d bias has {} elements, expected {}",
                    bs.len(),
                    ks.n
                )));
            }
        }
        let os = Shape::new(xs.n, ks.n, oh, ow);
        let mut out = vec![0.0; os.len()];
        {
            let xv = self.value(x).clone();
            let kv = self.value(k).clone();
            let bv = bias.map(|b| self.value(b).clone());
            conv2d_forward(
                xv.data(),
                xs,
                kv.data(),
                ks,
                bv.as_ref().map(|t| t.data()),
                pad,
                dilation,
                &mut out,
                os,
            );
        }
        let mut inputs = vec![x, k];
        if let Some(b) = bias {
            inputs.push(b);
        }
        let rg = self.any_grad(&inputs);
        self.push(
            Tensor::from_vec(os, out)?,
            OpRecord::Conv2d {
                x,
                k,
                bias,
                pad,
                dilation,
            },
            rg,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(CrnError::ShapeMismatch(format!("add: {sa} vs {sb}")));
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.any_grad(&[a, b]);
        self.push(Tensor::from_vec(sa, out)?, OpRecord::Add { a, b }, rg)
    }

    /// Pixel-wise (Hadamard) product.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(CrnError::ShapeMismatch(format!("hadamard: {sa} vs {sb}")));
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.any_grad(&[a, b]);
        self.push(Tensor::from_vec(sa, out)?, OpRecord::Hadamard { a, b }, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let out: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::from_vec(s, out)?, OpRecord::Sigmoid { x }, rg)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let out: Vec<f64> = self.value(x).data().iter().map(|v| v.tanh()).collect();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::from_vec(s, out)?, OpRecord::Tanh { x }, rg)
    }

    /// Concatenate along the channel axis: `a` occupies channels `[0, ca)`,
    /// `b` occupies `[ca, ca+cb)`.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
            return Err(CrnError::ShapeMismatch(format!(
                "concat_channels: {sa} vs {sb}"
            )));
        }
        let os = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
        let plane = sa.h * sa.w;
        let mut out = Vec::with_capacity(os.len());
        {
            let av = self.value(a).data();
            let bv = self.value(b).data();
            for n in 0..sa.n {
                out.extend_from_slice(&av[n * sa.c * plane..(n + 1) * sa.c * plane]);
                out.extend_from_slice(&bv[n * sb.c * plane..(n + 1) * sb.c * plane]);
            }
        }
        let rg = self.any_grad(&[a, b]);
        self.push(
            Tensor::from_vec(os, out)?,
            OpRecord::ConcatChannels { a, b },
            rg,
        )
    }

    /// Per-channel spatial mean: `[n, c, h, w]` -> `[n, c, 1, 1]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.h < 1 || s.w < 1 {
            return Err(CrnError::InvalidArgument(format!(
                "global_avg_pool requires h, w >= 1, got {s}"
            )));
        }
        let os = Shape::new(s.n, s.c, 1, 1);
        let plane = s.h * s.w;
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(os.len());
        for nc in 0..s.n * s.c {
            let mut acc = 0.0;
            for v in &xv[nc * plane..(nc + 1) * plane] {
                acc += v;
            }
            out.push(acc / plane as f64);
        }
        let rg = self.any_grad(&[x]);
        self.push(Tensor::from_vec(os, out)?, OpRecord::GlobalAvgPool { x }, rg)
    }

    /// Per-channel spatial maximum: `[n, c, h, w]` -> `[n, c, 1, 1]`.
    /// Gradients flow to the winning pixel only (first one on ties).
    pub fn global_max_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.h < 1 || s.w < 1 {
            return Err(CrnError::InvalidArgument(format!(
                "global_max_pool requires h, w >= 1, got {s}"
            )));
        }
        let os = Shape::new(s.n, s.c, 1, 1);
        let plane = s.h * s.w;
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(os.len());
        let mut argmax = Vec::with_capacity(os.len());
        for nc in 0..s.n * s.c {
            let cells = &xv[nc * plane..(nc + 1) * plane];
            let mut best = (0usize, cells[0]);
            for (i, v) in cells.iter().enumerate().skip(1) {
                if *v > best.1 {
                    best = (i, *v);
                }
            }
            argmax.push(best.0);
            out.push(best.1);
        }
        let rg = self.any_grad(&[x]);
        self.push(
            Tensor::from_vec(os, out)?,
            OpRecord::GlobalMaxPool { x, argmax },
            rg,
        )
    }

    /// Affine map per batch row: `x` is `[n, c, 1, 1]`, `w` is `[k, c]`
    /// (stored `[k, c, 1, 1]`), `b` has `k` elements; output `[n, k, 1, 1]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        let bs = self.shape(b);
        if xs.h != 1 || xs.w != 1 {
            return Err(CrnError::ShapeMismatch(format!(
                "linear input must be [n, c, 1, 1], got {xs}"
            )));
        }
        if ws.h != 1 || ws.w != 1 || ws.c != xs.c {
            return Err(CrnError::ShapeMismatch(format!(
                "linear weight {ws} incompatible with input {xs}"
            )));
        }
        if bs.len() != ws.n {
            return Err(CrnError::ShapeMismatch(format!(
                "linear bias has {} elements, expected {}",
                bs.len(),
                ws.n
            )));
        }
        let (n, c, k) = (xs.n, xs.c, ws.n);
        let os = Shape::new(n, k, 1, 1);
        let mut out = vec![0.0; os.len()];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            let bv = self.value(b).data();
            for i in 0..n {
                for j in 0..k {
                    let mut acc = bv[j];
                    for cc in 0..c {
                        acc += xv[i * c + cc] * wv[j * c + cc];
                    }
                    out[i * k + j] = acc;
                }
            }
        }
        let rg = self.any_grad(&[x, w, b]);
        self.push(Tensor::from_vec(os, out)?, OpRecord::Linear { x, w, b }, rg)
    }

    /// Mean over the batch of `-log softmax(logits)[label]`, stabilized by
    /// max-subtraction. Logits are `[n, k, 1, 1]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        if s.h != 1 || s.w != 1 {
            return Err(CrnError::ShapeMismatch(format!(
                "softmax_cross_entropy logits must be [n, k, 1, 1], got {s}"
            )));
        }
        if labels.len() != s.n {
            return Err(CrnError::ShapeMismatch(format!(
                "softmax_cross_entropy got {} labels for batch of {}",
                labels.len(),
                s.n
            )));
        }
        let (n, k) = (s.n, s.c);
        for &label in labels {
            if label >= k {
                return Err(CrnError::LabelOutOfRange { label, classes: k });
            }
        }
        let lv = self.value(logits).data();
        let mut probs = vec![0.0; n * k];
        let mut loss = 0.0;
        for i in 0..n {
            let row = &lv[i * k..(i + 1) * k];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (j, &l) in row.iter().enumerate() {
                let e = (l - m).exp();
                probs[i * k + j] = e;
                z += e;
            }
            for p in &mut probs[i * k..(i + 1) * k] {
                *p /= z;
            }
            loss += -((row[labels[i]] - m) - z.ln());
        }
        loss /= n as f64;
        let rg = self.any_grad(&[logits]);
        self.push(
            Tensor::scalar(loss),
            OpRecord::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        )
    }

    /// Mean squared error over all elements.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (sp, st) = (self.shape(pred), self.shape(target));
        if sp != st {
            return Err(CrnError::ShapeMismatch(format!("mse_loss: {sp} vs {st}")));
        }
        let len = sp.len().max(1) as f64;
        let loss = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / len;
        let rg = self.any_grad(&[pred, target]);
        self.push(
            Tensor::scalar(loss),
            OpRecord::MseLoss { pred, target },
            rg,
        )
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total: f64 = self.value(x).data().iter().sum();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(total), OpRecord::Sum { x }, rg)
    }

    /// Sum of scalar terms; the selected-step loss aggregator.
    pub fn sum_scalars(&mut self, terms: &[Var]) -> Result<Var> {
        if terms.is_empty() {
            return Err(CrnError::InvalidArgument(
                "sum_scalars requires at least one term".into(),
            ));
        }
        let mut total = 0.0;
        for &t in terms {
            let s = self.shape(t);
            if s.len() != 1 {
                return Err(CrnError::ShapeMismatch(format!(
                    "sum_scalars term has shape {s}, expected scalar"
                )));
            }
            total += self.value(t).scalar_value();
        }
        let rg = self.any_grad(terms);
        self.push(
            Tensor::scalar(total),
            OpRecord::SumScalars {
                terms: terms.to_vec(),
            },
            rg,
        )
    }

    // ── reverse sweep ───────────────────────────────────────────────────

    /// Accumulate `d loss / d leaf` into every grad-requiring node reachable
    /// from `loss`. The loss must be a scalar.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss).len() != 1 {
            return Err(CrnError::InvalidArgument(format!(
                "backward requires a scalar loss, got {}",
                self.shape(loss)
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        // Intermediate adjoints are per-call scratch; only leaf gradients
        // accumulate across repeated backward calls.
        for node in &mut self.nodes[..=loss.0] {
            if !matches!(node.op, OpRecord::Leaf) {
                if let Some(g) = node.grad.as_mut() {
                    g.fill(0.0);
                }
            }
        }
        let mut live = vec![false; loss.0 + 1];
        live[loss.0] = true;
        if let Some(g) = self.nodes[loss.0].grad.as_mut() {
            g[0] += 1.0;
        }
        for k in (0..=loss.0).rev() {
            if !live[k] {
                continue;
            }
            let op = self.nodes[k].op.clone();
            let gout = match self.nodes[k].grad.take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(k, &op, &gout, &mut live);
            self.nodes[k].grad = Some(gout);
        }
        Ok(())
    }

    fn add_grad(&mut self, v: Var, live: &mut [bool], f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let g = self
            .nodes[v.0]
            .grad
            .as_mut()
            .expect("requires_grad node has a grad buffer");
        f(g);
        live[v.0] = true;
    }

    fn propagate(&mut self, k: usize, op: &OpRecord, gout: &[f64], live: &mut [bool]) {
        let os = self.nodes[k].value.shape();
        match op {
            OpRecord::Leaf => {}
            OpRecord::Conv2d {
                x,
                k: ker,
                bias,
                pad,
                dilation,
            } => {
                let xs = self.shape(*x);
                let ks = self.shape(*ker);
                let xv = self.value(*x).clone();
                let kv = self.value(*ker).clone();
                let (pad, dilation) = (*pad, *dilation);
                self.add_grad(*x, live, |dx| {
                    conv2d_backward_input(gout, os, kv.data(), ks, pad, dilation, dx, xs);
                });
                self.add_grad(*ker, live, |dk| {
                    conv2d_backward_kernel(gout, os, xv.data(), xs, pad, dilation, dk, ks);
                });
                if let Some(b) = bias {
                    self.add_grad(*b, live, |db| {
                        conv2d_backward_bias(gout, os, db);
                    });
                }
            }
            OpRecord::Add { a, b } => {
                self.add_grad(*a, live, |da| {
                    for (d, g) in da.iter_mut().zip(gout) {
                        *d += g;
                    }
                });
                self.add_grad(*b, live, |db| {
                    for (d, g) in db.iter_mut().zip(gout) {
                        *d += g;
                    }
                });
            }
            OpRecord::Hadamard { a, b } => {
                let av = self.value(*a).clone();
                let bv = self.value(*b).clone();
                self.add_grad(*a, live, |da| {
                    for ((d, g), y) in da.iter_mut().zip(gout).zip(bv.data()) {
                        *d += g * y;
                    }
                });
                self.add_grad(*b, live, |db| {
                    for ((d, g), y) in db.iter_mut().zip(gout).zip(av.data()) {
                        *d += g * y;
                    }
                });
            }
            OpRecord::Sigmoid { x } => {
                let yv = self.nodes[k].value.clone();
                self.add_grad(*x, live, |dx| {
                    for ((d, g), y) in dx.iter_mut().zip(gout).zip(yv.data()) {
                        *d += g * y * (1.0 - y);
                    }
                });
            }
            OpRecord::Tanh { x } => {
                let yv = self.nodes[k].value.clone();
                self.add_grad(*x, live, |dx| {
                    for ((d, g), y) in dx.iter_mut().zip(gout).zip(yv.data()) {
                        *d += g * (1.0 - y * y);
                    }
                });
            }
            OpRecord::ConcatChannels { a, b } => {
                let sa = self.shape(*a);
                let sb = self.shape(*b);
                let plane = sa.h * sa.w;
                self.add_grad(*a, live, |da| {
                    for n in 0..sa.n {
                        let src = n * (sa.c + sb.c) * plane;
                        let dst = n * sa.c * plane;
                        for i in 0..sa.c * plane {
                            da[dst + i] += gout[src + i];
                        }
                    }
                });
                self.add_grad(*b, live, |db| {
                    for n in 0..sb.n {
                        let src = n * (sa.c + sb.c) * plane + sa.c * plane;
                        let dst = n * sb.c * plane;
                        for i in 0..sb.c * plane {
                            db[dst + i] += gout[src + i];
                        }
                    }
                });
            }
            OpRecord::GlobalAvgPool { x } => {
                let xs = self.shape(*x);
                let plane = xs.h * xs.w;
                let inv = 1.0 / plane as f64;
                self.add_grad(*x, live, |dx| {
                    for nc in 0..xs.n * xs.c {
                        let g = gout[nc] * inv;
                        for d in &mut dx[nc * plane..(nc + 1) * plane] {
                            *d += g;
                        }
                    }
                });
            }
            OpRecord::GlobalMaxPool { x, argmax } => {
                let xs = self.shape(*x);
                let plane = xs.h * xs.w;
                self.add_grad(*x, live, |dx| {
                    for (nc, &win) in argmax.iter().enumerate() {
                        dx[nc * plane + win] += gout[nc];
                    }
                });
            }
            OpRecord::Linear { x, w, b } => {
                let xs = self.shape(*x);
                let ws = self.shape(*w);
                let (n, c, kk) = (xs.n, xs.c, ws.n);
                let xv = self.value(*x).clone();
                let wv = self.value(*w).clone();
                self.add_grad(*x, live, |dx| {
                    for i in 0..n {
                        for j in 0..kk {
                            let g = gout[i * kk + j];
                            for cc in 0..c {
                                dx[i * c + cc] += g * wv.data()[j * c + cc];
                            }
                        }
                    }
                });
                self.add_grad(*w, live, |dw| {
                    for i in 0..n {
                        for j in 0..kk {
                            let g = gout[i * kk + j];
                            for cc in 0..c {
                                dw[j * c + cc] += g * xv.data()[i * c + cc];
                            }
                        }
                    }
                });
                self.add_grad(*b, live, |db| {
                    for i in 0..n {
                        for j in 0..kk {
                            db[j] += gout[i * kk + j];
                        }
                    }
                });
            }
            OpRecord::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let s = self.shape(*logits);
                let (n, kk) = (s.n, s.c);
                let g = gout[0] / n as f64;
                self.add_grad(*logits, live, |dl| {
                    for i in 0..n {
                        for j in 0..kk {
                            let onehot = if labels[i] == j { 1.0 } else { 0.0 };
                            dl[i * kk + j] += g * (probs[i * kk + j] - onehot);
                        }
                    }
                });
            }
            OpRecord::MseLoss { pred, target } => {
                let len = self.shape(*pred).len().max(1) as f64;
                let pv = self.value(*pred).clone();
                let tv = self.value(*target).clone();
                let g = gout[0] * 2.0 / len;
                self.add_grad(*pred, live, |dp| {
                    for ((d, p), t) in dp.iter_mut().zip(pv.data()).zip(tv.data()) {
                        *d += g * (p - t);
                    }
                });
                self.add_grad(*target, live, |dt| {
                    for ((d, p), t) in dt.iter_mut().zip(pv.data()).zip(tv.data()) {
                        *d -= g * (p - t);
                    }
                });
            }
            OpRecord::Sum { x } => {
                let g = gout[0];
                self.add_grad(*x, live, |dx| {
                    for d in dx.iter_mut() {
                        *d += g;
                    }
                });
            }
            OpRecord::SumScalars { terms } => {
                let g = gout[0];
                for &t in terms {
                    self.add_grad(t, live, |dt| {
                        dt[0] += g;
                    });
                }
            }
        }
    }
}

#[cfg(debug_assertions)]
fn op_name(op: &OpRecord) -> &'static str {
    match op {
        OpRecord::Leaf => "leaf",
        OpRecord::Conv2d { .. } => "conv2d",
        OpRecord::Add { .. } => "add",
        OpRecord::Hadamard { .. } => "hadamard",
        OpRecord::Sigmoid { .. } => "sigmoid",
        OpRecord::Tanh { .. } => "tanh",
        OpRecord::ConcatChannels { .. } => "concat_channels",
        OpRecord::GlobalAvgPool { .. } => "global_avg_pool",
        OpRecord::GlobalMaxPool { .. } => "global_max_pool",
        OpRecord::Linear { .. } => "linear",
        OpRecord::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        OpRecord::MseLoss { .. } => "mse_loss",
        OpRecord::Sum { .. } => "sum",
        OpRecord::SumScalars { .. } => "sum_scalars",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Shape, data: &[f64]) -> Tensor {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn sigmoid_and_tanh_at_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(Shape::new(1, 1, 1, 2)), false);
        let s = tape.sigmoid(x).unwrap();
        let h = tape.tanh(x).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5, 0.5]);
        assert_eq!(tape.value(h).data(), &[0.0, 0.0]);
    }

    #[test]
    fn hadamard_with_ones_is_identity() {
        let mut tape = Tape::new();
        let shape = Shape::new(1, 2, 2, 2);
        let x = tape.leaf(t(shape, &[1.0, -2.0, 3.0, 0.5, -0.25, 4.0, 7.0, -8.0]), false);
        let ones = tape.leaf(Tensor::filled(shape, 1.0), false);
        let y = tape.hadamard(x, ones).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn conv_identity_kernel() {
        let mut tape = Tape::new();
        let x = tape.leaf(
            t(Shape::new(1, 1, 2, 3), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
            false,
        );
        let k = tape.leaf(t(Shape::new(1, 1, 1, 1), &[1.0]), false);
        let y = tape.conv2d(x, k, None, (0, 0), 1).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn conv_zero_kernel_gives_zero() {
        let mut tape = Tape::new();
        let mut rng = rand::thread_rng();
        let x = tape.leaf(
            Tensor::uniform(Shape::new(2, 3, 5, 5), -1.0, 1.0, &mut rng),
            false,
        );
        let k = tape.leaf(Tensor::zeros(Shape::new(4, 3, 3, 3)), false);
        let y = tape.conv2d(x, k, None, (1, 1), 1).unwrap();
        assert!(tape.value(y).data().iter().all(|v| *v == 0.0));
        assert_eq!(tape.shape(y), Shape::new(2, 4, 5, 5));
    }

    #[test]
    fn conv_channel_mismatch_is_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(Shape::new(1, 3, 4, 4)), false);
        let k = tape.leaf(Tensor::zeros(Shape::new(2, 4, 3, 3)), false);
        assert!(matches!(
            tape.conv2d(x, k, None, (1, 1), 1),
            Err(CrnError::ChannelMismatch(_))
        ));
    }

    #[test]
    fn concat_shapes_and_empty_identity() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::filled(Shape::new(1, 2, 4, 4), 1.0), false);
        let b = tape.leaf(Tensor::filled(Shape::new(1, 3, 4, 4), 2.0), false);
        let y = tape.concat_channels(a, b).unwrap();
        assert_eq!(tape.shape(y), Shape::new(1, 5, 4, 4));

        let empty = tape.leaf(Tensor::zeros(Shape::new(1, 0, 4, 4)), false);
        let same = tape.concat_channels(a, empty).unwrap();
        assert_eq!(tape.value(same).data(), tape.value(a).data());
    }

    #[test]
    fn global_avg_pool_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::filled(Shape::new(2, 3, 4, 4), 3.0), false);
        let y = tape.global_avg_pool(x).unwrap();
        assert!(tape.value(y).data().iter().all(|v| *v == 3.0));

        let x2 = tape.leaf(t(Shape::new(1, 1, 2, 2), &[1.0, 2.0, 3.0, 4.0]), false);
        let y2 = tape.global_avg_pool(x2).unwrap();
        assert_eq!(tape.value(y2).scalar_value(), 2.5);
    }

    #[test]
    fn global_max_pool_values_and_grad_routing() {
        let mut tape = Tape::new();
        let x = tape.leaf(
            t(
                Shape::new(1, 2, 2, 2),
                &[1.0, 4.0, 3.0, 2.0, -9.0, -7.0, -8.0, -7.5],
            ),
            true,
        );
        let y = tape.global_max_pool(x).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0, -7.0]);

        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        // Only the winning pixel of each plane receives gradient.
        assert_eq!(
            tape.grad(x).unwrap(),
            &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]
        );
    }

    #[test]
    fn global_max_pool_ties_pick_the_first_pixel() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(Shape::new(1, 1, 2, 2), &[5.0, 5.0, 2.0, 5.0]), true);
        let y = tape.global_max_pool(x).unwrap();
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.value(y).scalar_value(), 5.0);
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn linear_identity_and_hand_case() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(Shape::new(1, 2, 1, 1), &[1.0, 2.0]), false);
        let eye = tape.leaf(t(Shape::new(2, 2, 1, 1), &[1.0, 0.0, 0.0, 1.0]), false);
        let zero_b = tape.leaf(Tensor::zeros(Shape::channel_vec(2)), false);
        let y = tape.linear(x, eye, zero_b).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0]);

        let w = tape.leaf(t(Shape::new(2, 2, 1, 1), &[1.0, 1.0, 0.0, 1.0]), false);
        let y2 = tape.linear(x, w, zero_b).unwrap();
        assert_eq!(tape.value(y2).data(), &[3.0, 2.0]);
    }

    #[test]
    fn cross_entropy_uniform_and_confident() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::zeros(Shape::new(1, 4, 1, 1)), false);
        let loss = tape.softmax_cross_entropy(logits, &[2]).unwrap();
        assert!((tape.value(loss).scalar_value() - 4.0_f64.ln()).abs() < 1e-12);

        let confident = tape.leaf(
            t(Shape::new(1, 4, 1, 1), &[0.0, 20.0, 0.0, 0.0]),
            false,
        );
        let loss2 = tape.softmax_cross_entropy(confident, &[1]).unwrap();
        assert!(tape.value(loss2).scalar_value() < 1e-8);

        assert!(matches!(
            tape.softmax_cross_entropy(logits, &[4]),
            Err(CrnError::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn mse_trivial_values() {
        let mut tape = Tape::new();
        let shape = Shape::new(1, 2, 3, 3);
        let p = tape.leaf(Tensor::filled(shape, 1.5), false);
        let zero = tape.mse_loss(p, p).unwrap();
        assert_eq!(tape.value(zero).scalar_value(), 0.0);

        let q = tape.leaf(Tensor::filled(shape, 3.5), false);
        let four = tape.mse_loss(p, q).unwrap();
        assert_eq!(tape.value(four).scalar_value(), 4.0);
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::filled(Shape::new(2, 3, 2, 2), 0.7), true);
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert!(tape.grad(x).unwrap().iter().all(|g| *g == 1.0));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(Shape::new(1, 2, 1, 1)), true);
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::filled(Shape::scalar(), 2.0), true);
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0]);
        tape.zero_grads();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0]);
    }
}
