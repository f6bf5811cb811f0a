//! Cross-branch coupling blocks.
//!
//! The interpretation block (RIB) distills the opposite branch's hidden map
//! into reciprocal features: three parallel 3×3 convolutions with dilations
//! 1, 2, 3 (each followed by tanh) are concatenated and merged by a 1×1
//! convolution. The simplified variant (sRIB) is a single tanh(3×3 conv);
//! the identity variant forwards the hidden map unchanged.
//!
//! The adaptation block (RAB) is one 1×1 convolution that remaps the
//! concatenation of a branch's own features and the interpreted opposite
//! hidden back to the branch's input width, so the LSTM input keeps its
//! shape whether or not coupling is present.

use crate::error::{CrnError, Result};
use crate::params::{init_uniform, ParamBinding, ParamId, ParamSet};
use crate::tensor::{same_padding, Shape, Tape, Tensor, Var};

/// Which interpretation block a branch carries.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RibKind {
    /// Three dilated paths + 1×1 merge.
    Rib,
    /// Single 3×3 convolution.
    Srib,
    /// Pass the hidden map through unchanged.
    Identity,
}

/// Weight + bias pair of one convolution, registered as `{name}.w` /
/// `{name}.b`. Shared by the coupling blocks, the stems, the fusion merge,
/// and the regression heads.
pub(crate) struct ConvParams {
    pub(crate) w: ParamId,
    pub(crate) b: ParamId,
    k: usize,
}

impl ConvParams {
    pub(crate) fn new(
        params: &mut ParamSet,
        name: &str,
        co: usize,
        ci: usize,
        k: usize,
        seed: u64,
    ) -> Result<ConvParams> {
        let w_name = format!("{name}.w");
        let w = params.add(
            w_name.clone(),
            init_uniform(Shape::new(co, ci, k, k), ci * k * k, seed, &w_name),
        )?;
        let b = params.add(format!("{name}.b"), Tensor::zeros(Shape::channel_vec(co)))?;
        Ok(ConvParams { w, b, k })
    }

    /// Apply with "same" padding for the given dilation.
    pub(crate) fn forward(
        &self,
        tape: &mut Tape,
        bind: &ParamBinding,
        x: Var,
        dilation: usize,
    ) -> Result<Var> {
        let pad = same_padding(self.k, dilation);
        tape.conv2d(
            x,
            bind.var(self.w),
            Some(bind.var(self.b)),
            (pad, pad),
            dilation,
        )
    }
}

enum RibParams {
    Full {
        paths: [ConvParams; 3],
        merge: ConvParams,
    },
    Simple(ConvParams),
    Identity,
}

/// Interpretation block of a branch (applied to the *other* branch's top
/// hidden state in the coupled topology).
pub struct Rib {
    pub kind: RibKind,
    pub ch: usize,
    pub c_out: usize,
    inner: RibParams,
}

/// Kernel size and dilations fixed by the block design.
const RIB_KERNEL: usize = 3;
const RIB_DILATIONS: [usize; 3] = [1, 2, 3];

impl Rib {
    /// Register parameters under `{prefix}.path{0,1,2}` / `{prefix}.merge`
    /// (full), `{prefix}.conv` (simple), or nothing (identity, where
    /// `c_out` is forced to `ch`).
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        kind: RibKind,
        ch: usize,
        c_out: usize,
        seed: u64,
    ) -> Result<Self> {
        let inner = match kind {
            RibKind::Rib => {
                let paths = [
                    ConvParams::new(params, &format!("{prefix}.path0"), c_out, ch, RIB_KERNEL, seed)?,
                    ConvParams::new(params, &format!("{prefix}.path1"), c_out, ch, RIB_KERNEL, seed)?,
                    ConvParams::new(params, &format!("{prefix}.path2"), c_out, ch, RIB_KERNEL, seed)?,
                ];
                let merge =
                    ConvParams::new(params, &format!("{prefix}.merge"), c_out, 3 * c_out, 1, seed)?;
                RibParams::Full { paths, merge }
            }
            RibKind::Srib => RibParams::Simple(ConvParams::new(
                params,
                &format!("{prefix}.conv"),
                c_out,
                ch,
                RIB_KERNEL,
                seed,
            )?),
            RibKind::Identity => RibParams::Identity,
        };
        let c_out = match kind {
            RibKind::Identity => ch,
            _ => c_out,
        };
        Ok(Rib {
            kind,
            ch,
            c_out,
            inner,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.c_out
    }

    /// Interpret a hidden map `[n, ch, h, w]` into `[n, c_out, h, w]`.
    pub fn forward(&self, tape: &mut Tape, bind: &ParamBinding, h_other: Var) -> Result<Var> {
        if tape.shape(h_other).c != self.ch {
            return Err(CrnError::ChannelMismatch(format!(
                "RIB expects {} channels, got {}",
                self.ch,
                tape.shape(h_other).c
            )));
        }
        match &self.inner {
            RibParams::Full { paths, merge } => {
                let mut activated = Vec::with_capacity(3);
                for (conv, dilation) in paths.iter().zip(RIB_DILATIONS) {
                    let y = conv.forward(tape, bind, h_other, dilation)?;
                    activated.push(tape.tanh(y)?);
                }
                let ab = tape.concat_channels(activated[0], activated[1])?;
                let abc = tape.concat_channels(ab, activated[2])?;
                merge.forward(tape, bind, abc, 1)
            }
            RibParams::Simple(conv) => {
                let y = conv.forward(tape, bind, h_other, 1)?;
                tape.tanh(y)
            }
            RibParams::Identity => Ok(h_other),
        }
    }
}

/// Adaptation block: 1×1 convolution from `c_x + c_rib` back to `c_x`.
pub struct Rab {
    pub c_x: usize,
    pub c_rib: usize,
    conv: ConvParams,
}

impl Rab {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        c_x: usize,
        c_rib: usize,
        seed: u64,
    ) -> Result<Self> {
        let conv = ConvParams::new(params, prefix, c_x, c_x + c_rib, 1, seed)?;
        Ok(Rab { c_x, c_rib, conv })
    }

    /// Remap `x ⊕ ĥ` to the branch input width `c_x`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bind: &ParamBinding,
        x: Var,
        h_hat_other: Var,
    ) -> Result<Var> {
        if tape.shape(x).c != self.c_x || tape.shape(h_hat_other).c != self.c_rib {
            return Err(CrnError::ChannelMismatch(format!(
                "RAB expects {} + {} channels, got {} + {}",
                self.c_x,
                self.c_rib,
                tape.shape(x).c,
                tape.shape(h_hat_other).c
            )));
        }
        let joined = tape.concat_channels(x, h_hat_other)?;
        self.conv.forward(tape, bind, joined, 1)
    }
}
