//! Shared helpers for the integration suites: independent transcriptions
//! of the network equations, written directly over raw buffers so they
//! share no code with the library's kernels or tape.

#![allow(dead_code)] // each test binary uses its own subset

use crn_core::params::ParamSet;
use crn_core::tensor::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape(), "comparing tensors of unequal shape");
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Fetch a parameter's current value by name.
pub fn param(params: &ParamSet, name: &str) -> Tensor {
    let id = params
        .lookup(name)
        .unwrap_or_else(|| panic!("parameter {name} not found"));
    params.value(id).clone()
}

/// Plain six-loop cross-correlation, stride 1, zero padding, optional
/// dilation and bias.
pub fn conv2d_oracle(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    pad: usize,
    dilation: usize,
) -> Tensor {
    let xs = x.shape();
    let ws = w.shape();
    assert_eq!(ws.c, xs.c, "kernel input channels");
    let span_h = dilation * (ws.h - 1) + 1;
    let span_w = dilation * (ws.w - 1) + 1;
    let oh = xs.h + 2 * pad + 1 - span_h;
    let ow = xs.w + 2 * pad + 1 - span_w;
    let os = Shape::new(xs.n, ws.n, oh, ow);
    let mut out = vec![0.0; os.len()];
    for n in 0..xs.n {
        for co in 0..ws.n {
            let bias = b.map_or(0.0, |t| t.data()[co]);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias;
                    for ci in 0..xs.c {
                        for ky in 0..ws.h {
                            for kx in 0..ws.w {
                                let iy = oy as isize + (ky * dilation) as isize - pad as isize;
                                let ix = ox as isize + (kx * dilation) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= xs.h as isize || ix >= xs.w as isize
                                {
                                    continue;
                                }
                                let xi = ((n * xs.c + ci) * xs.h + iy as usize) * xs.w
                                    + ix as usize;
                                let wi = ((co * ws.c + ci) * ws.h + ky) * ws.w + kx;
                                acc += x.data()[xi] * w.data()[wi];
                            }
                        }
                    }
                    out[((n * ws.n + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::from_vec(os, out).unwrap()
}

pub fn map_oracle(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_vec(t.shape(), t.data().iter().map(|v| f(*v)).collect()).unwrap()
}

pub fn zip_oracle(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    assert_eq!(a.shape(), b.shape());
    Tensor::from_vec(
        a.shape(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| f(*x, *y))
            .collect(),
    )
    .unwrap()
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn concat_channels_oracle(a: &Tensor, b: &Tensor) -> Tensor {
    let (sa, sb) = (a.shape(), b.shape());
    assert_eq!((sa.n, sa.h, sa.w), (sb.n, sb.h, sb.w));
    let os = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
    let mut out = Vec::with_capacity(os.len());
    let (pa, pb) = (sa.c * sa.h * sa.w, sb.c * sb.h * sb.w);
    for n in 0..sa.n {
        out.extend_from_slice(&a.data()[n * pa..(n + 1) * pa]);
        out.extend_from_slice(&b.data()[n * pb..(n + 1) * pb]);
    }
    Tensor::from_vec(os, out).unwrap()
}

/// Parameters of one convolutional LSTM layer, fetched by name.
pub struct LstmLayerParams {
    pub wxc: Tensor,
    pub whc: Tensor,
    pub bc: Option<Tensor>,
    pub wxi: Tensor,
    pub whi: Tensor,
    pub bi: Option<Tensor>,
    pub wxf: Tensor,
    pub whf: Tensor,
    pub bf: Option<Tensor>,
    pub wxo: Tensor,
    pub who: Tensor,
    pub bo: Option<Tensor>,
}

impl LstmLayerParams {
    pub fn fetch(params: &ParamSet, prefix: &str, bias: bool) -> Self {
        let get = |suffix: &str| param(params, &format!("{prefix}.{suffix}"));
        let opt = |suffix: &str| bias.then(|| get(suffix));
        LstmLayerParams {
            wxc: get("Wxc"),
            whc: get("Whc"),
            bc: opt("bc"),
            wxi: get("Wxi"),
            whi: get("Whi"),
            bi: opt("bi"),
            wxf: get("Wxf"),
            whf: get("Whf"),
            bf: opt("bf"),
            wxo: get("Wxo"),
            who: get("Who"),
            bo: opt("bo"),
        }
    }
}

/// Literal transcription of the cell equations:
/// C̃ = tanh(Wxc∗x̂ + Whc∗H + bc),   i/f/o = σ(Wx·∗x̂ + Wh·∗H + b·),
/// C' = f ∘ C + i ∘ C̃,              H' = o ∘ tanh(C').
pub fn lstm_step_oracle(
    x: &Tensor,
    h: &Tensor,
    c: &Tensor,
    p: &LstmLayerParams,
) -> (Tensor, Tensor) {
    let pad = (p.wxc.shape().h - 1) / 2;
    let pre = |wx: &Tensor, wh: &Tensor, b: &Option<Tensor>| {
        let from_x = conv2d_oracle(x, wx, b.as_ref(), pad, 1);
        let from_h = conv2d_oracle(h, wh, None, pad, 1);
        zip_oracle(&from_x, &from_h, |a, b| a + b)
    };
    let c_tilde = map_oracle(&pre(&p.wxc, &p.whc, &p.bc), f64::tanh);
    let gate_i = map_oracle(&pre(&p.wxi, &p.whi, &p.bi), sigmoid);
    let gate_f = map_oracle(&pre(&p.wxf, &p.whf, &p.bf), sigmoid);
    let gate_o = map_oracle(&pre(&p.wxo, &p.who, &p.bo), sigmoid);
    let c_new = zip_oracle(
        &zip_oracle(&gate_f, c, |f, cv| f * cv),
        &zip_oracle(&gate_i, &c_tilde, |i, ct| i * ct),
        |a, b| a + b,
    );
    let h_new = zip_oracle(&gate_o, &map_oracle(&c_new, f64::tanh), |o, t| o * t);
    (h_new, c_new)
}

/// Interpretation block: three dilated 3×3 paths with tanh, concatenated,
/// merged by a 1×1 conv (no nonlinearity after the merge).
pub fn rib_oracle(params: &ParamSet, prefix: &str, h_other: &Tensor) -> Tensor {
    let mut parts: Option<Tensor> = None;
    for (i, dilation) in [1usize, 2, 3].iter().enumerate() {
        let w = param(params, &format!("{prefix}.path{i}.w"));
        let b = param(params, &format!("{prefix}.path{i}.b"));
        let y = map_oracle(
            &conv2d_oracle(h_other, &w, Some(&b), *dilation, *dilation),
            f64::tanh,
        );
        parts = Some(match parts {
            None => y,
            Some(acc) => concat_channels_oracle(&acc, &y),
        });
    }
    let merged = parts.unwrap();
    let w = param(params, &format!("{prefix}.merge.w"));
    let b = param(params, &format!("{prefix}.merge.b"));
    conv2d_oracle(&merged, &w, Some(&b), 0, 1)
}

/// Simplified interpretation block: tanh of one 3×3 conv.
pub fn srib_oracle(params: &ParamSet, prefix: &str, h_other: &Tensor) -> Tensor {
    let w = param(params, &format!("{prefix}.conv.w"));
    let b = param(params, &format!("{prefix}.conv.b"));
    map_oracle(&conv2d_oracle(h_other, &w, Some(&b), 1, 1), f64::tanh)
}

/// Adaptation block: 1×1 conv over `x ⊕ ĥ` back to x's width.
pub fn rab_oracle(params: &ParamSet, prefix: &str, x: &Tensor, h_hat: &Tensor) -> Tensor {
    let w = param(params, &format!("{prefix}.w"));
    let b = param(params, &format!("{prefix}.b"));
    conv2d_oracle(&concat_channels_oracle(x, h_hat), &w, Some(&b), 0, 1)
}

/// Stem: two 3×3 same-padding convs, tanh after each.
pub fn stem_oracle(params: &ParamSet, prefix: &str, x: &Tensor) -> Tensor {
    let mut cur = x.clone();
    for conv in ["conv0", "conv1"] {
        let w = param(params, &format!("{prefix}.{conv}.w"));
        let b = param(params, &format!("{prefix}.{conv}.b"));
        cur = map_oracle(&conv2d_oracle(&cur, &w, Some(&b), 1, 1), f64::tanh);
    }
    cur
}

/// Classification head: global max pool then a dense layer.
pub fn classification_head_oracle(params: &ParamSet, prefix: &str, hidden: &Tensor) -> Tensor {
    let s = hidden.shape();
    let mut pooled = vec![0.0; s.n * s.c];
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * s.h * s.w;
            pooled[n * s.c + c] = hidden.data()[base..base + s.h * s.w]
                .iter()
                .fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        }
    }
    let w = param(params, &format!("{prefix}.w"));
    let b = param(params, &format!("{prefix}.b"));
    let k = w.shape().n;
    let mut out = vec![0.0; s.n * k];
    for n in 0..s.n {
        for j in 0..k {
            let mut acc = b.data()[j];
            for c in 0..s.c {
                acc += w.data()[j * s.c + c] * pooled[n * s.c + c];
            }
            out[n * k + j] = acc;
        }
    }
    Tensor::from_vec(Shape::new(s.n, k, 1, 1), out).unwrap()
}

/// Regression head: one 1×1 conv.
pub fn regression_head_oracle(params: &ParamSet, prefix: &str, hidden: &Tensor) -> Tensor {
    let w = param(params, &format!("{prefix}.w"));
    let b = param(params, &format!("{prefix}.b"));
    conv2d_oracle(hidden, &w, Some(&b), 0, 1)
}

pub fn head_oracle(
    params: &ParamSet,
    prefix: &str,
    head: crn_core::crn::HeadSpec,
    hidden: &Tensor,
) -> Tensor {
    match head {
        crn_core::crn::HeadSpec::Classification { .. } => {
            classification_head_oracle(params, prefix, hidden)
        }
        crn_core::crn::HeadSpec::Regression { .. } => {
            regression_head_oracle(params, prefix, hidden)
        }
    }
}

/// Full forward pass of the two-branch assemblies (coupled or non-coupled),
/// transcribed step by step: stems, interpretation of the opposite (or own)
/// previous top hidden state, adaptation, stacked cell updates, heads.
pub fn crn_unroll_oracle(
    params: &ParamSet,
    spec: &crn_core::crn::CrnSpec,
    frames_a: &[Tensor],
    frames_b: &[Tensor],
) -> Vec<(Tensor, Tensor)> {
    use crn_core::coupling::RibKind;
    use crn_core::crn::{HeadLayout, Topology};

    let exchange = match spec.topology {
        Topology::Coupled => true,
        Topology::NonCoupled => false,
        _ => panic!("unroll oracle covers the two-branch topologies only"),
    };
    let (head_a, head_b) = match spec.heads {
        HeadLayout::PerBranch(a, b) => (a, b),
        HeadLayout::Single(_) => panic!("two-branch assembly has per-branch heads"),
    };
    let fa0 = frames_a[0].shape();
    let (n, h, w) = (fa0.n, fa0.h, fa0.w);
    let zeros =
        |c: usize| Tensor::from_vec(Shape::new(n, c, h, w), vec![0.0; n * c * h * w]).unwrap();

    let layers = spec.lstm_layers;
    let mut hs_a: Vec<Tensor> = (0..layers).map(|_| zeros(spec.lstm_hidden)).collect();
    let mut cs_a = hs_a.clone();
    let mut hs_b = hs_a.clone();
    let mut cs_b = hs_a.clone();

    let lstm_params = |prefix: &str| -> Vec<LstmLayerParams> {
        (0..layers)
            .map(|i| {
                LstmLayerParams::fetch(params, &format!("{prefix}.layer{i}"), spec.lstm_bias)
            })
            .collect()
    };
    let lp_a = lstm_params("brancha");
    let lp_b = lstm_params("branchb");

    let branch_step = |prefix: &str,
                       frame: &Tensor,
                       interpreted: &Tensor,
                       hs: &mut Vec<Tensor>,
                       cs: &mut Vec<Tensor>,
                       lp: &[LstmLayerParams],
                       head: crn_core::crn::HeadSpec|
     -> Tensor {
        let features = stem_oracle(params, &format!("{prefix}.stem"), frame);
        let x_hat = match spec.rib_kind {
            None => features,
            Some(kind) => {
                let rib_prefix = format!("{prefix}.rib");
                let h_hat = match kind {
                    RibKind::Rib => rib_oracle(params, &rib_prefix, interpreted),
                    RibKind::Srib => srib_oracle(params, &rib_prefix, interpreted),
                    RibKind::Identity => interpreted.clone(),
                };
                rab_oracle(params, &format!("{prefix}.rab"), &features, &h_hat)
            }
        };
        let mut input = x_hat;
        for (i, p) in lp.iter().enumerate() {
            let (h_new, c_new) = lstm_step_oracle(&input, &hs[i], &cs[i], p);
            input = h_new.clone();
            hs[i] = h_new;
            cs[i] = c_new;
        }
        head_oracle(params, &format!("{prefix}.head"), head, hs.last().unwrap())
    };

    let mut outputs = Vec::with_capacity(spec.steps);
    for t in 0..spec.steps {
        let top_a = hs_a.last().unwrap().clone();
        let top_b = hs_b.last().unwrap().clone();
        let (for_a, for_b) = if exchange {
            (top_b, top_a)
        } else {
            (top_a, top_b)
        };
        let qa = branch_step(
            "brancha",
            &frames_a[t],
            &for_a,
            &mut hs_a,
            &mut cs_a,
            &lp_a,
            head_a,
        );
        let qb = branch_step(
            "branchb",
            &frames_b[t],
            &for_b,
            &mut hs_b,
            &mut cs_b,
            &lp_b,
            head_b,
        );
        outputs.push((qa, qb));
    }
    outputs
}

/// Worst |Δ| between the library's ConvLSTM step and [`lstm_step_oracle`]
/// over freshly drawn random layers, states, and inputs.
pub fn lstm_step_worst_diff(cases: usize, seed: u64) -> f64 {
    use crn_core::convlstm::{ConvLstmLayer, LstmState};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let cin = rng.gen_range(1..=3);
        let ch = rng.gen_range(1..=3);
        let kernel = [1usize, 3][rng.gen_range(0..2)];
        let bias = rng.gen_bool(0.5);
        let n = rng.gen_range(1..=2);
        let hw = rng.gen_range(3..=5);

        let mut params = ParamSet::new();
        let layer =
            ConvLstmLayer::new(&mut params, "cell", cin, ch, kernel, bias, case as u64).unwrap();

        let x = Tensor::uniform(Shape::new(n, cin, hw, hw), -1.0, 1.0, &mut rng);
        let h0 = Tensor::uniform(Shape::new(n, ch, hw, hw), -1.0, 1.0, &mut rng);
        let c0 = Tensor::uniform(Shape::new(n, ch, hw, hw), -1.0, 1.0, &mut rng);

        let mut tape = crn_core::tensor::Tape::new();
        let bind = params.bind(&mut tape, false);
        let prev = LstmState {
            h: tape.constant(h0.clone()),
            c: tape.constant(c0.clone()),
        };
        let xv = tape.constant(x.clone());
        let next = layer.step(&mut tape, &bind, xv, &prev).unwrap();

        let p = LstmLayerParams::fetch(&params, "cell", bias);
        let (h_ref, c_ref) = lstm_step_oracle(&x, &h0, &c0, &p);
        worst = worst
            .max(max_abs_diff(tape.value(next.h), &h_ref))
            .max(max_abs_diff(tape.value(next.c), &c_ref));
    }
    worst
}

/// Worst |Δ| between the library's interpretation block (full or
/// simplified) and its transcription oracle.
pub fn rib_worst_diff(kind: crn_core::coupling::RibKind, cases: usize, seed: u64) -> f64 {
    use crn_core::coupling::{Rib, RibKind};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let ch = rng.gen_range(1..=3);
        let c_out = rng.gen_range(1..=3);
        let n = rng.gen_range(1..=2);
        let hw = rng.gen_range(3..=6);

        let mut params = ParamSet::new();
        let rib = Rib::new(&mut params, "rib", kind, ch, c_out, case as u64).unwrap();
        let h_other = Tensor::uniform(Shape::new(n, ch, hw, hw), -1.0, 1.0, &mut rng);

        let mut tape = crn_core::tensor::Tape::new();
        let bind = params.bind(&mut tape, false);
        let hv = tape.constant(h_other.clone());
        let out = rib.forward(&mut tape, &bind, hv).unwrap();

        let reference = match kind {
            RibKind::Rib => rib_oracle(&params, "rib", &h_other),
            RibKind::Srib => srib_oracle(&params, "rib", &h_other),
            RibKind::Identity => h_other.clone(),
        };
        worst = worst.max(max_abs_diff(tape.value(out), &reference));
    }
    worst
}

/// Worst |Δ| between the library's adaptation block and [`rab_oracle`].
pub fn rab_worst_diff(cases: usize, seed: u64) -> f64 {
    use crn_core::coupling::Rab;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let c_x = rng.gen_range(1..=3);
        let c_rib = rng.gen_range(1..=3);
        let n = rng.gen_range(1..=2);
        let hw = rng.gen_range(3..=6);

        let mut params = ParamSet::new();
        let rab = Rab::new(&mut params, "rab", c_x, c_rib, case as u64).unwrap();
        let x = Tensor::uniform(Shape::new(n, c_x, hw, hw), -1.0, 1.0, &mut rng);
        let h_hat = Tensor::uniform(Shape::new(n, c_rib, hw, hw), -1.0, 1.0, &mut rng);

        let mut tape = crn_core::tensor::Tape::new();
        let bind = params.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let hv = tape.constant(h_hat.clone());
        let out = rab.forward(&mut tape, &bind, xv, hv).unwrap();

        worst = worst.max(max_abs_diff(tape.value(out), &rab_oracle(&params, "rab", &x, &h_hat)));
    }
    worst
}

/// A random small two-branch build recipe covering both topologies, all
/// interpretation kinds (including none), and both head families.
pub fn random_two_branch_spec(rng: &mut ChaCha8Rng) -> crn_core::crn::CrnSpec {
    use crn_core::coupling::RibKind;
    use crn_core::crn::{CrnSpec, HeadLayout, HeadSpec, Topology};
    let head = |rng: &mut ChaCha8Rng| {
        if rng.gen_bool(0.5) {
            HeadSpec::Classification {
                classes: rng.gen_range(2..=4),
            }
        } else {
            HeadSpec::Regression {
                maps: rng.gen_range(1..=2),
            }
        }
    };
    CrnSpec {
        topology: if rng.gen_bool(0.5) {
            Topology::Coupled
        } else {
            Topology::NonCoupled
        },
        steps: rng.gen_range(1..=3),
        in_channels: (rng.gen_range(1..=2), rng.gen_range(1..=2)),
        stem_channels: rng.gen_range(1..=2),
        lstm_layers: rng.gen_range(1..=2),
        lstm_hidden: rng.gen_range(1..=3),
        lstm_kernel: 3,
        lstm_bias: rng.gen_bool(0.5),
        rib_kind: match rng.gen_range(0..4) {
            0 => Some(RibKind::Rib),
            1 => Some(RibKind::Srib),
            2 => Some(RibKind::Identity),
            _ => None,
        },
        rib_channels: rng.gen_range(1..=2),
        heads: HeadLayout::PerBranch(head(rng), head(rng)),
    }
}

/// Worst |Δ| between the library's full unroll and [`crn_unroll_oracle`]
/// over random specs, both topologies and head families mixed.
pub fn unroll_worst_diff(cases: usize, seed: u64) -> f64 {
    use crn_core::coupling::RibKind;
    use crn_core::crn::{CrnModel, StepOutputs};
    use crn_core::synthdata::{SequenceBatch, Targets};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let mut spec = random_two_branch_spec(&mut rng);
        if spec.rib_kind == Some(RibKind::Identity) {
            spec.rib_channels = spec.lstm_hidden;
        }
        let model = CrnModel::build(spec, case as u64).unwrap();

        let n = rng.gen_range(1..=2);
        let hw = rng.gen_range(3..=5);
        let frame = |rng: &mut ChaCha8Rng, c: usize| {
            Tensor::uniform(Shape::new(n, c, hw, hw), -1.0, 1.0, rng)
        };
        let frames_a: Vec<Tensor> = (0..spec.steps)
            .map(|_| frame(&mut rng, spec.in_channels.0))
            .collect();
        let frames_b: Vec<Tensor> = (0..spec.steps)
            .map(|_| frame(&mut rng, spec.in_channels.1))
            .collect();
        let batch = SequenceBatch {
            a: frames_a.clone(),
            b: frames_b.clone(),
            targets: Targets::Labels(vec![0; n]),
        };

        let mut tape = crn_core::tensor::Tape::new();
        let bind = model.bind(&mut tape, false);
        let outputs = model.forward_unroll(&mut tape, &bind, &batch).unwrap();
        let pairs = match outputs {
            StepOutputs::Dual(v) => v,
            StepOutputs::Single(_) => panic!("two-branch topologies produce dual outputs"),
        };

        let reference = crn_unroll_oracle(model.params(), &spec, &frames_a, &frames_b);
        assert_eq!(pairs.len(), spec.steps);
        for ((qa, qb), (ra, rb)) in pairs.iter().zip(&reference) {
            worst = worst
                .max(max_abs_diff(tape.value(*qa), ra))
                .max(max_abs_diff(tape.value(*qb), rb));
        }
    }
    worst
}
