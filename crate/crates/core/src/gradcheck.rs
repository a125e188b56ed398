//! Central finite-difference checks of every tape operation and of the full
//! model.
//!
//! Analytic gradients come from the f32 tape. Numeric gradients come from a
//! separate f64 implementation written with plain loops, so the check also
//! compares two independent forward computations. Every relu records which
//! side of zero its input fell on; a component whose ±h perturbation flips
//! any of those bits straddles a kink and is counted as skipped rather than
//! compared.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Axis, Graph, Padding, ParamStore, Var, PROB_FLOOR};
use crate::element::{BBox, Element};
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::model::{ModelConfig, SegmentationNet};
use crate::overlay::calc_overlay;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradcheckConfig {
    /// Image side of the model check.
    pub size: usize,
    pub seeds: u64,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            size: 16,
            seeds: 10,
            step: 1e-3,
            tolerance: 1e-2,
        }
    }
}

/// Numeric gradients smaller than this are compared on an absolute scale.
pub const MAGNITUDE_FLOOR: f64 = 1e-6;

/// `|analytic - numeric| / max(MAGNITUDE_FLOOR, |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(MAGNITUDE_FLOOR)
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub seeds: u64,
    pub compared: usize,
    /// Components whose perturbation crossed a relu kink.
    pub skipped: usize,
    pub max_rel_error: f64,
    /// Largest relative gap between the tape and reference loss values.
    pub max_value_error: f64,
    pub passed: bool,
}

/// f64 tensor for the reference computations.
#[derive(Clone, Debug)]
struct T64 {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl T64 {
    fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    fn of(shape: &[usize], data: &[f64]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape: shape.to_vec(),
            data: data.to_vec(),
        }
    }

    fn from_f32(t: &Tensor) -> Self {
        Self {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&v| f64::from(v)).collect(),
        }
    }
}

/// Sign bits of every kink the reference passes through.
type Kinks = Vec<bool>;

mod reference {
    use super::{Kinks, T64};

    pub fn conv(x: &T64, k: &T64, b: &[f64], stride: usize, pad: usize) -> T64 {
        let (h, w, cin) = (x.shape[0], x.shape[1], x.shape[2]);
        let (ks, cout) = (k.shape[0], k.shape[3]);
        let oh = (h + 2 * pad - ks) / stride + 1;
        let ow = (w + 2 * pad - ks) / stride + 1;
        let mut out = T64::zeros(&[oh, ow, cout]);
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..cout {
                    let mut acc = b[co];
                    for ky in 0..ks {
                        for kx in 0..ks {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            for ci in 0..cin {
                                let xv = x.data[(iy as usize * w + ix as usize) * cin + ci];
                                let kv = k.data[((ky * ks + kx) * cin + ci) * cout + co];
                                acc += xv * kv;
                            }
                        }
                    }
                    out.data[(oy * ow + ox) * cout + co] = acc;
                }
            }
        }
        out
    }

    pub fn dense(x: &T64, wt: &T64, b: &[f64]) -> T64 {
        let (n, m) = (wt.shape[0], wt.shape[1]);
        let rows = x.data.len() / n;
        let mut shape = x.shape.clone();
        *shape.last_mut().unwrap() = m;
        let mut out = T64::zeros(&shape);
        for r in 0..rows {
            for j in 0..m {
                let mut acc = b[j];
                for i in 0..n {
                    acc += x.data[r * n + i] * wt.data[i * m + j];
                }
                out.data[r * m + j] = acc;
            }
        }
        out
    }

    pub fn relu(x: &T64, kinks: &mut Kinks) -> T64 {
        let mut out = x.clone();
        for v in &mut out.data {
            kinks.push(*v > 0.0);
            *v = v.max(0.0);
        }
        out
    }

    /// Softmax of `len` values spaced `stride` apart starting at `offset`.
    fn softmax_group(src: &[f64], dst: &mut [f64], offset: usize, len: usize, stride: usize) {
        let idx = |i: usize| offset + i * stride;
        let max = (0..len).map(|i| src[idx(i)]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..len).map(|i| (src[idx(i)] - max).exp()).sum();
        for i in 0..len {
            dst[idx(i)] = (src[idx(i)] - max).exp() / z;
        }
    }

    pub fn softmax_depth(x: &T64) -> T64 {
        let d = *x.shape.last().unwrap();
        let mut out = x.clone();
        for g in 0..x.data.len() / d {
            softmax_group(&x.data, &mut out.data, g * d, d, 1);
        }
        out
    }

    pub fn softmax_set(x: &T64) -> T64 {
        let n = x.shape[0];
        let inner = x.data.len() / n;
        let mut out = x.clone();
        for g in 0..inner {
            softmax_group(&x.data, &mut out.data, g, n, inner);
        }
        out
    }

    pub fn tile(v: &[f64], h: usize, w: usize) -> T64 {
        let mut data = Vec::with_capacity(h * w * v.len());
        for _ in 0..h * w {
            data.extend_from_slice(v);
        }
        T64::of(&[h, w, v.len()], &data)
    }

    pub fn concat(parts: &[&T64]) -> T64 {
        let (h, w) = (parts[0].shape[0], parts[0].shape[1]);
        let total: usize = parts.iter().map(|p| p.shape[2]).sum();
        let mut out = T64::zeros(&[h, w, total]);
        for cell in 0..h * w {
            let mut o = cell * total;
            for p in parts {
                let d = p.shape[2];
                out.data[o..o + d].copy_from_slice(&p.data[cell * d..(cell + 1) * d]);
                o += d;
            }
        }
        out
    }

    pub fn cross_entropy(logits: &T64, target: &[u8], floor: f64, kinks: &mut Kinks) -> f64 {
        let p = softmax_depth(logits);
        let pixels = target.len();
        let mut loss = 0.0;
        for (i, &t) in target.iter().enumerate() {
            let pt = p.data[i * 2 + t as usize];
            kinks.push(pt > floor);
            loss -= pt.max(floor).ln();
        }
        loss / pixels as f64
    }

    pub fn matvec(m: &T64, v: &[f64]) -> Vec<f64> {
        let k = v.len();
        m.data
            .chunks(k)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn scale_rows(m: &T64, w: &[f64]) -> T64 {
        let d = m.shape[1];
        let mut out = m.clone();
        for (i, s) in w.iter().enumerate() {
            for v in &mut out.data[i * d..(i + 1) * d] {
                *v *= s;
            }
        }
        out
    }

    pub fn project(rows: &T64, cells: &[Vec<usize>], h: usize, w: usize) -> T64 {
        let d = rows.shape[1];
        let mut out = T64::zeros(&[h, w, d]);
        for (i, list) in cells.iter().enumerate() {
            for &c in list {
                for j in 0..d {
                    out.data[c * d + j] += rows.data[i * d + j];
                }
            }
        }
        out
    }

    pub fn mean_rows(m: &T64) -> Vec<f64> {
        let (n, d) = (m.shape[0], m.shape[1]);
        (0..d).map(|j| (0..n).map(|i| m.data[i * d + j]).sum::<f64>() / n as f64).collect()
    }

    pub fn upsample(x: &T64, f: usize) -> T64 {
        let (h, w, c) = (x.shape[0], x.shape[1], x.shape[2]);
        let mut out = T64::zeros(&[h * f, w * f, c]);
        for r in 0..h * f {
            for col in 0..w * f {
                for k in 0..c {
                    out.data[(r * w * f + col) * c + k] = x.data[((r / f) * w + col / f) * c + k];
                }
            }
        }
        out
    }

    pub fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }
}

type RefFn = Box<dyn Fn(&[T64], &mut Kinks) -> f64>;

/// One scalar function of a list of tensors: its tape value and gradients at
/// `inputs`, and the reference implementation.
struct Case {
    inputs: Vec<Tensor>,
    value: f64,
    grads: Vec<Vec<f32>>,
    reference: RefFn,
}

/// Records `tape` with every input as a parameter and differentiates it.
fn tape_case(
    inputs: Vec<Tensor>,
    tape: impl FnOnce(&mut Graph<'_>, &[Var]) -> Result<Var>,
    reference: RefFn,
) -> Result<Case> {
    let mut store = ParamStore::new();
    for (i, t) in inputs.iter().enumerate() {
        store.register(format!("in{i}"), t.clone())?;
    }
    let mut g = Graph::new(&store);
    let vars: Vec<Var> = store.ids().map(|id| g.param(id)).collect();
    let loss = tape(&mut g, &vars)?;
    let value = f64::from(g.value(loss).data()[0]);
    let grads = g.backward(loss)?;
    Ok(Case {
        grads: store.ids().map(|id| grads.get(id)).collect(),
        inputs,
        value,
        reference,
    })
}

struct Outcome {
    compared: usize,
    skipped: usize,
    max_rel: f64,
    value_rel: f64,
}

fn run_case(case: &Case, h: f64) -> Outcome {
    let mut x: Vec<T64> = case.inputs.iter().map(T64::from_f32).collect();
    let mut base_kinks = Kinks::new();
    let ref_value = (case.reference)(&x, &mut base_kinks);
    let mut out = Outcome {
        compared: 0,
        skipped: 0,
        max_rel: 0.0,
        value_rel: (case.value - ref_value).abs() / ref_value.abs().max(1.0),
    };
    let mut kp = Kinks::new();
    let mut km = Kinks::new();
    for i in 0..x.len() {
        for j in 0..x[i].data.len() {
            let orig = x[i].data[j];
            kp.clear();
            km.clear();
            x[i].data[j] = orig + h;
            let fp = (case.reference)(&x, &mut kp);
            x[i].data[j] = orig - h;
            let fm = (case.reference)(&x, &mut km);
            x[i].data[j] = orig;
            if kp != base_kinks || km != base_kinks {
                out.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * h);
            out.max_rel = out.max_rel.max(relative_error(f64::from(case.grads[i][j]), numeric));
            out.compared += 1;
        }
    }
    out
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("positive extents")
}

/// Values bounded away from zero, so relu inputs never sit on the kink.
fn rand_signed(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f32 = rng.gen_range(0.1..1.0);
            if rng.gen() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("positive extents")
}

/// Reduces a tensor-valued op to a scalar by a fixed random weighting, on
/// both sides of the comparison.
fn weighted_case(
    inputs: Vec<Tensor>,
    weights: Tensor,
    op: impl FnOnce(&mut Graph<'_>, &[Var]) -> Result<Var>,
    reference: impl Fn(&[T64], &mut Kinks) -> T64 + 'static,
) -> Result<Case> {
    let w64 = T64::from_f32(&weights);
    tape_case(
        inputs,
        |g, v| {
            let y = op(g, v)?;
            let r = g.input(weights);
            let p = g.mul(y, r)?;
            Ok(g.sum(p))
        },
        Box::new(move |x, k| reference::dot(&reference(x, k).data, &w64.data)),
    )
}

fn conv_case(rng: &mut ChaCha8Rng, h: usize, w: usize, cin: usize, k: usize, cout: usize, stride: usize, padding: Padding) -> Result<Case> {
    let pad = match padding {
        Padding::Same => (k - 1) / 2,
        Padding::Valid => 0,
    };
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    weighted_case(
        vec![
            rand_tensor(rng, &[h, w, cin], -1.0, 1.0),
            rand_tensor(rng, &[k, k, cin, cout], -1.0, 1.0),
            rand_tensor(rng, &[cout], -1.0, 1.0),
        ],
        rand_tensor(rng, &[oh, ow, cout], -1.0, 1.0),
        move |g, v| g.conv2d(v[0], v[1], v[2], stride, padding),
        move |x, _| reference::conv(&x[0], &x[1], &x[2].data, stride, pad),
    )
}

/// Operation cases by name; each call draws fresh random inputs.
fn op_case(name: &str, rng: &mut ChaCha8Rng) -> Result<Case> {
    let mut t = |shape: &[usize]| rand_tensor(rng, shape, -1.0, 1.0);
    match name {
        "conv2d_same" => conv_case(rng, 5, 6, 3, 3, 4, 1, Padding::Same),
        "conv2d_stride2" => conv_case(rng, 7, 6, 2, 3, 3, 2, Padding::Same),
        "conv2d_valid" => conv_case(rng, 6, 5, 2, 3, 2, 1, Padding::Valid),
        "conv2d_k5" => conv_case(rng, 6, 6, 2, 5, 2, 2, Padding::Same),
        "dense" => weighted_case(
            vec![t(&[3, 5]), t(&[5, 4]), t(&[4])],
            t(&[3, 4]),
            |g, v| g.dense(v[0], v[1], v[2]),
            |x, _| reference::dense(&x[0], &x[1], &x[2].data),
        ),
        "dense_map" => weighted_case(
            vec![t(&[2, 3, 4]), t(&[4, 3]), t(&[3])],
            t(&[2, 3, 3]),
            |g, v| g.dense(v[0], v[1], v[2]),
            |x, _| reference::dense(&x[0], &x[1], &x[2].data),
        ),
        "relu" => weighted_case(
            vec![rand_signed(rng, &[4, 5])],
            rand_tensor(rng, &[4, 5], -1.0, 1.0),
            |g, v| Ok(g.relu(v[0])),
            |x, k| reference::relu(&x[0], k),
        ),
        "add" => weighted_case(
            vec![t(&[3, 4, 2]), t(&[3, 4, 2])],
            t(&[3, 4, 2]),
            |g, v| g.add(v[0], v[1]),
            |x, _| T64::of(&x[0].shape, &x[0].data.iter().zip(&x[1].data).map(|(a, b)| a + b).collect::<Vec<_>>()),
        ),
        "add_broadcast" => weighted_case(
            vec![t(&[2]), t(&[3, 4, 2])],
            t(&[3, 4, 2]),
            |g, v| g.add(v[0], v[1]),
            |x, _| {
                let d: Vec<f64> = x[1].data.iter().enumerate().map(|(i, a)| a + x[0].data[i % 2]).collect();
                T64::of(&x[1].shape, &d)
            },
        ),
        "mul" => weighted_case(
            vec![t(&[3, 4, 2]), t(&[3, 4, 2])],
            t(&[3, 4, 2]),
            |g, v| g.mul(v[0], v[1]),
            |x, _| T64::of(&x[0].shape, &x[0].data.iter().zip(&x[1].data).map(|(a, b)| a * b).collect::<Vec<_>>()),
        ),
        "mul_broadcast" => weighted_case(
            vec![t(&[3, 4, 3]), t(&[3])],
            t(&[3, 4, 3]),
            |g, v| g.mul(v[0], v[1]),
            |x, _| {
                let d: Vec<f64> = x[0].data.iter().enumerate().map(|(i, a)| a * x[1].data[i % 3]).collect();
                T64::of(&x[0].shape, &d)
            },
        ),
        "scale" => weighted_case(
            vec![t(&[3, 4])],
            t(&[3, 4]),
            |g, v| Ok(g.scale(v[0], 0.7)),
            |x, _| T64::of(&x[0].shape, &x[0].data.iter().map(|a| a * f64::from(0.7f32)).collect::<Vec<_>>()),
        ),
        "concat_depth" => weighted_case(
            vec![t(&[3, 3, 2]), t(&[3, 3, 1]), t(&[3, 3, 4])],
            t(&[3, 3, 7]),
            |g, v| g.concat_depth(v),
            |x, _| reference::concat(&[&x[0], &x[1], &x[2]]),
        ),
        "softmax_depth" => weighted_case(
            vec![rand_tensor(rng, &[3, 4, 5], -3.0, 3.0)],
            rand_tensor(rng, &[3, 4, 5], -1.0, 1.0),
            |g, v| Ok(g.softmax(v[0], Axis::Depth)),
            |x, _| reference::softmax_depth(&x[0]),
        ),
        "softmax_set" => weighted_case(
            vec![rand_tensor(rng, &[5, 3], -3.0, 3.0)],
            rand_tensor(rng, &[5, 3], -1.0, 1.0),
            |g, v| Ok(g.softmax(v[0], Axis::Set)),
            |x, _| reference::softmax_set(&x[0]),
        ),
        "tile_spatial" => weighted_case(
            vec![t(&[5])],
            t(&[3, 4, 5]),
            |g, v| g.tile_spatial(v[0], 3, 4),
            |x, _| reference::tile(&x[0].data, 3, 4),
        ),
        "cross_entropy" => {
            let logits = rand_tensor(rng, &[4, 5, 2], -3.0, 3.0);
            let target: Vec<u8> = (0..20).map(|_| rng.gen_range(0..2)).collect();
            let t2 = target.clone();
            tape_case(
                vec![logits],
                |g, v| g.cross_entropy(v[0], &target),
                Box::new(move |x, k| reference::cross_entropy(&x[0], &t2, f64::from(PROB_FLOOR), k)),
            )
        }
        "matvec" => weighted_case(
            vec![t(&[4, 6]), t(&[6])],
            t(&[4]),
            |g, v| g.matvec(v[0], v[1]),
            |x, _| T64::of(&[4], &reference::matvec(&x[0], &x[1].data)),
        ),
        "scale_rows" => weighted_case(
            vec![t(&[4, 3]), t(&[4])],
            t(&[4, 3]),
            |g, v| g.scale_rows(v[0], v[1]),
            |x, _| reference::scale_rows(&x[0], &x[1].data),
        ),
        "project_rows" => {
            let cells: Vec<Vec<usize>> = (0..3)
                .map(|_| {
                    let n = rng.gen_range(1..8);
                    let mut c: Vec<usize> = (0..n).map(|_| rng.gen_range(0..20)).collect();
                    c.sort_unstable();
                    c.dedup();
                    c
                })
                .collect();
            let c2 = cells.clone();
            weighted_case(
                vec![rand_tensor(rng, &[3, 4], -1.0, 1.0)],
                rand_tensor(rng, &[4, 5, 4], -1.0, 1.0),
                move |g, v| g.project_rows(v[0], cells, 4, 5),
                move |x, _| reference::project(&x[0], &c2, 4, 5),
            )
        }
        "mean_rows" => weighted_case(
            vec![t(&[4, 3])],
            t(&[3]),
            |g, v| g.mean_rows(v[0]),
            |x, _| T64::of(&[3], &reference::mean_rows(&x[0])),
        ),
        "upsample_nearest" => weighted_case(
            vec![t(&[3, 2, 2])],
            t(&[9, 6, 2]),
            |g, v| g.upsample_nearest(v[0], 3),
            |x, _| reference::upsample(&x[0], 3),
        ),
        "sum" => tape_case(
            vec![t(&[3, 4])],
            |g, v| Ok(g.sum(v[0])),
            Box::new(|x, _| x[0].data.iter().sum()),
        ),
        other => Err(Error::invalid("gradcheck", format!("unknown operation {other}"))),
    }
}

pub const OPS: &[&str] = &[
    "conv2d_same",
    "conv2d_stride2",
    "conv2d_valid",
    "conv2d_k5",
    "dense",
    "dense_map",
    "relu",
    "add",
    "add_broadcast",
    "mul",
    "mul_broadcast",
    "scale",
    "concat_depth",
    "softmax_depth",
    "softmax_set",
    "tile_spatial",
    "cross_entropy",
    "matvec",
    "scale_rows",
    "project_rows",
    "mean_rows",
    "upsample_nearest",
    "sum",
];

/// Small model used by the full-model check.
pub fn model_config(size: usize, flags: (bool, bool, bool)) -> ModelConfig {
    ModelConfig {
        height: size,
        width: size,
        output_stride: 4,
        d_text: 16,
        d_embed: 16,
        element_hidden: vec![8],
        backbone_channels: vec![4, 8, 8],
        element_channels: 4,
        fusion_channels: 8,
        ..ModelConfig::default()
    }
    .with_ablation(flags.0, flags.1, flags.2)
}

const WORDS: &[&str] = &["send", "login", "menu", "the red one", "click save", "home"];

/// f64 forward pass of the whole model from parameters in store order.
fn model_reference(
    config: &ModelConfig,
    store: &ParamStore,
    p: &[T64],
    image: &T64,
    elements: &[Element],
    expression: &str,
    target: &[u8],
    kinks: &mut Kinks,
) -> f64 {
    let get = |name: &str| &p[store.id(name).expect("registered").index()];
    let conv = |x: &T64, name: &str, stride: usize, relu: bool, kinks: &mut Kinks| {
        let y = reference::conv(x, get(&format!("{name}.kernel")), &get(&format!("{name}.bias")).data, stride, 1);
        if relu {
            reference::relu(&y, kinks)
        } else {
            y
        }
    };
    let dense_stack = |x: &T64, prefix: &str, layers: usize, kinks: &mut Kinks| {
        let mut x = x.clone();
        for i in 0..layers {
            x = reference::dense(&x, get(&format!("{prefix}.{i}.weights")), &get(&format!("{prefix}.{i}.bias")).data);
            if i + 1 < layers {
                x = reference::relu(&x, kinks);
            }
        }
        x
    };
    let (hf, wf) = config.grid();
    let encoder = config.text_encoder();
    let enc = |s: &str| -> Vec<f64> { encoder.encode(s).as_slice().iter().map(|&v| f64::from(v)).collect() };

    let img = if config.use_image {
        let mut x = image.clone();
        for i in 0..config.backbone_channels.len() {
            x = conv(&x, &format!("backbone.{i}"), config.backbone_stride(i), true, kinks);
        }
        x
    } else {
        T64::zeros(&[hf, wf, config.image_depth()])
    };
    let r = enc(expression);
    let overlay = reference::tile(&r, hf, wf);
    let processed = if config.use_elements {
        let field = if elements.is_empty() {
            T64::zeros(&[hf, wf, config.d_embed])
        } else {
            let mut feats = Vec::new();
            for el in elements {
                feats.extend(el.bbox.coords().iter().map(|&v| f64::from(v)));
                feats.extend(enc(&el.text));
            }
            let x = T64::of(&[elements.len(), 4 + config.d_text], &feats);
            let e = dense_stack(&x, "element", config.element_hidden.len() + 1, kinks);
            let rp = dense_stack(&T64::of(&[r.len()], &r), "attention", config.attention_layers, kinks);
            let ep = dense_stack(&e, "attention", config.attention_layers, kinks);
            let logits = reference::matvec(&ep, &rp.data);
            let weights = reference::softmax_set(&T64::of(&[logits.len()], &logits));
            let attended = reference::scale_rows(&e, &weights.data);
            if config.use_projection {
                let cells: Vec<Vec<usize>> = elements.iter().map(|el| calc_overlay(&el.bbox, hf, wf).indices()).collect();
                reference::project(&attended, &cells, hf, wf)
            } else {
                reference::tile(&reference::mean_rows(&attended), hf, wf)
            }
        };
        conv(&field, "cnn2", 1, true, kinks)
    } else {
        T64::zeros(&[hf, wf, config.element_channels])
    };
    let cat = reference::concat(&[&overlay, &img, &processed]);
    let f = conv(&cat, "cnn3.0", 1, true, kinks);
    let f = conv(&f, "cnn3.1", 1, true, kinks);
    let fused = T64::of(&img.shape, &img.data.iter().zip(&f.data).map(|(a, b)| a + b).collect::<Vec<_>>());
    let low = conv(&fused, "cnn4", 1, false, kinks);
    let logits = reference::upsample(&low, config.output_stride);
    reference::cross_entropy(&logits, target, f64::from(PROB_FLOOR), kinks)
}

fn random_box(rng: &mut ChaCha8Rng) -> BBox {
    let x0 = rng.gen_range(0.0..0.7f32);
    let y0 = rng.gen_range(0.0..0.7f32);
    let x1 = x0 + rng.gen_range(0.1..0.3f32);
    let y1 = y0 + rng.gen_range(0.1..0.3f32);
    BBox::new(x0, y0, x1, y1).expect("inside the unit square")
}

/// Full-model case: random image, 3 elements and a rectangular target, with
/// the seeded initialization plus random biases as the point of evaluation.
fn model_case(size: usize, flags: (bool, bool, bool), rng: &mut ChaCha8Rng) -> Result<Case> {
    let config = ModelConfig {
        seed: rng.gen(),
        ..model_config(size, flags)
    };
    let net = SegmentationNet::new(config.clone())?;
    let mut store = net.params().clone();
    let names: Vec<String> = store.iter().map(|(_, n, _)| n.to_string()).collect();
    for name in &names {
        if name.ends_with(".bias") {
            let id = store.id(name).expect("registered");
            let t = store.get_mut(id);
            for v in t.data_mut() {
                *v = rng.gen_range(-0.1..0.1);
            }
        }
    }
    let image = rand_tensor(rng, &[size, size, 3], 0.0, 1.0);
    let elements: Vec<Element> = (0..3)
        .map(|_| Element::new(WORDS[rng.gen_range(0..WORDS.len())], random_box(rng)))
        .collect();
    let expression = WORDS[rng.gen_range(0..WORDS.len())].to_string();
    let x0 = rng.gen_range(0..size / 2);
    let y0 = rng.gen_range(0..size / 2);
    let mask = BinaryMask::rect(size, size, x0, y0, x0 + size / 4 + 1, y0 + size / 4 + 1);

    let inputs: Vec<Tensor> = store.iter().map(|(_, _, t)| t.clone()).collect();
    let net = SegmentationNet::with_params(config.clone(), store)?;
    let (value, grads) = net.loss_and_grad(&image, &elements, &expression, &mask)?;
    let store = net.params().clone();
    let image64 = T64::from_f32(&image);
    let target = mask.data().to_vec();
    Ok(Case {
        grads: store.ids().map(|id| grads.get(id)).collect(),
        inputs,
        value: f64::from(value),
        reference: Box::new(move |p, k| {
            model_reference(&config, &store, p, &image64, &elements, &expression, &target, k)
        }),
    })
}

pub const MODEL_CHECKS: [(&str, (bool, bool, bool)); 5] = [
    ("model", (true, true, true)),
    ("model_image_only", (true, false, false)),
    ("model_elements_only", (false, true, true)),
    ("model_no_projection", (true, true, false)),
    ("model_no_projection_elements_only", (false, true, false)),
];

fn check(name: &str, cfg: &GradcheckConfig, mut make: impl FnMut(&mut ChaCha8Rng) -> Result<Case>) -> Result<CheckReport> {
    let mut report = CheckReport {
        name: name.to_string(),
        seeds: cfg.seeds,
        compared: 0,
        skipped: 0,
        max_rel_error: 0.0,
        max_value_error: 0.0,
        passed: false,
    };
    for seed in 0..cfg.seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let case = make(&mut rng)?;
        let o = run_case(&case, cfg.step);
        report.compared += o.compared;
        report.skipped += o.skipped;
        report.max_rel_error = report.max_rel_error.max(o.max_rel);
        report.max_value_error = report.max_value_error.max(o.value_rel);
    }
    report.passed = report.compared > 0 && report.max_rel_error <= cfg.tolerance && report.max_value_error <= VALUE_TOLERANCE;
    Ok(report)
}

/// Allowed relative gap between the f32 tape and f64 reference loss values.
pub const VALUE_TOLERANCE: f64 = 1e-4;

/// Checks one operation by name over `cfg.seeds` random draws.
pub fn check_op(name: &str, cfg: &GradcheckConfig) -> Result<CheckReport> {
    check(name, cfg, |rng| op_case(name, rng))
}

/// Checks the full model with the given (image, elements, projection) switches.
pub fn check_model(name: &str, flags: (bool, bool, bool), cfg: &GradcheckConfig) -> Result<CheckReport> {
    if cfg.size == 0 || cfg.size % 4 != 0 {
        return Err(Error::Config(format!("gradcheck size {} must be a positive multiple of 4", cfg.size)));
    }
    check(name, cfg, |rng| model_case(cfg.size, flags, rng))
}

/// Every operation check followed by every model check.
pub fn run_all(cfg: &GradcheckConfig, mut progress: impl FnMut(&CheckReport)) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    for op in OPS {
        let r = check_op(op, cfg)?;
        progress(&r);
        out.push(r);
    }
    for (name, flags) in MODEL_CHECKS {
        let r = check_model(name, flags, cfg)?;
        progress(&r);
        out.push(r);
    }
    Ok(out)
}
