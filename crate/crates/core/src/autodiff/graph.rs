//! Operation tape with reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as it executes and keeps the forward
//! values. [`Graph::backward`] walks the tape in exact reverse order and
//! returns one gradient per parameter of the borrowed [`ParamStore`].

use super::kernels::{self, ConvGeom};
use super::params::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero-pad by (k-1)/2 so stride 1 preserves extents.
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// The last axis (channels of a feature map, components of a vector).
    Depth,
    /// The first axis (rows of an element matrix).
    Set,
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeom,
        cols: Vec<f32>,
    },
    Dense {
        input: Var,
        weights: Var,
        bias: Var,
        rows: usize,
        n: usize,
        m: usize,
    },
    Relu(Var),
    Add {
        a: Var,
        b: Var,
        broadcast: bool,
    },
    Mul {
        a: Var,
        b: Var,
        broadcast: bool,
    },
    Scale(Var, f32),
    ConcatDepth(Vec<(Var, usize)>),
    Softmax {
        input: Var,
        axis: Axis,
    },
    Tile(Var),
    CrossEntropy {
        logits: Var,
        target: Vec<u8>,
        probs: Vec<f32>,
    },
    MatVec {
        matrix: Var,
        vector: Var,
    },
    ScaleRows {
        matrix: Var,
        weights: Var,
    },
    Project {
        rows: Var,
        cells: Vec<Vec<usize>>,
    },
    MeanRows(Var),
    Upsample {
        input: Var,
        factor: usize,
    },
    Sum(Var),
}

struct Node {
    op: Op,
    value: Option<Tensor>,
    needs_grad: bool,
}

/// Floor applied to the true-class probability inside the loss.
pub const PROB_FLOOR: f32 = 1e-7;

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.params.get(id),
            _ => node.value.as_ref().expect("non-parameter nodes hold values"),
        }
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, op: Op, value: Tensor, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            op,
            value: Some(value),
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant. Constants never receive gradients.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Input,
            value: Some(t),
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// 2-D convolution of an h × w × c_in map with a k × k × c_in × c_out kernel.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ks = self.shape(kernel).to_vec();
        let bs = self.shape(bias).to_vec();
        if xs.len() != 3 || ks.len() != 4 || ks[0] != ks[1] || ks[2] != xs[2] {
            return Err(Error::shape("conv2d", &xs, &ks));
        }
        let k = ks[0];
        if k % 2 == 0 {
            return Err(Error::invalid("conv2d", format!("kernel size {k} is even")));
        }
        if bs != [ks[3]] {
            return Err(Error::shape("conv2d", &ks, &bs));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be positive"));
        }
        let pad = match padding {
            Padding::Same => (k - 1) / 2,
            Padding::Valid => 0,
        };
        let (ph, pw) = (xs[0] + 2 * pad, xs[1] + 2 * pad);
        if ph < k || pw < k || stride > ph || stride > pw {
            return Err(Error::invalid(
                "conv2d",
                format!("kernel {k} / stride {stride} do not fit padded input {ph}x{pw}"),
            ));
        }
        let geom = ConvGeom {
            h: xs[0],
            w: xs[1],
            cin: xs[2],
            k,
            cout: ks[3],
            stride,
            pad,
            oh: (ph - k) / stride + 1,
            ow: (pw - k) / stride + 1,
        };
        let cols = kernels::im2col(self.value(input).data(), &geom);
        let p = geom.positions();
        let mut out = Vec::with_capacity(p * geom.cout);
        let b = self.value(bias).data();
        for _ in 0..p {
            out.extend_from_slice(b);
        }
        kernels::gemm(
            p,
            geom.patch(),
            geom.cout,
            &cols,
            false,
            self.value(kernel).data(),
            false,
            &mut out,
            true,
        );
        let value = Tensor::new(vec![geom.oh, geom.ow, geom.cout], out)?;
        Ok(self.push(
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            },
            value,
            &[input, kernel, bias],
        ))
    }

    /// Affine map over the last axis: `[.., n] × [n, m] + [m] -> [.., m]`.
    pub fn dense(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weights).to_vec();
        let bs = self.shape(bias).to_vec();
        let n = *xs.last().unwrap();
        if ws.len() != 2 || ws[0] != n {
            return Err(Error::shape("dense", &xs, &ws));
        }
        let m = ws[1];
        if bs != [m] {
            return Err(Error::shape("dense", &ws, &bs));
        }
        let rows = self.value(input).len() / n;
        let mut out = Vec::with_capacity(rows * m);
        let b = self.value(bias).data();
        for _ in 0..rows {
            out.extend_from_slice(b);
        }
        kernels::gemm(
            rows,
            n,
            m,
            self.value(input).data(),
            false,
            self.value(weights).data(),
            false,
            &mut out,
            true,
        );
        let mut shape = xs;
        *shape.last_mut().unwrap() = m;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            Op::Dense {
                input,
                weights,
                bias,
                rows,
                n,
                m,
            },
            value,
            &[input, weights, bias],
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(Op::Relu(x), value, &[x])
    }

    /// Orders (map, vector) operands for the per-depth broadcast case.
    fn binary_operands(&self, op: &'static str, a: Var, b: Var) -> Result<(Var, Var, bool)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            return Ok((a, b, false));
        }
        if sb.len() == 1 && sa.len() > 1 && *sa.last().unwrap() == sb[0] {
            return Ok((a, b, true));
        }
        if sa.len() == 1 && sb.len() > 1 && *sb.last().unwrap() == sa[0] {
            return Ok((b, a, true));
        }
        Err(Error::shape(op, sa, sb))
    }

    /// Elementwise sum; one operand may be a per-depth vector.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b, broadcast) = self.binary_operands("add", a, b)?;
        let ta = self.value(a);
        let tb = self.value(b).data();
        let d = tb.len();
        let data = if broadcast {
            ta.data()
                .chunks_exact(d)
                .flat_map(|cell| cell.iter().zip(tb).map(|(x, y)| x + y))
                .collect()
        } else {
            ta.data().iter().zip(tb).map(|(x, y)| x + y).collect()
        };
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::Add { a, b, broadcast }, value, &[a, b]))
    }

    /// Elementwise product; one operand may be a per-depth vector.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b, broadcast) = self.binary_operands("mul", a, b)?;
        let ta = self.value(a);
        let tb = self.value(b).data();
        let d = tb.len();
        let data = if broadcast {
            ta.data()
                .chunks_exact(d)
                .flat_map(|cell| cell.iter().zip(tb).map(|(x, y)| x * y))
                .collect()
        } else {
            ta.data().iter().zip(tb).map(|(x, y)| x * y).collect()
        };
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::Mul { a, b, broadcast }, value, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, s: f32) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v * s).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(Op::Scale(x, s), value, &[x])
    }

    /// Stacks h × w × d_i maps along depth, in argument order.
    pub fn concat_depth(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::invalid("concat_depth", "no inputs"))?;
        let s0 = self.shape(first).to_vec();
        if s0.len() != 3 {
            return Err(Error::invalid("concat_depth", format!("expected h x w x d, got {s0:?}")));
        }
        let mut parts = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != 3 || s[0] != s0[0] || s[1] != s0[1] {
                return Err(Error::shape("concat_depth", &s0, s));
            }
            parts.push((v, s[2]));
        }
        let total: usize = parts.iter().map(|p| p.1).sum();
        let cells = s0[0] * s0[1];
        let mut data = Vec::with_capacity(cells * total);
        for cell in 0..cells {
            for &(v, d) in &parts {
                data.extend_from_slice(&self.value(v).data()[cell * d..(cell + 1) * d]);
            }
        }
        let value = Tensor::new(vec![s0[0], s0[1], total], data)?;
        Ok(self.push(Op::ConcatDepth(parts), value, inputs))
    }

    pub fn softmax(&mut self, x: Var, axis: Axis) -> Var {
        let t = self.value(x);
        let (len, stride, groups) = softmax_layout(t.shape(), axis);
        let mut out = vec![0.0; t.len()];
        for g in 0..groups {
            let offset = match axis {
                Axis::Depth => g * len,
                Axis::Set => g,
            };
            kernels::softmax_strided(t.data(), &mut out, offset, len, stride);
        }
        let value = Tensor::new(t.shape().to_vec(), out).expect("same shape");
        self.push(Op::Softmax { input: x, axis }, value, &[x])
    }

    /// Replicates a length-d vector over an h × w grid.
    pub fn tile_spatial(&mut self, v: Var, h: usize, w: usize) -> Result<Var> {
        let t = self.value(v);
        if t.shape().len() != 1 {
            return Err(Error::invalid("tile_spatial", format!("expected a vector, got {:?}", t.shape())));
        }
        if h == 0 || w == 0 {
            return Err(Error::invalid("tile_spatial", "extents must be positive"));
        }
        let d = t.len();
        let mut data = Vec::with_capacity(h * w * d);
        for _ in 0..h * w {
            data.extend_from_slice(t.data());
        }
        let value = Tensor::new(vec![h, w, d], data)?;
        Ok(self.push(Op::Tile(v), value, &[v]))
    }

    /// Mean over pixels of −ln p(true class), with p from a depth softmax and
    /// floored at [`PROB_FLOOR`]. `target` is row-major h × w with class ids.
    pub fn cross_entropy(&mut self, logits: Var, target: &[u8]) -> Result<Var> {
        let t = self.value(logits);
        let s = t.shape();
        if s.len() != 3 || s[2] != 2 {
            return Err(Error::invalid("cross_entropy", format!("expected h x w x 2 logits, got {s:?}")));
        }
        let pixels = s[0] * s[1];
        if target.len() != pixels {
            return Err(Error::shape("cross_entropy", &s[..2], &[target.len()]));
        }
        if let Some(bad) = target.iter().find(|&&c| c > 1) {
            return Err(Error::invalid("cross_entropy", format!("mask value {bad} is not binary")));
        }
        let c = s[2];
        let mut probs = vec![0.0; t.len()];
        let mut loss = 0.0f64;
        for p in 0..pixels {
            kernels::softmax_strided(t.data(), &mut probs, p * c, c, 1);
            let pt = probs[p * c + target[p] as usize].max(PROB_FLOOR);
            loss -= f64::from(pt.ln());
        }
        let value = Tensor::scalar((loss / pixels as f64) as f32);
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                target: target.to_vec(),
                probs,
            },
            value,
            &[logits],
        ))
    }

    /// Row-wise dot products: `[N, k] · [k] -> [N]`.
    pub fn matvec(&mut self, matrix: Var, vector: Var) -> Result<Var> {
        let (ms, vs) = (self.shape(matrix), self.shape(vector));
        if ms.len() != 2 || vs.len() != 1 || ms[1] != vs[0] {
            return Err(Error::shape("matvec", ms, vs));
        }
        let k = vs[0];
        let v = self.value(vector).data();
        let data = self
            .value(matrix)
            .data()
            .chunks_exact(k)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect();
        let value = Tensor::from_vec(data);
        Ok(self.push(Op::MatVec { matrix, vector }, value, &[matrix, vector]))
    }

    /// Scales row i of an `[N, d]` matrix by `weights[i]`.
    pub fn scale_rows(&mut self, matrix: Var, weights: Var) -> Result<Var> {
        let (ms, ws) = (self.shape(matrix), self.shape(weights));
        if ms.len() != 2 || ws != [ms[0]] {
            return Err(Error::shape("scale_rows", ms, ws));
        }
        let d = ms[1];
        let w = self.value(weights).data();
        let t = self.value(matrix);
        let data = t
            .data()
            .chunks_exact(d)
            .zip(w)
            .flat_map(|(row, &s)| row.iter().map(move |v| v * s))
            .collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(Op::ScaleRows { matrix, weights }, value, &[matrix, weights]))
    }

    /// Sums row i of an `[N, d]` matrix into every cell listed in `cells[i]`
    /// of an h × w × d map. Cells index row-major into the grid.
    pub fn project_rows(&mut self, rows: Var, cells: Vec<Vec<usize>>, h: usize, w: usize) -> Result<Var> {
        let rs = self.shape(rows);
        if rs.len() != 2 || rs[0] != cells.len() {
            return Err(Error::shape("project_rows", rs, &[cells.len()]));
        }
        if let Some(&c) = cells.iter().flatten().find(|&&c| c >= h * w) {
            return Err(Error::invalid("project_rows", format!("cell {c} outside {h}x{w} grid")));
        }
        let d = rs[1];
        let src = self.value(rows).data();
        let mut data = vec![0.0f32; h * w * d];
        for (i, list) in cells.iter().enumerate() {
            let row = &src[i * d..(i + 1) * d];
            for &c in list {
                for (o, v) in data[c * d..(c + 1) * d].iter_mut().zip(row) {
                    *o += v;
                }
            }
        }
        let value = Tensor::new(vec![h, w, d], data)?;
        Ok(self.push(Op::Project { rows, cells }, value, &[rows]))
    }

    /// Column means of an `[N, d]` matrix.
    pub fn mean_rows(&mut self, matrix: Var) -> Result<Var> {
        let ms = self.shape(matrix);
        if ms.len() != 2 {
            return Err(Error::invalid("mean_rows", format!("expected a matrix, got {ms:?}")));
        }
        let (n, d) = (ms[0], ms[1]);
        let mut data = vec![0.0f32; d];
        for row in self.value(matrix).data().chunks_exact(d) {
            for (o, v) in data.iter_mut().zip(row) {
                *o += v;
            }
        }
        let inv = 1.0 / n as f32;
        data.iter_mut().for_each(|v| *v *= inv);
        Ok(self.push(Op::MeanRows(matrix), Tensor::from_vec(data), &[matrix]))
    }

    /// Nearest-neighbour upsampling of an h × w × c map by an integer factor.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || factor == 0 {
            return Err(Error::invalid("upsample_nearest", format!("shape {s:?}, factor {factor}")));
        }
        let (h, w, c) = (s[0], s[1], s[2]);
        let (oh, ow) = (h * factor, w * factor);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(oh * ow * c);
        for r in 0..oh {
            for col in 0..ow {
                let i = ((r / factor) * w + col / factor) * c;
                data.extend_from_slice(&src[i..i + c]);
            }
        }
        let value = Tensor::new(vec![oh, ow, c], data)?;
        Ok(self.push(Op::Upsample { input: x, factor }, value, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total: f64 = self.value(x).data().iter().map(|&v| f64::from(v)).sum();
        self.push(Op::Sum(x), Tensor::scalar(total as f32), &[x])
    }

    /// Reverse pass from a scalar. Parameters the loss does not depend on
    /// come back unreached (zero gradient).
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let ls = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(Error::invalid("backward", format!("loss must be scalar, got shape {ls:?}")));
        }
        let mut out = Gradients::new(self.params);
        let mut grads: Vec<Option<Vec<f32>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backward_node(node, &dy, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f32>>], v: Var) -> Option<&'g mut Vec<f32>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let n = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn backward_node(
        &self,
        node: &Node,
        dy: &[f32],
        grads: &mut [Option<Vec<f32>>],
        out: &mut Gradients,
    ) {
        match &node.op {
            Op::Input => {}
            Op::Param(id) => out.add(*id, dy),
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            } => {
                let p = geom.positions();
                let patch = geom.patch();
                if let Some(db) = self.slot(grads, *bias) {
                    for row in dy.chunks_exact(geom.cout) {
                        for (o, v) in db.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                }
                if let Some(dk) = self.slot(grads, *kernel) {
                    kernels::gemm(patch, p, geom.cout, cols, true, dy, false, dk, true);
                }
                if self.nodes[input.0].needs_grad {
                    let mut dcols = vec![0.0f32; p * patch];
                    let k = self.value(*kernel).data();
                    kernels::gemm(p, geom.cout, patch, dy, false, k, true, &mut dcols, false);
                    let dx = self.slot(grads, *input).unwrap();
                    kernels::col2im_add(&dcols, geom, dx);
                }
            }
            Op::Dense {
                input,
                weights,
                bias,
                rows,
                n,
                m,
            } => {
                if let Some(db) = self.slot(grads, *bias) {
                    for row in dy.chunks_exact(*m) {
                        for (o, v) in db.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                }
                if let Some(dw) = self.slot(grads, *weights) {
                    let x = self.value(*input).data();
                    kernels::gemm(*n, *rows, *m, x, true, dy, false, dw, true);
                }
                if let Some(dx) = self.slot(grads, *input) {
                    let w = self.value(*weights).data();
                    kernels::gemm(*rows, *m, *n, dy, false, w, true, dx, true);
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                if let Some(dx) = self.slot(grads, *x) {
                    for ((o, g), v) in dx.iter_mut().zip(dy).zip(xv) {
                        if *v > 0.0 {
                            *o += g;
                        }
                    }
                }
            }
            Op::Add { a, b, broadcast } => {
                if let Some(da) = self.slot(grads, *a) {
                    da.iter_mut().zip(dy).for_each(|(o, g)| *o += g);
                }
                if let Some(db) = self.slot(grads, *b) {
                    if *broadcast {
                        let d = db.len();
                        for cell in dy.chunks_exact(d) {
                            db.iter_mut().zip(cell).for_each(|(o, g)| *o += g);
                        }
                    } else {
                        db.iter_mut().zip(dy).for_each(|(o, g)| *o += g);
                    }
                }
            }
            Op::Mul { a, b, broadcast } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let d = bv.len();
                if let Some(da) = self.slot(grads, *a) {
                    if *broadcast {
                        for (cell, gcell) in da.chunks_exact_mut(d).zip(dy.chunks_exact(d)) {
                            for ((o, g), s) in cell.iter_mut().zip(gcell).zip(bv) {
                                *o += g * s;
                            }
                        }
                    } else {
                        for ((o, g), s) in da.iter_mut().zip(dy).zip(bv) {
                            *o += g * s;
                        }
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    if *broadcast {
                        for (acell, gcell) in av.chunks_exact(d).zip(dy.chunks_exact(d)) {
                            for ((o, g), x) in db.iter_mut().zip(gcell).zip(acell) {
                                *o += g * x;
                            }
                        }
                    } else {
                        for ((o, g), x) in db.iter_mut().zip(dy).zip(av) {
                            *o += g * x;
                        }
                    }
                }
            }
            Op::Scale(x, s) => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.iter_mut().zip(dy).for_each(|(o, g)| *o += g * s);
                }
            }
            Op::ConcatDepth(parts) => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let mut offset = 0;
                for &(v, d) in parts {
                    if let Some(dv) = self.slot(grads, v) {
                        for (cell, gcell) in dv.chunks_exact_mut(d).zip(dy.chunks_exact(total)) {
                            cell.iter_mut()
                                .zip(&gcell[offset..offset + d])
                                .for_each(|(o, g)| *o += g);
                        }
                    }
                    offset += d;
                }
            }
            Op::Softmax { input, axis } => {
                let y = node.value.as_ref().unwrap();
                let (len, stride, groups) = softmax_layout(y.shape(), *axis);
                if let Some(dx) = self.slot(grads, *input) {
                    for g in 0..groups {
                        let offset = match axis {
                            Axis::Depth => g * len,
                            Axis::Set => g,
                        };
                        kernels::softmax_backward_strided(y.data(), dy, dx, offset, len, stride);
                    }
                }
            }
            Op::Tile(v) => {
                if let Some(dv) = self.slot(grads, *v) {
                    let d = dv.len();
                    for cell in dy.chunks_exact(d) {
                        dv.iter_mut().zip(cell).for_each(|(o, g)| *o += g);
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                target,
                probs,
            } => {
                if let Some(dx) = self.slot(grads, *logits) {
                    let scale = dy[0] / target.len() as f32;
                    let c = probs.len() / target.len();
                    for (p, &t) in target.iter().enumerate() {
                        let row = &probs[p * c..(p + 1) * c];
                        if row[t as usize] < PROB_FLOOR {
                            continue;
                        }
                        for (j, &pj) in row.iter().enumerate() {
                            let onehot = if j == t as usize { 1.0 } else { 0.0 };
                            dx[p * c + j] += scale * (pj - onehot);
                        }
                    }
                }
            }
            Op::MatVec { matrix, vector } => {
                let mv = self.value(*matrix).data();
                let vv = self.value(*vector).data();
                let k = vv.len();
                if let Some(dm) = self.slot(grads, *matrix) {
                    for (row, g) in dm.chunks_exact_mut(k).zip(dy) {
                        row.iter_mut().zip(vv).for_each(|(o, v)| *o += g * v);
                    }
                }
                if let Some(dv) = self.slot(grads, *vector) {
                    for (row, g) in mv.chunks_exact(k).zip(dy) {
                        dv.iter_mut().zip(row).for_each(|(o, m)| *o += g * m);
                    }
                }
            }
            Op::ScaleRows { matrix, weights } => {
                let mv = self.value(*matrix).data();
                let wv = self.value(*weights).data();
                let d = mv.len() / wv.len();
                if let Some(dm) = self.slot(grads, *matrix) {
                    for ((row, grow), s) in dm.chunks_exact_mut(d).zip(dy.chunks_exact(d)).zip(wv) {
                        row.iter_mut().zip(grow).for_each(|(o, g)| *o += g * s);
                    }
                }
                if let Some(dw) = self.slot(grads, *weights) {
                    for ((o, mrow), grow) in dw.iter_mut().zip(mv.chunks_exact(d)).zip(dy.chunks_exact(d)) {
                        *o += mrow.iter().zip(grow).map(|(m, g)| m * g).sum::<f32>();
                    }
                }
            }
            Op::Project { rows, cells } => {
                if let Some(dr) = self.slot(grads, *rows) {
                    let d = dr.len() / cells.len();
                    for (i, list) in cells.iter().enumerate() {
                        let row = &mut dr[i * d..(i + 1) * d];
                        for &c in list {
                            row.iter_mut()
                                .zip(&dy[c * d..(c + 1) * d])
                                .for_each(|(o, g)| *o += g);
                        }
                    }
                }
            }
            Op::MeanRows(m) => {
                if let Some(dm) = self.slot(grads, *m) {
                    let d = dy.len();
                    let inv = d as f32 / dm.len() as f32;
                    for row in dm.chunks_exact_mut(d) {
                        row.iter_mut().zip(dy).for_each(|(o, g)| *o += g * inv);
                    }
                }
            }
            Op::Upsample { input, factor } => {
                let s = self.shape(*input).to_vec();
                let (w, c) = (s[1], s[2]);
                let ow = w * factor;
                if let Some(dx) = self.slot(grads, *input) {
                    for (i, cell) in dy.chunks_exact(c).enumerate() {
                        let (r, col) = (i / ow, i % ow);
                        let j = ((r / factor) * w + col / factor) * c;
                        dx[j..j + c].iter_mut().zip(cell).for_each(|(o, g)| *o += g);
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.iter_mut().for_each(|o| *o += dy[0]);
                }
            }
        }
    }
}

/// (axis length, stride between entries, number of independent groups).
fn softmax_layout(shape: &[usize], axis: Axis) -> (usize, usize, usize) {
    let n: usize = shape.iter().product();
    match axis {
        Axis::Depth => {
            let len = *shape.last().unwrap();
            (len, 1, n / len)
        }
        Axis::Set => {
            let len = shape[0];
            let inner = n / len;
            (len, inner, inner)
        }
    }
}
