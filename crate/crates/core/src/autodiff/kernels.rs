//! Raw slice kernels behind the graph operations.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub k: usize,
    pub cout: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// Patch length, k·k·c_in.
    pub fn patch(&self) -> usize {
        self.k * self.k * self.cin
    }

    pub fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

/// `c = a·b` (or `c += a·b` when `accumulate`), with `a` m×k and `b` k×n
/// after the optional transposes. All buffers row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_trans: bool,
    b: &[f32],
    b_trans: bool,
    c: &mut [f32],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn im2col(input: &[f32], g: &ConvGeom) -> Vec<f32> {
    let patch = g.patch();
    let mut cols = vec![0.0f32; g.positions() * patch];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let row = &mut cols[(oy * g.ow + ox) * patch..][..patch];
            for ky in 0..g.k {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                for kx in 0..g.k {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    let src = (iy as usize * g.w + ix as usize) * g.cin;
                    let dst = (ky * g.k + kx) * g.cin;
                    row[dst..dst + g.cin].copy_from_slice(&input[src..src + g.cin]);
                }
            }
        }
    }
    cols
}

pub(crate) fn col2im_add(cols: &[f32], g: &ConvGeom, out: &mut [f32]) {
    let patch = g.patch();
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let row = &cols[(oy * g.ow + ox) * patch..][..patch];
            for ky in 0..g.k {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                for kx in 0..g.k {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    let dst = (iy as usize * g.w + ix as usize) * g.cin;
                    let src = (ky * g.k + kx) * g.cin;
                    for (o, v) in out[dst..dst + g.cin].iter_mut().zip(&row[src..src + g.cin]) {
                        *o += v;
                    }
                }
            }
        }
    }
}

/// Max-subtracted softmax over `len` entries spaced `stride` apart.
pub(crate) fn softmax_strided(x: &[f32], y: &mut [f32], offset: usize, len: usize, stride: usize) {
    let mut max = f32::NEG_INFINITY;
    for i in 0..len {
        max = max.max(x[offset + i * stride]);
    }
    let mut sum = 0.0f32;
    for i in 0..len {
        let e = (x[offset + i * stride] - max).exp();
        y[offset + i * stride] = e;
        sum += e;
    }
    let inv = 1.0 / sum;
    for i in 0..len {
        y[offset + i * stride] *= inv;
    }
}

pub(crate) fn softmax_backward_strided(
    y: &[f32],
    dy: &[f32],
    dx: &mut [f32],
    offset: usize,
    len: usize,
    stride: usize,
) {
    let mut dot = 0.0f32;
    for i in 0..len {
        let j = offset + i * stride;
        dot += y[j] * dy[j];
    }
    for i in 0..len {
        let j = offset + i * stride;
        dx[j] += y[j] * (dy[j] - dot);
    }
}
