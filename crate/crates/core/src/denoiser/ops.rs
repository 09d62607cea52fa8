//! Layer primitives with hand-written backward passes.
//!
//! Activations are stored channel-major (`C x N x H x W`), which turns a
//! convolution over the whole batch into one GEMM and a channel concat into a
//! buffer append.

use super::scalar::{matmul, Scalar};

pub(crate) const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub(crate) struct Feat<S> {
    pub c: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Feat<S> {
    pub fn zeros(c: usize, n: usize, h: usize, w: usize) -> Self {
        Self { c, n, h, w, data: vec![S::zero(); c * n * h * w] }
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self::zeros(other.c, other.n, other.h, other.w)
    }

    /// Elements per channel.
    pub fn plane(&self) -> usize {
        self.n * self.h * self.w
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    /// Concatenate along channels.
    pub fn concat(&self, other: &Self) -> Self {
        debug_assert_eq!((self.n, self.h, self.w), (other.n, other.h, other.w));
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Self { c: self.c + other.c, n: self.n, h: self.h, w: self.w, data }
    }

    /// Split along channels at `c0`.
    pub fn split(self, c0: usize) -> (Self, Self) {
        let at = c0 * self.plane();
        let mut first = self.data;
        let second = first.split_off(at);
        let (n, h, w, c) = (self.n, self.h, self.w, self.c);
        (Self { c: c0, n, h, w, data: first }, Self { c: c - c0, n, h, w, data: second })
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvSpec {
    pub w: usize,
    pub b: usize,
    pub cin: usize,
    pub cout: usize,
    /// Kernel size: 1 or 3 (padding `k / 2`).
    pub k: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct NormSpec {
    pub gamma: usize,
    pub beta: usize,
    pub c: usize,
    pub groups: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LinSpec {
    pub w: usize,
    pub b: usize,
    pub din: usize,
    pub dout: usize,
}

fn im2col3<S: Scalar>(x: &Feat<S>) -> Vec<S> {
    let (h, w) = (x.h, x.w);
    let p = x.plane();
    let hw = h * w;
    let mut cols = vec![S::zero(); x.c * 9 * p];
    for ci in 0..x.c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = ci * 9 + ky * 3 + kx;
                for n in 0..x.n {
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let dst0 = row * p + n * hw + y * w;
                        let src0 = ci * p + n * hw + sy as usize * w;
                        let dst = &mut cols[dst0..dst0 + w];
                        let src = &x.data[src0..src0 + w];
                        match kx {
                            0 => dst[1..].copy_from_slice(&src[..w - 1]),
                            1 => dst.copy_from_slice(src),
                            _ => dst[..w - 1].copy_from_slice(&src[1..]),
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im3<S: Scalar>(cols: &[S], c: usize, n: usize, h: usize, w: usize) -> Feat<S> {
    let mut out = Feat::zeros(c, n, h, w);
    let p = out.plane();
    let hw = h * w;
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = ci * 9 + ky * 3 + kx;
                for b in 0..n {
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src0 = row * p + b * hw + y * w;
                        let dst0 = ci * p + b * hw + sy as usize * w;
                        let src = &cols[src0..src0 + w];
                        let dst = &mut out.data[dst0..dst0 + w];
                        let (d, s) = match kx {
                            0 => (&mut dst[..w - 1], &src[1..]),
                            1 => (&mut dst[..], src),
                            _ => (&mut dst[1..], &src[..w - 1]),
                        };
                        for (a, v) in d.iter_mut().zip(s) {
                            *a += *v;
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv_forward<S: Scalar>(p: &[S], spec: &ConvSpec, x: &Feat<S>) -> Feat<S> {
    debug_assert_eq!(x.c, spec.cin);
    let mut out = Feat::zeros(spec.cout, x.n, x.h, x.w);
    let plane = x.plane();
    for (o, chunk) in out.data.chunks_mut(plane).enumerate() {
        chunk.fill(p[spec.b + o]);
    }
    let kk = spec.cin * spec.k * spec.k;
    let weight = &p[spec.w..spec.w + spec.cout * kk];
    if spec.k == 1 {
        matmul(spec.cout, kk, plane, weight, false, &x.data, false, S::one(), &mut out.data);
    } else {
        let cols = im2col3(x);
        matmul(spec.cout, kk, plane, weight, false, &cols, false, S::one(), &mut out.data);
    }
    out
}

/// Accumulates weight/bias gradients into `g` and returns the input gradient
/// when `need_dx` is set.
pub(crate) fn conv_backward<S: Scalar>(
    p: &[S],
    g: &mut [S],
    spec: &ConvSpec,
    x: &Feat<S>,
    dy: &Feat<S>,
    need_dx: bool,
) -> Option<Feat<S>> {
    let plane = x.plane();
    let kk = spec.cin * spec.k * spec.k;
    for (o, chunk) in dy.data.chunks(plane).enumerate() {
        let mut s = S::zero();
        for v in chunk {
            s += *v;
        }
        g[spec.b + o] += s;
    }
    let cols_owned;
    let cols: &[S] = if spec.k == 1 {
        &x.data
    } else {
        cols_owned = im2col3(x);
        &cols_owned
    };
    let gw = &mut g[spec.w..spec.w + spec.cout * kk];
    matmul(spec.cout, plane, kk, &dy.data, false, cols, true, S::one(), gw);
    if !need_dx {
        return None;
    }
    let weight = &p[spec.w..spec.w + spec.cout * kk];
    let mut dcols = vec![S::zero(); kk * plane];
    matmul(kk, spec.cout, plane, weight, true, &dy.data, false, S::zero(), &mut dcols);
    if spec.k == 1 {
        Some(Feat { c: x.c, n: x.n, h: x.h, w: x.w, data: dcols })
    } else {
        Some(col2im3(&dcols, x.c, x.n, x.h, x.w))
    }
}

/// Per-(sample, group) mean and reciprocal standard deviation.
#[derive(Debug, Clone)]
pub(crate) struct NormStats<S> {
    pub mean: Vec<S>,
    pub rstd: Vec<S>,
}

pub(crate) fn norm_forward<S: Scalar>(p: &[S], spec: &NormSpec, x: &Feat<S>) -> (Feat<S>, NormStats<S>) {
    let cg = spec.c / spec.groups;
    let hw = x.h * x.w;
    let plane = x.plane();
    let count = S::from_usize(cg * hw).unwrap();
    let eps = S::lit(NORM_EPS);
    let mut out = Feat::zeros_like(x);
    let mut stats = NormStats { mean: Vec::new(), rstd: Vec::new() };
    for n in 0..x.n {
        for g in 0..spec.groups {
            let mut sum = S::zero();
            for c in g * cg..(g + 1) * cg {
                for v in &x.data[c * plane + n * hw..c * plane + (n + 1) * hw] {
                    sum += *v;
                }
            }
            let mean = sum / count;
            let mut var = S::zero();
            for c in g * cg..(g + 1) * cg {
                for v in &x.data[c * plane + n * hw..c * plane + (n + 1) * hw] {
                    let d = *v - mean;
                    var += d * d;
                }
            }
            let rstd = S::one() / (var / count + eps).sqrt();
            for c in g * cg..(g + 1) * cg {
                let gamma = p[spec.gamma + c];
                let beta = p[spec.beta + c];
                let range = c * plane + n * hw..c * plane + (n + 1) * hw;
                for (o, v) in out.data[range.clone()].iter_mut().zip(&x.data[range]) {
                    *o = (*v - mean) * rstd * gamma + beta;
                }
            }
            stats.mean.push(mean);
            stats.rstd.push(rstd);
        }
    }
    (out, stats)
}

pub(crate) fn norm_backward<S: Scalar>(
    p: &[S],
    g: &mut [S],
    spec: &NormSpec,
    x: &Feat<S>,
    stats: &NormStats<S>,
    dy: &Feat<S>,
) -> Feat<S> {
    let cg = spec.c / spec.groups;
    let hw = x.h * x.w;
    let plane = x.plane();
    let count = S::from_usize(cg * hw).unwrap();
    let mut dx = Feat::zeros_like(x);
    for n in 0..x.n {
        for gi in 0..spec.groups {
            let mean = stats.mean[n * spec.groups + gi];
            let rstd = stats.rstd[n * spec.groups + gi];
            let mut m1 = S::zero();
            let mut m2 = S::zero();
            for c in gi * cg..(gi + 1) * cg {
                let gamma = p[spec.gamma + c];
                let range = c * plane + n * hw..c * plane + (n + 1) * hw;
                let mut dgamma = S::zero();
                let mut dbeta = S::zero();
                for (v, d) in x.data[range.clone()].iter().zip(&dy.data[range]) {
                    let xhat = (*v - mean) * rstd;
                    dgamma += *d * xhat;
                    dbeta += *d;
                    let dxhat = *d * gamma;
                    m1 += dxhat;
                    m2 += dxhat * xhat;
                }
                g[spec.gamma + c] += dgamma;
                g[spec.beta + c] += dbeta;
            }
            m1 = m1 / count;
            m2 = m2 / count;
            for c in gi * cg..(gi + 1) * cg {
                let gamma = p[spec.gamma + c];
                let range = c * plane + n * hw..c * plane + (n + 1) * hw;
                for ((o, v), d) in dx.data[range.clone()].iter_mut().zip(&x.data[range.clone()]).zip(&dy.data[range]) {
                    let xhat = (*v - mean) * rstd;
                    *o = rstd * (*d * gamma - m1 - xhat * m2);
                }
            }
        }
    }
    dx
}

#[inline]
fn sigmoid<S: Scalar>(v: S) -> S {
    S::one() / (S::one() + (-v).exp())
}

pub(crate) fn silu_slice<S: Scalar>(x: &[S]) -> Vec<S> {
    x.iter().map(|&v| v * sigmoid(v)).collect()
}

/// Gradient of SiLU given its input `x` and the upstream gradient.
pub(crate) fn silu_backward_slice<S: Scalar>(x: &[S], dy: &[S]) -> Vec<S> {
    x.iter()
        .zip(dy)
        .map(|(&v, &d)| {
            let s = sigmoid(v);
            d * s * (S::one() + v * (S::one() - s))
        })
        .collect()
}

pub(crate) fn silu<S: Scalar>(x: &Feat<S>) -> Feat<S> {
    Feat { c: x.c, n: x.n, h: x.h, w: x.w, data: silu_slice(&x.data) }
}

pub(crate) fn silu_backward<S: Scalar>(x: &Feat<S>, dy: &Feat<S>) -> Feat<S> {
    Feat { c: x.c, n: x.n, h: x.h, w: x.w, data: silu_backward_slice(&x.data, &dy.data) }
}

/// `y (n x dout) = x (n x din) W^T + b` with `W` stored `dout x din`.
pub(crate) fn linear_forward<S: Scalar>(p: &[S], spec: &LinSpec, x: &[S], n: usize) -> Vec<S> {
    let mut y = Vec::with_capacity(n * spec.dout);
    for _ in 0..n {
        y.extend_from_slice(&p[spec.b..spec.b + spec.dout]);
    }
    let w = &p[spec.w..spec.w + spec.dout * spec.din];
    matmul(n, spec.din, spec.dout, x, false, w, true, S::one(), &mut y);
    y
}

pub(crate) fn linear_backward<S: Scalar>(
    p: &[S],
    g: &mut [S],
    spec: &LinSpec,
    x: &[S],
    dy: &[S],
    n: usize,
) -> Vec<S> {
    for row in dy.chunks(spec.dout) {
        for (gb, d) in g[spec.b..spec.b + spec.dout].iter_mut().zip(row) {
            *gb += *d;
        }
    }
    let gw = &mut g[spec.w..spec.w + spec.dout * spec.din];
    matmul(spec.dout, n, spec.din, dy, true, x, false, S::one(), gw);
    let w = &p[spec.w..spec.w + spec.dout * spec.din];
    let mut dx = vec![S::zero(); n * spec.din];
    matmul(n, spec.dout, spec.din, dy, false, w, false, S::zero(), &mut dx);
    dx
}

/// Adds a per-(sample, channel) vector `e` (`n x c`) over spatial positions.
pub(crate) fn add_channel_bias<S: Scalar>(x: &mut Feat<S>, e: &[S]) {
    let hw = x.h * x.w;
    let plane = x.plane();
    for c in 0..x.c {
        for n in 0..x.n {
            let v = e[n * x.c + c];
            for a in &mut x.data[c * plane + n * hw..c * plane + (n + 1) * hw] {
                *a += v;
            }
        }
    }
}

pub(crate) fn channel_bias_backward<S: Scalar>(dy: &Feat<S>) -> Vec<S> {
    let hw = dy.h * dy.w;
    let plane = dy.plane();
    let mut de = vec![S::zero(); dy.n * dy.c];
    for c in 0..dy.c {
        for n in 0..dy.n {
            let mut s = S::zero();
            for v in &dy.data[c * plane + n * hw..c * plane + (n + 1) * hw] {
                s += *v;
            }
            de[n * dy.c + c] = s;
        }
    }
    de
}

pub(crate) fn avg_pool2<S: Scalar>(x: &Feat<S>) -> Feat<S> {
    let (h2, w2) = (x.h / 2, x.w / 2);
    let mut out = Feat::zeros(x.c, x.n, h2, w2);
    let quarter = S::lit(0.25);
    for cn in 0..x.c * x.n {
        let src = &x.data[cn * x.h * x.w..(cn + 1) * x.h * x.w];
        let dst = &mut out.data[cn * h2 * w2..(cn + 1) * h2 * w2];
        for y in 0..h2 {
            for xx in 0..w2 {
                let i = 2 * y * x.w + 2 * xx;
                dst[y * w2 + xx] = (src[i] + src[i + 1] + src[i + x.w] + src[i + x.w + 1]) * quarter;
            }
        }
    }
    out
}

pub(crate) fn avg_pool2_backward<S: Scalar>(dy: &Feat<S>) -> Feat<S> {
    let (h, w) = (dy.h * 2, dy.w * 2);
    let mut dx = Feat::zeros(dy.c, dy.n, h, w);
    let quarter = S::lit(0.25);
    for cn in 0..dy.c * dy.n {
        let src = &dy.data[cn * dy.h * dy.w..(cn + 1) * dy.h * dy.w];
        let dst = &mut dx.data[cn * h * w..(cn + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                dst[y * w + xx] = src[(y / 2) * dy.w + xx / 2] * quarter;
            }
        }
    }
    dx
}

pub(crate) fn upsample2<S: Scalar>(x: &Feat<S>) -> Feat<S> {
    let (h, w) = (x.h * 2, x.w * 2);
    let mut out = Feat::zeros(x.c, x.n, h, w);
    for cn in 0..x.c * x.n {
        let src = &x.data[cn * x.h * x.w..(cn + 1) * x.h * x.w];
        let dst = &mut out.data[cn * h * w..(cn + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                dst[y * w + xx] = src[(y / 2) * x.w + xx / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward<S: Scalar>(dy: &Feat<S>) -> Feat<S> {
    let (h2, w2) = (dy.h / 2, dy.w / 2);
    let mut dx = Feat::zeros(dy.c, dy.n, h2, w2);
    for cn in 0..dy.c * dy.n {
        let src = &dy.data[cn * dy.h * dy.w..(cn + 1) * dy.h * dy.w];
        let dst = &mut dx.data[cn * h2 * w2..(cn + 1) * h2 * w2];
        for y in 0..dy.h {
            for xx in 0..dy.w {
                dst[(y / 2) * w2 + xx / 2] += src[y * dy.w + xx];
            }
        }
    }
    dx
}
