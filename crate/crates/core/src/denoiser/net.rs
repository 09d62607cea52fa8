//! Fixed U-Net graph: parameter layout, forward pass with activation cache
//! and the hand-derived reverse pass.

use super::ops::*;
use super::scalar::Scalar;
use super::{DenoiserConfig, TensorInfo};

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Up to 8 groups, but never fewer than two channels per group: with one
/// channel per group the normalization would cancel the per-channel time
/// embedding entirely.
fn groups_for(c: usize) -> usize {
    gcd(8, (c / 2).max(1))
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ResSpec {
    norm1: NormSpec,
    conv1: ConvSpec,
    emb: LinSpec,
    norm2: NormSpec,
    conv2: ConvSpec,
    skip: Option<ConvSpec>,
}

struct Builder {
    tensors: Vec<TensorInfo>,
    total: usize,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>) -> usize {
        let offset = self.total;
        self.total += shape.iter().product::<usize>();
        self.tensors.push(TensorInfo { name, shape, offset });
        offset
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> ConvSpec {
        let w = self.add(format!("{name}.weight"), vec![cout, cin, k, k]);
        let b = self.add(format!("{name}.bias"), vec![cout]);
        ConvSpec { w, b, cin, cout, k }
    }

    fn norm(&mut self, name: &str, c: usize) -> NormSpec {
        let gamma = self.add(format!("{name}.gamma"), vec![c]);
        let beta = self.add(format!("{name}.beta"), vec![c]);
        NormSpec { gamma, beta, c, groups: groups_for(c) }
    }

    fn linear(&mut self, name: &str, din: usize, dout: usize) -> LinSpec {
        let w = self.add(format!("{name}.weight"), vec![dout, din]);
        let b = self.add(format!("{name}.bias"), vec![dout]);
        LinSpec { w, b, din, dout }
    }

    fn res(&mut self, name: &str, cin: usize, cout: usize, e: usize) -> ResSpec {
        let norm1 = self.norm(&format!("{name}.norm1"), cin);
        let conv1 = self.conv(&format!("{name}.conv1"), cin, cout, 3);
        let emb = self.linear(&format!("{name}.emb"), e, cout);
        let norm2 = self.norm(&format!("{name}.norm2"), cout);
        let conv2 = self.conv(&format!("{name}.conv2"), cout, cout, 3);
        let skip = (cin != cout).then(|| self.conv(&format!("{name}.skip"), cin, cout, 1));
        ResSpec { norm1, conv1, emb, norm2, conv2, skip }
    }
}

pub(crate) struct Arch {
    pub tensors: Vec<TensorInfo>,
    pub total: usize,
    res: usize,
    embed: usize,
    time1: LinSpec,
    time2: LinSpec,
    class_table: usize,
    conv_in: ConvSpec,
    down: Vec<ResSpec>,
    mid: ResSpec,
    /// `(level, upsample conv, block)` ordered as executed (deepest first).
    up: Vec<(usize, ConvSpec, ResSpec)>,
    norm_out: NormSpec,
    conv_out: ConvSpec,
}

impl Arch {
    pub fn new(cfg: &DenoiserConfig) -> Self {
        let e = cfg.time_embed_dim;
        let levels = cfg.levels();
        let mut b = Builder { tensors: Vec::new(), total: 0 };
        let time1 = b.linear("time.lin1", e, e);
        let time2 = b.linear("time.lin2", e, e);
        let class_table = b.add("class_embed.table".into(), vec![cfg.num_classes + 1, e]);
        let conv_in = b.conv("conv_in", 3, cfg.channels(0), 3);
        let mut down = Vec::new();
        for l in 0..levels {
            let cin = if l == 0 { cfg.channels(0) } else { cfg.channels(l - 1) };
            down.push(b.res(&format!("down{l}"), cin, cfg.channels(l), e));
        }
        let cb = cfg.channels(levels - 1);
        let mid = b.res("mid", cb, cb, e);
        let mut up = Vec::new();
        for l in (0..levels - 1).rev() {
            let conv = b.conv(&format!("up{l}.conv"), cfg.channels(l + 1), cfg.channels(l), 3);
            let block = b.res(&format!("up{l}.block"), 2 * cfg.channels(l), cfg.channels(l), e);
            up.push((l, conv, block));
        }
        let norm_out = b.norm("out.norm", cfg.channels(0));
        let conv_out = b.conv("out.conv", cfg.channels(0), 3, 3);
        Self {
            tensors: b.tensors,
            total: b.total,
            res: cfg.texture_resolution,
            embed: e,
            time1,
            time2,
            class_table,
            conv_in,
            down,
            mid,
            up,
            norm_out,
            conv_out,
        }
    }
}

/// Standard transformer-style encoding: `[sin(t f_k)..., cos(t f_k)...]` with
/// `f_k = 10000^(-k / (E/2))`.
pub(crate) fn sinusoidal<S: Scalar>(t: &[usize], dim: usize) -> Vec<S> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(t.len() * dim);
    for &ti in t {
        let mut row = vec![S::zero(); dim];
        for k in 0..half {
            let freq = (-(10000f64.ln()) * k as f64 / half as f64).exp();
            let a = ti as f64 * freq;
            row[k] = S::lit(a.sin());
            row[half + k] = S::lit(a.cos());
        }
        out.extend(row);
    }
    out
}

pub(crate) struct ResCache<S> {
    x: Feat<S>,
    st1: NormStats<S>,
    n1: Feat<S>,
    a1: Feat<S>,
    h: Feat<S>,
    st2: NormStats<S>,
    n2: Feat<S>,
    a2: Feat<S>,
}

pub(crate) struct Cache<S> {
    n: usize,
    sin: Vec<S>,
    h1: Vec<S>,
    a1: Vec<S>,
    emb: Vec<S>,
    act_emb: Vec<S>,
    classes: Vec<usize>,
    x_in: Feat<S>,
    down: Vec<ResCache<S>>,
    mid: ResCache<S>,
    up: Vec<(Feat<S>, ResCache<S>)>,
    head_in: Feat<S>,
    st_out: NormStats<S>,
    n_out: Feat<S>,
    a_out: Feat<S>,
}

fn res_forward<S: Scalar>(p: &[S], spec: &ResSpec, x: Feat<S>, act_emb: &[S]) -> (Feat<S>, ResCache<S>) {
    let (n1, st1) = norm_forward(p, &spec.norm1, &x);
    let a1 = silu(&n1);
    let mut h = conv_forward(p, &spec.conv1, &a1);
    let e = linear_forward(p, &spec.emb, act_emb, x.n);
    add_channel_bias(&mut h, &e);
    let (n2, st2) = norm_forward(p, &spec.norm2, &h);
    let a2 = silu(&n2);
    let mut out = conv_forward(p, &spec.conv2, &a2);
    match &spec.skip {
        Some(s) => out.add_assign(&conv_forward(p, s, &x)),
        None => out.add_assign(&x),
    }
    (out, ResCache { x, st1, n1, a1, h, st2, n2, a2 })
}

/// Returns the input gradient; accumulates into `g` and `d_act_emb`.
fn res_backward<S: Scalar>(
    p: &[S],
    g: &mut [S],
    spec: &ResSpec,
    cache: ResCache<S>,
    act_emb: &[S],
    d_act_emb: &mut [S],
    dout: Feat<S>,
) -> Feat<S> {
    let mut dx = match &spec.skip {
        Some(s) => conv_backward(p, g, s, &cache.x, &dout, true).unwrap(),
        None => dout.clone(),
    };
    let da2 = conv_backward(p, g, &spec.conv2, &cache.a2, &dout, true).unwrap();
    drop(dout);
    let dn2 = silu_backward(&cache.n2, &da2);
    let dh = norm_backward(p, g, &spec.norm2, &cache.h, &cache.st2, &dn2);
    let de = channel_bias_backward(&dh);
    let dae = linear_backward(p, g, &spec.emb, act_emb, &de, cache.x.n);
    for (a, b) in d_act_emb.iter_mut().zip(&dae) {
        *a += *b;
    }
    let da1 = conv_backward(p, g, &spec.conv1, &cache.a1, &dh, true).unwrap();
    let dn1 = silu_backward(&cache.n1, &da1);
    let dxn = norm_backward(p, g, &spec.norm1, &cache.x, &cache.st1, &dn1);
    dx.add_assign(&dxn);
    dx
}

impl Arch {
    /// Runs the network on an `N x R x R x 3` batch; returns the prediction in
    /// the same layout and, if requested, the activations for `backward`.
    pub fn forward<S: Scalar>(
        &self,
        p: &[S],
        x: &[S],
        n: usize,
        t: &[usize],
        c: &[usize],
        keep: bool,
    ) -> (Vec<S>, Option<Cache<S>>) {
        let r = self.res;
        let e = self.embed;
        let sin = sinusoidal::<S>(t, e);
        let h1 = linear_forward(p, &self.time1, &sin, n);
        let a1 = silu_slice(&h1);
        let mut emb = linear_forward(p, &self.time2, &a1, n);
        for (i, &ci) in c.iter().enumerate() {
            let row = &p[self.class_table + ci * e..self.class_table + (ci + 1) * e];
            for (a, b) in emb[i * e..(i + 1) * e].iter_mut().zip(row) {
                *a += *b;
            }
        }
        let act_emb = silu_slice(&emb);

        let mut x_in = Feat::zeros(3, n, r, r);
        let plane = n * r * r;
        for (i, px) in x.chunks_exact(3).enumerate() {
            for ch in 0..3 {
                x_in.data[ch * plane + i] = px[ch];
            }
        }

        let mut cur = conv_forward(p, &self.conv_in, &x_in);
        let levels = self.down.len();
        let mut skips = Vec::with_capacity(levels);
        let mut down_caches = Vec::with_capacity(levels);
        for (l, spec) in self.down.iter().enumerate() {
            let (out, cache) = res_forward(p, spec, cur, &act_emb);
            down_caches.push(cache);
            if l + 1 < levels {
                cur = avg_pool2(&out);
                skips.push(out);
            } else {
                cur = out;
            }
        }
        let (mut cur, mid_cache) = res_forward(p, &self.mid, cur, &act_emb);
        let mut up_caches = Vec::with_capacity(self.up.len());
        for (l, conv, block) in &self.up {
            let u = upsample2(&cur);
            let uc = conv_forward(p, conv, &u);
            let cat = uc.concat(&skips[*l]);
            let (out, cache) = res_forward(p, block, cat, &act_emb);
            up_caches.push((u, cache));
            cur = out;
        }
        let (n_out, st_out) = norm_forward(p, &self.norm_out, &cur);
        let a_out = silu(&n_out);
        let y = conv_forward(p, &self.conv_out, &a_out);

        let mut out = vec![S::zero(); n * r * r * 3];
        for (i, px) in out.chunks_exact_mut(3).enumerate() {
            for ch in 0..3 {
                px[ch] = y.data[ch * plane + i];
            }
        }
        let cache = keep.then(|| Cache {
            n,
            sin,
            h1,
            a1,
            emb,
            act_emb,
            classes: c.to_vec(),
            x_in,
            down: down_caches,
            mid: mid_cache,
            up: up_caches,
            head_in: cur,
            st_out,
            n_out,
            a_out,
        });
        (out, cache)
    }

    /// Gradient of `sum(dout * output)` with respect to every parameter.
    pub fn backward<S: Scalar>(&self, p: &[S], cache: Cache<S>, dout: &[S]) -> Vec<S> {
        let mut g = vec![S::zero(); self.total];
        let n = cache.n;
        let r = self.res;
        let e = self.embed;
        let plane = n * r * r;
        let mut dy = Feat::zeros(3, n, r, r);
        for (i, px) in dout.chunks_exact(3).enumerate() {
            for ch in 0..3 {
                dy.data[ch * plane + i] = px[ch];
            }
        }
        let da = conv_backward(p, &mut g, &self.conv_out, &cache.a_out, &dy, true).unwrap();
        let dn = silu_backward(&cache.n_out, &da);
        let mut dcur = norm_backward(p, &mut g, &self.norm_out, &cache.head_in, &cache.st_out, &dn);

        let act_emb = &cache.act_emb;
        let mut d_act = vec![S::zero(); n * e];
        let levels = self.down.len();
        let mut dskips: Vec<Option<Feat<S>>> = (0..levels).map(|_| None).collect();
        for ((l, conv, block), (u, rc)) in self.up.iter().zip(cache.up).rev() {
            let dcat = res_backward(p, &mut g, block, rc, act_emb, &mut d_act, dcur);
            let (duc, dskip) = dcat.split(conv.cout);
            dskips[*l] = Some(dskip);
            let du = conv_backward(p, &mut g, conv, &u, &duc, true).unwrap();
            dcur = upsample2_backward(&du);
        }
        dcur = res_backward(p, &mut g, &self.mid, cache.mid, act_emb, &mut d_act, dcur);
        for (l, (spec, rc)) in self.down.iter().zip(cache.down).enumerate().rev() {
            let mut dr = if l + 1 < levels { avg_pool2_backward(&dcur) } else { dcur };
            if let Some(ds) = dskips[l].take() {
                dr.add_assign(&ds);
            }
            dcur = res_backward(p, &mut g, spec, rc, act_emb, &mut d_act, dr);
        }
        conv_backward(p, &mut g, &self.conv_in, &cache.x_in, &dcur, false);

        let demb = silu_backward_slice(&cache.emb, &d_act);
        for (i, &ci) in cache.classes.iter().enumerate() {
            let row = self.class_table + ci * e;
            for k in 0..e {
                g[row + k] += demb[i * e + k];
            }
        }
        let da1 = linear_backward(p, &mut g, &self.time2, &cache.a1, &demb, n);
        let dh1 = silu_backward_slice(&cache.h1, &da1);
        linear_backward(p, &mut g, &self.time1, &cache.sin, &dh1, n);
        g
    }
}
