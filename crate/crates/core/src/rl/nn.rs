//! Small dense networks with hand-written backpropagation. Every network keeps its weights in
//! one flat `Vec<f64>`; layers are views into it, so optimizers, checkpoints and gradient checks
//! work on plain slices.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Affine layer `y = x W + b` stored at `offset`: `W` (inputs × outputs, row-major) then `b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub offset: usize,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    fn alloc(len: &mut usize, inputs: usize, outputs: usize) -> Self {
        let d = Dense { offset: *len, inputs, outputs };
        *len += inputs * outputs + outputs;
        d
    }

    fn size(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }

    /// Uniform Xavier initialization scaled by `gain`, zero bias.
    fn init(&self, p: &mut [f64], rng: &mut ChaCha8Rng, gain: f64) {
        let a = gain * (6.0 / (self.inputs + self.outputs) as f64).sqrt();
        let n = self.inputs * self.outputs;
        for w in &mut p[self.offset..self.offset + n] {
            *w = rng.random_range(-a..=a);
        }
        for b in &mut p[self.offset + n..self.offset + self.size()] {
            *b = 0.0;
        }
    }

    fn weights<'a>(&self, p: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.inputs, self.outputs), &p[self.offset..self.offset + self.inputs * self.outputs]).expect("layout")
    }

    fn bias<'a>(&self, p: &'a [f64]) -> ArrayView1<'a, f64> {
        let n = self.offset + self.inputs * self.outputs;
        ArrayView1::from(&p[n..n + self.outputs])
    }

    pub fn forward(&self, p: &[f64], x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weights(p));
        y += &self.bias(p);
        y
    }

    /// Accumulates parameter gradients into `g` and returns the input gradient.
    pub fn backward(&self, p: &[f64], g: &mut [f64], x: ArrayView2<f64>, gy: ArrayView2<f64>) -> Array2<f64> {
        let n = self.inputs * self.outputs;
        let (gw, gb) = g[self.offset..self.offset + self.size()].split_at_mut(n);
        let mut gw = ArrayViewMut2::from_shape((self.inputs, self.outputs), gw).expect("layout");
        general_mat_mul(1.0, &x.t(), &gy, 1.0, &mut gw);
        for (b, s) in gb.iter_mut().zip(gy.sum_axis(Axis(0))) {
            *b += s;
        }
        gy.dot(&self.weights(p).t())
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Stack of dense layers with ELU between them (and after the last one if `activate_last`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activate_last: bool,
}

/// Layer inputs and pre-activations from a forward pass.
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

impl Mlp {
    fn alloc(len: &mut usize, sizes: &[usize], activate_last: bool) -> Self {
        let layers = sizes.windows(2).map(|w| Dense::alloc(len, w[0], w[1])).collect();
        Mlp { layers, activate_last }
    }

    fn init(&self, p: &mut [f64], rng: &mut ChaCha8Rng, last_gain: f64) {
        let n = self.layers.len();
        for (i, l) in self.layers.iter().enumerate() {
            l.init(p, rng, if i + 1 == n { last_gain } else { 1.0 });
        }
    }

    fn activated(&self, i: usize) -> bool {
        i + 1 < self.layers.len() || self.activate_last
    }

    pub fn forward(&self, p: &[f64], x: ArrayView2<f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(p, h.view());
            if self.activated(i) {
                h.mapv_inplace(elu);
            }
        }
        h
    }

    pub fn forward_cached(&self, p: &[f64], x: ArrayView2<f64>) -> (Array2<f64>, MlpCache) {
        let mut cache = MlpCache { inputs: Vec::with_capacity(self.layers.len()), pre: Vec::with_capacity(self.layers.len()) };
        let mut h = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            let z = l.forward(p, h.view());
            cache.inputs.push(h);
            h = if self.activated(i) { z.mapv(elu) } else { z.clone() };
            cache.pre.push(z);
        }
        (h, cache)
    }

    pub fn backward(&self, p: &[f64], g: &mut [f64], cache: &MlpCache, gy: Array2<f64>) -> Array2<f64> {
        let mut gh = gy;
        for (i, l) in self.layers.iter().enumerate().rev() {
            if self.activated(i) {
                gh.zip_mut_with(&cache.pre[i], |g, &z| *g *= elu_grad(z));
            }
            gh = l.backward(p, g, cache.inputs[i].view(), gh.view());
        }
        gh
    }
}

/// One residual multi-head self-attention layer over a short token sequence, with a learned
/// positional embedding added to the input tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attention {
    pub tokens: usize,
    pub width: usize,
    pub heads: usize,
    pub position: usize,
    pub q: Dense,
    pub k: Dense,
    pub v: Dense,
    pub o: Dense,
}

pub struct AttentionCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Attention weights `[batch, head, query, key]`.
    weights: ndarray::Array4<f64>,
    ctx: Array2<f64>,
}

impl Attention {
    fn alloc(len: &mut usize, tokens: usize, width: usize, heads: usize) -> Self {
        let position = *len;
        *len += tokens * width;
        Attention {
            tokens,
            width,
            heads,
            position,
            q: Dense::alloc(len, width, width),
            k: Dense::alloc(len, width, width),
            v: Dense::alloc(len, width, width),
            o: Dense::alloc(len, width, width),
        }
    }

    fn init(&self, p: &mut [f64], rng: &mut ChaCha8Rng) {
        for x in &mut p[self.position..self.position + self.tokens * self.width] {
            *x = rng.random_range(-0.1..=0.1);
        }
        for d in [&self.q, &self.k, &self.v, &self.o] {
            d.init(p, rng, 1.0);
        }
    }

    /// `x` is `(batch, tokens × width)` with tokens contiguous; the output has the same layout.
    pub fn forward_cached(&self, p: &[f64], x: ArrayView2<f64>) -> (Array2<f64>, AttentionCache) {
        let (b, t, e, nh) = (x.nrows(), self.tokens, self.width, self.heads);
        let d = e / nh;
        let scale = 1.0 / (d as f64).sqrt();
        let pos = ArrayView1::from(&p[self.position..self.position + t * e]);
        let mut xp = x.to_owned();
        xp += &pos;
        let flat = xp.into_shape_with_order((b * t, e)).expect("contiguous");
        let q = self.q.forward(p, flat.view());
        let k = self.k.forward(p, flat.view());
        let v = self.v.forward(p, flat.view());
        let mut weights = ndarray::Array4::zeros((b, nh, t, t));
        let mut ctx = Array2::zeros((b * t, e));
        for bi in 0..b {
            for h in 0..nh {
                let (c0, c1) = (h * d, (h + 1) * d);
                for i in 0..t {
                    let qi = q.slice(s![bi * t + i, c0..c1]);
                    let mut row: Vec<f64> = (0..t).map(|j| qi.dot(&k.slice(s![bi * t + j, c0..c1])) * scale).collect();
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for r in row.iter_mut() {
                        *r = (*r - m).exp();
                        sum += *r;
                    }
                    for (j, r) in row.iter().enumerate() {
                        let a = r / sum;
                        weights[[bi, h, i, j]] = a;
                        let vj = v.slice(s![bi * t + j, c0..c1]);
                        let mut c = ctx.slice_mut(s![bi * t + i, c0..c1]);
                        c.scaled_add(a, &vj);
                    }
                }
            }
        }
        let o = self.o.forward(p, ctx.view());
        let z = (&flat + &o).into_shape_with_order((b, t * e)).expect("contiguous");
        (z, AttentionCache { x: flat, q, k, v, weights, ctx })
    }

    pub fn backward(&self, p: &[f64], g: &mut [f64], cache: &AttentionCache, gz: Array2<f64>) -> Array2<f64> {
        let (t, e, nh) = (self.tokens, self.width, self.heads);
        let b = gz.nrows();
        let d = e / nh;
        let scale = 1.0 / (d as f64).sqrt();
        let gz = gz.into_shape_with_order((b * t, e)).expect("contiguous");
        let gctx = self.o.backward(p, g, cache.ctx.view(), gz.view());
        let mut gq = Array2::zeros((b * t, e));
        let mut gk = Array2::zeros((b * t, e));
        let mut gv = Array2::zeros((b * t, e));
        for bi in 0..b {
            for h in 0..nh {
                let (c0, c1) = (h * d, (h + 1) * d);
                for i in 0..t {
                    let gc = gctx.slice(s![bi * t + i, c0..c1]);
                    let ga: Vec<f64> = (0..t).map(|j| gc.dot(&cache.v.slice(s![bi * t + j, c0..c1]))).collect();
                    let dot: f64 = (0..t).map(|j| cache.weights[[bi, h, i, j]] * ga[j]).sum();
                    for j in 0..t {
                        let a = cache.weights[[bi, h, i, j]];
                        gv.slice_mut(s![bi * t + j, c0..c1]).scaled_add(a, &gc);
                        let gs = a * (ga[j] - dot) * scale;
                        let kj = cache.k.slice(s![bi * t + j, c0..c1]).to_owned();
                        gq.slice_mut(s![bi * t + i, c0..c1]).scaled_add(gs, &kj);
                        let qi = cache.q.slice(s![bi * t + i, c0..c1]).to_owned();
                        gk.slice_mut(s![bi * t + j, c0..c1]).scaled_add(gs, &qi);
                    }
                }
            }
        }
        let mut gx = gz;
        gx += &self.q.backward(p, g, cache.x.view(), gq.view());
        gx += &self.k.backward(p, g, cache.x.view(), gk.view());
        gx += &self.v.backward(p, g, cache.x.view(), gv.view());
        let gx = gx.into_shape_with_order((b, t * e)).expect("contiguous");
        for (gp, s) in g[self.position..self.position + t * e].iter_mut().zip(gx.sum_axis(Axis(0))) {
            *gp += s;
        }
        gx
    }
}

/// Widths and depths of the actor and critic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicySpec {
    pub encoder_width: usize,
    pub encoder_layers: usize,
    pub attention_layers: usize,
    pub heads: usize,
    pub head_width: usize,
    pub head_layers: usize,
    pub critic_width: usize,
    pub critic_layers: usize,
    pub log_std_init: f64,
}

impl Default for PolicySpec {
    fn default() -> Self {
        PolicySpec {
            encoder_width: 256,
            encoder_layers: 2,
            attention_layers: 1,
            heads: 4,
            head_width: 1024,
            head_layers: 3,
            critic_width: 1024,
            critic_layers: 4,
            log_std_init: -1.0,
        }
    }
}

impl PolicySpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.encoder_width == 0 || self.encoder_layers == 0 || self.head_width == 0 || self.critic_width == 0 || self.critic_layers == 0 {
            return Err("network widths and depths must be positive".into());
        }
        if self.heads == 0 || self.encoder_width % self.heads != 0 {
            return Err(format!("encoder width {} is not divisible by {} heads", self.encoder_width, self.heads));
        }
        Ok(())
    }
}

/// Per-group encoders, attention fusion over the encoded tokens and an MLP head emitting the
/// Gaussian mean; the state-independent log-std sits at the end of the parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub encoders: Vec<Mlp>,
    pub attention: Vec<Attention>,
    pub head: Mlp,
    pub log_std: usize,
    pub actions: usize,
    pub params: Vec<f64>,
}

pub struct ActorCache {
    encoders: Vec<MlpCache>,
    attention: Vec<AttentionCache>,
    head: MlpCache,
}

impl Actor {
    pub fn new(spec: &PolicySpec, inputs: &[usize], actions: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut len = 0;
        let e = spec.encoder_width;
        let encoders: Vec<Mlp> = inputs
            .iter()
            .map(|&n| {
                let mut sizes = vec![n];
                sizes.extend(std::iter::repeat_n(e, spec.encoder_layers));
                Mlp::alloc(&mut len, &sizes, true)
            })
            .collect();
        let attention: Vec<Attention> = (0..spec.attention_layers).map(|_| Attention::alloc(&mut len, inputs.len(), e, spec.heads)).collect();
        let mut sizes = vec![inputs.len() * e];
        sizes.extend(std::iter::repeat_n(spec.head_width, spec.head_layers));
        sizes.push(actions);
        let head = Mlp::alloc(&mut len, &sizes, false);
        let log_std = len;
        len += actions;
        let mut params = vec![0.0; len];
        for enc in &encoders {
            enc.init(&mut params, rng, 1.0);
        }
        for a in &attention {
            a.init(&mut params, rng);
        }
        head.init(&mut params, rng, 0.01);
        params[log_std..].fill(spec.log_std_init);
        Actor { encoders, attention, head, log_std, actions, params }
    }

    pub fn log_std(&self) -> &[f64] {
        &self.params[self.log_std..]
    }

    pub fn forward(&self, groups: &[ArrayView2<f64>]) -> Array2<f64> {
        self.forward_cached(groups).0
    }

    pub fn forward_cached(&self, groups: &[ArrayView2<f64>]) -> (Array2<f64>, ActorCache) {
        let p = &self.params;
        let b = groups[0].nrows();
        let e = self.encoders[0].layers.last().expect("encoder layer").outputs;
        let mut tokens = Array2::zeros((b, groups.len() * e));
        let mut enc_caches = Vec::with_capacity(groups.len());
        for (i, (enc, x)) in self.encoders.iter().zip(groups).enumerate() {
            let (y, c) = enc.forward_cached(p, x.view());
            tokens.slice_mut(s![.., i * e..(i + 1) * e]).assign(&y);
            enc_caches.push(c);
        }
        let mut att_caches = Vec::with_capacity(self.attention.len());
        for a in &self.attention {
            let (z, c) = a.forward_cached(p, tokens.view());
            tokens = z;
            att_caches.push(c);
        }
        let (mu, head) = self.head.forward_cached(p, tokens.view());
        (mu, ActorCache { encoders: enc_caches, attention: att_caches, head })
    }

    /// Backpropagates `gmu` into `g` (same layout as `params`); the log-std slots are untouched.
    pub fn backward(&self, g: &mut [f64], cache: &ActorCache, gmu: Array2<f64>) {
        let p = &self.params;
        let e = self.encoders[0].layers.last().expect("encoder layer").outputs;
        let mut gt = self.head.backward(p, g, &cache.head, gmu);
        for (a, c) in self.attention.iter().zip(&cache.attention).rev() {
            gt = a.backward(p, g, c, gt);
        }
        for (i, (enc, c)) in self.encoders.iter().zip(&cache.encoders).enumerate() {
            enc.backward(p, g, c, gt.slice(s![.., i * e..(i + 1) * e]).to_owned());
        }
    }
}

/// Value MLP over the concatenated input groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Critic {
    pub mlp: Mlp,
    pub params: Vec<f64>,
}

impl Critic {
    pub fn new(spec: &PolicySpec, inputs: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut len = 0;
        let mut sizes = vec![inputs.iter().sum()];
        sizes.extend(std::iter::repeat_n(spec.critic_width, spec.critic_layers));
        sizes.push(1);
        let mlp = Mlp::alloc(&mut len, &sizes, false);
        let mut params = vec![0.0; len];
        mlp.init(&mut params, rng, 1.0);
        Critic { mlp, params }
    }

    pub fn forward(&self, groups: &[ArrayView2<f64>]) -> Array1<f64> {
        self.mlp.forward(&self.params, concat(groups).view()).column(0).to_owned()
    }

    pub fn forward_cached(&self, groups: &[ArrayView2<f64>]) -> (Array1<f64>, MlpCache) {
        let (v, c) = self.mlp.forward_cached(&self.params, concat(groups).view());
        (v.column(0).to_owned(), c)
    }

    pub fn backward(&self, g: &mut [f64], cache: &MlpCache, gv: &Array1<f64>) {
        let gy = gv.view().insert_axis(Axis(1)).to_owned();
        self.mlp.backward(&self.params, g, cache, gy);
    }
}

pub fn concat(groups: &[ArrayView2<f64>]) -> Array2<f64> {
    ndarray::concatenate(Axis(1), groups).expect("groups share the batch dimension")
}

/// Adam over a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, step: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.epsilon);
        }
    }
}

/// Rescales `g` so its Euclidean norm is at most `max`; returns the norm before clipping.
pub fn clip_grad_norm(g: &mut [f64], max: f64) -> f64 {
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > max && norm > 0.0 {
        let s = max / norm;
        g.iter_mut().for_each(|x| *x *= s);
    }
    norm
}

/// Running mean and variance (parallel Welford merge) used to whiten observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub count: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(dim: usize) -> Self {
        RunningStats { count: 0.0, mean: vec![0.0; dim], var: vec![1.0; dim] }
    }

    pub fn update(&mut self, batch: ArrayView2<f64>) {
        let n = batch.nrows() as f64;
        if n == 0.0 {
            return;
        }
        let mean = batch.mean_axis(Axis(0)).expect("nonempty");
        let var = batch.var_axis(Axis(0), 0.0);
        let total = self.count + n;
        for i in 0..self.mean.len() {
            let delta = mean[i] - self.mean[i];
            let m2 = self.var[i] * self.count + var[i] * n + delta * delta * self.count * n / total;
            self.mean[i] += delta * n / total;
            self.var[i] = m2 / total;
        }
        self.count = total;
    }

    /// `(x − mean) / sqrt(var + 1e-8)`, clipped to ±10.
    pub fn normalize(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for (i, v) in row.iter_mut().enumerate() {
                *v = ((*v - self.mean[i]) / (self.var[i] + 1e-8).sqrt()).clamp(-10.0, 10.0);
            }
        }
        out
    }
}

/// Stacks per-sample feature groups into one array per group.
pub fn stack_rows(rows: &[&[f64]]) -> Array2<f64> {
    let cols = rows.first().map_or(0, |r| r.len());
    let mut out = Array2::zeros((rows.len(), cols));
    for (mut dst, src) in out.rows_mut().into_iter().zip(rows) {
        dst.assign(&ArrayView1::from(*src));
    }
    out
}
