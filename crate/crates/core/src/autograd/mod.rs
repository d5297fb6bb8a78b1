//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records each operation of one forward pass. Losses are
//! evaluated outside the tape and hand their analytic gradients back as
//! seeds to [`Tape::backward`], which returns per-parameter gradients.

pub mod conv;
mod direct;

pub use conv::ConvGeom;

use crate::nn::{ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param(ParamId),
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Add(Var, Var),
    Gate {
        att: Var,
        ft: Var,
    },
    Relu(Var),
    Sigmoid(Var),
    AvgPool {
        x: Var,
        k: usize,
    },
    GlobalAvgPool(Var),
    Upsample {
        x: Var,
        factor: usize,
    },
    Concat(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Softmax(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Running-statistic update produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStatUpdate<T> {
    pub mean_id: ParamId,
    pub var_id: ParamId,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Per-parameter gradients, indexed like the owning [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn new(len: usize) -> Self {
        Self {
            grads: (0..len).map(|_| None).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    fn accumulate(&mut self, id: ParamId, g: Tensor<T>) {
        match &mut self.grads[id.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.all_finite())
    }
}

/// One layer's output as seen by a tracing forward pass.
#[derive(Clone, Debug)]
pub struct TraceEntry {
    pub name: String,
    pub kind: &'static str,
    pub output_shape: Vec<usize>,
    pub params: usize,
}

/// Records one forward pass.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    stat_updates: Vec<BatchStatUpdate<T>>,
    param_count: usize,
    trace: Option<Vec<TraceEntry>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            stat_updates: Vec::new(),
            param_count: 0,
            trace: None,
        }
    }

    /// A tape that also records a [`TraceEntry`] per traced layer.
    pub fn tracing() -> Self {
        Self {
            trace: Some(Vec::new()),
            ..Self::new()
        }
    }

    pub fn note(&mut self, name: &str, kind: &'static str, out: Var, params: usize) {
        if self.trace.is_some() {
            let output_shape = self.value(out).shape().to_vec();
            if let Some(t) = self.trace.as_mut() {
                t.push(TraceEntry {
                    name: name.to_string(),
                    kind,
                    output_shape,
                    params,
                });
            }
        }
    }

    pub fn take_trace(&mut self) -> Vec<TraceEntry> {
        self.trace.take().unwrap_or_default()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn stat_updates(&self) -> &[BatchStatUpdate<T>] {
        &self.stat_updates
    }

    /// A constant input.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.param_count = self.param_count.max(store.len());
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Var {
        let out = conv::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), &geom);
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(out, Op::Conv { x, w, b, geom }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    /// Broadcasts a single-channel gate `N×1×H×W` over `N×F×H×W` features.
    pub fn gate(&mut self, att: Var, ft: Var) -> Var {
        let out = gate_forward(self.value(att), self.value(ft));
        let rg = self.rg(att) || self.rg(ft);
        self.push(out, Op::Gate { att, ft }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(T::zero()));
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    /// Non-overlapping `k×k` average pooling.
    pub fn avg_pool(&mut self, x: Var, k: usize) -> Var {
        let out = avg_pool_forward(self.value(x), k);
        let rg = self.rg(x);
        self.push(out, Op::AvgPool { x, k }, rg)
    }

    /// `N×C×H×W -> N×C`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let hw = h * w;
        let inv = T::one() / T::of(hw as f64);
        let data = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let rg = self.rg(x);
        self.push(Tensor::from_vec(&[n, c], data), Op::GlobalAvgPool(x), rg)
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample(&mut self, x: Var, factor: usize) -> Var {
        let src = self.value(x);
        let (n, c, h, w) = src.dims4();
        let (oh, ow) = (h * factor, w * factor);
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        for (plane, dst) in src.data().chunks(h * w).zip(out.data_mut().chunks_mut(oh * ow)) {
            for oy in 0..oh {
                let row = &plane[(oy / factor) * w..(oy / factor + 1) * w];
                for ox in 0..ow {
                    dst[oy * ow + ox] = row[ox / factor];
                }
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::Upsample { x, factor }, rg)
    }

    /// Channel concatenation of two `N×C×H×W` tensors.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, ca, h, w) = ta.dims4();
        let (nb, cb, hb, wb) = tb.dims4();
        assert_eq!((n, h, w), (nb, hb, wb), "concat spatial mismatch");
        let mut data = Vec::with_capacity(ta.len() + tb.len());
        for i in 0..n {
            data.extend_from_slice(ta.sample(i));
            data.extend_from_slice(tb.sample(i));
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::from_vec(&[n, ca + cb, h, w], data), Op::Concat(a, b), rg)
    }

    /// `x·wᵀ + b` with `x: N×in`, `w: out×in`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (n, din) = self.value(x).dims2();
        let (dout, din2) = self.value(w).dims2();
        assert_eq!(din, din2, "linear input width");
        let mut out = Vec::with_capacity(n * dout);
        for _ in 0..n {
            out.extend_from_slice(self.value(b).data());
        }
        T::gemm(
            n,
            din,
            dout,
            T::one(),
            self.value(x).data(),
            false,
            self.value(w).data(),
            true,
            T::one(),
            &mut out,
        );
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push(Tensor::from_vec(&[n, dout], out), Op::Linear { x, w, b }, rg)
    }

    /// Batch normalization over `N×C×H×W`.
    ///
    /// In training mode batch statistics are used and a running-stat update
    /// is recorded for `running`; otherwise the running statistics normalize.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        store: &ParamStore<T>,
        x: Var,
        gamma: Var,
        beta: Var,
        running: (ParamId, ParamId),
        eps: T,
        training: bool,
    ) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let hw = h * w;
        let count = T::of((n * hw) as f64);
        let xs = self.value(x).data();
        let (mean, var): (Vec<T>, Vec<T>) = if training {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut s = T::zero();
                for i in 0..n {
                    s += xs[(i * c + ch) * hw..(i * c + ch + 1) * hw].iter().copied().sum::<T>();
                }
                let m = s / count;
                let mut v = T::zero();
                for i in 0..n {
                    for &e in &xs[(i * c + ch) * hw..(i * c + ch + 1) * hw] {
                        v += (e - m) * (e - m);
                    }
                }
                mean[ch] = m;
                var[ch] = v / count;
            }
            (mean, var)
        } else {
            (
                store.value(running.0).data().to_vec(),
                store.value(running.1).data().to_vec(),
            )
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = Tensor::zeros(&[n, c, h, w]);
        let mut out = Tensor::zeros(&[n, c, h, w]);
        for i in 0..n {
            for ch in 0..c {
                let r = (i * c + ch) * hw..(i * c + ch + 1) * hw;
                for j in r {
                    let xh = (xs[j] - mean[ch]) * inv_std[ch];
                    xhat.data_mut()[j] = xh;
                    out.data_mut()[j] = g[ch] * xh + bt[ch];
                }
            }
        }
        if training {
            let unbias = if n * hw > 1 {
                count / (count - T::one())
            } else {
                T::one()
            };
            self.stat_updates.push(BatchStatUpdate {
                mean_id: running.0,
                var_id: running.1,
                mean,
                var: var.iter().map(|&v| v * unbias).collect(),
            });
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: training,
            },
            rg,
        )
    }

    /// Row-wise softmax of an `N×C` matrix.
    pub fn softmax(&mut self, x: Var) -> Var {
        let (n, c) = self.value(x).dims2();
        let mut out = Vec::with_capacity(n * c);
        for i in 0..n {
            out.extend(softmax_row(self.value(x).row(i)));
        }
        let rg = self.rg(x);
        self.push(Tensor::from_vec(&[n, c], out), Op::Softmax(x), rg)
    }

    /// Back-propagates the seed gradients and returns parameter gradients.
    pub fn backward(&self, seeds: Vec<(Var, Tensor<T>)>) -> Gradients<T> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            assert_eq!(g.shape(), self.value(v).shape(), "seed shape");
            accumulate(&mut grads, v, g);
        }
        let mut out = Gradients::new(self.param_count);
        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.accumulate(*id, g),
                Op::Conv { x, w, b, geom } => {
                    let (dx, dw, db) =
                        conv::conv2d_backward(self.value(*x), self.value(*w), &g, geom, self.rg(*x));
                    if let Some(dx) = dx {
                        accumulate(&mut grads, *x, dx);
                    }
                    accumulate(&mut grads, *w, dw);
                    if let Some(b) = b {
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g.clone());
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::Gate { att, ft } => {
                    let (ta, tf) = (self.value(*att), self.value(*ft));
                    let (n, f, h, w) = tf.dims4();
                    let hw = h * w;
                    if self.rg(*ft) {
                        let mut dft = g.clone();
                        for i in 0..n {
                            let gate = &ta.data()[i * hw..(i + 1) * hw];
                            for ch in 0..f {
                                let off = (i * f + ch) * hw;
                                for (d, &a) in dft.data_mut()[off..off + hw].iter_mut().zip(gate) {
                                    *d *= a;
                                }
                            }
                        }
                        accumulate(&mut grads, *ft, dft);
                    }
                    if self.rg(*att) {
                        let mut datt = Tensor::zeros(ta.shape());
                        for i in 0..n {
                            for ch in 0..f {
                                let off = (i * f + ch) * hw;
                                let dst = &mut datt.data_mut()[i * hw..(i + 1) * hw];
                                for ((d, &gv), &fv) in
                                    dst.iter_mut().zip(&g.data()[off..off + hw]).zip(&tf.data()[off..off + hw])
                                {
                                    *d += gv * fv;
                                }
                            }
                        }
                        accumulate(&mut grads, *att, datt);
                    }
                }
                Op::Relu(x) => {
                    let dx = g.zip_map(&node.value, |gv, y| if y > T::zero() { gv } else { T::zero() });
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sigmoid(x) => {
                    let dx = g.zip_map(&node.value, |gv, y| gv * y * (T::one() - y));
                    accumulate(&mut grads, *x, dx);
                }
                Op::AvgPool { x, k } => {
                    let (n, c, h, w) = self.value(*x).dims4();
                    let (oh, ow) = (h / k, w / k);
                    let inv = T::one() / T::of((k * k) as f64);
                    let mut dx = Tensor::zeros(&[n, c, h, w]);
                    for (gp, dp) in g.data().chunks(oh * ow).zip(dx.data_mut().chunks_mut(h * w)) {
                        for y in 0..h {
                            for xx in 0..w {
                                dp[y * w + xx] = gp[(y / k) * ow + xx / k] * inv;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::GlobalAvgPool(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    let hw = shape[2] * shape[3];
                    let inv = T::one() / T::of(hw as f64);
                    let mut data = Vec::with_capacity(hw * g.len());
                    for &gv in g.data() {
                        data.extend(std::iter::repeat(gv * inv).take(hw));
                    }
                    accumulate(&mut grads, *x, Tensor::from_vec(&shape, data));
                }
                Op::Upsample { x, factor } => {
                    let (n, c, h, w) = self.value(*x).dims4();
                    let ow = w * factor;
                    let mut dx = Tensor::zeros(&[n, c, h, w]);
                    for (gp, dp) in g.data().chunks(h * w * factor * factor).zip(dx.data_mut().chunks_mut(h * w)) {
                        for (oy, line) in gp.chunks(ow).enumerate() {
                            let drow = &mut dp[(oy / factor) * w..(oy / factor + 1) * w];
                            for (ox, &v) in line.iter().enumerate() {
                                drow[ox / factor] += v;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Concat(a, b) => {
                    let sa = self.value(*a).shape().to_vec();
                    let sb = self.value(*b).shape().to_vec();
                    let (la, lb) = (sa[1..].iter().product::<usize>(), sb[1..].iter().product::<usize>());
                    let mut da = Vec::with_capacity(la * sa[0]);
                    let mut db = Vec::with_capacity(lb * sb[0]);
                    for chunk in g.data().chunks(la + lb) {
                        da.extend_from_slice(&chunk[..la]);
                        db.extend_from_slice(&chunk[la..]);
                    }
                    accumulate(&mut grads, *a, Tensor::from_vec(&sa, da));
                    accumulate(&mut grads, *b, Tensor::from_vec(&sb, db));
                }
                Op::Linear { x, w, b } => {
                    let (n, din) = self.value(*x).dims2();
                    let (dout, _) = self.value(*w).dims2();
                    if self.rg(*x) {
                        let mut dx = vec![T::zero(); n * din];
                        T::gemm(n, dout, din, T::one(), g.data(), false, self.value(*w).data(), false, T::zero(), &mut dx);
                        accumulate(&mut grads, *x, Tensor::from_vec(&[n, din], dx));
                    }
                    let mut dw = vec![T::zero(); dout * din];
                    T::gemm(dout, n, din, T::one(), g.data(), true, self.value(*x).data(), false, T::zero(), &mut dw);
                    accumulate(&mut grads, *w, Tensor::from_vec(&[dout, din], dw));
                    let mut db = vec![T::zero(); dout];
                    for row in g.data().chunks(dout) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *b, Tensor::from_vec(&[dout], db));
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let (n, c, h, w) = xhat.dims4();
                    let hw = h * w;
                    let count = T::of((n * hw) as f64);
                    let gm = self.value(*gamma).data();
                    let mut dgamma = vec![T::zero(); c];
                    let mut dbeta = vec![T::zero(); c];
                    for i in 0..n {
                        for ch in 0..c {
                            let r = (i * c + ch) * hw..(i * c + ch + 1) * hw;
                            for j in r {
                                dgamma[ch] += g.data()[j] * xhat.data()[j];
                                dbeta[ch] += g.data()[j];
                            }
                        }
                    }
                    if self.rg(*x) {
                        let mut dx = Tensor::zeros(&[n, c, h, w]);
                        for i in 0..n {
                            for ch in 0..c {
                                let r = (i * c + ch) * hw..(i * c + ch + 1) * hw;
                                let scale = gm[ch] * inv_std[ch];
                                for j in r {
                                    let v = if *batch_stats {
                                        // dx = γ/σ · (dy − mean(dy) − x̂·mean(dy·x̂))
                                        scale
                                            * (g.data()[j]
                                                - dbeta[ch] / count
                                                - xhat.data()[j] * dgamma[ch] / count)
                                    } else {
                                        scale * g.data()[j]
                                    };
                                    dx.data_mut()[j] = v;
                                }
                            }
                        }
                        accumulate(&mut grads, *x, dx);
                    }
                    accumulate(&mut grads, *gamma, Tensor::from_vec(&[c], dgamma));
                    accumulate(&mut grads, *beta, Tensor::from_vec(&[c], dbeta));
                }
                Op::Softmax(x) => {
                    let (n, c) = node.value.dims2();
                    let mut dx = Vec::with_capacity(n * c);
                    for i in 0..n {
                        let y = node.value.row(i);
                        let gy = g.row(i);
                        let dot: T = y.iter().zip(gy).map(|(&a, &b)| a * b).sum();
                        dx.extend(y.iter().zip(gy).map(|(&a, &b)| a * (b - dot)));
                    }
                    accumulate(&mut grads, *x, Tensor::from_vec(&[n, c], dx));
                }
            }
        }
        out
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}

pub(crate) fn softmax_row<T: Scalar>(row: &[T]) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub(crate) fn gate_forward<T: Scalar>(att: &Tensor<T>, ft: &Tensor<T>) -> Tensor<T> {
    let (n, f, h, w) = ft.dims4();
    assert_eq!(att.shape(), &[n, 1, h, w], "gate shape");
    let hw = h * w;
    let mut out = ft.clone();
    for i in 0..n {
        let gate = &att.data()[i * hw..(i + 1) * hw];
        for ch in 0..f {
            let off = (i * f + ch) * hw;
            for (o, &a) in out.data_mut()[off..off + hw].iter_mut().zip(gate) {
                *o = a * *o;
            }
        }
    }
    out
}

pub(crate) fn avg_pool_forward<T: Scalar>(x: &Tensor<T>, k: usize) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    assert!(h % k == 0 && w % k == 0, "pool size must divide the input");
    let (oh, ow) = (h / k, w / k);
    let inv = T::one() / T::of((k * k) as f64);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    for (sp, dp) in x.data().chunks(h * w).zip(out.data_mut().chunks_mut(oh * ow)) {
        for y in 0..h {
            for xx in 0..w {
                dp[(y / k) * ow + xx / k] += sp[y * w + xx];
            }
        }
        for v in dp.iter_mut() {
            *v *= inv;
        }
    }
    out
}
