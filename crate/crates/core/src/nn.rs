//! Parameter storage and the layer building blocks used by the network.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{ConvGeom, Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// `false` for running statistics, which are updated outside the optimizer.
    pub trainable: bool,
}

/// Owns every weight and buffer of a model, in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            value,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.len()).sum()
    }

    /// Blends recorded batch statistics into the running buffers.
    pub fn apply_stat_updates(&mut self, tape: &Tape<T>, momentum: T) {
        for u in tape.stat_updates() {
            for (r, &m) in self.entries[u.mean_id.0].value.data_mut().iter_mut().zip(&u.mean) {
                *r = (T::one() - momentum) * *r + momentum * m;
            }
            for (r, &v) in self.entries[u.var_id.0].value.data_mut().iter_mut().zip(&u.var) {
                *r = (T::one() - momentum) * *r + momentum * v;
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    trainable: e.trainable,
                })
                .collect(),
        }
    }
}

fn he_normal<T: Scalar>(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("positive std");
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| T::of(dist.sample(rng))).collect())
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub name: String,
    pub geom: ConvGeom,
    weight: ParamId,
    bias: Option<ParamId>,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
        bias: bool,
    ) -> Self {
        let geom = ConvGeom {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: dilation * (kernel - 1) / 2,
            dilation,
        };
        let fan_in = in_channels * kernel * kernel;
        let weight = store.register(
            format!("{name}.weight"),
            he_normal(rng, &[out_channels, in_channels, kernel, kernel], fan_in),
            true,
        );
        let bias = bias.then(|| store.register(format!("{name}.bias"), Tensor::zeros(&[out_channels]), true));
        Self {
            name: name.to_string(),
            geom,
            weight,
            bias,
        }
    }

    /// Multiplies the initial weights by `factor`.
    pub fn scale_weight<T: Scalar>(&self, store: &mut ParamStore<T>, factor: f64) {
        let f = T::of(factor);
        for v in store.value_mut(self.weight).data_mut() {
            *v *= f;
        }
    }

    /// Adds an identity map from input channel `i` to output channel `i`
    /// at the kernel centre, for every `i` both sides have.
    pub fn add_identity<T: Scalar>(&self, store: &mut ParamStore<T>) {
        let g = self.geom;
        let k = g.kernel;
        let w = store.value_mut(self.weight).data_mut();
        for i in 0..g.in_channels.min(g.out_channels) {
            w[((i * g.in_channels + i) * k + k / 2) * k + k / 2] += T::one();
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Var {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        let out = tape.conv2d(x, w, b, self.geom);
        let params = self.param_ids().iter().map(|&id| store.value(id).len()).sum();
        tape.note(&self.name, "conv2d", out, params);
        out
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub in_features: usize,
    pub out_features: usize,
    weight: ParamId,
    bias: ParamId,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        in_features: usize,
        out_features: usize,
    ) -> Self {
        // std = 1/sqrt(in): unit-variance outputs for unit-variance inputs without a following ReLU
        let dist = Normal::new(0.0, (1.0 / in_features as f64).sqrt()).expect("positive std");
        let w = (0..in_features * out_features).map(|_| T::of(dist.sample(rng))).collect();
        let weight = store.register(
            format!("{name}.weight"),
            Tensor::from_vec(&[out_features, in_features], w),
            true,
        );
        let bias = store.register(format!("{name}.bias"), Tensor::zeros(&[out_features]), true);
        Self {
            name: name.to_string(),
            in_features,
            out_features,
            weight,
            bias,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Var {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let out = tape.linear(x, w, b);
        tape.note(&self.name, "linear", out, (self.in_features + 1) * self.out_features);
        out
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub name: String,
    pub channels: usize,
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
}

pub const BATCH_NORM_EPS: f64 = 1e-5;

impl BatchNorm2d {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Self {
            name: name.to_string(),
            channels,
            gamma: store.register(format!("{name}.gamma"), Tensor::full(&[channels], T::one()), true),
            beta: store.register(format!("{name}.beta"), Tensor::zeros(&[channels]), true),
            running_mean: store.register(format!("{name}.running_mean"), Tensor::zeros(&[channels]), false),
            running_var: store.register(format!("{name}.running_var"), Tensor::full(&[channels], T::one()), false),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var, training: bool) -> Var {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        let out = tape.batch_norm(
            store,
            x,
            g,
            b,
            (self.running_mean, self.running_var),
            T::of(BATCH_NORM_EPS),
            training,
        );
        tape.note(&self.name, "batch_norm", out, 2 * self.channels);
        out
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.gamma, self.beta, self.running_mean, self.running_var]
    }
}
