//! The dual-branch attention network.
//!
//! An encoder-decoder attention branch produces a single-channel spatial
//! gate; a pooling-free residual feature branch produces full-resolution
//! features. Their pixel-wise product is mapped back to an RGB attention
//! image, average-pooled to the reduced size and classified by a
//! pre-activation residual head that also emits the embedding.
//!
//! Batches are channels-first: images are `B×3×128×128`.

mod branches;
mod head;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, TraceEntry, Var};
use crate::error::{config, contract, Result};
use crate::nn::ParamStore;
use crate::tensor::{Scalar, Tensor};

pub use branches::{AttentionBranch, FeatureBranch, Reconstruction};
pub use head::RepresentationHead;

/// Which of the three compared model variants is being run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelArm {
    /// Classifier on the pooled 32×32 input, no attention.
    Baseline,
    /// Attention + classification.
    AttCls,
    /// Attention + representation + classification.
    AttRepCls,
}

impl ModelArm {
    pub const ALL: [ModelArm; 3] = [ModelArm::Baseline, ModelArm::AttCls, ModelArm::AttRepCls];

    pub fn uses_attention(self) -> bool {
        self != ModelArm::Baseline
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelArm::Baseline => "baseline",
            ModelArm::AttCls => "att-cls",
            ModelArm::AttRepCls => "att-rep-cls",
        }
    }
}

impl std::str::FromStr for ModelArm {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(ModelArm::Baseline),
            "att-cls" => Ok(ModelArm::AttCls),
            "att-rep-cls" => Ok(ModelArm::AttRepCls),
            other => Err(config(format!("unknown arm '{other}'"))),
        }
    }
}

impl std::fmt::Display for ModelArm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_size: usize,
    pub reduced_size: usize,
    pub embedding_dim: usize,
    pub num_classes: usize,
    /// Channels of the feature branch output.
    pub feature_channels: usize,
    pub width_multiplier: f64,
}

/// Channel count after width scaling, never below 2.
pub fn scaled_width(base: usize, multiplier: f64) -> usize {
    ((base as f64 * multiplier).round() as usize).max(2)
}

impl NetworkConfig {
    pub const INPUT_SIZE: usize = 128;
    pub const REDUCED_SIZE: usize = 32;
    pub const EMBEDDING_DIM: usize = 64;
    pub const FEATURE_BASE: usize = 16;

    pub fn new(num_classes: usize, width_multiplier: f64) -> Self {
        Self {
            input_size: Self::INPUT_SIZE,
            reduced_size: Self::REDUCED_SIZE,
            embedding_dim: Self::EMBEDDING_DIM,
            num_classes,
            feature_channels: scaled_width(Self::FEATURE_BASE, width_multiplier),
            width_multiplier,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reduced_size == 0 || self.input_size % self.reduced_size != 0 {
            return Err(config(format!(
                "input size {} is not divisible by reduced size {}",
                self.input_size, self.reduced_size
            )));
        }
        if self.input_size % 8 != 0 {
            return Err(config("input size must be a multiple of 8 for the attention encoder"));
        }
        if self.num_classes < 2 {
            return Err(config("at least two classes are required"));
        }
        if self.embedding_dim < self.num_classes {
            return Err(config(format!(
                "embedding dim {} is smaller than the class count {}",
                self.embedding_dim, self.num_classes
            )));
        }
        if !(self.width_multiplier > 0.0 && self.width_multiplier.is_finite()) {
            return Err(config("width multiplier must be positive"));
        }
        if self.feature_channels == 0 {
            return Err(config("feature channels must be positive"));
        }
        Ok(())
    }

    pub fn pool_factor(&self) -> usize {
        self.input_size / self.reduced_size
    }
}

/// Values produced by one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkOutputs<T> {
    /// `B×3×128×128` reconstruction before pooling; absent for the baseline.
    pub attention_image: Option<Tensor<T>>,
    /// `B×3×32×32` classifier input.
    pub reduced: Tensor<T>,
    /// `B×64`.
    pub embedding: Tensor<T>,
    /// `B×c`, rows on the probability simplex.
    pub class_scores: Tensor<T>,
}

/// Tape handles of one forward pass, used by training to seed gradients.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub gate: Option<Var>,
    pub attention_image: Option<Var>,
    pub reduced: Var,
    pub embedding: Var,
    pub class_scores: Var,
}

impl ForwardVars {
    pub fn outputs<T: Scalar>(&self, tape: &Tape<T>) -> NetworkOutputs<T> {
        NetworkOutputs {
            attention_image: self.attention_image.map(|v| tape.value(v).clone()),
            reduced: tape.value(self.reduced).clone(),
            embedding: tape.value(self.embedding).clone(),
            class_scores: tape.value(self.class_scores).clone(),
        }
    }
}

/// Pixel-wise product of a `B×1×H×W` gate with `B×F×H×W` features.
pub fn compose_attention<T: Scalar>(att: &Tensor<T>, ft: &Tensor<T>) -> Result<Tensor<T>> {
    if att.shape().len() != 4 || ft.shape().len() != 4 {
        return Err(contract("gate and features must be rank-4"));
    }
    let (n, c, h, w) = att.dims4();
    let (nf, _, hf, wf) = ft.dims4();
    if c != 1 || (n, h, w) != (nf, hf, wf) {
        return Err(contract(format!(
            "gate {:?} does not match features {:?}",
            att.shape(),
            ft.shape()
        )));
    }
    Ok(crate::autograd::gate_forward(att, ft))
}

/// Non-overlapping block mean.
pub fn average_pool<T: Scalar>(x: &Tensor<T>, block: usize) -> Result<Tensor<T>> {
    if x.shape().len() != 4 {
        return Err(contract("pooling expects a rank-4 tensor"));
    }
    let (_, _, h, w) = x.dims4();
    if block == 0 || h % block != 0 || w % block != 0 {
        return Err(contract(format!("block {block} does not tile {h}×{w}")));
    }
    Ok(crate::autograd::avg_pool_forward(x, block))
}

/// One row of the architecture summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub name: String,
    pub kind: String,
    pub output_shape: Vec<usize>,
    pub params: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSummary {
    pub config: NetworkConfig,
    pub layers: Vec<LayerSummary>,
    pub total_params: usize,
}

/// The full model: configuration, weights and module wiring.
#[derive(Clone, Debug)]
pub struct FerAtt<T: Scalar> {
    config: NetworkConfig,
    store: ParamStore<T>,
    attention: AttentionBranch,
    features: FeatureBranch,
    reconstruction: Reconstruction,
    head: RepresentationHead,
}

impl<T: Scalar> FerAtt<T> {
    /// Builds the model with He-style random initialization from `seed`.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let wm = config.width_multiplier;
        let attention = AttentionBranch::new(&mut store, &mut rng, wm);
        let features = FeatureBranch::new(&mut store, &mut rng, config.feature_channels);
        let reconstruction = Reconstruction::new(&mut store, &mut rng, config.feature_channels);
        let head = RepresentationHead::new(&mut store, &mut rng, wm, config.embedding_dim, config.num_classes);
        Ok(Self {
            config,
            store,
            attention,
            features,
            reconstruction,
            head,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    /// Replaces all weights; the layout must match exactly.
    pub fn load_params(&mut self, store: ParamStore<T>) -> Result<()> {
        let same_layout = store.len() == self.store.len()
            && store
                .entries()
                .iter()
                .zip(self.store.entries())
                .all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape());
        if !same_layout {
            return Err(contract("parameter layout does not match the network configuration"));
        }
        self.store = store;
        Ok(())
    }

    /// The same architecture and weights in another precision.
    pub fn cast<U: Scalar>(&self) -> FerAtt<U> {
        FerAtt {
            config: self.config.clone(),
            store: self.store.cast(),
            attention: self.attention.clone(),
            features: self.features.clone(),
            reconstruction: self.reconstruction.clone(),
            head: self.head.clone(),
        }
    }

    fn check_images(&self, images: &Tensor<T>) -> Result<()> {
        let s = self.config.input_size;
        match images.shape() {
            [b, 3, h, w] if *b > 0 && *h == s && *w == s => Ok(()),
            other => Err(contract(format!("expected B×3×{s}×{s} images, got {other:?}"))),
        }
    }

    fn check_reduced(&self, reduced: &Tensor<T>) -> Result<()> {
        let s = self.config.reduced_size;
        match reduced.shape() {
            [b, 3, h, w] if *b > 0 && *h == s && *w == s => Ok(()),
            other => Err(contract(format!("expected B×3×{s}×{s} reduced input, got {other:?}"))),
        }
    }

    /// Records the forward pass of `arm` on `tape`.
    pub fn forward_on_tape(&self, tape: &mut Tape<T>, images: Var, arm: ModelArm, training: bool) -> ForwardVars {
        let pool = self.config.pool_factor();
        if !arm.uses_attention() {
            let reduced = tape.avg_pool(images, pool);
            tape.note("baseline.pool", "avg_pool", reduced, 0);
            let (embedding, class_scores) = self.head.forward(tape, &self.store, reduced, training);
            return ForwardVars {
                gate: None,
                attention_image: None,
                reduced,
                embedding,
                class_scores,
            };
        }
        let gate = self.attention.forward(tape, &self.store, images);
        let ft = self.features.forward(tape, &self.store, images);
        let gated = tape.gate(gate, ft);
        tape.note("compose", "gate", gated, 0);
        let att_image = self.reconstruction.forward(tape, &self.store, gated);
        let reduced = tape.avg_pool(att_image, pool);
        tape.note("rec.pool", "avg_pool", reduced, 0);
        let (embedding, class_scores) = self.head.forward(tape, &self.store, reduced, training);
        ForwardVars {
            gate: Some(gate),
            attention_image: Some(att_image),
            reduced,
            embedding,
            class_scores,
        }
    }

    /// Inference forward pass (running batch-norm statistics).
    pub fn forward(&self, images: &Tensor<T>, arm: ModelArm) -> Result<NetworkOutputs<T>> {
        self.check_images(images)?;
        let mut tape = Tape::new();
        let x = tape.input(images.clone());
        let vars = self.forward_on_tape(&mut tape, x, arm, false);
        Ok(vars.outputs(&tape))
    }

    /// Single-channel gate in `[0,1]`, `B×1×128×128`.
    pub fn attention_branch(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_images(images)?;
        let mut tape = Tape::new();
        let x = tape.input(images.clone());
        let g = self.attention.forward(&mut tape, &self.store, x);
        Ok(tape.value(g).clone())
    }

    /// Full-resolution features, `B×F×128×128`.
    pub fn feature_branch(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_images(images)?;
        let mut tape = Tape::new();
        let x = tape.input(images.clone());
        let f = self.features.forward(&mut tape, &self.store, x);
        Ok(tape.value(f).clone())
    }

    /// Attention image `B×3×128×128` and its pooled `B×3×32×32` version.
    pub fn reconstruction(&self, gated: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let s = self.config.input_size;
        match gated.shape() {
            [b, f, h, w] if *b > 0 && *f == self.config.feature_channels && *h == s && *w == s => {}
            other => return Err(contract(format!("unexpected gated feature shape {other:?}"))),
        }
        let mut tape = Tape::new();
        let x = tape.input(gated.clone());
        let img = self.reconstruction.forward(&mut tape, &self.store, x);
        let reduced = tape.avg_pool(img, self.config.pool_factor());
        Ok((tape.value(img).clone(), tape.value(reduced).clone()))
    }

    /// Embedding `B×64` and class probabilities `B×c` from a reduced input.
    pub fn representation_head(&self, reduced: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        self.check_reduced(reduced)?;
        let mut tape = Tape::new();
        let x = tape.input(reduced.clone());
        let (z, y) = self.head.forward(&mut tape, &self.store, x, false);
        Ok((tape.value(z).clone(), tape.value(y).clone()))
    }

    /// Layer listing from a traced single-image forward pass.
    pub fn summary(&self, arm: ModelArm) -> ArchitectureSummary {
        let s = self.config.input_size;
        let mut tape = Tape::tracing();
        let x = tape.input(Tensor::zeros(&[1, 3, s, s]));
        self.forward_on_tape(&mut tape, x, arm, false);
        let layers: Vec<LayerSummary> = tape
            .take_trace()
            .into_iter()
            .map(|TraceEntry { name, kind, output_shape, params }| LayerSummary {
                name,
                kind: kind.to_string(),
                output_shape,
                params,
            })
            .collect();
        let total_params = layers.iter().map(|l| l.params).sum();
        ArchitectureSummary {
            config: self.config.clone(),
            layers,
            total_params,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> FerAtt<f32> {
        FerAtt::new(NetworkConfig::new(4, 0.25), 11).unwrap()
    }

    fn images(b: usize, seed: f32) -> Tensor<f32> {
        let len = b * 3 * 128 * 128;
        Tensor::from_vec(
            &[b, 3, 128, 128],
            (0..len).map(|i| ((i as f32) * 0.013 + seed).sin() * 0.5 + 0.5).collect(),
        )
    }

    #[test]
    fn config_invariants() {
        let mut c = NetworkConfig::new(4, 0.25);
        assert!(c.validate().is_ok());
        c.reduced_size = 30;
        assert!(c.validate().is_err());
        let mut c = NetworkConfig::new(4, 0.25);
        c.embedding_dim = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn forward_shapes_for_batch_of_two() {
        let net = small();
        let out = net.forward(&images(2, 0.0), ModelArm::AttRepCls).unwrap();
        assert_eq!(out.attention_image.as_ref().unwrap().shape(), &[2, 3, 128, 128]);
        assert_eq!(out.reduced.shape(), &[2, 3, 32, 32]);
        assert_eq!(out.embedding.shape(), &[2, 64]);
        assert_eq!(out.class_scores.shape(), &[2, 4]);
        assert!(out.attention_image.unwrap().all_finite());
        for i in 0..2 {
            let row = out.class_scores.row(i);
            assert!(row.iter().all(|&p| p >= 0.0));
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn attention_branch_is_a_unit_gate() {
        let net = small();
        let x = images(2, 1.0);
        let g = net.attention_branch(&x).unwrap();
        assert_eq!(g.shape(), &[2, 1, 128, 128]);
        assert!(g.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(g, net.attention_branch(&x).unwrap());
    }

    #[test]
    fn wrong_spatial_size_is_rejected() {
        let net = small();
        let x = Tensor::<f32>::zeros(&[1, 3, 64, 64]);
        assert!(matches!(net.attention_branch(&x), Err(crate::Error::Contract(_))));
        assert!(matches!(net.feature_branch(&x), Err(crate::Error::Contract(_))));
        assert!(net.forward(&x, ModelArm::Baseline).is_err());
    }

    #[test]
    fn feature_branch_keeps_resolution_and_batch() {
        let net = small();
        let one = net.feature_branch(&images(1, 0.5)).unwrap();
        assert_eq!(one.shape(), &[1, net.config().feature_channels, 128, 128]);
        let zero = net.feature_branch(&Tensor::zeros(&[1, 3, 128, 128])).unwrap();
        assert!(zero.all_finite());
        let two = net.feature_branch(&Tensor::stack(&[images(1, 0.5), images(1, 0.5)])).unwrap();
        assert_eq!(two.shape()[0], 2);
        assert_eq!(two.sample(1), one.sample(0));
    }

    #[test]
    fn compose_identity_null_and_locality() {
        let ft = Tensor::<f32>::from_vec(&[1, 2, 2, 4], (0..16).map(|i| i as f32 - 3.5).collect());
        let ones = Tensor::full(&[1, 1, 2, 4], 1.0);
        assert_eq!(compose_attention(&ones, &ft).unwrap(), ft);
        let zeros = Tensor::zeros(&[1, 1, 2, 4]);
        assert!(compose_attention(&zeros, &ft).unwrap().data().iter().all(|&v| v == 0.0));
        let left = Tensor::from_vec(&[1, 1, 2, 4], vec![1., 1., 0., 0., 1., 1., 0., 0.]);
        let g = compose_attention(&left, &ft).unwrap();
        for ch in 0..2 {
            for y in 0..2 {
                for x in 0..4 {
                    let v = g.data()[(ch * 2 + y) * 4 + x];
                    if x >= 2 {
                        assert_eq!(v, 0.0);
                    } else {
                        assert_eq!(v, ft.data()[(ch * 2 + y) * 4 + x]);
                    }
                }
            }
        }
        assert!(compose_attention(&Tensor::zeros(&[1, 1, 2, 3]), &ft).is_err());
    }

    #[test]
    fn reconstruction_pools_by_block_mean() {
        let net = small();
        let gated = net.feature_branch(&images(1, 2.0)).unwrap();
        let (img, reduced) = net.reconstruction(&gated).unwrap();
        assert_eq!(img.shape(), &[1, 3, 128, 128]);
        assert_eq!(reduced.shape(), &[1, 3, 32, 32]);
        for ch in 0..3 {
            for (i, j) in [(0, 0), (5, 17), (31, 31)] {
                let mut m = 0.0f64;
                for dy in 0..4 {
                    for dx in 0..4 {
                        m += img.data()[(ch * 128 + i * 4 + dy) * 128 + j * 4 + dx] as f64;
                    }
                }
                let got = reduced.data()[(ch * 32 + i) * 32 + j] as f64;
                assert!((got - m / 16.0).abs() < 1e-5);
            }
        }
        let c = Tensor::<f32>::full(&[1, 3, 128, 128], 0.375);
        assert!(average_pool(&c, 4).unwrap().data().iter().all(|&v| v == 0.375));
    }

    #[test]
    fn head_is_batch_equivariant() {
        let net = small();
        let a = average_pool(&images(1, 0.1), 4).unwrap();
        let b = average_pool(&images(1, 0.9), 4).unwrap();
        let (z1, y1) = net.representation_head(&Tensor::stack(&[a.clone(), b.clone()])).unwrap();
        let (z2, y2) = net.representation_head(&Tensor::stack(&[b, a])).unwrap();
        assert_eq!(z1.shape(), &[2, 64]);
        assert_eq!(z1.row(0), z2.row(1));
        assert_eq!(z1.row(1), z2.row(0));
        assert_eq!(y1.row(0), y2.row(1));
    }

    #[test]
    fn baseline_and_attention_arms_share_the_head() {
        let net = small();
        let x = images(2, 0.3);
        let base = net.forward(&x, ModelArm::Baseline).unwrap();
        assert!(base.attention_image.is_none());
        assert_eq!(base.reduced, average_pool(&x, 4).unwrap());
        let att = net.forward(&x, ModelArm::AttCls).unwrap();
        // feeding the attention arm's reduced tensor into the shared head reproduces its outputs
        let (z, y) = net.representation_head(&att.reduced).unwrap();
        assert_eq!(z, att.embedding);
        assert_eq!(y, att.class_scores);
    }

    #[test]
    fn summary_lists_every_stage() {
        let net = small();
        let s = net.summary(ModelArm::AttRepCls);
        assert!(s.layers.iter().any(|l| l.name.starts_with("att.")));
        assert!(s.layers.iter().any(|l| l.name.starts_with("ft.")));
        assert!(s.layers.iter().any(|l| l.name.starts_with("rec.")));
        assert!(s.layers.iter().any(|l| l.name.starts_with("rep.")));
        assert_eq!(s.total_params, net.params().trainable_count());
        let last = s.layers.last().unwrap();
        assert_eq!(last.output_shape, vec![1, 4]);
    }
}
