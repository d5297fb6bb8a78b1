//! Training objective: attention MSE, per-class BCE and the Gaussian
//! structured-manifold representation loss.
//!
//! Every loss returns its value together with the analytic gradient with
//! respect to the network output it consumes; the gradients seed
//! [`crate::autograd::Tape::backward`].

use serde::{Deserialize, Serialize};

use crate::error::{config, contract, Error, Result};
use crate::network::{ModelArm, NetworkOutputs};
use crate::tensor::{Scalar, Tensor};

/// Anchors are never closer than this many σ.
pub const MIN_ANCHOR_SEPARATION_SIGMAS: f64 = 2.0;
/// Default anchor radius in units of σ.
pub const DEFAULT_ANCHOR_RADIUS_SIGMAS: f64 = 4.0;
/// Probability floor inside BCE.
pub const BCE_EPS: f64 = 1e-7;

/// Isotropic class-conditional Gaussians in embedding space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianManifoldConfig {
    /// `c` rows of length `embedding_dim`.
    pub anchors: Vec<Vec<f64>>,
    pub sigma: f64,
    pub priors: Vec<f64>,
    pub embedding_dim: usize,
}

impl GaussianManifoldConfig {
    /// Class `j` anchored at `radius·σ·e_j`, uniform priors.
    pub fn axis_aligned(num_classes: usize, embedding_dim: usize, sigma: f64) -> Result<Self> {
        Self::axis_aligned_with_radius(num_classes, embedding_dim, sigma, DEFAULT_ANCHOR_RADIUS_SIGMAS)
    }

    pub fn axis_aligned_with_radius(
        num_classes: usize,
        embedding_dim: usize,
        sigma: f64,
        radius_sigmas: f64,
    ) -> Result<Self> {
        if num_classes == 0 || num_classes > embedding_dim {
            return Err(config(format!(
                "{num_classes} classes cannot be axis-aligned in {embedding_dim} dimensions"
            )));
        }
        let anchors = (0..num_classes)
            .map(|j| {
                let mut v = vec![0.0; embedding_dim];
                v[j] = radius_sigmas * sigma;
                v
            })
            .collect();
        let cfg = Self {
            anchors,
            sigma,
            priors: vec![1.0 / num_classes as f64; num_classes],
            embedding_dim,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Replaces the priors with empirical label frequencies.
    pub fn with_empirical_priors(mut self, labels: &[usize]) -> Result<Self> {
        if labels.is_empty() {
            return Err(config("cannot estimate priors from an empty label set"));
        }
        let mut counts = vec![0usize; self.num_classes()];
        for &l in labels {
            *counts
                .get_mut(l)
                .ok_or_else(|| config(format!("label {l} out of range")))? += 1;
        }
        self.priors = counts.iter().map(|&c| c as f64 / labels.len() as f64).collect();
        self.validate()?;
        Ok(self)
    }

    pub fn num_classes(&self) -> usize {
        self.anchors.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(config("sigma must be positive"));
        }
        let c = self.anchors.len();
        if c == 0 || self.priors.len() != c {
            return Err(config("priors and anchors must have one entry per class"));
        }
        if self.anchors.iter().any(|a| a.len() != self.embedding_dim || a.iter().any(|v| !v.is_finite())) {
            return Err(config("every anchor must be a finite vector of embedding_dim entries"));
        }
        if self.priors.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(config("priors must lie in [0,1]"));
        }
        let total: f64 = self.priors.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(config(format!("priors sum to {total}, not 1")));
        }
        let min_sep = MIN_ANCHOR_SEPARATION_SIGMAS * self.sigma;
        for i in 0..c {
            for j in i + 1..c {
                let d: f64 = self.anchors[i]
                    .iter()
                    .zip(&self.anchors[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if d < min_sep {
                    return Err(config(format!(
                        "anchors {i} and {j} are {d} apart, below the minimum {min_sep}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn check_embeddings<T: Scalar>(z: &Tensor<T>, cfg: &GaussianManifoldConfig) -> Result<(usize, usize)> {
    if z.shape().len() != 2 || z.shape()[1] != cfg.embedding_dim {
        return Err(contract(format!(
            "embeddings {:?} do not match dimension {}",
            z.shape(),
            cfg.embedding_dim
        )));
    }
    if !z.all_finite() {
        return Err(contract("embedding contains non-finite values"));
    }
    Ok(z.dims2())
}

/// `B×c` matrix of `log p(ẑ_k | w_j)` under `N(μ_j, σ²I)`.
pub fn log_likelihood<T: Scalar>(z: &Tensor<T>, cfg: &GaussianManifoldConfig) -> Result<Tensor<T>> {
    let (b, d) = check_embeddings(z, cfg)?;
    let c = cfg.num_classes();
    let n = d as f64;
    let constant = T::of(-0.5 * n * (2.0 * std::f64::consts::PI).ln() - n * cfg.sigma.ln());
    let inv_two_var = T::of(1.0 / (2.0 * cfg.sigma * cfg.sigma));
    let anchors: Vec<Vec<T>> = cfg.anchors.iter().map(|a| a.iter().map(|&v| T::of(v)).collect()).collect();
    let mut out = Vec::with_capacity(b * c);
    for k in 0..b {
        let zk = z.row(k);
        for mu in &anchors {
            let sq: T = zk.iter().zip(mu).map(|(&a, &m)| (a - m) * (a - m)).sum();
            out.push(constant - sq * inv_two_var);
        }
    }
    Ok(Tensor::from_vec(&[b, c], out))
}

/// Rows of class posteriors `P(w_j | ẑ_k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorBatch<T> {
    pub values: Tensor<T>,
}

/// Bayes posterior from log-priors + log-likelihoods, normalized in log space.
pub fn posterior_from_log_likelihood<T: Scalar>(ll: &Tensor<T>, priors: &[f64]) -> Result<PosteriorBatch<T>> {
    let (b, c) = ll.dims2();
    if priors.len() != c {
        return Err(contract("prior count does not match likelihood columns"));
    }
    let log_priors: Vec<T> = priors.iter().map(|&p| T::of(p.ln())).collect();
    let mut out = Vec::with_capacity(b * c);
    for k in 0..b {
        let a: Vec<T> = ll.row(k).iter().zip(&log_priors).map(|(&l, &p)| l + p).collect();
        let max = a.iter().copied().fold(T::neg_infinity(), T::max);
        if !max.is_finite() {
            return Err(Error::DegeneratePosterior(format!("row {k} has no finite log-likelihood")));
        }
        let exps: Vec<T> = a.iter().map(|&v| (v - max).exp()).collect();
        let total: T = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / total));
    }
    Ok(PosteriorBatch {
        values: Tensor::from_vec(&[b, c], out),
    })
}

pub fn posterior<T: Scalar>(z: &Tensor<T>, cfg: &GaussianManifoldConfig) -> Result<PosteriorBatch<T>> {
    posterior_from_log_likelihood(&log_likelihood(z, cfg)?, &cfg.priors)
}

fn check_one_hot<T: Scalar>(targets: &Tensor<T>, b: usize, c: usize) -> Result<()> {
    if targets.shape() != [b, c] {
        return Err(contract(format!("targets {:?} are not {b}×{c}", targets.shape())));
    }
    let tol = T::of(1e-6);
    for k in 0..b {
        let row = targets.row(k);
        let s: T = row.iter().copied().sum();
        if (s - T::one()).abs() > tol || row.iter().any(|&v| v < T::zero() || v > T::one()) {
            return Err(contract(format!("target row {k} is not a probability vector")));
        }
    }
    Ok(())
}

/// Mean over the batch of `‖P(·|ẑ_k) − target_k‖²`, with `∂L/∂ẑ`.
pub fn structured_loss<T: Scalar>(
    z: &Tensor<T>,
    targets: &Tensor<T>,
    cfg: &GaussianManifoldConfig,
) -> Result<(T, Tensor<T>)> {
    let PosteriorBatch { values: post } = posterior(z, cfg)?;
    let (b, c) = post.dims2();
    check_one_hot(targets, b, c)?;
    let d = cfg.embedding_dim;
    let inv_b = T::one() / T::of(b as f64);
    let inv_var = T::of(1.0 / (cfg.sigma * cfg.sigma));
    let anchors: Vec<Vec<T>> = cfg.anchors.iter().map(|a| a.iter().map(|&v| T::of(v)).collect()).collect();
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); b * d];
    for k in 0..b {
        let p = post.row(k);
        let t = targets.row(k);
        let diff: Vec<T> = p.iter().zip(t).map(|(&a, &b)| a - b).collect();
        loss += diff.iter().map(|&v| v * v).sum::<T>();
        // dL/dP = 2(P−t)/B; through softmax: dL/da_j = P_j (g_j − Σ_i P_i g_i)
        let g: Vec<T> = diff.iter().map(|&v| T::of(2.0) * v * inv_b).collect();
        let dot: T = p.iter().zip(&g).map(|(&a, &b)| a * b).sum();
        let zk = z.row(k);
        let gk = &mut grad[k * d..(k + 1) * d];
        for j in 0..c {
            let da = p[j] * (g[j] - dot);
            if da == T::zero() {
                continue;
            }
            // ∂a_j/∂ẑ = −(ẑ − μ_j)/σ²
            for ((gi, &zi), &mi) in gk.iter_mut().zip(zk).zip(&anchors[j]) {
                *gi -= da * (zi - mi) * inv_var;
            }
        }
    }
    Ok((loss * inv_b, Tensor::from_vec(&[b, d], grad)))
}

/// Pixel MSE between the attention image and `I·mask`, with `∂L/∂Î_att`.
pub fn attention_loss<T: Scalar>(
    attention_image: &Tensor<T>,
    images: &Tensor<T>,
    masks: &Tensor<T>,
) -> Result<(T, Tensor<T>)> {
    if attention_image.shape() != images.shape() || attention_image.shape().len() != 4 {
        return Err(contract(format!(
            "attention image {:?} does not match images {:?}",
            attention_image.shape(),
            images.shape()
        )));
    }
    let (n, c, h, w) = images.dims4();
    if masks.shape() != [n, 1, h, w] {
        return Err(contract(format!("mask {:?} is not {n}×1×{h}×{w}", masks.shape())));
    }
    let hw = h * w;
    let total = T::of((n * c * hw) as f64);
    let mut loss = T::zero();
    let mut grad = Tensor::zeros(images.shape());
    for i in 0..n {
        let m = &masks.data()[i * hw..(i + 1) * hw];
        for ch in 0..c {
            let off = (i * c + ch) * hw;
            for j in 0..hw {
                let diff = attention_image.data()[off + j] - images.data()[off + j] * m[j];
                loss += diff * diff;
                grad.data_mut()[off + j] = T::of(2.0) * diff / total;
            }
        }
    }
    Ok((loss / total, grad))
}

/// Mean binary cross-entropy over all `B·c` entries, with `∂L/∂ŷ`.
pub fn classification_loss<T: Scalar>(scores: &Tensor<T>, targets: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if scores.shape().len() != 2 {
        return Err(contract("class scores must be B×c"));
    }
    let (b, c) = scores.dims2();
    check_one_hot(targets, b, c)?;
    let eps = T::of(BCE_EPS);
    let hi = T::one() - eps;
    let total = T::of((b * c) as f64);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(b * c);
    for (&p, &y) in scores.data().iter().zip(targets.data()) {
        if !p.is_finite() {
            return Err(contract("class scores contain non-finite values"));
        }
        let q = p.max(eps).min(hi);
        loss -= y * q.ln() + (T::one() - y) * (T::one() - q).ln();
        let clamped = p < eps || p > hi;
        grad.push(if clamped {
            T::zero()
        } else {
            (q - y) / (q * (T::one() - q)) / total
        });
    }
    Ok((loss / total, Tensor::from_vec(&[b, c], grad)))
}

/// Multipliers for the three objective terms; zero disables a term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub attention: f64,
    pub representation: f64,
    pub classification: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            attention: 1.0,
            representation: 1.0,
            classification: 1.0,
        }
    }
}

impl LossWeights {
    /// Unit weights with the terms the arm does not train switched off.
    pub fn for_arm(arm: ModelArm) -> Self {
        Self::default().masked(arm)
    }

    pub fn masked(self, arm: ModelArm) -> Self {
        match arm {
            ModelArm::Baseline => Self {
                attention: 0.0,
                representation: 0.0,
                ..self
            },
            ModelArm::AttCls => Self {
                representation: 0.0,
                ..self
            },
            ModelArm::AttRepCls => self,
        }
    }
}

/// Weighted loss terms; `total` is their sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub attention: f64,
    pub representation: f64,
    pub classification: f64,
    pub total: f64,
}

/// Supervision for one batch.
#[derive(Clone, Debug)]
pub struct SampleTargets<T> {
    /// Clean `B×3×H×W` images (the attention target is `images·masks`).
    pub images: Tensor<T>,
    /// `B×1×H×W` binary masks.
    pub masks: Tensor<T>,
    /// `B×c` one-hot labels.
    pub one_hot: Tensor<T>,
}

impl<T: Scalar> SampleTargets<T> {
    pub fn one_hot_labels(labels: &[usize], num_classes: usize) -> Tensor<T> {
        let mut t = Tensor::zeros(&[labels.len(), num_classes]);
        for (k, &l) in labels.iter().enumerate() {
            t.data_mut()[k * num_classes + l] = T::one();
        }
        t
    }
}

/// Loss values plus the gradient seeds for each network output.
#[derive(Clone, Debug)]
pub struct JointLoss<T> {
    pub breakdown: LossBreakdown,
    pub grad_attention: Option<Tensor<T>>,
    pub grad_embedding: Option<Tensor<T>>,
    pub grad_scores: Option<Tensor<T>>,
}

/// Weighted sum of the three terms with gradient seeds.
pub fn joint_loss<T: Scalar>(
    outputs: &NetworkOutputs<T>,
    targets: &SampleTargets<T>,
    manifold: &GaussianManifoldConfig,
    weights: &LossWeights,
) -> Result<JointLoss<T>> {
    let mut breakdown = LossBreakdown::default();
    let mut grad_attention = None;
    let mut grad_embedding = None;
    let mut grad_scores = None;
    let scale = |g: &mut Tensor<T>, w: f64| {
        if w != 1.0 {
            g.scale(T::of(w));
        }
    };
    if weights.attention != 0.0 {
        let att = outputs
            .attention_image
            .as_ref()
            .ok_or_else(|| contract("attention loss requested but the arm has no attention image"))?;
        let (v, mut g) = attention_loss(att, &targets.images, &targets.masks)?;
        breakdown.attention = weights.attention * v.f64();
        scale(&mut g, weights.attention);
        grad_attention = Some(g);
    }
    if weights.representation != 0.0 {
        let (v, mut g) = structured_loss(&outputs.embedding, &targets.one_hot, manifold)?;
        breakdown.representation = weights.representation * v.f64();
        scale(&mut g, weights.representation);
        grad_embedding = Some(g);
    }
    if weights.classification != 0.0 {
        let (v, mut g) = classification_loss(&outputs.class_scores, &targets.one_hot)?;
        breakdown.classification = weights.classification * v.f64();
        scale(&mut g, weights.classification);
        grad_scores = Some(g);
    }
    breakdown.total = breakdown.attention + breakdown.representation + breakdown.classification;
    Ok(JointLoss {
        breakdown,
        grad_attention,
        grad_embedding,
        grad_scores,
    })
}
