//! Optimization harness: Adam over the joint objective for each model arm,
//! subject-disjoint folds, checkpoints and the noise fine-tuning sweep.

mod adam;
mod checkpoint;
mod folds;

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, Tape};
use crate::error::{config, Error, Result};
use crate::evaluation::argmax_rows;
use crate::image::ImageTensor;
use crate::losses::{joint_loss, GaussianManifoldConfig, JointLoss, LossBreakdown, LossWeights, SampleTargets};
use crate::network::{FerAtt, ModelArm, NetworkConfig, NetworkOutputs};
use crate::renderer::{add_gaussian_noise, derive_seed, CompositeSample, RenderedDataset};
use crate::tensor::{Scalar, Tensor};

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{sha256_hex, Checkpoint, CheckpointProvenance, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use folds::{make_folds, FoldSplit};

/// Fine-tuning epochs per noise level in the sweep.
pub const FINETUNE_EPOCHS: usize = 10;
pub const OVERFIT_LEARNING_RATE: f64 = 3e-3;
pub const OVERFIT_ATTENTION_WEIGHT: f64 = 30.0;
/// Batch size used for inference passes inside training.
pub const INFERENCE_BATCH: usize = 16;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorMode {
    #[default]
    Empirical,
    Uniform,
}

/// How the class anchors and priors are built for a training split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManifoldSpec {
    pub sigma: f64,
    /// Anchor distance from the origin in units of `sigma`.
    pub radius_sigmas: f64,
    pub priors: PriorMode,
}

impl Default for ManifoldSpec {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            radius_sigmas: crate::losses::DEFAULT_ANCHOR_RADIUS_SIGMAS,
            priors: PriorMode::Empirical,
        }
    }
}

impl ManifoldSpec {
    pub fn build(&self, num_classes: usize, embedding_dim: usize, labels: &[usize]) -> Result<GaussianManifoldConfig> {
        let cfg =
            GaussianManifoldConfig::axis_aligned_with_radius(num_classes, embedding_dim, self.sigma, self.radius_sigmas)?;
        match self.priors {
            PriorMode::Uniform => Ok(cfg),
            PriorMode::Empirical => cfg.with_empirical_priors(labels),
        }
    }
}

/// Early-stopping thresholds, confirmed with an inference pass over the training set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StopCriteria {
    pub train_accuracy: Option<f64>,
    pub max_attention_loss: Option<f64>,
}

impl StopCriteria {
    fn is_set(&self) -> bool {
        self.train_accuracy.is_some() || self.max_attention_loss.is_some()
    }

    fn met(&self, accuracy: f64, attention_loss: Option<f64>) -> bool {
        self.train_accuracy.map_or(true, |t| accuracy >= t)
            && self.max_attention_loss.map_or(true, |t| attention_loss.map_or(true, |a| a <= t))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub arm: ModelArm,
    pub seed: u64,
    pub width_multiplier: f64,
    /// Standard deviation of additive input noise during training.
    pub noise_sigma: f64,
    pub loss_weights: LossWeights,
    pub manifold: ManifoldSpec,
    pub bn_momentum: f64,
    pub stop: StopCriteria,
    /// Store elapsed seconds in the record; off by default so reruns are byte-identical.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk(ModelArm::AttRepCls)
    }
}

impl TrainConfig {
    /// Desk-scale defaults.
    pub fn desk(arm: ModelArm) -> Self {
        Self {
            epochs: 60,
            batch_size: 32,
            optimizer: AdamConfig::default(),
            arm,
            seed: 0,
            width_multiplier: 0.25,
            noise_sigma: 0.0,
            loss_weights: LossWeights::default(),
            manifold: ManifoldSpec::default(),
            bn_momentum: 0.1,
            stop: StopCriteria::default(),
            record_wall_time: false,
        }
    }

    /// Small-data overfit settings: a larger step, small batches and an
    /// attention weight that balances the reconstruction term against the
    /// embedding and classification terms under random initialization.
    pub fn overfit(arm: ModelArm) -> Self {
        let mut optimizer = AdamConfig::default();
        optimizer.learning_rate = OVERFIT_LEARNING_RATE;
        Self {
            epochs: 300,
            batch_size: 8,
            optimizer,
            loss_weights: LossWeights {
                attention: OVERFIT_ATTENTION_WEIGHT,
                ..LossWeights::default()
            },
            stop: StopCriteria {
                train_accuracy: Some(1.0),
                max_attention_loss: arm.uses_attention().then_some(1e-2),
            },
            ..Self::desk(arm)
        }
    }

    /// Full-scale protocol: 60 epochs, 200 samples per batch, full width.
    pub fn full_scale(arm: ModelArm) -> Self {
        Self {
            epochs: 60,
            batch_size: 200,
            width_multiplier: 1.0,
            ..Self::desk(arm)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(config("batch size must be at least 1"));
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && o.learning_rate.is_finite()) {
            return Err(config("learning rate must be positive"));
        }
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.epsilon > 0.0) {
            return Err(config("Adam betas must lie in [0, 1) and epsilon must be positive"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(config("noise sigma must be non-negative"));
        }
        if !(self.width_multiplier > 0.0 && self.width_multiplier.is_finite()) {
            return Err(config("width multiplier must be positive"));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(config("batch-norm momentum must lie in [0, 1]"));
        }
        let w = &self.loss_weights;
        if [w.attention, w.representation, w.classification].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(config("loss weights must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted mean of the batch losses.
    pub loss: LossBreakdown,
    /// Accuracy of the training-mode predictions made during the epoch.
    pub train_accuracy: f64,
    pub eval_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub arm: Option<ModelArm>,
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
    /// Inference-mode training-set accuracy after the final epoch.
    pub final_train_accuracy: f64,
    /// Inference-mode attention loss on the training set after the final epoch.
    pub final_attention_loss: Option<f64>,
    pub checkpoint: Option<String>,
    pub wall_time_secs: Option<f64>,
}

impl TrainRecord {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "epoch",
            "loss_attention",
            "loss_representation",
            "loss_classification",
            "loss_total",
            "train_accuracy",
            "eval_accuracy",
        ])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.loss.attention.to_string(),
                e.loss.representation.to_string(),
                e.loss.classification.to_string(),
                e.loss.total.to_string(),
                e.train_accuracy.to_string(),
                e.eval_accuracy.map(|a| a.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Clean images, masks and one-hot labels for a list of samples.
pub fn batch_targets<T: Scalar>(samples: &[&CompositeSample], num_classes: usize) -> Result<SampleTargets<T>> {
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    Ok(SampleTargets {
        images: ImageTensor::batch(samples.iter().map(|s| &s.image))?,
        masks: ImageTensor::batch(samples.iter().map(|s| &s.mask))?,
        one_hot: SampleTargets::one_hot_labels(&labels, num_classes),
    })
}

/// Result of one forward/backward pass.
pub struct StepOutput<T: Scalar> {
    pub loss: JointLoss<T>,
    pub outputs: NetworkOutputs<T>,
    pub grads: Gradients<T>,
    pub tape: Tape<T>,
}

/// Forward `inputs` through `arm`, evaluate the weighted joint loss against
/// `targets` and back-propagate it.
pub fn compute_gradients<T: Scalar>(
    model: &FerAtt<T>,
    inputs: &Tensor<T>,
    targets: &SampleTargets<T>,
    arm: ModelArm,
    weights: &LossWeights,
    manifold: &GaussianManifoldConfig,
    training: bool,
) -> Result<StepOutput<T>> {
    let mut tape = Tape::new();
    let x = tape.input(inputs.clone());
    let vars = model.forward_on_tape(&mut tape, x, arm, training);
    let outputs = vars.outputs(&tape);
    let loss = joint_loss(&outputs, targets, manifold, weights)?;
    let mut seeds = Vec::new();
    if let (Some(v), Some(g)) = (vars.attention_image, &loss.grad_attention) {
        seeds.push((v, g.clone()));
    }
    if let Some(g) = &loss.grad_embedding {
        seeds.push((vars.embedding, g.clone()));
    }
    if let Some(g) = &loss.grad_scores {
        seeds.push((vars.class_scores, g.clone()));
    }
    let grads = tape.backward(seeds);
    Ok(StepOutput {
        loss,
        outputs,
        grads,
        tape,
    })
}

fn check_finite(b: &LossBreakdown, epoch: usize, batch: usize) -> Result<()> {
    for (term, value) in [
        ("attention", b.attention),
        ("representation", b.representation),
        ("classification", b.classification),
        ("total", b.total),
    ] {
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch,
                term,
                value,
            });
        }
    }
    Ok(())
}

/// Inference-mode accuracy and (for attention arms) mean attention loss over `samples`.
fn inference_metrics(
    model: &FerAtt<f32>,
    samples: &[CompositeSample],
    arm: ModelArm,
    num_classes: usize,
) -> Result<(f64, Option<f64>)> {
    let (mut correct, mut att_sum) = (0usize, 0.0);
    for chunk in samples.chunks(INFERENCE_BATCH) {
        let refs: Vec<&CompositeSample> = chunk.iter().collect();
        let targets = batch_targets::<f32>(&refs, num_classes)?;
        let out = model.forward(&targets.images, arm)?;
        let pred = argmax_rows(&out.class_scores);
        correct += pred.iter().zip(chunk).filter(|(p, s)| **p == s.label).count();
        if let Some(att) = &out.attention_image {
            let (v, _) = crate::losses::attention_loss(att, &targets.images, &targets.masks)?;
            att_sum += v as f64 * chunk.len() as f64;
        }
    }
    let n = samples.len() as f64;
    Ok((correct as f64 / n, arm.uses_attention().then_some(att_sum / n)))
}

/// A trained model together with its record.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub record: TrainRecord,
}

fn check_dataset(ds: &RenderedDataset, num_classes: usize) -> Result<()> {
    if ds.is_empty() {
        return Err(config("training set is empty"));
    }
    if ds.num_classes() != num_classes {
        return Err(config(format!(
            "dataset has {} classes, model expects {num_classes}",
            ds.num_classes()
        )));
    }
    for s in &ds.samples {
        if s.label >= num_classes || !s.image.in_unit_range() || s.image.dims() != (128, 128, 3) {
            return Err(config(format!("sample {} violates the composite contract", s.provenance.index)));
        }
    }
    Ok(())
}

/// Trains a freshly initialised model on `train_set`.
pub fn train(train_set: &RenderedDataset, eval_set: Option<&RenderedDataset>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let c = train_set.num_classes();
    let net = NetworkConfig::new(c, cfg.width_multiplier);
    let model = FerAtt::new(net.clone(), cfg.seed)?;
    let manifold = cfg.manifold.build(c, net.embedding_dim, &train_set.labels())?;
    fit(model, manifold, train_set, eval_set, cfg, CheckpointProvenance::default())
}

/// Continues training `base` with `cfg` (arm and width are taken from the checkpoint).
pub fn fine_tune(
    base: &Checkpoint,
    train_set: &RenderedDataset,
    eval_set: Option<&RenderedDataset>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let cfg = TrainConfig {
        arm: base.arm,
        width_multiplier: base.network.width_multiplier,
        ..cfg.clone()
    };
    cfg.validate()?;
    let provenance = CheckpointProvenance {
        base_digest: Some(base.digest()?),
        ..Default::default()
    };
    fit(base.model()?, base.manifold.clone(), train_set, eval_set, &cfg, provenance)
}

fn fit(
    mut model: FerAtt<f32>,
    manifold: GaussianManifoldConfig,
    train_set: &RenderedDataset,
    eval_set: Option<&RenderedDataset>,
    cfg: &TrainConfig,
    mut provenance: CheckpointProvenance,
) -> Result<TrainOutcome> {
    let start = Instant::now();
    let c = model.config().num_classes;
    check_dataset(train_set, c)?;
    if let Some(e) = eval_set {
        check_dataset(e, c)?;
    }
    let arm = cfg.arm;
    let weights = cfg.loss_weights.masked(arm);
    let mut adam = Adam::new(cfg.optimizer, model.params().len());
    let momentum = cfg.bn_momentum as f32;
    let mut record = TrainRecord {
        arm: Some(arm),
        ..Default::default()
    };
    let n = train_set.len();
    for epoch in 1..=cfg.epochs {
        let epoch_seed = derive_seed(cfg.seed, epoch as u64);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        let mut sum = LossBreakdown::default();
        let mut correct = 0usize;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let samples: Vec<&CompositeSample> = idx.iter().map(|&i| &train_set.samples[i]).collect();
            let targets = batch_targets::<f32>(&samples, c)?;
            let inputs = if cfg.noise_sigma > 0.0 {
                let noisy = idx
                    .iter()
                    .map(|&i| add_gaussian_noise(&train_set.samples[i].image, cfg.noise_sigma, derive_seed(epoch_seed, i as u64)))
                    .collect::<Result<Vec<_>>>()?;
                ImageTensor::batch(&noisy)?
            } else {
                targets.images.clone()
            };
            let step = compute_gradients(&model, &inputs, &targets, arm, &weights, &manifold, true)?;
            let b = step.loss.breakdown;
            check_finite(&b, epoch, bi + 1)?;
            model.params_mut().apply_stat_updates(&step.tape, momentum);
            adam.step(model.params_mut(), &step.grads);
            let k = idx.len() as f64;
            sum.attention += b.attention * k;
            sum.representation += b.representation * k;
            sum.classification += b.classification * k;
            sum.total += b.total * k;
            let pred = argmax_rows(&step.outputs.class_scores);
            correct += pred.iter().zip(&samples).filter(|(p, s)| **p == s.label).count();
        }
        let nf = n as f64;
        let loss = LossBreakdown {
            attention: sum.attention / nf,
            representation: sum.representation / nf,
            classification: sum.classification / nf,
            total: sum.total / nf,
        };
        let train_accuracy = correct as f64 / nf;
        let eval_accuracy = match eval_set {
            Some(e) => Some(inference_metrics(&model, &e.samples, arm, c)?.0),
            None => None,
        };
        record.epochs.push(EpochRecord {
            epoch,
            loss,
            train_accuracy,
            eval_accuracy,
        });
        let att_running = arm.uses_attention().then_some(loss.attention / weights.attention.max(f64::MIN_POSITIVE));
        if cfg.stop.is_set() && cfg.stop.met(train_accuracy, att_running) {
            let (acc, att) = inference_metrics(&model, &train_set.samples, arm, c)?;
            if cfg.stop.met(acc, att) {
                record.stopped_early = epoch < cfg.epochs;
                break;
            }
        }
    }
    let (acc, att) = inference_metrics(&model, &train_set.samples, arm, c)?;
    record.final_train_accuracy = acc;
    record.final_attention_loss = att;
    if cfg.record_wall_time {
        record.wall_time_secs = Some(start.elapsed().as_secs_f64());
    }
    provenance.noise_sigma = cfg.noise_sigma;
    provenance.epochs_run = record.epochs.len();
    let checkpoint = Checkpoint::from_model(&model, arm, manifold, cfg.clone(), provenance);
    Ok(TrainOutcome { checkpoint, record })
}

/// One fine-tuned model of the noise sweep.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub sigma: f64,
    pub outcome: TrainOutcome,
}

/// Fine-tunes `base` separately for every noise level, each run starting from
/// the base weights with all other settings of `cfg` unchanged.
pub fn noise_finetune_sweep(
    base: &Checkpoint,
    sigmas: &[f64],
    train_set: &RenderedDataset,
    eval_set: Option<&RenderedDataset>,
    cfg: &TrainConfig,
) -> Result<Vec<SweepPoint>> {
    if let Some(s) = sigmas.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
        return Err(config(format!("noise sigma {s} must be non-negative")));
    }
    if sigmas.windows(2).any(|w| w[0] > w[1]) {
        return Err(config("noise sigmas must be sorted ascending"));
    }
    sigmas
        .iter()
        .map(|&sigma| {
            let run = TrainConfig {
                noise_sigma: sigma,
                ..cfg.clone()
            };
            Ok(SweepPoint {
                sigma,
                outcome: fine_tune(base, train_set, eval_set, &run)?,
            })
        })
        .collect()
}
