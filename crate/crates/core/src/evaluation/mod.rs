//! Classification metrics, rank-based method comparison, noise-robustness
//! curves, embedding export and attention-map dumps.

pub mod stats;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::image::ImageTensor;
use crate::network::{FerAtt, ModelArm};
use crate::renderer::{add_gaussian_noise, derive_seed, CompositeSample, RenderedDataset};
use crate::tensor::{Scalar, Tensor};
use crate::training::{Checkpoint, INFERENCE_BATCH};

pub use stats::{
    bonferroni_dunn_posthoc, critical_difference, friedman_exact_p_value, friedman_test, nemenyi_posthoc, PValueMethod,
    PostHoc, StatTestResult,
};

/// Noise levels of the attention-map panels.
pub const ATTENTION_DUMP_SIGMAS: [f64; 7] = [0.01, 0.05, 0.07, 0.09, 0.1, 0.2, 0.3];

/// Index of the largest entry of every row of a `B × c` matrix; ties go to the lowest index.
pub fn argmax_rows<T: Scalar>(scores: &Tensor<T>) -> Vec<usize> {
    let c = scores.shape()[1];
    scores
        .data()
        .chunks(c)
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub num_classes: usize,
    pub sample_count: usize,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class_precision: Vec<f64>,
    pub per_class_recall: Vec<f64>,
    pub per_class_f1: Vec<f64>,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl MetricsReport {
    /// Macro-averaged report; a class never predicted has precision 0.
    pub fn from_predictions(labels: &[usize], predictions: &[usize], num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(config("cannot score an empty prediction set"));
        }
        if labels.len() != predictions.len() {
            return Err(config("labels and predictions differ in length"));
        }
        let mut confusion = vec![vec![0u64; num_classes]; num_classes];
        for (&t, &p) in labels.iter().zip(predictions) {
            if t >= num_classes || p >= num_classes {
                return Err(config(format!("class index out of range for {num_classes} classes")));
            }
            confusion[t][p] += 1;
        }
        let mut precision = Vec::with_capacity(num_classes);
        let mut recall = Vec::with_capacity(num_classes);
        let mut f1 = Vec::with_capacity(num_classes);
        for j in 0..num_classes {
            let tp = confusion[j][j];
            let predicted: u64 = confusion.iter().map(|r| r[j]).sum();
            let actual: u64 = confusion[j].iter().sum();
            let (p, r) = (ratio(tp, predicted), ratio(tp, actual));
            precision.push(p);
            recall.push(r);
            f1.push(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) });
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / num_classes as f64;
        let trace: u64 = (0..num_classes).map(|j| confusion[j][j]).sum();
        Ok(Self {
            num_classes,
            sample_count: labels.len(),
            accuracy: ratio(trace, labels.len() as u64),
            macro_precision: mean(&precision),
            macro_recall: mean(&recall),
            macro_f1: mean(&f1),
            per_class_precision: precision,
            per_class_recall: recall,
            per_class_f1: f1,
            confusion,
        })
    }

    /// Per-class rows followed by a `macro` row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["class", "precision", "recall", "f1", "support"])?;
        for j in 0..self.num_classes {
            let support: u64 = self.confusion[j].iter().sum();
            w.write_record([
                j.to_string(),
                self.per_class_precision[j].to_string(),
                self.per_class_recall[j].to_string(),
                self.per_class_f1[j].to_string(),
                support.to_string(),
            ])?;
        }
        w.write_record([
            "macro".to_string(),
            self.macro_precision.to_string(),
            self.macro_recall.to_string(),
            self.macro_f1.to_string(),
            self.sample_count.to_string(),
        ])?;
        w.flush()?;
        Ok(())
    }

    pub fn write_confusion_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["truth".to_string()];
        header.extend((0..self.num_classes).map(|j| format!("pred{j}")));
        w.write_record(&header)?;
        for (j, row) in self.confusion.iter().enumerate() {
            let mut rec = vec![j.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Network outputs for a set of images, one entry per image.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub predictions: Vec<usize>,
    pub scores: Vec<Vec<f32>>,
    pub embeddings: Vec<Vec<f32>>,
    /// Present for attention arms when requested.
    pub attention: Option<Vec<ImageTensor>>,
}

/// Runs the model in inference mode over `images` in fixed-size batches.
pub fn infer(model: &FerAtt<f32>, arm: ModelArm, images: &[ImageTensor], keep_attention: bool) -> Result<Inference> {
    let mut out = Inference {
        predictions: Vec::with_capacity(images.len()),
        scores: Vec::with_capacity(images.len()),
        embeddings: Vec::with_capacity(images.len()),
        attention: (keep_attention && arm.uses_attention()).then(Vec::new),
    };
    for chunk in images.chunks(INFERENCE_BATCH) {
        let batch = ImageTensor::batch(chunk)?;
        let o = model.forward(&batch, arm)?;
        out.predictions.extend(argmax_rows(&o.class_scores));
        let c = o.class_scores.shape()[1];
        out.scores.extend(o.class_scores.data().chunks(c).map(<[f32]>::to_vec));
        let d = o.embedding.shape()[1];
        out.embeddings.extend(o.embedding.data().chunks(d).map(<[f32]>::to_vec));
        if let (Some(acc), Some(att)) = (out.attention.as_mut(), &o.attention_image) {
            for i in 0..chunk.len() {
                acc.push(ImageTensor::from_chw(att, i));
            }
        }
    }
    Ok(out)
}

fn check_eval_set(checkpoint: &Checkpoint, dataset: &RenderedDataset) -> Result<()> {
    if dataset.is_empty() {
        return Err(config("evaluation set is empty"));
    }
    let c = checkpoint.network.num_classes;
    if dataset.num_classes() != c {
        return Err(config(format!(
            "dataset has {} classes, checkpoint expects {c}",
            dataset.num_classes()
        )));
    }
    Ok(())
}

/// Images of `samples`, corrupted with seeded Gaussian noise when `sigma > 0`.
/// The noise seed of every sample derives from its render index, so the
/// corruption does not depend on dataset order.
pub fn noisy_inputs(samples: &[CompositeSample], sigma: f64, seed: u64) -> Result<Vec<ImageTensor>> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(config(format!("noise sigma {sigma} must be non-negative")));
    }
    samples
        .iter()
        .map(|s| {
            if sigma == 0.0 {
                Ok(s.image.clone())
            } else {
                add_gaussian_noise(&s.image, sigma, derive_seed(seed, s.provenance.index as u64))
            }
        })
        .collect()
}

/// Clean-input metrics of `checkpoint` on `dataset`.
pub fn evaluate(checkpoint: &Checkpoint, dataset: &RenderedDataset) -> Result<MetricsReport> {
    evaluate_with_noise(checkpoint, dataset, 0.0, 0)
}

pub fn evaluate_with_noise(checkpoint: &Checkpoint, dataset: &RenderedDataset, sigma: f64, seed: u64) -> Result<MetricsReport> {
    check_eval_set(checkpoint, dataset)?;
    let inputs = noisy_inputs(&dataset.samples, sigma, seed)?;
    let inf = infer(&checkpoint.model()?, checkpoint.arm, &inputs, false)?;
    MetricsReport::from_predictions(&dataset.labels(), &inf.predictions, checkpoint.network.num_classes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisePoint {
    pub sigma: f64,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseCurve {
    pub seed: u64,
    pub points: Vec<NoisePoint>,
}

impl NoiseCurve {
    pub fn accuracies(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.report.accuracy).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["sigma", "accuracy", "macro_precision", "macro_recall", "macro_f1", "samples"])?;
        for p in &self.points {
            let r = &p.report;
            w.write_record([
                p.sigma.to_string(),
                r.accuracy.to_string(),
                r.macro_precision.to_string(),
                r.macro_recall.to_string(),
                r.macro_f1.to_string(),
                r.sample_count.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Models evaluated by a noise curve.
#[derive(Clone, Copy, Debug)]
pub enum CurveModels<'a> {
    /// One model evaluated at every noise level.
    Single(&'a Checkpoint),
    /// A model per noise level, typically from the fine-tuning sweep;
    /// each is evaluated at its own level.
    PerSigma(&'a [(f64, Checkpoint)]),
}

/// Metrics at every noise level.
pub fn noise_robustness_curve(
    models: CurveModels<'_>,
    dataset: &RenderedDataset,
    sigmas: &[f64],
    seed: u64,
) -> Result<NoiseCurve> {
    let pairs: Vec<(f64, &Checkpoint)> = match models {
        CurveModels::Single(c) => sigmas.iter().map(|&s| (s, c)).collect(),
        CurveModels::PerSigma(list) => {
            if !sigmas.is_empty() && sigmas.len() != list.len() {
                return Err(config("per-sigma curve takes its levels from the checkpoints"));
            }
            list.iter().map(|(s, c)| (*s, c)).collect()
        }
    };
    let points = pairs
        .into_iter()
        .map(|(sigma, ckpt)| {
            Ok(NoisePoint {
                sigma,
                report: evaluate_with_noise(ckpt, dataset, sigma, seed)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NoiseCurve { seed, points })
}

/// Accuracy of several named curves side by side, one row per noise level.
pub fn write_comparison_csv(curves: &[(String, NoiseCurve)], path: &Path) -> Result<()> {
    let Some((_, first)) = curves.first() else {
        return Err(config("no curves to compare"));
    };
    let sigmas: Vec<f64> = first.points.iter().map(|p| p.sigma).collect();
    for (name, c) in curves {
        if c.points.iter().map(|p| p.sigma).ne(sigmas.iter().copied()) {
            return Err(config(format!("curve {name} uses different noise levels")));
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["sigma".to_string()];
    header.extend(curves.iter().map(|(n, _)| format!("{n}_accuracy")));
    w.write_record(&header)?;
    for (i, s) in sigmas.iter().enumerate() {
        let mut rec = vec![s.to_string()];
        rec.extend(curves.iter().map(|(_, c)| c.points[i].report.accuracy.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub id: usize,
    pub label: usize,
    pub embedding: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub rows: Vec<EmbeddingRow>,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.embedding.len())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["id".to_string(), "label".to_string()];
        header.extend((0..self.dim()).map(|k| format!("z{k}")));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.id.to_string(), r.label.to_string()];
            rec.extend(r.embedding.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Mean embedding of every class present in the table.
    pub fn class_means(&self, num_classes: usize) -> Vec<Option<Vec<f64>>> {
        let d = self.dim();
        let mut sums = vec![vec![0.0; d]; num_classes];
        let mut counts = vec![0usize; num_classes];
        for r in &self.rows {
            counts[r.label] += 1;
            for (s, v) in sums[r.label].iter_mut().zip(&r.embedding) {
                *s += *v as f64;
            }
        }
        sums.into_iter()
            .zip(counts)
            .map(|(s, n)| (n > 0).then(|| s.into_iter().map(|v| v / n as f64).collect()))
            .collect()
    }
}

/// Embedding of every sample, identified by its render index.
pub fn export_embeddings(checkpoint: &Checkpoint, dataset: &RenderedDataset) -> Result<EmbeddingTable> {
    check_eval_set(checkpoint, dataset)?;
    let images: Vec<ImageTensor> = dataset.samples.iter().map(|s| s.image.clone()).collect();
    let inf = infer(&checkpoint.model()?, checkpoint.arm, &images, false)?;
    Ok(EmbeddingTable {
        rows: dataset
            .samples
            .iter()
            .zip(inf.embeddings)
            .map(|(s, embedding)| EmbeddingRow {
                id: s.provenance.index,
                label: s.label,
                embedding,
            })
            .collect(),
    })
}

/// For every class mean, the index of the nearest anchor.
pub fn nearest_anchors(table: &EmbeddingTable, anchors: &[Vec<f64>]) -> Vec<Option<usize>> {
    table
        .class_means(anchors.len())
        .into_iter()
        .map(|mean| {
            mean.map(|m| {
                let dist = |a: &Vec<f64>| a.iter().zip(&m).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
                (0..anchors.len())
                    .min_by(|&i, &j| dist(&anchors[i]).total_cmp(&dist(&anchors[j])))
                    .expect("at least one anchor")
            })
        })
        .collect()
}

/// Mean attention-image intensity inside and outside the ground-truth masks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionConcentration {
    pub inside_mean: f64,
    pub outside_mean: f64,
}

impl AttentionConcentration {
    pub fn ratio(&self) -> f64 {
        self.inside_mean / self.outside_mean.max(f64::MIN_POSITIVE)
    }
}

pub fn attention_concentration(checkpoint: &Checkpoint, dataset: &RenderedDataset) -> Result<AttentionConcentration> {
    check_eval_set(checkpoint, dataset)?;
    if !checkpoint.arm.uses_attention() {
        return Err(config(format!("arm {} has no attention branch", checkpoint.arm.as_str())));
    }
    let images: Vec<ImageTensor> = dataset.samples.iter().map(|s| s.image.clone()).collect();
    let inf = infer(&checkpoint.model()?, checkpoint.arm, &images, true)?;
    let (mut inside, mut outside, mut n_in, mut n_out) = (0.0, 0.0, 0usize, 0usize);
    for (s, att) in dataset.samples.iter().zip(inf.attention.unwrap_or_default()) {
        let ch = att.channels();
        for (px, m) in att.data().chunks(ch).zip(s.mask.data()) {
            let v = px.iter().map(|&v| v as f64).sum::<f64>() / ch as f64;
            if *m >= 0.5 {
                inside += v;
                n_in += 1;
            } else {
                outside += v;
                n_out += 1;
            }
        }
    }
    if n_in == 0 || n_out == 0 {
        return Err(config("masks must cover part but not all of the images"));
    }
    Ok(AttentionConcentration {
        inside_mean: inside / n_in as f64,
        outside_mean: outside / n_out as f64,
    })
}

/// For every noise level writes `attention_sigma_<σ>.png`: one row per image
/// showing the noisy input beside its attention image, each clamped to `[0, 1]`.
pub fn attention_map_dump(
    checkpoint: &Checkpoint,
    images: &[ImageTensor],
    sigmas: &[f64],
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if !checkpoint.arm.uses_attention() {
        return Err(config(format!("arm {} has no attention branch", checkpoint.arm.as_str())));
    }
    if images.is_empty() {
        return Err(config("no images to dump"));
    }
    fs::create_dir_all(out_dir)?;
    let model = checkpoint.model()?;
    let mut paths = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(config(format!("noise sigma {sigma} must be non-negative")));
        }
        let noisy = images
            .iter()
            .enumerate()
            .map(|(i, img)| add_gaussian_noise(img, sigma, derive_seed(seed, i as u64)))
            .collect::<Result<Vec<_>>>()?;
        let inf = infer(&model, checkpoint.arm, &noisy, true)?;
        let rows = noisy
            .iter()
            .zip(inf.attention.unwrap_or_default())
            .map(|(n, mut a)| {
                a.clamp01();
                ImageTensor::hconcat(&[n.clone(), a])
            })
            .collect::<Result<Vec<_>>>()?;
        let grid = ImageTensor::vconcat(&rows)?;
        let path = out_dir.join(format!("attention_sigma_{sigma:.2}.png"));
        grid.save_png(&path)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_first_of_ties() {
        let t = Tensor::from_vec(&[3, 3], vec![0.1f32, 0.7, 0.2, 0.5, 0.5, 0.0, -1.0, -2.0, -0.5]);
        assert_eq!(argmax_rows(&t), [1, 0, 2]);
    }

    #[test]
    fn all_correct_report() {
        let labels = [0, 1, 2, 1, 0];
        let r = MetricsReport::from_predictions(&labels, &labels, 3).unwrap();
        assert_eq!((r.accuracy, r.macro_f1), (1.0, 1.0));
        for (j, row) in r.confusion.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                assert_eq!(*v > 0, j == k);
            }
        }
    }

    #[test]
    fn single_class_predictions_on_balanced_data() {
        let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let r = MetricsReport::from_predictions(&labels, &[0; 40], 4).unwrap();
        // class 0: precision 10/40, recall 1 → F1 = 2·0.25/1.25 = 0.4
        assert_eq!(r.accuracy, 0.25);
        assert!((r.per_class_f1[0] - 0.4).abs() < 1e-15);
        assert_eq!(&r.per_class_f1[1..], [0.0; 3]);
        assert!((r.macro_f1 - 0.1).abs() < 1e-15);
    }

    #[test]
    fn confusion_margins() {
        let labels = [0, 0, 1, 2, 2, 2];
        let preds = [0, 2, 1, 2, 0, 2];
        let r = MetricsReport::from_predictions(&labels, &preds, 3).unwrap();
        let rows: Vec<u64> = r.confusion.iter().map(|r| r.iter().sum()).collect();
        let cols: Vec<u64> = (0..3).map(|j| r.confusion.iter().map(|r| r[j]).sum()).collect();
        assert_eq!(rows, [2, 1, 3]);
        assert_eq!(cols, [2, 1, 3]);
        assert!(MetricsReport::from_predictions(&[], &[], 3).is_err());
    }
}
