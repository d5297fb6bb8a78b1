//! Acceptance checks shared between the per-topic suites and the acceptance runner.
//! Each check returns a one-line summary on success and a reason on failure.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use feratt::evaluation::stats::{critical_difference, friedman_test};
use feratt::evaluation::{
    attention_concentration, attention_map_dump, evaluate, noise_robustness_curve, write_comparison_csv, CurveModels,
    NoiseCurve, ATTENTION_DUMP_SIGMAS,
};
use feratt::image::ImageTensor;
use feratt::losses::{posterior, structured_loss, GaussianManifoldConfig};
use feratt::network::ModelArm;
use feratt::renderer::{
    alpha_composite, load_rendered, luminance_adjust, regenerate, render_dataset, save_rendered, toy_background_set,
    toy_face_set, FaceSample, RenderConfig, RenderedDataset,
};
use feratt::training::{train, TrainConfig, TrainOutcome};
use feratt::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng)).collect()
}

fn one_hot(labels: &[usize], c: usize) -> Tensor<f64> {
    let mut t = vec![0.0; labels.len() * c];
    for (k, &l) in labels.iter().enumerate() {
        t[k * c + l] = 1.0;
    }
    Tensor::from_vec(&[labels.len(), c], t)
}

/// Embeddings spread between the anchors so the posterior is neither flat nor saturated.
fn embeddings_between_anchors(rng: &mut ChaCha8Rng, cfg: &GaussianManifoldConfig, b: usize) -> Tensor<f64> {
    let d = cfg.embedding_dim;
    let mut z = Vec::with_capacity(b * d);
    for _ in 0..b {
        let w: Vec<f64> = (0..cfg.num_classes()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let total: f64 = w.iter().sum();
        let noise = gaussian(rng, d, 0.5 * cfg.sigma);
        for i in 0..d {
            let mix: f64 = cfg.anchors.iter().zip(&w).map(|(a, wj)| a[i] * wj / total).sum();
            z.push(mix + noise[i]);
        }
    }
    Tensor::from_vec(&[b, d], z)
}

pub fn structured_gradient_check() -> Check {
    let start = Instant::now();
    let (b, c, d) = (4, 8, 64);
    let cfg = GaussianManifoldConfig::axis_aligned(c, d, 1.0).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let z = embeddings_between_anchors(&mut rng, &cfg, b);
        let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..c)).collect();
        let t = one_hot(&labels, c);
        let (_, grad) = structured_loss(&z, &t, &cfg).map_err(|e| e.to_string())?;
        let mut numeric = vec![0.0; b * d];
        let mut zp = z.clone();
        for (i, n) in numeric.iter_mut().enumerate() {
            let orig = z.data()[i];
            zp.data_mut()[i] = orig + h;
            let up = structured_loss(&zp, &t, &cfg).map_err(|e| e.to_string())?.0;
            zp.data_mut()[i] = orig - h;
            let down = structured_loss(&zp, &t, &cfg).map_err(|e| e.to_string())?.0;
            zp.data_mut()[i] = orig;
            *n = (up - down) / (2.0 * h);
        }
        let diff: f64 = grad.data().iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let norm_a: f64 = grad.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let norm_n: f64 = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
        ensure!(norm_a > 1e-6, "gradient vanished on a test instance (norm {norm_a:e})");
        worst = worst.max(diff / norm_a.max(norm_n));
    }
    let elapsed = start.elapsed();
    ensure!(worst < 1e-5, "max relative error {worst:e}");
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("max relative error {worst:.2e} over 20 instances in {elapsed:.2?}"))
}

/// Posterior by direct evaluation of the Gaussian densities and Bayes' rule.
pub fn naive_posterior(z: &[f64], cfg: &GaussianManifoldConfig) -> Vec<f64> {
    let d = cfg.embedding_dim as f64;
    let joint: Vec<f64> = cfg
        .anchors
        .iter()
        .zip(&cfg.priors)
        .map(|(mu, p)| {
            let sq: f64 = z.iter().zip(mu).map(|(a, m)| (a - m).powi(2)).sum();
            let density = (-sq / (2.0 * cfg.sigma * cfg.sigma)).exp()
                / (2.0 * std::f64::consts::PI * cfg.sigma * cfg.sigma).powf(d / 2.0);
            density * p
        })
        .collect();
    let total: f64 = joint.iter().sum();
    joint.iter().map(|v| v / total).collect()
}

pub fn posterior_normalization() -> Check {
    let start = Instant::now();
    let (c, d) = (8, 64);
    let cfg = GaussianManifoldConfig::axis_aligned(c, d, 1.0).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    let mut max_norm = 0.0f64;
    for batch in 0..1000 {
        let b = rng.gen_range(1..=8);
        let target_norm = 10f64.powf(rng.gen_range(-3.0..3.0));
        let mut z = Vec::with_capacity(b * d);
        for _ in 0..b {
            let v = gaussian(&mut rng, d, 1.0);
            let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            z.extend(v.iter().map(|x| x * target_norm / len));
        }
        if batch == 0 {
            z[..d].iter_mut().for_each(|v| *v *= 1e3 / target_norm);
        }
        max_norm = max_norm.max(z.chunks(d).map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt()).fold(0.0, f64::max));
        let p: Tensor<f64> = posterior(&Tensor::from_vec(&[b, d], z), &cfg).map_err(|e| e.to_string())?.values;
        for k in 0..b {
            let row = p.row(k);
            ensure!(row.iter().all(|v| v.is_finite() && *v >= 0.0), "batch {batch} row {k} is not a distribution");
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    let elapsed = start.elapsed();
    ensure!(max_norm >= 999.0, "largest embedding norm {max_norm}");
    ensure!(worst <= 1e-9, "row sum off by {worst:e}");
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!("max |row sum − 1| {worst:.1e}, norms up to {max_norm:.0}, in {elapsed:.2?}"))
}

pub fn loss_zero_characterization() -> Check {
    let (c, d) = (4, 16);
    // Anchors far enough apart that the other classes' posteriors underflow to zero.
    let far = GaussianManifoldConfig::axis_aligned_with_radius(c, d, 1.0, 40.0).map_err(|e| e.to_string())?;
    let z = Tensor::from_vec(&[c, d], far.anchors.concat());
    let labels: Vec<usize> = (0..c).collect();
    let p: Tensor<f64> = posterior(&z, &far).map_err(|e| e.to_string())?.values;
    ensure!(p.data() == one_hot(&labels, c).data(), "posterior at the anchors is not one-hot");
    let (at_target, _) = structured_loss(&z, &one_hot(&labels, c), &far).map_err(|e| e.to_string())?;
    ensure!(at_target == 0.0, "loss at a one-hot posterior is {at_target:e}");
    let (off_target, _) = structured_loss(&z, &one_hot(&[1, 2, 3, 0], c), &far).map_err(|e| e.to_string())?;
    ensure!(off_target > 0.0, "loss against wrong targets is {off_target}");

    let cfg = GaussianManifoldConfig::axis_aligned(c, d, 1.0).map_err(|e| e.to_string())?;
    let origin = Tensor::zeros(&[c, d]);
    let p: Tensor<f64> = posterior(&origin, &cfg).map_err(|e| e.to_string())?.values;
    ensure!(p.data().iter().all(|v| (v - 0.25).abs() < 1e-15), "posterior at the origin is not uniform");
    let (uniform, _) = structured_loss(&origin, &one_hot(&labels, c), &cfg).map_err(|e| e.to_string())?;
    let expected = 0.75f64.powi(2) + 3.0 * 0.25f64.powi(2);
    ensure!((uniform - expected).abs() < 1e-12, "uniform posterior loss {uniform}, expected {expected}");
    Ok(format!("one-hot loss {at_target}, uniform loss {uniform} (expected 0.75)"))
}

pub fn constant_image(h: usize, w: usize, c: usize, v: f32) -> ImageTensor {
    ImageTensor::filled(h, w, c, v)
}

/// BT.601 full-range luma.
pub fn luma(p: &[f32]) -> f64 {
    0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
}

pub fn toy_sources(classes: usize, subjects: usize, seed: u64) -> Outcome<(Vec<FaceSample>, Vec<feratt::renderer::BackgroundImage>)> {
    let faces = toy_face_set(classes, subjects, seed).map_err(|e| e.to_string())?;
    Ok((faces, toy_background_set(4, 160, seed)))
}

pub type Outcome<T> = Result<T, String>;

pub fn files_under(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else if p.file_name().unwrap() != "experiment.json" {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

pub fn renderer_exactness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (h, w) = (24, 20);
    let face = ImageTensor::from_fn(h, w, 3, |_, _, _| rng.gen_range(0.0..1.0));
    let bg = ImageTensor::from_fn(h, w, 3, |_, _, _| rng.gen_range(0.0..1.0));
    let ones = constant_image(h, w, 1, 1.0);
    let zeros = constant_image(h, w, 1, 0.0);
    let a = alpha_composite(&face, &ones, &bg).map_err(|e| e.to_string())?;
    ensure!(a.data() == face.data(), "mask ≡ 1 does not return the face bit-exactly");
    let b = alpha_composite(&face, &zeros, &bg).map_err(|e| e.to_string())?;
    ensure!(b.data() == bg.data(), "mask ≡ 0 does not return the background bit-exactly");

    let mut worst = 0.0f64;
    for (g_face, g_bg) in [(0.2f32, 0.6f32), (0.5, 0.25), (0.8, 0.8), (0.05, 0.1), (0.9, 0.3)] {
        let f = constant_image(h, w, 3, g_face);
        let r = constant_image(h, w, 3, g_bg);
        let adjusted = luminance_adjust(&f, &ones, &r).map_err(|e| e.to_string())?;
        // constant gray: I_face = g_face, I_r = g_bg, so the adjusted luma is g_face · g_bg / g_face
        let factor = g_bg as f64 / g_face as f64;
        let expected = g_face as f64 * factor;
        for px in adjusted.data().chunks(3) {
            worst = worst.max((luma(px) - expected).abs());
        }
    }
    ensure!(worst <= 1e-6, "luminance factor error {worst:e}");

    let (faces, backgrounds) = toy_sources(4, 2, 17)?;
    let ds = render_dataset(&faces, &backgrounds, 12, 17, 4, &RenderConfig::default()).map_err(|e| e.to_string())?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (first, second) = (tmp.path().join("a"), tmp.path().join("b"));
    save_rendered(&ds, &first).map_err(|e| e.to_string())?;
    let manifest = load_rendered(&first).map_err(|e| e.to_string())?.manifest;
    let rebuilt = regenerate(&manifest, &faces, &backgrounds).map_err(|e| e.to_string())?;
    save_rendered(&rebuilt, &second).map_err(|e| e.to_string())?;
    let (fa, fb) = (files_under(&first), files_under(&second));
    ensure!(fa.len() == 2 * ds.len() + 1, "expected {} files, found {}", 2 * ds.len() + 1, fa.len());
    ensure!(fa == fb, "regenerated dataset differs from the original");
    Ok(format!("passthrough exact, luminance error {worst:.1e}, {} regenerated files identical", fa.len()))
}

/// The small overfit suite: 32 toy composites over 4 classes.
pub fn overfit_suite() -> Outcome<RenderedDataset> {
    let faces = toy_face_set(4, 4, 11).map_err(|e| e.to_string())?;
    let backgrounds = toy_background_set(4, 160, 11);
    render_dataset(&faces, &backgrounds, 32, 11, 4, &RenderConfig::default()).map_err(|e| e.to_string())
}

pub struct OverfitRuns {
    pub data: RenderedDataset,
    pub feratt: TrainOutcome,
    pub feratt_time: Duration,
    pub baseline: TrainOutcome,
    pub baseline_time: Duration,
}

pub fn overfit_runs() -> Outcome<OverfitRuns> {
    let data = overfit_suite()?;
    let cfg = TrainConfig::overfit(ModelArm::AttRepCls);
    ensure!(cfg.width_multiplier == 0.25 && cfg.epochs == 300, "overfit preset drifted: {cfg:?}");
    let t = Instant::now();
    let feratt = train(&data, None, &cfg).map_err(|e| e.to_string())?;
    let feratt_time = t.elapsed();
    let t = Instant::now();
    let baseline = train(&data, None, &TrainConfig::overfit(ModelArm::Baseline)).map_err(|e| e.to_string())?;
    let baseline_time = t.elapsed();
    Ok(OverfitRuns {
        data,
        feratt,
        feratt_time,
        baseline,
        baseline_time,
    })
}

pub fn overfit_convergence(runs: &OverfitRuns) -> Check {
    let r = &runs.feratt.record;
    let att = r.final_attention_loss.unwrap_or(f64::INFINITY);
    ensure!(r.final_train_accuracy == 1.0, "FERAtt train accuracy {}", r.final_train_accuracy);
    ensure!(att < 1e-2, "attention loss {att}");
    ensure!(r.epochs.len() <= 300, "ran {} epochs", r.epochs.len());
    ensure!(runs.feratt_time < Duration::from_secs(300), "FERAtt training took {:?}", runs.feratt_time);
    let b = &runs.baseline.record;
    ensure!(b.final_train_accuracy == 1.0, "baseline train accuracy {}", b.final_train_accuracy);
    Ok(format!(
        "FERAtt+Rep+Cls acc 1.0, L_att {att:.4} after {} epochs ({:.1?}); baseline acc 1.0 after {} epochs ({:.1?})",
        r.epochs.len(),
        runs.feratt_time,
        b.epochs.len(),
        runs.baseline_time
    ))
}

pub fn attention_concentration_check(runs: &OverfitRuns) -> Check {
    let c = attention_concentration(&runs.feratt.checkpoint, &runs.data).map_err(|e| e.to_string())?;
    ensure!(c.ratio() >= 2.0, "inside {} / outside {} = {}", c.inside_mean, c.outside_mean, c.ratio());
    Ok(format!(
        "inside mean {:.4}, outside mean {:.4}, ratio {:.2}",
        c.inside_mean,
        c.outside_mean,
        c.ratio()
    ))
}

/// Friedman statistic from per-row ranks (1 = best, no ties expected).
fn oracle_statistic(rows: &[Vec<f64>]) -> f64 {
    let (n, k) = (rows.len(), rows[0].len());
    let mut sums = vec![0.0; k];
    for row in rows {
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap());
        for (rank, &j) in order.iter().enumerate() {
            sums[j] += (rank + 1) as f64;
        }
    }
    let expected = n as f64 * (k as f64 + 1.0) / 2.0;
    12.0 / (n as f64 * k as f64 * (k as f64 + 1.0)) * sums.iter().map(|s| (s - expected).powi(2)).sum::<f64>()
}

/// Share of within-row shuffles whose statistic reaches the observed one.
pub fn permutation_p_value(rows: &[Vec<f64>], resamples: usize, seed: u64) -> f64 {
    let observed = oracle_statistic(rows);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = rows.to_vec();
    let mut hits = 0;
    for _ in 0..resamples {
        for row in shuffled.iter_mut() {
            row.shuffle(&mut rng);
        }
        if oracle_statistic(&shuffled) >= observed - 1e-9 {
            hits += 1;
        }
    }
    hits as f64 / resamples as f64
}

/// Score matrices with a planted method effect of size `effect`.
pub fn random_scores(rng: &mut ChaCha8Rng, n: usize, k: usize, effect: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..k).map(|j| effect * j as f64 + rng.gen_range(0.0..1.0)).collect())
        .collect()
}

pub fn statistical_tests() -> Check {
    let perfect: Vec<Vec<f64>> = (0..10).map(|i| vec![3.0 + i as f64, 2.0, 1.0 - i as f64]).collect();
    let r = friedman_test(&perfect).map_err(|e| e.to_string())?;
    ensure!(r.friedman_statistic == 20.0, "perfect ordering statistic {}", r.friedman_statistic);

    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for (n, k) in [(10, 3), (10, 4), (8, 4), (6, 3), (9, 2), (5, 3), (4, 4), (3, 3), (2, 4)] {
        for effect in [0.0, 0.15, 0.3] {
            let rows = random_scores(&mut rng, n, k, effect);
            let p = friedman_test(&rows).map_err(|e| e.to_string())?.p_value;
            let oracle = permutation_p_value(&rows, 10_000, rng.gen());
            worst = worst.max((p - oracle).abs());
            cases += 1;
        }
    }
    ensure!(worst <= 0.02, "p-value deviates from the permutation oracle by {worst}");

    let cd = critical_difference(3, 10, 0.05).map_err(|e| e.to_string())?;
    ensure!((cd - 1.0478).abs() < 1e-3, "critical difference {cd}");
    Ok(format!(
        "statistic 20.0 exact; max |p − p_perm| {worst:.4} over {cases} cases; CD {cd:.4}"
    ))
}

pub struct NoiseArtifacts {
    pub comparison_csv: String,
    pub grids: Vec<PathBuf>,
}

pub fn noise_protocol(data: &RenderedDataset, baseline: &TrainOutcome, feratt: &TrainOutcome, out: &Path) -> Outcome<(String, NoiseArtifacts)> {
    let err = |e: feratt::Error| e.to_string();
    let mut curves: Vec<(String, NoiseCurve)> = Vec::new();
    for (name, ckpt) in [("baseline", &baseline.checkpoint), ("feratt", &feratt.checkpoint)] {
        let plain = evaluate(ckpt, data).map_err(err)?;
        let zero = noise_robustness_curve(CurveModels::Single(ckpt), data, &[0.0], 7).map_err(err)?;
        ensure!(zero.points[0].report == plain, "{name}: σ = 0 curve differs from plain evaluation");
        let a = serde_json::to_vec(&zero.points[0].report).unwrap();
        let b = serde_json::to_vec(&plain).unwrap();
        ensure!(a == b, "{name}: σ = 0 report is not byte-identical");
        curves.push((
            name.to_string(),
            noise_robustness_curve(CurveModels::Single(ckpt), data, &ATTENTION_DUMP_SIGMAS, 7).map_err(err)?,
        ));
    }
    fs::create_dir_all(out).map_err(|e| e.to_string())?;
    let csv = out.join("comparison.csv");
    write_comparison_csv(&curves, &csv).map_err(err)?;
    let text = fs::read_to_string(&csv).map_err(|e| e.to_string())?;
    ensure!(text.lines().count() == 1 + ATTENTION_DUMP_SIGMAS.len(), "comparison CSV has {} lines", text.lines().count());
    ensure!(text.starts_with("sigma,baseline_accuracy,feratt_accuracy"), "unexpected header in {text}");

    let images: Vec<ImageTensor> = data.samples[..4].iter().map(|s| s.image.clone()).collect();
    let grids = attention_map_dump(&feratt.checkpoint, &images, &ATTENTION_DUMP_SIGMAS, 7, &out.join("attention"))
        .map_err(err)?;
    ensure!(grids.len() == 7, "{} attention grids", grids.len());
    for g in &grids {
        let img = ImageTensor::load_rgb(g).map_err(err)?;
        ensure!(img.height() == 4 * 128 && img.width() == 2 * 128, "grid {} is {:?}", g.display(), img.dims());
    }
    let trend: Vec<String> = ATTENTION_DUMP_SIGMAS
        .iter()
        .enumerate()
        .map(|(i, s)| format!("σ {s}: {:.2}/{:.2}", curves[0].1.points[i].report.accuracy, curves[1].1.points[i].report.accuracy))
        .collect();
    Ok((
        format!("σ = 0 bit-equal; 7 grids; baseline/FERAtt accuracy {}", trend.join(", ")),
        NoiseArtifacts {
            comparison_csv: text,
            grids,
        },
    ))
}

pub fn feratt_bin() -> &'static str {
    env!("CARGO_BIN_EXE_feratt")
}

/// Runs the binary in `dir` and returns its exit code and stdout.
pub fn run_cli(dir: &Path, args: &[&str]) -> (i32, String, String) {
    let out = Command::new(feratt_bin())
        .args(args)
        .current_dir(dir)
        .env_remove("FERATT_CONFIG")
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

/// Every subcommand with small settings, all paths relative to the working directory.
pub const PIPELINE: &[&[&str]] = &[
    &["render-dataset", "--toy", "--classes", "3", "--subjects", "2", "--toy-backgrounds", "3", "--count", "12", "--seed", "5", "--out", "train_data"],
    &["render", "--toy", "--classes", "3", "--subjects", "2", "--toy-backgrounds", "3", "--count", "6", "--seed", "6", "--out", "eval_data"],
    &["train", "--config", "cfg.json", "--data", "train_data", "--eval-data", "eval_data", "--seed", "3", "--out", "run"],
    &["train", "--config", "cfg.json", "--arm", "baseline", "--data", "train_data", "--seed", "3", "--out", "run_base"],
    &["evaluate", "--ckpt", "run/final.ckpt", "--ckpt", "run_base/final.ckpt", "--data", "eval_data", "--noise", "0.05", "--sigmas", "0,0.1", "--seed", "2", "--out", "eval"],
    &["noise-sweep", "--base", "run/final.ckpt", "--sigmas", "0.1", "--data", "train_data", "--eval-data", "eval_data", "--epochs", "1", "--seed", "4", "--out", "sweep"],
    &["stats-compare", "--scores", "scores.csv", "--posthoc", "nemenyi", "--out", "stats/nemenyi.json"],
    &["stats-compare", "--scores", "scores.csv", "--posthoc", "bonferroni-dunn", "--control", "a", "--out", "stats/dunn.json"],
    &["export-embeddings", "--ckpt", "run/final.ckpt", "--data", "eval_data", "--out", "emb/embeddings.csv"],
    &["dump-attention", "--ckpt", "run/final.ckpt", "--data", "eval_data", "--count", "2", "--sigmas", "0.01,0.2", "--seed", "1", "--out", "att"],
];

pub const PIPELINE_CONFIG: &str = r#"{
  "schema_version": 1,
  "train": { "epochs": 2, "batch_size": 6, "arm": "att-rep-cls" }
}"#;

pub const PIPELINE_SCORES: &str = "fold,a,b,c\n0,0.9,0.8,0.7\n1,0.85,0.8,0.6\n2,0.7,0.75,0.65\n3,0.95,0.9,0.8\n";

pub fn run_pipeline(dir: &Path) -> Result<(), String> {
    fs::create_dir_all(dir.join("stats")).map_err(|e| e.to_string())?;
    fs::create_dir_all(dir.join("emb")).map_err(|e| e.to_string())?;
    fs::write(dir.join("cfg.json"), PIPELINE_CONFIG).map_err(|e| e.to_string())?;
    fs::write(dir.join("scores.csv"), PIPELINE_SCORES).map_err(|e| e.to_string())?;
    for args in PIPELINE {
        let (code, _, stderr) = run_cli(dir, args);
        ensure!(code == 0, "`feratt {}` exited {code}: {stderr}", args.join(" "));
    }
    Ok(())
}

pub fn cli_determinism() -> Check {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("first"), tmp.path().join("second"));
    run_pipeline(&a)?;
    run_pipeline(&b)?;
    let (fa, fb) = (files_under(&a), files_under(&b));
    ensure!(fa.keys().eq(fb.keys()), "runs produced different file sets");
    for (name, bytes) in &fa {
        ensure!(fb[name] == *bytes, "{name} differs between runs");
    }
    for expected in ["run/final.ckpt", "eval/comparison.csv", "sweep/sweep.csv", "stats/nemenyi.json", "emb/embeddings.csv"] {
        ensure!(fa.contains_key(expected), "missing {expected}");
    }
    ensure!(a.join("run/experiment.json").exists(), "no experiment manifest written");
    Ok(format!(
        "{} commands, {} output files byte-identical across reruns ({:.1?})",
        PIPELINE.len(),
        fa.len(),
        start.elapsed()
    ))
}
