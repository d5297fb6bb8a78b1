//! The `feratt` command line: one entry point with a subcommand per stage.
//!
//! Exit codes: 0 success, 1 runtime failure (e.g. a diverging loss),
//! 2 usage or configuration error, 3 I/O error, 4 version mismatch.

pub mod experiment;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{config, Error, Result};
use crate::evaluation::{
    self, attention_map_dump, export_embeddings, noise_robustness_curve, stats, write_comparison_csv, CurveModels,
    NoiseCurve, ATTENTION_DUMP_SIGMAS,
};
use crate::image::ImageTensor;
use crate::network::ModelArm;
use crate::renderer::{
    load_backgrounds, load_faces, load_rendered, render_dataset, save_rendered, toy_background_set, toy_face_set,
    Expression, RenderedDataset, MAX_TOY_CLASSES,
};
use crate::training::{
    self, make_folds, noise_finetune_sweep, Checkpoint, StopCriteria, TrainConfig, FINETUNE_EPOCHS,
};
pub use experiment::{
    dataset_digest, directory_digest, ExperimentConfig, ExperimentManifest, CONFIG_ENV, EXPERIMENT_MANIFEST_FILE,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_VERSION: i32 = 4;

/// Side length of the procedural backgrounds used by `render-dataset --toy`.
pub const TOY_BACKGROUND_SIZE: usize = 160;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Unsupported(_) | Error::Contract(_) => EXIT_USAGE,
        Error::Json(e) if !e.is_io() => EXIT_USAGE,
        Error::Io(_) | Error::Json(_) | Error::Image(_) | Error::Csv(_) | Error::DigestMismatch { .. } => EXIT_IO,
        Error::VersionMismatch(_) => EXIT_VERSION,
        Error::DegenerateSample(_)
        | Error::DivisionGuard(_)
        | Error::DegeneratePosterior(_)
        | Error::NonFiniteLoss { .. } => EXIT_FAILURE,
    }
}

#[derive(Debug, Parser)]
#[command(name = "feratt", version, about = "Facial expression recognition with attention: data, training and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Composite faces onto backgrounds and write images, masks and a manifest.
    #[command(alias = "render")]
    RenderDataset(RenderArgs),
    /// Train one model arm and write its checkpoint and training record.
    Train(TrainArgs),
    /// Score checkpoints on a rendered dataset, optionally under input noise.
    #[command(alias = "eval")]
    Evaluate(EvalArgs),
    /// Fine-tune a checkpoint separately at each input-noise level.
    #[command(alias = "sweep")]
    NoiseSweep(SweepArgs),
    /// Rank-based comparison of methods over folds.
    #[command(alias = "stats")]
    StatsCompare(StatsArgs),
    /// Write the embedding of every sample as CSV.
    #[command(alias = "export")]
    ExportEmbeddings(ExportArgs),
    /// Save noisy inputs beside their attention images as PNG grids.
    DumpAttention(DumpArgs),
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Face collection laid out as `faces/<class>/*.png` and `masks/<class>/*.png`.
    #[arg(long, conflicts_with = "toy", requires = "backgrounds")]
    pub faces: Option<PathBuf>,
    /// Directory of background images.
    #[arg(long, conflicts_with = "toy", requires = "faces")]
    pub backgrounds: Option<PathBuf>,
    /// Use procedurally drawn faces and backgrounds.
    #[arg(long)]
    pub toy: bool,
    /// Number of toy expression classes.
    #[arg(long, default_value_t = MAX_TOY_CLASSES)]
    pub classes: usize,
    /// Number of toy subjects (one face per subject and class).
    #[arg(long, default_value_t = 4)]
    pub subjects: usize,
    /// Number of toy backgrounds.
    #[arg(long = "toy-backgrounds", default_value_t = 8)]
    pub toy_backgrounds: usize,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Experiment config whose `render` section sets the sampling ranges.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ArmArg {
    Baseline,
    AttCls,
    AttRepCls,
}

impl From<ArmArg> for ModelArm {
    fn from(a: ArmArg) -> Self {
        match a {
            ArmArg::Baseline => ModelArm::Baseline,
            ArmArg::AttCls => ModelArm::AttCls,
            ArmArg::AttRepCls => ModelArm::AttRepCls,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Desk,
    Full,
    Overfit,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Experiment config (falls back to the FERATT_CONFIG environment variable).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from a named preset instead of a config file.
    #[arg(long, value_enum, conflicts_with = "config")]
    pub preset: Option<Preset>,
    #[arg(long, value_enum)]
    pub arm: Option<ArmArg>,
    /// Training dataset (overrides the config's `data.train`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Evaluation dataset (overrides the config's `data.eval`).
    #[arg(long = "eval-data")]
    pub eval_data: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Hold out this many subjects per fold and train on one fold.
    #[arg(long, requires = "fold")]
    pub folds: Option<usize>,
    /// Zero-based fold to train; its held-out subjects become the evaluation set.
    #[arg(long, requires = "folds", conflicts_with = "eval_data")]
    pub fold: Option<usize>,
    #[arg(long = "fold-seed", default_value_t = 0)]
    pub fold_seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint to score; repeat to compare several.
    #[arg(long = "ckpt", required = true)]
    pub ckpts: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Input-noise level of the metrics report.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Also write a noise-robustness curve over these levels.
    #[arg(long, value_delimiter = ',')]
    pub sigmas: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.2,0.3")]
    pub sigmas: Vec<f64>,
    /// Experiment config; the base checkpoint's training settings are used otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Dataset for the base-versus-fine-tuned noise curves.
    #[arg(long = "eval-data")]
    pub eval_data: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TestArg {
    Friedman,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PostHocArg {
    None,
    Nemenyi,
    BonferroniDunn,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// CSV with one column per method and one row per fold; a leading `fold` column is skipped.
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long, value_enum, default_value_t = TestArg::Friedman)]
    pub test: TestArg,
    #[arg(long, value_enum, default_value_t = PostHocArg::None)]
    pub posthoc: PostHocArg,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Control method (name or zero-based column) for Bonferroni-Dunn; defaults to the best mean rank.
    #[arg(long)]
    pub control: Option<String>,
    /// JSON output file; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Output CSV file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Number of leading dataset samples per grid.
    #[arg(long, default_value_t = 4)]
    pub count: usize,
    #[arg(long, value_delimiter = ',')]
    pub sigmas: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let history = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli.command, history) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs a parsed command; `history` is recorded in the experiment manifest.
pub fn execute(command: Command, history: Vec<String>) -> Result<()> {
    match command {
        Command::RenderDataset(a) => cmd_render(a, history),
        Command::Train(a) => cmd_train(a, history),
        Command::Evaluate(a) => cmd_eval(a, history),
        Command::NoiseSweep(a) => cmd_sweep(a, history),
        Command::StatsCompare(a) => cmd_stats(a, history),
        Command::ExportEmbeddings(a) => cmd_export(a, history),
        Command::DumpAttention(a) => cmd_dump(a, history),
    }
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != EXPERIMENT_MANIFEST_FILE) {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn load_dataset(path: &Path, digests: &mut BTreeMap<String, String>) -> Result<RenderedDataset> {
    let ds = load_rendered(path)?;
    digests.insert(path.display().to_string(), dataset_digest(path)?);
    Ok(ds)
}

fn load_checkpoint(path: &Path, digests: &mut BTreeMap<String, String>) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    let ckpt = Checkpoint::from_bytes(&bytes)?;
    digests.insert(path.display().to_string(), training::sha256_hex(&bytes));
    Ok(ckpt)
}

fn check_sigmas(sigmas: &[f64]) -> Result<()> {
    match sigmas.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
        Some(s) => Err(config(format!("noise sigma {s} must be non-negative"))),
        None => Ok(()),
    }
}

fn cmd_render(a: RenderArgs, history: Vec<String>) -> Result<()> {
    if a.count == 0 {
        return Err(config("--count must be at least 1"));
    }
    let (cfg, config_digest) = ExperimentConfig::resolve(a.config.as_deref())?;
    let (faces, backgrounds, class_names) = if a.toy {
        if a.classes == 0 || a.classes > MAX_TOY_CLASSES {
            return Err(config(format!("--classes must lie in 1..={MAX_TOY_CLASSES}")));
        }
        if a.subjects == 0 || a.toy_backgrounds == 0 {
            return Err(config("--subjects and --toy-backgrounds must be at least 1"));
        }
        let names = Expression::ALL[..a.classes].iter().map(|e| e.name().to_string()).collect();
        (
            toy_face_set(a.classes, a.subjects, a.seed)?,
            toy_background_set(a.toy_backgrounds, TOY_BACKGROUND_SIZE, a.seed),
            names,
        )
    } else {
        let (Some(f), Some(b)) = (&a.faces, &a.backgrounds) else {
            return Err(config("either --toy or both --faces and --backgrounds are required"));
        };
        let (faces, names) = load_faces(f)?;
        (faces, load_backgrounds(b)?, names)
    };
    let ds = render_dataset(&faces, &backgrounds, a.count, a.seed, class_names.len(), &cfg.render)?;
    fs::create_dir_all(&a.out)?;
    save_rendered(&ds, &a.out)?;
    write_json(&a.out.join("classes.json"), &class_names)?;
    let artifacts = list_files(&a.out)?;
    let mut digests = BTreeMap::new();
    digests.insert(a.out.display().to_string(), dataset_digest(&a.out)?);
    ExperimentManifest::append(&a.out, history, config_digest, digests, BTreeMap::new(), &artifacts)?;
    println!("rendered {} samples of {} classes into {}", ds.len(), ds.num_classes(), a.out.display());
    Ok(())
}

fn cmd_train(a: TrainArgs, history: Vec<String>) -> Result<()> {
    let (mut exp, config_digest) = match a.preset {
        Some(p) => {
            let arm = a.arm.map_or(ModelArm::AttRepCls, ModelArm::from);
            let train = match p {
                Preset::Desk => TrainConfig::desk(arm),
                Preset::Full => TrainConfig::full_scale(arm),
                Preset::Overfit => TrainConfig::overfit(arm),
            };
            (ExperimentConfig { train, ..Default::default() }, None)
        }
        None => ExperimentConfig::resolve(a.config.as_deref())?,
    };
    let cfg = &mut exp.train;
    if let Some(arm) = a.arm {
        cfg.arm = arm.into();
        if !cfg.arm.uses_attention() {
            cfg.stop.max_attention_loss = None;
        }
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    cfg.validate()?;
    let train_path = a
        .data
        .or(exp.data.train.clone())
        .ok_or_else(|| config("no training data: pass --data or set data.train in the config"))?;
    let mut data_digests = BTreeMap::new();
    let mut train_set = load_dataset(&train_path, &mut data_digests)?;
    let mut eval_set = match a.eval_data.or(exp.data.eval.clone()) {
        Some(p) => Some(load_dataset(&p, &mut data_digests)?),
        None => None,
    };
    if let (Some(k), Some(i)) = (a.folds, a.fold) {
        let subjects: Vec<&str> = train_set.manifest.samples.iter().map(|p| p.subject.as_str()).collect();
        let folds = make_folds(&subjects, k, a.fold_seed)?;
        let split = folds
            .get(i)
            .ok_or_else(|| config(format!("fold {i} out of range for {} folds", folds.len())))?;
        let (tr, te) = split.partition(subjects.iter().copied());
        let test = train_set.subset(&te);
        train_set = train_set.subset(&tr);
        eval_set = Some(test);
        fs::create_dir_all(&a.out)?;
        write_json(&a.out.join("fold.json"), split)?;
    }
    let outcome = training::train(&train_set, eval_set.as_ref(), &exp.train)?;
    fs::create_dir_all(&a.out)?;
    let ckpt_path = a.out.join("final.ckpt");
    let ckpt_digest = outcome.checkpoint.save(&ckpt_path)?;
    let mut record = outcome.record;
    record.checkpoint = Some("final.ckpt".to_string());
    record.write_csv(&a.out.join("train_record.csv"))?;
    record.write_json(&a.out.join("train_summary.json"))?;
    let mut ckpts = BTreeMap::new();
    ckpts.insert(ckpt_path.display().to_string(), ckpt_digest);
    let artifacts = list_files(&a.out)?;
    ExperimentManifest::append(&a.out, history, config_digest, data_digests, ckpts, &artifacts)?;
    println!(
        "trained {} for {} epochs: train accuracy {:.4}{}",
        exp.train.arm.as_str(),
        record.epochs.len(),
        record.final_train_accuracy,
        record.final_attention_loss.map(|l| format!(", attention loss {l:.5}")).unwrap_or_default()
    );
    Ok(())
}

/// Distinct labels for a list of checkpoints: the arm name, suffixed by position on clashes.
fn checkpoint_labels(ckpts: &[Checkpoint]) -> Vec<String> {
    let names: Vec<&str> = ckpts.iter().map(|c| c.arm.as_str()).collect();
    names
        .iter()
        .enumerate()
        .map(|(i, n)| {
            if names.iter().filter(|m| *m == n).count() > 1 {
                format!("{n}-{i}")
            } else {
                n.to_string()
            }
        })
        .collect()
}

fn cmd_eval(a: EvalArgs, history: Vec<String>) -> Result<()> {
    check_sigmas(&[a.noise])?;
    if let Some(s) = &a.sigmas {
        check_sigmas(s)?;
    }
    let mut data_digests = BTreeMap::new();
    let mut ckpt_digests = BTreeMap::new();
    let ds = load_dataset(&a.data, &mut data_digests)?;
    let ckpts = a
        .ckpts
        .iter()
        .map(|p| load_checkpoint(p, &mut ckpt_digests))
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(&a.out)?;
    let labels = checkpoint_labels(&ckpts);
    let mut curves = Vec::new();
    for (label, ckpt) in labels.iter().zip(&ckpts) {
        let report = evaluation::evaluate_with_noise(ckpt, &ds, a.noise, a.seed)?;
        report.write_csv(&a.out.join(format!("metrics_{label}.csv")))?;
        report.write_confusion_csv(&a.out.join(format!("confusion_{label}.csv")))?;
        write_json(&a.out.join(format!("report_{label}.json")), &report)?;
        println!("{label}: accuracy {:.4}, macro F1 {:.4} at noise {}", report.accuracy, report.macro_f1, a.noise);
        if let Some(sigmas) = &a.sigmas {
            let curve = noise_robustness_curve(CurveModels::Single(ckpt), &ds, sigmas, a.seed)?;
            curve.write_csv(&a.out.join(format!("curve_{label}.csv")))?;
            curves.push((label.clone(), curve));
        }
    }
    if !curves.is_empty() {
        write_comparison_csv(&curves, &a.out.join("comparison.csv"))?;
    }
    let artifacts = list_files(&a.out)?;
    ExperimentManifest::append(&a.out, history, None, data_digests, ckpt_digests, &artifacts)?;
    Ok(())
}

fn sigma_dir_name(sigma: f64) -> String {
    format!("sigma_{sigma}")
}

fn cmd_sweep(a: SweepArgs, history: Vec<String>) -> Result<()> {
    check_sigmas(&a.sigmas)?;
    let mut ckpt_digests = BTreeMap::new();
    let mut data_digests = BTreeMap::new();
    let base = load_checkpoint(&a.base, &mut ckpt_digests)?;
    let (exp, config_digest) = match a.config.as_deref() {
        Some(p) => ExperimentConfig::resolve(Some(p))?,
        None => match std::env::var_os(CONFIG_ENV) {
            Some(_) => ExperimentConfig::resolve(None)?,
            None => (
                ExperimentConfig {
                    train: base.train_config.clone(),
                    ..Default::default()
                },
                None,
            ),
        },
    };
    let mut cfg = exp.train.clone();
    cfg.epochs = a.epochs.unwrap_or(FINETUNE_EPOCHS);
    cfg.stop = StopCriteria::default();
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let train_path = a
        .data
        .or(exp.data.train.clone())
        .ok_or_else(|| config("no training data: pass --data or set data.train in the config"))?;
    let train_set = load_dataset(&train_path, &mut data_digests)?;
    let eval_set = match a.eval_data.or(exp.data.eval.clone()) {
        Some(p) => Some(load_dataset(&p, &mut data_digests)?),
        None => None,
    };
    let points = noise_finetune_sweep(&base, &a.sigmas, &train_set, eval_set.as_ref(), &cfg)?;
    fs::create_dir_all(&a.out)?;
    let mut w = csv::Writer::from_path(a.out.join("sweep.csv"))?;
    w.write_record(["sigma", "checkpoint", "sha256", "epochs", "final_train_accuracy"])?;
    let mut swept = Vec::with_capacity(points.len());
    for p in &points {
        let dir = a.out.join(sigma_dir_name(p.sigma));
        fs::create_dir_all(&dir)?;
        let path = dir.join("final.ckpt");
        let digest = p.outcome.checkpoint.save(&path)?;
        p.outcome.record.write_csv(&dir.join("train_record.csv"))?;
        let mut record = p.outcome.record.clone();
        record.checkpoint = Some("final.ckpt".to_string());
        record.write_json(&dir.join("train_summary.json"))?;
        let rel = format!("{}/final.ckpt", sigma_dir_name(p.sigma));
        w.write_record([
            p.sigma.to_string(),
            rel,
            digest.clone(),
            record.epochs.len().to_string(),
            record.final_train_accuracy.to_string(),
        ])?;
        ckpt_digests.insert(path.display().to_string(), digest);
        swept.push((p.sigma, p.outcome.checkpoint.clone()));
        println!("sigma {}: train accuracy {:.4}", p.sigma, record.final_train_accuracy);
    }
    w.flush()?;
    if let Some(eval) = &eval_set {
        let base_curve = noise_robustness_curve(CurveModels::Single(&base), eval, &a.sigmas, cfg.seed)?;
        let tuned: NoiseCurve = noise_robustness_curve(CurveModels::PerSigma(&swept), eval, &[], cfg.seed)?;
        base_curve.write_csv(&a.out.join("curve_base.csv"))?;
        tuned.write_csv(&a.out.join("curve_finetuned.csv"))?;
        write_comparison_csv(
            &[("base".to_string(), base_curve), ("finetuned".to_string(), tuned)],
            &a.out.join("comparison.csv"),
        )?;
    }
    let artifacts = list_files(&a.out)?;
    ExperimentManifest::append(&a.out, history, config_digest, data_digests, ckpt_digests, &artifacts)?;
    Ok(())
}

/// Method names and the `folds × methods` score matrix of a scores CSV.
pub fn read_scores(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let skip = usize::from(header.first().is_some_and(|h| h.eq_ignore_ascii_case("fold")));
    let methods = header[skip..].to_vec();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .skip(skip)
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| config(format!("row {}: {v:?} is not a number", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((methods, rows))
}

fn cmd_stats(a: StatsArgs, history: Vec<String>) -> Result<()> {
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(config("--alpha must lie in (0, 1)"));
    }
    let (methods, scores) = read_scores(&a.scores)?;
    let TestArg::Friedman = a.test;
    let mut result = stats::friedman_test(&scores)?;
    result.methods = methods.clone();
    result.alpha = a.alpha;
    result.posthoc = match a.posthoc {
        PostHocArg::None => None,
        PostHocArg::Nemenyi => Some(stats::nemenyi_posthoc(&result.mean_ranks, result.n, a.alpha)?),
        PostHocArg::BonferroniDunn => {
            let control = match &a.control {
                Some(c) => match methods.iter().position(|m| m == c) {
                    Some(i) => i,
                    None => c
                        .parse::<usize>()
                        .map_err(|_| config(format!("unknown control method {c:?}")))?,
                },
                None => (0..result.k)
                    .min_by(|&i, &j| result.mean_ranks[i].total_cmp(&result.mean_ranks[j]))
                    .expect("k ≥ 2"),
            };
            Some(stats::bonferroni_dunn_posthoc(&result.mean_ranks, result.n, control, a.alpha)?)
        }
    };
    let json = serde_json::to_string_pretty(&result)? + "\n";
    match &a.out {
        Some(path) => {
            let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            fs::create_dir_all(dir)?;
            fs::write(path, &json)?;
            let mut digests = BTreeMap::new();
            digests.insert(a.scores.display().to_string(), training::sha256_hex(&fs::read(&a.scores)?));
            ExperimentManifest::append(dir, history, None, digests, BTreeMap::new(), std::slice::from_ref(path))?;
        }
        None => print!("{json}"),
    }
    Ok(())
}

fn cmd_export(a: ExportArgs, history: Vec<String>) -> Result<()> {
    let mut data_digests = BTreeMap::new();
    let mut ckpt_digests = BTreeMap::new();
    let ds = load_dataset(&a.data, &mut data_digests)?;
    let ckpt = load_checkpoint(&a.ckpt, &mut ckpt_digests)?;
    let table = export_embeddings(&ckpt, &ds)?;
    let dir = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    table.write_csv(&a.out)?;
    ExperimentManifest::append(dir, history, None, data_digests, ckpt_digests, std::slice::from_ref(&a.out))?;
    println!("exported {} embeddings of dimension {}", table.rows.len(), table.dim());
    Ok(())
}

fn cmd_dump(a: DumpArgs, history: Vec<String>) -> Result<()> {
    let sigmas = a.sigmas.clone().unwrap_or_else(|| ATTENTION_DUMP_SIGMAS.to_vec());
    check_sigmas(&sigmas)?;
    let mut data_digests = BTreeMap::new();
    let mut ckpt_digests = BTreeMap::new();
    let ds = load_dataset(&a.data, &mut data_digests)?;
    let ckpt = load_checkpoint(&a.ckpt, &mut ckpt_digests)?;
    if a.count == 0 {
        return Err(config("--count must be at least 1"));
    }
    let images: Vec<ImageTensor> = ds.samples.iter().take(a.count).map(|s| s.image.clone()).collect();
    let paths = attention_map_dump(&ckpt, &images, &sigmas, a.seed, &a.out)?;
    ExperimentManifest::append(&a.out, history, None, data_digests, ckpt_digests, &paths)?;
    println!("wrote {} attention grids to {}", paths.len(), a.out.display());
    Ok(())
}
