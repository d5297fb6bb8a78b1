//! Noise-robustness curves for a base model and its per-level fine-tunes.
//!
//! `cargo run --release --example noise_robustness -- [out_dir]`

use std::path::PathBuf;

use feratt::evaluation::{noise_robustness_curve, write_comparison_csv, CurveModels};
use feratt::network::ModelArm;
use feratt::renderer::{render_dataset, toy_background_set, toy_face_set, RenderConfig};
use feratt::training::{noise_finetune_sweep, train, StopCriteria, TrainConfig};

fn main() -> feratt::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("feratt-noise"));
    std::fs::create_dir_all(&out)?;
    let faces = toy_face_set(4, 4, 5)?;
    let backgrounds = toy_background_set(4, 160, 5);
    let train_set = render_dataset(&faces, &backgrounds, 32, 5, 4, &RenderConfig::default())?;
    let test_set = render_dataset(&faces, &backgrounds, 32, 6, 4, &RenderConfig::default())?;

    let base = train(&train_set, None, &TrainConfig::overfit(ModelArm::AttRepCls))?.checkpoint;
    let sigmas = [0.05, 0.1, 0.2, 0.3];
    let tune = TrainConfig {
        epochs: 5,
        stop: StopCriteria::default(),
        ..base.train_config.clone()
    };
    let tuned: Vec<_> = noise_finetune_sweep(&base, &sigmas, &train_set, None, &tune)?
        .into_iter()
        .map(|p| (p.sigma, p.outcome.checkpoint))
        .collect();

    let base_curve = noise_robustness_curve(CurveModels::Single(&base), &test_set, &sigmas, 0)?;
    let tuned_curve = noise_robustness_curve(CurveModels::PerSigma(&tuned), &test_set, &[], 0)?;
    let csv = out.join("comparison.csv");
    write_comparison_csv(&[("base".into(), base_curve), ("finetuned".into(), tuned_curve)], &csv)?;
    print!("{}", std::fs::read_to_string(&csv)?);
    Ok(())
}
