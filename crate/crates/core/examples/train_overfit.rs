//! Trains the three model arms on the 32-sample overfit suite and prints their records.
//!
//! `cargo run --release --example train_overfit`

use feratt::network::ModelArm;
use feratt::renderer::{render_dataset, toy_background_set, toy_face_set, RenderConfig};
use feratt::training::{train, TrainConfig};

fn main() -> feratt::Result<()> {
    let faces = toy_face_set(4, 4, 11)?;
    let backgrounds = toy_background_set(4, 160, 11);
    let ds = render_dataset(&faces, &backgrounds, 32, 11, 4, &RenderConfig::default())?;

    for arm in [ModelArm::Baseline, ModelArm::AttCls, ModelArm::AttRepCls] {
        let start = std::time::Instant::now();
        let out = train(&ds, None, &TrainConfig::overfit(arm))?;
        let r = &out.record;
        println!(
            "{arm}: {} epochs in {:.1?}, train accuracy {:.3}, attention loss {:?}",
            r.epochs.len(),
            start.elapsed(),
            r.final_train_accuracy,
            r.final_attention_loss
        );
        for e in r.epochs.iter().step_by(10) {
            println!(
                "  epoch {:3}  att {:.4}  rep {:.4}  cls {:.4}  acc {:.3}",
                e.epoch, e.loss.attention, e.loss.representation, e.loss.classification, e.train_accuracy
            );
        }
    }
    Ok(())
}
