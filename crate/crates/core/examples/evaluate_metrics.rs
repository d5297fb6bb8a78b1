//! Trains on one subject-disjoint fold and reports held-out metrics.
//!
//! `cargo run --release --example evaluate_metrics`

use feratt::evaluation::evaluate;
use feratt::network::ModelArm;
use feratt::renderer::{render_dataset, toy_background_set, toy_face_set, RenderConfig};
use feratt::training::{make_folds, train, TrainConfig};

fn main() -> feratt::Result<()> {
    let faces = toy_face_set(4, 5, 3)?;
    let backgrounds = toy_background_set(4, 160, 3);
    let ds = render_dataset(&faces, &backgrounds, 60, 3, 4, &RenderConfig::default())?;
    let subjects: Vec<&str> = ds.samples.iter().map(|s| s.provenance.subject.as_str()).collect();
    let fold = &make_folds(&subjects, 1, 0)?[0];
    let (train_idx, test_idx) = fold.partition(subjects.iter().copied());
    let (train_set, test_set) = (ds.subset(&train_idx), ds.subset(&test_idx));
    println!("held-out subjects {:?}: {} train / {} test", fold.test_subjects, train_set.len(), test_set.len());

    let cfg = TrainConfig {
        epochs: 40,
        ..TrainConfig::overfit(ModelArm::AttRepCls)
    };
    let out = train(&train_set, Some(&test_set), &cfg)?;
    let report = evaluate(&out.checkpoint, &test_set)?;
    println!(
        "accuracy {:.3}  macro precision {:.3}  macro recall {:.3}  macro F1 {:.3}",
        report.accuracy, report.macro_precision, report.macro_recall, report.macro_f1
    );
    for (truth, row) in report.confusion.iter().enumerate() {
        println!("  class {truth}: {row:?}");
    }
    Ok(())
}
