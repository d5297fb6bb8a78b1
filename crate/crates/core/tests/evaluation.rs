mod common;

use feratt::evaluation::{evaluate_with_noise, export_embeddings, infer, noisy_inputs, MetricsReport};
use feratt::network::ModelArm;
use feratt::renderer::RenderedDataset;
use feratt::training::{train, TrainConfig, TrainOutcome};
use proptest::prelude::*;

fn quick(data: &RenderedDataset, arm: ModelArm) -> TrainOutcome {
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::overfit(arm)
    };
    train(data, None, &cfg).unwrap()
}

fn small_data() -> RenderedDataset {
    common::overfit_suite().unwrap().subset(&(0..8).collect::<Vec<_>>())
}

#[test]
fn noise_protocol_end_to_end() {
    let data = small_data();
    let (baseline, feratt) = (quick(&data, ModelArm::Baseline), quick(&data, ModelArm::AttRepCls));
    let tmp = tempfile::tempdir().unwrap();
    let (summary, artifacts) = common::noise_protocol(&data, &baseline, &feratt, tmp.path()).unwrap();
    println!("{summary}");
    assert_eq!(artifacts.grids.len(), 7);
    assert!(artifacts.grids[0].ends_with("attention_sigma_0.01.png"));
}

#[test]
fn zero_noise_inputs_are_the_clean_images() {
    let data = small_data();
    let inputs = noisy_inputs(&data.samples, 0.0, 99).unwrap();
    for (a, s) in inputs.iter().zip(&data.samples) {
        assert_eq!(a.data(), s.image.data());
    }
    let noisy = noisy_inputs(&data.samples, 0.1, 99).unwrap();
    assert_eq!(noisy, noisy_inputs(&data.samples, 0.1, 99).unwrap());
    assert_ne!(noisy, noisy_inputs(&data.samples, 0.1, 100).unwrap());
    assert!(noisy.iter().all(|i| i.in_unit_range()));
}

#[test]
fn noisy_evaluation_is_seeded() {
    let data = small_data();
    let run = quick(&data, ModelArm::AttCls);
    let a = evaluate_with_noise(&run.checkpoint, &data, 0.2, 5).unwrap();
    assert_eq!(a, evaluate_with_noise(&run.checkpoint, &data, 0.2, 5).unwrap());
}

#[test]
fn embeddings_cover_the_dataset() {
    let data = small_data();
    let run = quick(&data, ModelArm::AttRepCls);
    let table = export_embeddings(&run.checkpoint, &data).unwrap();
    assert_eq!(table.rows.len(), data.len());
    assert_eq!(table.dim(), 64);
    let model = run.checkpoint.model().unwrap();
    let images: Vec<_> = data.samples.iter().map(|s| s.image.clone()).collect();
    let inf = infer(&model, ModelArm::AttRepCls, &images, false).unwrap();
    for (k, row) in table.rows.iter().enumerate() {
        assert_eq!(row.label, data.samples[k].label);
        assert_eq!(row.embedding, inf.embeddings[k]);
    }
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("emb.csv");
    table.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("id,label,z0,z1,"));
    assert_eq!(text.lines().count(), data.len() + 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn metrics_agree_with_direct_counting(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60)) {
        let (labels, preds): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let r = MetricsReport::from_predictions(&labels, &preds, 4).unwrap();
        let correct = pairs.iter().filter(|(t, p)| t == p).count();
        prop_assert_eq!(r.accuracy, correct as f64 / pairs.len() as f64);
        let mut f1_sum = 0.0;
        for j in 0..4 {
            let tp = pairs.iter().filter(|&&(t, p)| t == j && p == j).count() as f64;
            let fp = pairs.iter().filter(|&&(t, p)| t != j && p == j).count() as f64;
            let fneg = pairs.iter().filter(|&&(t, p)| t == j && p != j).count() as f64;
            // F1 as 2TP / (2TP + FP + FN), zero when the class is absent from both
            let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fneg) };
            prop_assert!((r.per_class_f1[j] - f1).abs() < 1e-12);
            f1_sum += f1;
        }
        prop_assert!((r.macro_f1 - f1_sum / 4.0).abs() < 1e-12);
        let total: u64 = r.confusion.iter().flatten().sum();
        prop_assert_eq!(total as usize, pairs.len());
    }
}
