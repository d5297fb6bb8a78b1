mod common;

use feratt::network::ModelArm;
use feratt::training::{fine_tune, make_folds, noise_finetune_sweep, train, Checkpoint, TrainConfig};
use feratt::Error;

#[test]
fn training_reduces_the_loss_for_every_arm() {
    let data = common::overfit_suite().unwrap().subset(&(0..16).collect::<Vec<_>>());
    for arm in [ModelArm::Baseline, ModelArm::AttCls, ModelArm::AttRepCls] {
        let cfg = TrainConfig {
            epochs: 6,
            stop: Default::default(),
            ..TrainConfig::overfit(arm)
        };
        let out = train(&data, None, &cfg).unwrap();
        let (first, last) = (&out.record.epochs[0], out.record.last().unwrap());
        assert!(last.loss.total < first.loss.total, "{arm}: {} -> {}", first.loss.total, last.loss.total);
        assert_eq!(out.record.epochs.len(), 6);
        assert_eq!(out.checkpoint.arm, arm);
    }
}

#[test]
fn checkpoint_file_round_trip_and_version_guard() {
    let data = common::overfit_suite().unwrap().subset(&[0, 1, 2, 3]);
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::overfit(ModelArm::AttRepCls)
    };
    let out = train(&data, None, &cfg).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("m.ckpt");
    let digest = out.checkpoint.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, out.checkpoint);
    assert_eq!(back.digest().unwrap(), digest);

    let mut bytes = std::fs::read(&path).unwrap();
    bytes[8] = bytes[8].wrapping_add(1);
    assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::VersionMismatch(_))));
}

#[test]
fn sweep_starts_every_level_from_the_base() {
    let data = common::overfit_suite().unwrap().subset(&(0..8).collect::<Vec<_>>());
    let cfg = TrainConfig {
        epochs: 1,
        stop: Default::default(),
        ..TrainConfig::overfit(ModelArm::AttRepCls)
    };
    let base = train(&data, None, &cfg).unwrap().checkpoint;
    let points = noise_finetune_sweep(&base, &[0.05, 0.1], &data, None, &cfg).unwrap();
    let base_digest = base.digest().unwrap();
    for p in &points {
        assert_eq!(p.outcome.checkpoint.provenance.base_digest.as_deref(), Some(base_digest.as_str()));
        assert_eq!(p.outcome.checkpoint.provenance.noise_sigma, p.sigma);
    }
    let single = fine_tune(&base, &data, None, &TrainConfig { noise_sigma: 0.1, ..cfg.clone() }).unwrap();
    assert_eq!(single.checkpoint.params, points[1].outcome.checkpoint.params);
    assert!(noise_finetune_sweep(&base, &[0.1, 0.05], &data, None, &cfg).is_err());
    assert!(noise_finetune_sweep(&base, &[-0.1], &data, None, &cfg).is_err());
}

#[test]
fn folds_are_subject_disjoint() {
    let data = common::overfit_suite().unwrap();
    let subjects: Vec<&str> = data.samples.iter().map(|s| s.provenance.subject.as_str()).collect();
    let folds = make_folds(&subjects, 1, 3).unwrap();
    assert_eq!(folds.len(), 4);
    let mut held_out = 0;
    for f in &folds {
        assert!(f.train_subjects.is_disjoint(&f.test_subjects));
        let (train_idx, test_idx) = f.partition(subjects.iter().copied());
        assert_eq!(train_idx.len() + test_idx.len(), data.len());
        held_out += test_idx.len();
    }
    assert_eq!(held_out, data.len());
}

#[test]
fn protocol_constants() {
    let full = TrainConfig::full_scale(ModelArm::AttRepCls);
    assert_eq!((full.epochs, full.batch_size, full.width_multiplier), (60, 200, 1.0));
    let net = feratt::network::NetworkConfig::new(7, 1.0);
    assert_eq!((net.input_size, net.reduced_size, net.embedding_dim), (128, 32, 64));
    assert_eq!(feratt::evaluation::ATTENTION_DUMP_SIGMAS, [0.01, 0.05, 0.07, 0.09, 0.1, 0.2, 0.3]);
    let cfg = TrainConfig::default();
    assert_eq!(cfg.optimizer.learning_rate, 1e-4);
    assert_eq!(feratt::training::FINETUNE_EPOCHS, 10);
}
