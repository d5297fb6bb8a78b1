//! Central finite differences against the tape's reverse-mode gradients, in f64.

use feratt::autograd::conv::ConvGeom;
use feratt::autograd::{Tape, Var};
use feratt::losses::{joint_loss, GaussianManifoldConfig, LossWeights, SampleTargets};
use feratt::network::{FerAtt, ModelArm, NetworkConfig};
use feratt::nn::{ParamId, ParamStore};
use feratt::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect())
}

/// Values bounded away from zero so ReLU kinks stay out of the difference stencil.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) { v } else { -v }
        })
        .collect();
    Tensor::from_vec(shape, data)
}

fn assert_close(analytic: f64, numeric: f64, what: &str) {
    let scale = analytic.abs().max(numeric.abs()).max(1e-3);
    let rel = (analytic - numeric).abs() / scale;
    assert!(rel < 1e-5, "{what}: analytic {analytic} numeric {numeric} rel {rel}");
}

/// Checks `d⟨probe, f⟩/dθ` for every entry of every parameter in `ids`.
fn check_op(
    store: &ParamStore<f64>,
    ids: &[ParamId],
    probe_seed: u64,
    f: impl Fn(&mut Tape<f64>, &ParamStore<f64>) -> Var,
) {
    let mut tape = Tape::new();
    let y = f(&mut tape, store);
    let shape = tape.value(y).shape().to_vec();
    let probe = random(&mut ChaCha8Rng::seed_from_u64(probe_seed), &shape, -1.0, 1.0);
    let eval = |s: &ParamStore<f64>| {
        let mut t = Tape::new();
        let y = f(&mut t, s);
        t.value(y).data().iter().zip(probe.data()).map(|(a, b)| a * b).sum::<f64>()
    };
    let grads = tape.backward(vec![(y, probe.clone())]);
    for &id in ids {
        let g = grads.get(id).expect("gradient for every input");
        let mut s = store.clone();
        for i in 0..g.len() {
            let orig = s.value(id).data()[i];
            s.value_mut(id).data_mut()[i] = orig + H;
            let up = eval(&s);
            s.value_mut(id).data_mut()[i] = orig - H;
            let down = eval(&s);
            s.value_mut(id).data_mut()[i] = orig;
            assert_close(g.data()[i], (up - down) / (2.0 * H), &format!("{} [{i}]", store.entry(id).name));
        }
    }
}

#[test]
fn convolution_input_weight_and_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (stride, dilation) in [(1, 1), (2, 1), (1, 2), (2, 2)] {
        let mut store = ParamStore::new();
        let x = store.register("x", random(&mut rng, &[2, 3, 7, 6], -1.0, 1.0), true);
        let w = store.register("w", random(&mut rng, &[4, 3, 3, 3], -0.5, 0.5), true);
        let b = store.register("b", random(&mut rng, &[4], -0.5, 0.5), true);
        let geom = ConvGeom {
            in_channels: 3,
            out_channels: 4,
            kernel: 3,
            stride,
            padding: dilation,
            dilation,
        };
        check_op(&store, &[x, w, b], 2, |t, s| {
            let (x, w, b) = (t.param(s, x), t.param(s, w), t.param(s, b));
            t.conv2d(x, w, Some(b), geom)
        });
    }
}

#[test]
fn elementwise_and_structural_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let a = store.register("a", away_from_zero(&mut rng, &[2, 3, 4, 4]), true);
    let b = store.register("b", random(&mut rng, &[2, 3, 4, 4], -1.0, 1.0), true);
    let g = store.register("g", random(&mut rng, &[2, 1, 4, 4], 0.0, 1.0), true);
    check_op(&store, &[a, b], 4, |t, s| {
        let (a, b) = (t.param(s, a), t.param(s, b));
        t.add(a, b)
    });
    check_op(&store, &[a], 5, |t, s| {
        let a = t.param(s, a);
        t.relu(a)
    });
    check_op(&store, &[b], 6, |t, s| {
        let b = t.param(s, b);
        t.sigmoid(b)
    });
    check_op(&store, &[g, b], 7, |t, s| {
        let (g, b) = (t.param(s, g), t.param(s, b));
        t.gate(g, b)
    });
    check_op(&store, &[b], 8, |t, s| {
        let b = t.param(s, b);
        t.avg_pool(b, 2)
    });
    check_op(&store, &[b], 9, |t, s| {
        let b = t.param(s, b);
        t.global_avg_pool(b)
    });
    check_op(&store, &[b], 10, |t, s| {
        let b = t.param(s, b);
        t.upsample(b, 2)
    });
    check_op(&store, &[a, g], 11, |t, s| {
        let (a, g) = (t.param(s, a), t.param(s, g));
        t.concat(a, g)
    });
}

#[test]
fn linear_softmax_and_batch_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut store = ParamStore::new();
    let x = store.register("x", random(&mut rng, &[3, 5], -1.0, 1.0), true);
    let w = store.register("w", random(&mut rng, &[4, 5], -1.0, 1.0), true);
    let b = store.register("b", random(&mut rng, &[4], -1.0, 1.0), true);
    check_op(&store, &[x, w, b], 13, |t, s| {
        let (x, w, b) = (t.param(s, x), t.param(s, w), t.param(s, b));
        let y = t.linear(x, w, b);
        t.softmax(y)
    });

    let mut store = ParamStore::new();
    let x = store.register("x", random(&mut rng, &[3, 2, 3, 3], -1.0, 1.0), true);
    let gamma = store.register("gamma", random(&mut rng, &[2], 0.5, 1.5), true);
    let beta = store.register("beta", random(&mut rng, &[2], -0.5, 0.5), true);
    let mean = store.register("mean", Tensor::zeros(&[2]), false);
    let var = store.register("var", Tensor::full(&[2], 1.0), false);
    for training in [true, false] {
        check_op(&store, &[x, gamma, beta], 14, |t, s| {
            let (x, g, b) = (t.param(s, x), t.param(s, gamma), t.param(s, beta));
            t.batch_norm(s, x, g, b, (mean, var), 1e-5, training)
        });
    }
}

/// End-to-end check of sampled parameter gradients of the weighted joint
/// loss at reduced width, in training mode.
#[test]
fn network_joint_loss_parameter_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let c = 3;
    let model = FerAtt::<f64>::new(NetworkConfig::new(c, 0.125), 4).unwrap();
    let images = random(&mut rng, &[2, 3, 128, 128], 0.0, 1.0);
    let mut mask = vec![0.0; 2 * 128 * 128];
    for (i, m) in mask.iter_mut().enumerate() {
        let (y, x) = ((i / 128) % 128, i % 128);
        if (32..96).contains(&y) && (40..88).contains(&x) {
            *m = 1.0;
        }
    }
    let targets = SampleTargets {
        images: images.clone(),
        masks: Tensor::from_vec(&[2, 1, 128, 128], mask),
        one_hot: SampleTargets::one_hot_labels(&[0, 2], c),
    };
    let manifold = GaussianManifoldConfig::axis_aligned(c, 64, 1.0).unwrap();
    let weights = LossWeights::for_arm(ModelArm::AttRepCls);
    let loss_of = |m: &FerAtt<f64>| {
        let mut t = Tape::new();
        let x = t.input(images.clone());
        let v = m.forward_on_tape(&mut t, x, ModelArm::AttRepCls, true);
        joint_loss(&v.outputs(&t), &targets, &manifold, &weights).unwrap()
    };
    let mut tape = Tape::new();
    let x = tape.input(images.clone());
    let vars = model.forward_on_tape(&mut tape, x, ModelArm::AttRepCls, true);
    let loss = joint_loss(&vars.outputs(&tape), &targets, &manifold, &weights).unwrap();
    let seeds = vec![
        (vars.attention_image.unwrap(), loss.grad_attention.unwrap()),
        (vars.embedding, loss.grad_embedding.unwrap()),
        (vars.class_scores, loss.grad_scores.unwrap()),
    ];
    let grads = tape.backward(seeds);

    let trainable: Vec<ParamId> = model.params().ids().filter(|&id| model.params().entry(id).trainable).collect();
    assert!(trainable.iter().all(|&id| grads.get(id).is_some_and(|g| g.all_finite())));
    let mut checked = 0;
    for &id in trainable.iter().step_by(3) {
        let g = grads.get(id).unwrap();
        let i = rng.gen_range(0..g.len());
        let mut m = model.clone();
        let orig = m.params().value(id).data()[i];
        m.params_mut().value_mut(id).data_mut()[i] = orig + H;
        let up = loss_of(&m).breakdown.total;
        m.params_mut().value_mut(id).data_mut()[i] = orig - H;
        let down = loss_of(&m).breakdown.total;
        let numeric = (up - down) / (2.0 * H);
        let scale = g.data()[i].abs().max(numeric.abs()).max(1e-4);
        let rel = (g.data()[i] - numeric).abs() / scale;
        assert!(rel < 1e-4, "{}[{i}]: analytic {} numeric {numeric}", model.params().entry(id).name, g.data()[i]);
        checked += 1;
    }
    assert!(checked >= 10);
}
