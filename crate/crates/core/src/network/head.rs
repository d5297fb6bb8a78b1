use rand::Rng;

use super::scaled_width;
use crate::autograd::{Tape, Var};
use crate::nn::{BatchNorm2d, Conv2d, Linear, ParamStore};
use crate::tensor::Scalar;

#[derive(Clone, Debug)]
struct PreActBlock {
    bn1: BatchNorm2d,
    conv1: Conv2d,
    bn2: BatchNorm2d,
    conv2: Conv2d,
    shortcut: Option<Conv2d>,
}

impl PreActBlock {
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
    ) -> Self {
        let shortcut = (stride != 1 || cin != cout)
            .then(|| Conv2d::new(store, rng, &format!("{name}.shortcut"), cin, cout, 1, stride, 1, false));
        Self {
            bn1: BatchNorm2d::new(store, &format!("{name}.bn1"), cin),
            conv1: Conv2d::new(store, rng, &format!("{name}.conv1"), cin, cout, 3, stride, 1, false),
            bn2: BatchNorm2d::new(store, &format!("{name}.bn2"), cout),
            conv2: Conv2d::new(store, rng, &format!("{name}.conv2"), cout, cout, 3, 1, 1, false),
            shortcut,
        }
    }

    // BN → ReLU → conv, twice; the projection shortcut sees the pre-activated input
    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var, training: bool) -> Var {
        let a = self.bn1.forward(tape, store, x, training);
        let a = tape.relu(a);
        let skip = match &self.shortcut {
            Some(s) => s.forward(tape, store, a),
            None => x,
        };
        let h = self.conv1.forward(tape, store, a);
        let h = self.bn2.forward(tape, store, h, training);
        let h = tape.relu(h);
        let h = self.conv2.forward(tape, store, h);
        tape.add(h, skip)
    }
}

/// Pre-activation ResNet-18 trunk, linear embedding and softmax classifier.
#[derive(Clone, Debug)]
pub struct RepresentationHead {
    stem: Conv2d,
    blocks: Vec<PreActBlock>,
    final_bn: BatchNorm2d,
    embed: Linear,
    classify: Linear,
}

impl RepresentationHead {
    pub const BASE_WIDTH: usize = 64;
    /// Blocks per stage of the 18-layer configuration.
    pub const STAGES: [usize; 4] = [2, 2, 2, 2];

    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        width_multiplier: f64,
        embedding_dim: usize,
        num_classes: usize,
    ) -> Self {
        let base = scaled_width(Self::BASE_WIDTH, width_multiplier);
        let stem = Conv2d::new(store, rng, "rep.stem", 3, base, 3, 1, 1, false);
        let mut blocks = Vec::new();
        let mut cin = base;
        for (stage, &count) in Self::STAGES.iter().enumerate() {
            let cout = base << stage;
            for b in 0..count {
                let stride = if stage > 0 && b == 0 { 2 } else { 1 };
                blocks.push(PreActBlock::new(store, rng, &format!("rep.stage{}.block{b}", stage + 1), cin, cout, stride));
                cin = cout;
            }
        }
        let final_bn = BatchNorm2d::new(store, "rep.final_bn", cin);
        let embed = Linear::new(store, rng, "rep.embed", cin, embedding_dim);
        let classify = Linear::new(store, rng, "rep.classify", embedding_dim, num_classes);
        Self {
            stem,
            blocks,
            final_bn,
            embed,
            classify,
        }
    }

    /// Returns `(embedding, class probabilities)`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var, training: bool) -> (Var, Var) {
        let mut h = self.stem.forward(tape, store, x);
        for b in &self.blocks {
            h = b.forward(tape, store, h, training);
        }
        let h = self.final_bn.forward(tape, store, h, training);
        let h = tape.relu(h);
        let z = tape.global_avg_pool(h);
        let embedding = self.embed.forward(tape, store, z);
        let logits = self.classify.forward(tape, store, embedding);
        let probs = tape.softmax(logits);
        (embedding, probs)
    }
}
