use rand::Rng;

use super::scaled_width;
use crate::autograd::{Tape, Var};
use crate::nn::{Conv2d, ParamStore};
use crate::tensor::Scalar;

/// Encoder-decoder producing a sigmoid gate at input resolution.
///
/// Four dilated (×2) encoder layers, three of them strided, and a decoder
/// that upsamples and concatenates the matching encoder output at each
/// scale.
#[derive(Clone, Debug)]
pub struct AttentionBranch {
    encoder: [Conv2d; 4],
    decoder: [Conv2d; 3],
    out: Conv2d,
}

impl AttentionBranch {
    pub const BASE_WIDTH: usize = 16;

    pub fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut impl Rng, width_multiplier: f64) -> Self {
        let c = scaled_width(Self::BASE_WIDTH, width_multiplier);
        let encoder = [
            Conv2d::new(store, rng, "att.enc1", 3, c, 3, 1, 2, true),
            Conv2d::new(store, rng, "att.enc2", c, 2 * c, 3, 2, 2, true),
            Conv2d::new(store, rng, "att.enc3", 2 * c, 4 * c, 3, 2, 2, true),
            Conv2d::new(store, rng, "att.enc4", 4 * c, 4 * c, 3, 2, 2, true),
        ];
        let decoder = [
            Conv2d::new(store, rng, "att.dec3", 8 * c, 2 * c, 3, 1, 1, true),
            Conv2d::new(store, rng, "att.dec2", 4 * c, c, 3, 1, 1, true),
            Conv2d::new(store, rng, "att.dec1", 2 * c, c, 3, 1, 1, true),
        ];
        let out = Conv2d::new(store, rng, "att.out", c, 1, 1, 1, 1, true);
        Self { encoder, decoder, out }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Var {
        let mut skips = Vec::with_capacity(4);
        let mut h = x;
        for layer in &self.encoder {
            let y = layer.forward(tape, store, h);
            h = tape.relu(y);
            skips.push(h);
        }
        // skips: [128, 64, 32, 16]
        for (layer, skip) in self.decoder.iter().zip(skips[..3].iter().rev()) {
            let up = tape.upsample(h, 2);
            let cat = tape.concat(up, *skip);
            let y = layer.forward(tape, store, cat);
            h = tape.relu(y);
        }
        let logits = self.out.forward(tape, store, h);
        tape.sigmoid(logits)
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    first: Conv2d,
    second: Conv2d,
}

/// Head convolution followed by four residual blocks, all stride 1.
#[derive(Clone, Debug)]
pub struct FeatureBranch {
    head: Conv2d,
    blocks: Vec<ResBlock>,
}

impl FeatureBranch {
    pub const BLOCKS: usize = 4;
    /// Initial scale of the second convolution in every residual block.
    pub const RESIDUAL_INIT_SCALE: f64 = 0.1;

    pub fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut impl Rng, channels: usize) -> Self {
        let head = Conv2d::new(store, rng, "ft.head", 3, channels, 3, 1, 1, true);
        head.scale_weight(store, Self::RESIDUAL_INIT_SCALE);
        head.add_identity(store);
        let blocks = (0..Self::BLOCKS)
            .map(|i| {
                let first = Conv2d::new(store, rng, &format!("ft.block{i}.conv1"), channels, channels, 3, 1, 1, true);
                let second = Conv2d::new(store, rng, &format!("ft.block{i}.conv2"), channels, channels, 3, 1, 1, true);
                second.scale_weight(store, Self::RESIDUAL_INIT_SCALE);
                ResBlock { first, second }
            })
            .collect();
        Self { head, blocks }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Var {
        let mut h = self.head.forward(tape, store, x);
        for b in &self.blocks {
            let y = b.first.forward(tape, store, h);
            let y = tape.relu(y);
            let y = b.second.forward(tape, store, y);
            h = tape.add(h, y);
        }
        h
    }
}

/// Two 3×3 convolutions with a ReLU between, mapping gated features to RGB.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    first: Conv2d,
    second: Conv2d,
}

impl Reconstruction {
    pub const HIDDEN: usize = 16;
    /// Initial scale of the output convolution.
    pub const OUTPUT_INIT_SCALE: f64 = 0.1;

    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        feature_channels: usize,
    ) -> Self {
        let hidden = Self::HIDDEN;
        let first = Conv2d::new(store, rng, "rec.conv1", feature_channels, hidden, 3, 1, 1, true);
        let second = Conv2d::new(store, rng, "rec.conv2", hidden, 3, 3, 1, 1, true);
        for conv in [&first, &second] {
            conv.scale_weight(store, Self::OUTPUT_INIT_SCALE);
            conv.add_identity(store);
        }
        Self { first, second }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, gated: Var) -> Var {
        let h = self.first.forward(tape, store, gated);
        let h = tape.relu(h);
        self.second.forward(tape, store, h)
    }
}
