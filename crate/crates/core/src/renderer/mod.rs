//! Synthetic composites: masked faces pasted onto backgrounds with luminance
//! matching, an affine placement and photometric augmentation.

mod dataset;
mod toy;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{config, contract, Error, Result};
use crate::image::ImageTensor;

pub use dataset::{
    derive_seed, load_backgrounds, load_faces, load_rendered, regenerate, render_dataset, render_sample, save_faces,
    save_rendered, DatasetManifest, RenderConfig, RenderedDataset, SampleProvenance, MANIFEST_FILE,
    MANIFEST_SCHEMA_VERSION,
};
pub use toy::{procedural_background, toy_background_set, toy_face, toy_face_set, Expression, MAX_TOY_CLASSES};

/// Side length of every composite.
pub const OUTPUT_SIZE: usize = 128;
/// Faces whose mean luminance falls under this are rejected.
pub const LUMINANCE_GUARD: f64 = 1e-6;
/// Mask threshold applied after resampling.
pub const MASK_THRESHOLD: f32 = 0.5;

/// A labeled face with its binary mask.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceSample {
    pub id: String,
    /// Identity of the person shown, used for subject-disjoint splits.
    pub subject: String,
    pub image: ImageTensor,
    pub mask: ImageTensor,
    pub label: usize,
}

impl FaceSample {
    /// Checks shapes, value ranges and that the mask is exactly binary.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.image.channels() != 3 || self.mask.channels() != 1 {
            return Err(contract(format!("face {}: expected RGB image and single-channel mask", self.id)));
        }
        if !self.image.same_size(&self.mask) {
            return Err(contract(format!("face {}: image and mask sizes differ", self.id)));
        }
        if !self.image.in_unit_range() {
            return Err(contract(format!("face {}: image values outside [0, 1]", self.id)));
        }
        if self.mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(contract(format!("face {}: mask is not binary", self.id)));
        }
        if self.label >= num_classes {
            return Err(contract(format!("face {}: label {} outside [0, {num_classes})", self.id, self.label)));
        }
        Ok(())
    }

    pub fn mask_area(&self) -> usize {
        self.mask.data().iter().filter(|&&v| v > MASK_THRESHOLD).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackgroundImage {
    pub id: String,
    pub image: ImageTensor,
}

impl BackgroundImage {
    pub fn validate(&self) -> Result<()> {
        if self.image.channels() != 3 {
            return Err(contract(format!("background {}: expected RGB", self.id)));
        }
        if self.image.height() < OUTPUT_SIZE || self.image.width() < OUTPUT_SIZE {
            return Err(contract(format!(
                "background {} is {}×{}, smaller than {OUTPUT_SIZE}×{OUTPUT_SIZE}",
                self.id,
                self.image.height(),
                self.image.width()
            )));
        }
        if !self.image.in_unit_range() {
            return Err(contract(format!("background {}: values outside [0, 1]", self.id)));
        }
        Ok(())
    }
}

/// A rendered training image with its mask and provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct CompositeSample {
    pub image: ImageTensor,
    pub mask: ImageTensor,
    pub label: usize,
    pub seed: u64,
    pub provenance: SampleProvenance,
}

/// Rotation (radians), isotropic scale and translation (pixels) of the face placement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub rotation: f64,
    pub scale: f64,
    pub translate_x: f64,
    pub translate_y: f64,
}

impl TransformParams {
    pub const IDENTITY: TransformParams = TransformParams {
        rotation: 0.0,
        scale: 1.0,
        translate_x: 0.0,
        translate_y: 0.0,
    };

    pub fn rotation(theta: f64) -> Self {
        Self {
            rotation: theta,
            ..Self::IDENTITY
        }
    }
}

/// Uniform sampling ranges for [`TransformParams`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformRanges {
    pub max_rotation: f64,
    pub scale: (f64, f64),
    pub max_translation: f64,
}

impl Default for TransformRanges {
    fn default() -> Self {
        Self {
            max_rotation: 15f64.to_radians(),
            scale: (0.8, 1.1),
            max_translation: 10.0,
        }
    }
}

impl TransformRanges {
    pub fn sample(&self, rng: &mut impl Rng) -> TransformParams {
        let sym = |rng: &mut dyn rand::RngCore, r: f64| if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 };
        let rotation = sym(rng, self.max_rotation);
        let scale = if self.scale.1 > self.scale.0 {
            rng.gen_range(self.scale.0..=self.scale.1)
        } else {
            self.scale.0
        };
        TransformParams {
            rotation,
            scale,
            translate_x: sym(rng, self.max_translation),
            translate_y: sym(rng, self.max_translation),
        }
    }
}

/// Bilinear sample with zero outside the frame; `(y, x)` in pixel-index coordinates.
fn bilinear(img: &ImageTensor, y: f64, x: f64, c: usize) -> f32 {
    let (h, w, _) = img.dims();
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = ((y - y0) as f32, (x - x0) as f32);
    let at = |yy: f64, xx: f64| -> f32 {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            0.0
        } else {
            img.get(yy as usize, xx as usize, c)
        }
    };
    let top = if fx == 0.0 { at(y0, x0) } else { at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1.0) * fx };
    if fy == 0.0 {
        return top;
    }
    let bottom = if fx == 0.0 {
        at(y0 + 1.0, x0)
    } else {
        at(y0 + 1.0, x0) * (1.0 - fx) + at(y0 + 1.0, x0 + 1.0) * fx
    };
    top * (1.0 - fy) + bottom * fy
}

/// Applies the same rotation/scale/translation about the image centres to face
/// and mask, resampling both onto a `size × size` grid. Scale 1 fits the
/// longer source side to `size`.
pub fn warp(face: &FaceSample, params: &TransformParams, size: usize) -> Result<FaceSample> {
    if !(params.scale.is_finite() && params.scale > 0.0)
        || !params.rotation.is_finite()
        || !params.translate_x.is_finite()
        || !params.translate_y.is_finite()
    {
        return Err(Error::DegenerateSample(format!(
            "face {}: transform {params:?} is not invertible",
            face.id
        )));
    }
    let (sh, sw, _) = face.image.dims();
    let (scy, scx) = (sh as f64 / 2.0, sw as f64 / 2.0);
    let c_out = size as f64 / 2.0;
    let (sin, cos) = params.rotation.sin_cos();
    let fit = size as f64 / sh.max(sw) as f64;
    let inv = 1.0 / (params.scale * fit);
    let mut image = ImageTensor::new(size, size, 3);
    let mut mask = ImageTensor::new(size, size, 1);
    for oy in 0..size {
        for ox in 0..size {
            // output point relative to the output centre, minus translation
            let u = ox as f64 + 0.5 - c_out - params.translate_x;
            let v = oy as f64 + 0.5 - c_out - params.translate_y;
            let sx = (cos * u + sin * v) * inv + scx - 0.5;
            let sy = (-sin * u + cos * v) * inv + scy - 0.5;
            for c in 0..3 {
                image.set(oy, ox, c, bilinear(&face.image, sy, sx, c));
            }
            let m = bilinear(&face.mask, sy, sx, 0);
            mask.set(oy, ox, 0, if m >= MASK_THRESHOLD { 1.0 } else { 0.0 });
        }
    }
    let out = FaceSample {
        image,
        mask,
        ..face.clone()
    };
    if out.mask_area() == 0 {
        return Err(Error::DegenerateSample(format!(
            "face {}: transform {params:?} moves the whole mask out of frame",
            face.id
        )));
    }
    Ok(out)
}

/// [`warp`] onto the `128 × 128` output grid.
pub fn geometric_transform(face: &FaceSample, params: &TransformParams) -> Result<FaceSample> {
    warp(face, params, OUTPUT_SIZE)
}

/// Draws transform parameters from `ranges` with `seed` and applies them.
pub fn random_geometric_transform(
    face: &FaceSample,
    ranges: &TransformRanges,
    seed: u64,
) -> Result<(FaceSample, TransformParams)> {
    let params = ranges.sample(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((geometric_transform(face, &params)?, params))
}

/// Full-range BT.601 luma and chroma, `Cb`/`Cr` offset to `[0, 1]`.
pub fn rgb_to_ycbcr(p: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = p;
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    [y, 0.5 + (b - y) / 1.772, 0.5 + (r - y) / 1.402]
}

pub fn ycbcr_to_rgb(p: [f64; 3]) -> [f64; 3] {
    let [y, cb, cr] = p;
    let r = y + 1.402 * (cr - 0.5);
    let b = y + 1.772 * (cb - 0.5);
    let g = (y - 0.299 * r - 0.114 * b) / 0.587;
    [r, g, b]
}

fn luma(img: &ImageTensor, y: usize, x: usize) -> f64 {
    let p = img.pixel(y, x);
    rgb_to_ycbcr([p[0] as f64, p[1] as f64, p[2] as f64])[0]
}

/// Mask-weighted mean luminance of `img`.
pub fn masked_mean_luminance(img: &ImageTensor, mask: &ImageTensor) -> Result<f64> {
    if !img.same_size(mask) || mask.channels() != 1 || img.channels() != 3 {
        return Err(contract("luminance needs an RGB image and a same-sized single-channel mask"));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for y in 0..img.height() {
        for x in 0..img.width() {
            let m = mask.get(y, x, 0) as f64;
            if m > 0.0 {
                num += m * luma(img, y, x);
                den += m;
            }
        }
    }
    if den == 0.0 {
        return Err(contract("mask covers no pixels"));
    }
    Ok(num / den)
}

/// Scales the face's luma by `I_r / I_face`, where both means are taken under
/// the mask footprint, keeping chroma; the result is clamped to `[0, 1]`.
pub fn luminance_adjust(face: &ImageTensor, face_mask: &ImageTensor, background_region: &ImageTensor) -> Result<ImageTensor> {
    if !face.same_size(background_region) || background_region.channels() != 3 {
        return Err(contract("face and background region must be same-sized RGB images"));
    }
    let i_face = masked_mean_luminance(face, face_mask)?;
    if i_face < LUMINANCE_GUARD {
        return Err(Error::DivisionGuard(format!(
            "face mean luminance {i_face:e} is below {LUMINANCE_GUARD:e}"
        )));
    }
    let i_r = masked_mean_luminance(background_region, face_mask)?;
    Ok(scale_luminance(face, i_r / i_face))
}

/// Multiplies every pixel's luma by `factor`, keeping chroma, then clamps.
pub fn scale_luminance(img: &ImageTensor, factor: f64) -> ImageTensor {
    let mut out = img.clone();
    for px in out.data_mut().chunks_mut(3) {
        let [y, cb, cr] = rgb_to_ycbcr([px[0] as f64, px[1] as f64, px[2] as f64]);
        let rgb = ycbcr_to_rgb([y * factor, cb, cr]);
        for (d, v) in px.iter_mut().zip(rgb) {
            *d = (v as f32).clamp(0.0, 1.0);
        }
    }
    out
}

/// Per-pixel `mask·face + (1 − mask)·background`.
pub fn alpha_composite(face: &ImageTensor, mask: &ImageTensor, background: &ImageTensor) -> Result<ImageTensor> {
    if face.dims() != background.dims() || !face.same_size(mask) || mask.channels() != 1 {
        return Err(contract(format!(
            "alpha_composite shapes: face {:?}, mask {:?}, background {:?}",
            face.dims(),
            mask.dims(),
            background.dims()
        )));
    }
    if mask.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(contract("mask values outside [0, 1]"));
    }
    let c = face.channels();
    let mut out = background.clone();
    for (i, px) in out.data_mut().chunks_mut(c).enumerate() {
        let m = mask.data()[i];
        for (k, v) in px.iter_mut().enumerate() {
            *v = m * face.data()[i * c + k] + (1.0 - m) * *v;
        }
    }
    Ok(out)
}

/// Photometric augmentation strengths.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationParams {
    pub brightness_delta: f64,
    pub contrast_factor: f64,
    pub blur_sigma: f64,
    pub noise_sigma: f64,
}

impl AugmentationParams {
    pub const IDENTITY: AugmentationParams = AugmentationParams {
        brightness_delta: 0.0,
        contrast_factor: 1.0,
        blur_sigma: 0.0,
        noise_sigma: 0.0,
    };

    pub fn new(brightness_delta: f64, contrast_factor: f64, blur_sigma: f64, noise_sigma: f64) -> Result<Self> {
        let p = Self {
            brightness_delta,
            contrast_factor,
            blur_sigma,
            noise_sigma,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.brightness_delta, self.contrast_factor, self.blur_sigma, self.noise_sigma]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.contrast_factor < 0.0 || self.blur_sigma < 0.0 || self.noise_sigma < 0.0 {
            return Err(config(format!("invalid augmentation parameters {self:?}")));
        }
        Ok(())
    }

    pub fn noise_only(sigma: f64) -> Result<Self> {
        Self::new(0.0, 1.0, 0.0, sigma)
    }
}

/// Closed sampling intervals for [`AugmentationParams`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationRanges {
    pub brightness_delta: (f64, f64),
    pub contrast_factor: (f64, f64),
    pub blur_sigma: (f64, f64),
    pub noise_sigma: (f64, f64),
}

impl Default for AugmentationRanges {
    fn default() -> Self {
        Self {
            brightness_delta: (-0.2, 0.2),
            contrast_factor: (0.8, 1.2),
            blur_sigma: (0.0, 1.5),
            noise_sigma: (0.0, 0.05),
        }
    }
}

impl AugmentationRanges {
    /// No augmentation at all.
    pub const NONE: AugmentationRanges = AugmentationRanges {
        brightness_delta: (0.0, 0.0),
        contrast_factor: (1.0, 1.0),
        blur_sigma: (0.0, 0.0),
        noise_sigma: (0.0, 0.0),
    };

    pub fn validate(&self) -> Result<()> {
        let ok = [self.brightness_delta, self.contrast_factor, self.blur_sigma, self.noise_sigma]
            .iter()
            .all(|(a, b)| a.is_finite() && b.is_finite() && a <= b);
        if !ok || self.contrast_factor.0 < 0.0 || self.blur_sigma.0 < 0.0 || self.noise_sigma.0 < 0.0 {
            return Err(config(format!("invalid augmentation ranges {self:?}")));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> AugmentationParams {
        let mut draw = |(a, b): (f64, f64)| if b > a { rng.gen_range(a..=b) } else { a };
        AugmentationParams {
            brightness_delta: draw(self.brightness_delta),
            contrast_factor: draw(self.contrast_factor),
            blur_sigma: draw(self.blur_sigma),
            noise_sigma: draw(self.noise_sigma),
        }
    }
}

/// Separable Gaussian blur with edge clamping; kernel radius `ceil(3σ)`.
pub fn gaussian_blur(img: &ImageTensor, sigma: f64) -> ImageTensor {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= norm);
    let (h, w, c) = img.dims();
    let pass = |src: &ImageTensor, horizontal: bool| {
        ImageTensor::from_fn(h, w, c, |y, x, ch| {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let off = k as isize - radius;
                let (yy, xx) = if horizontal {
                    (y, (x as isize + off).clamp(0, w as isize - 1) as usize)
                } else {
                    ((y as isize + off).clamp(0, h as isize - 1) as usize, x)
                };
                acc += kv * src.get(yy, xx, ch) as f64;
            }
            acc as f32
        })
    };
    pass(&pass(img, true), false)
}

/// Adds seeded zero-mean Gaussian noise and clamps to `[0, 1]`.
pub fn add_gaussian_noise(img: &ImageTensor, sigma: f64, seed: u64) -> Result<ImageTensor> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(config(format!("noise sigma must be finite and non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, sigma).expect("validated sigma");
    let mut out = img.clone();
    for v in out.data_mut() {
        *v = (*v as f64 + dist.sample(&mut rng)).clamp(0.0, 1.0) as f32;
    }
    Ok(out)
}

/// Brightness shift, contrast about the image mean, Gaussian blur, then
/// additive noise; each stage clamps to `[0, 1]`.
pub fn augment(image: &ImageTensor, params: &AugmentationParams, seed: u64) -> Result<ImageTensor> {
    params.validate()?;
    let mut out = image.clone();
    if params.brightness_delta != 0.0 {
        let d = params.brightness_delta as f32;
        out = out.map(|v| (v + d).clamp(0.0, 1.0));
    }
    if params.contrast_factor != 1.0 {
        let mean = out.mean() as f32;
        let f = params.contrast_factor as f32;
        out = out.map(|v| ((v - mean) * f + mean).clamp(0.0, 1.0));
    }
    if params.blur_sigma > 0.0 {
        out = gaussian_blur(&out, params.blur_sigma);
        out.clamp01();
    }
    add_gaussian_noise(&out, params.noise_sigma, seed)
}

/// Intersection over union of two binary masks.
pub fn mask_iou(a: &ImageTensor, b: &ImageTensor) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (x, y) = (x > MASK_THRESHOLD, y > MASK_THRESHOLD);
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}
