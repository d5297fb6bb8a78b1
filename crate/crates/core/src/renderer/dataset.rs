//! Seeded dataset rendering, manifests and the on-disk layouts.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    alpha_composite, augment, geometric_transform, luminance_adjust, AugmentationParams, AugmentationRanges,
    BackgroundImage, CompositeSample, FaceSample, TransformParams, TransformRanges, OUTPUT_SIZE,
};
use crate::error::{config, contract, Error, Result};
use crate::image::ImageTensor;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent per-item seed derived only from `(master, index)`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_add(0x632b_e59b_d9b4_e019)))
}

/// Sampling ranges used when drawing each composite.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub transform: TransformRanges,
    pub augmentation: AugmentationRanges,
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        self.augmentation.validate()?;
        let t = &self.transform;
        if !(t.max_rotation.is_finite() && t.max_rotation >= 0.0)
            || !(t.max_translation.is_finite() && t.max_translation >= 0.0)
            || !(t.scale.0 > 0.0 && t.scale.0 <= t.scale.1 && t.scale.1.is_finite())
        {
            return Err(config(format!("invalid transform ranges {t:?}")));
        }
        Ok(())
    }
}

/// Everything needed to rebuild one composite from its sources.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleProvenance {
    pub index: usize,
    pub seed: u64,
    pub face_id: String,
    pub subject: String,
    pub label: usize,
    pub background_id: String,
    pub crop_top: usize,
    pub crop_left: usize,
    pub transform: TransformParams,
    pub augmentation: AugmentationParams,
    pub noise_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub master_seed: u64,
    pub num_classes: usize,
    pub render_config: RenderConfig,
    pub samples: Vec<SampleProvenance>,
}

impl DatasetManifest {
    pub fn check_version(&self) -> Result<()> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::VersionMismatch(format!(
                "dataset manifest schema {} (expected {MANIFEST_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedDataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<CompositeSample>,
}

impl RenderedDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.num_classes
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Keeps the samples at `indices`, in order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let samples: Vec<CompositeSample> = indices.iter().map(|&i| self.samples[i].clone()).collect();
        Self {
            manifest: DatasetManifest {
                samples: samples.iter().map(|s| s.provenance.clone()).collect(),
                ..self.manifest.clone()
            },
            samples,
        }
    }
}

fn build(face: &FaceSample, background: &BackgroundImage, prov: &SampleProvenance) -> Result<CompositeSample> {
    let placed = geometric_transform(face, &prov.transform)?;
    let region = background.image.crop(prov.crop_top, prov.crop_left, OUTPUT_SIZE, OUTPUT_SIZE)?;
    let adjusted = luminance_adjust(&placed.image, &placed.mask, &region)?;
    let composite = alpha_composite(&adjusted, &placed.mask, &region)?;
    let image = augment(&composite, &prov.augmentation, prov.noise_seed)?;
    Ok(CompositeSample {
        image,
        mask: placed.mask,
        label: face.label,
        seed: prov.seed,
        provenance: prov.clone(),
    })
}

/// Draws and renders composite `index` of the dataset seeded by `master_seed`.
pub fn render_sample(
    index: usize,
    master_seed: u64,
    faces: &[FaceSample],
    backgrounds: &[BackgroundImage],
    cfg: &RenderConfig,
) -> Result<CompositeSample> {
    let seed = derive_seed(master_seed, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let face = &faces[rng.gen_range(0..faces.len())];
    let background = &backgrounds[rng.gen_range(0..backgrounds.len())];
    let crop_top = rng.gen_range(0..=background.image.height() - OUTPUT_SIZE);
    let crop_left = rng.gen_range(0..=background.image.width() - OUTPUT_SIZE);
    let transform = cfg.transform.sample(&mut rng);
    let augmentation = cfg.augmentation.sample(&mut rng);
    let prov = SampleProvenance {
        index,
        seed,
        face_id: face.id.clone(),
        subject: face.subject.clone(),
        label: face.label,
        background_id: background.id.clone(),
        crop_top,
        crop_left,
        transform,
        augmentation,
        noise_seed: rng.gen(),
    };
    build(face, background, &prov)
}

fn check_sources(faces: &[FaceSample], backgrounds: &[BackgroundImage], num_classes: usize) -> Result<()> {
    if faces.is_empty() || backgrounds.is_empty() {
        return Err(config("rendering needs at least one face and one background"));
    }
    for f in faces {
        f.validate(num_classes)?;
    }
    for b in backgrounds {
        b.validate()?;
    }
    Ok(())
}

/// Renders `count` composites; sample `i` depends only on `(master_seed, i)`.
pub fn render_dataset(
    faces: &[FaceSample],
    backgrounds: &[BackgroundImage],
    count: usize,
    master_seed: u64,
    num_classes: usize,
    cfg: &RenderConfig,
) -> Result<RenderedDataset> {
    check_sources(faces, backgrounds, num_classes)?;
    cfg.validate()?;
    let samples = (0..count)
        .map(|i| render_sample(i, master_seed, faces, backgrounds, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(RenderedDataset {
        manifest: DatasetManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            master_seed,
            num_classes,
            render_config: *cfg,
            samples: samples.iter().map(|s| s.provenance.clone()).collect(),
        },
        samples,
    })
}

/// Rebuilds every composite listed in `manifest` from the source collections.
pub fn regenerate(
    manifest: &DatasetManifest,
    faces: &[FaceSample],
    backgrounds: &[BackgroundImage],
) -> Result<RenderedDataset> {
    manifest.check_version()?;
    let face_by_id: HashMap<&str, &FaceSample> = faces.iter().map(|f| (f.id.as_str(), f)).collect();
    let bg_by_id: HashMap<&str, &BackgroundImage> = backgrounds.iter().map(|b| (b.id.as_str(), b)).collect();
    let samples = manifest
        .samples
        .iter()
        .map(|p| {
            let face = face_by_id
                .get(p.face_id.as_str())
                .ok_or_else(|| config(format!("manifest references unknown face {}", p.face_id)))?;
            let bg = bg_by_id
                .get(p.background_id.as_str())
                .ok_or_else(|| config(format!("manifest references unknown background {}", p.background_id)))?;
            build(face, bg, p)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RenderedDataset {
        manifest: manifest.clone(),
        samples,
    })
}

fn sample_paths(dir: &Path, index: usize) -> (PathBuf, PathBuf) {
    (
        dir.join("images").join(format!("{index:05}.png")),
        dir.join("masks").join(format!("{index:05}.png")),
    )
}

/// Writes `images/NNNNN.png`, `masks/NNNNN.png` and the JSON manifest.
pub fn save_rendered(dataset: &RenderedDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("masks"))?;
    for s in &dataset.samples {
        let (img, mask) = sample_paths(dir, s.provenance.index);
        s.image.save_png(&img)?;
        s.mask.save_png(&mask)?;
    }
    let json = serde_json::to_string_pretty(&dataset.manifest)?;
    fs::write(dir.join(MANIFEST_FILE), json + "\n")?;
    Ok(())
}

/// Reads a directory written by [`save_rendered`].
pub fn load_rendered(dir: &Path) -> Result<RenderedDataset> {
    let value: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    if let Some(v) = value.get("schema_version").and_then(|v| v.as_u64()) {
        if v != MANIFEST_SCHEMA_VERSION as u64 {
            return Err(Error::VersionMismatch(format!(
                "dataset manifest schema {v} (expected {MANIFEST_SCHEMA_VERSION})"
            )));
        }
    }
    let manifest: DatasetManifest = serde_json::from_value(value)?;
    manifest.check_version()?;
    let samples = manifest
        .samples
        .iter()
        .map(|p| {
            let (img, mask) = sample_paths(dir, p.index);
            let image = ImageTensor::load_rgb(&img)?;
            let mask = ImageTensor::load_gray(&mask)?;
            if image.dims() != (OUTPUT_SIZE, OUTPUT_SIZE, 3) || !image.same_size(&mask) {
                return Err(contract(format!("sample {} has unexpected dimensions", p.index)));
            }
            if p.label >= manifest.num_classes {
                return Err(contract(format!("sample {} label {} out of range", p.index, p.label)));
            }
            Ok(CompositeSample {
                image,
                mask,
                label: p.label,
                seed: p.seed,
                provenance: p.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RenderedDataset { manifest, samples })
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    v.sort();
    Ok(v)
}

fn class_dirs(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut dirs: Vec<(String, PathBuf)> = sorted_entries(root)?
        .into_iter()
        .filter(|p| p.is_dir())
        .map(|p| (p.file_name().unwrap_or_default().to_string_lossy().into_owned(), p))
        .collect();
    if dirs.iter().all(|(n, _)| n.parse::<usize>().is_ok()) {
        dirs.sort_by_key(|(n, _)| n.parse::<usize>().unwrap_or(usize::MAX));
    }
    Ok(dirs)
}

/// Loads `faces/<class>/<id>.png` with masks from `masks/<class>/<id>.png`.
/// Class directories map to indices in numeric order when all names are
/// integers, lexicographic order otherwise. The subject is the part of the id
/// before the first `_`.
pub fn load_faces(root: &Path) -> Result<(Vec<FaceSample>, Vec<String>)> {
    let faces_dir = root.join("faces");
    let masks_dir = root.join("masks");
    let mut faces = Vec::new();
    let mut names = Vec::new();
    for (label, (name, dir)) in class_dirs(&faces_dir)?.into_iter().enumerate() {
        for path in sorted_entries(&dir)? {
            if path.extension().and_then(|e| e.to_str()) != Some("png") {
                continue;
            }
            let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let image = ImageTensor::load_rgb(&path)?;
            let mask = ImageTensor::load_gray(&masks_dir.join(&name).join(format!("{stem}.png")))?;
            let subject = stem.split('_').next().unwrap_or(&stem).to_string();
            faces.push(FaceSample {
                id: format!("{name}/{stem}"),
                subject,
                image,
                mask,
                label,
            });
        }
        names.push(name);
    }
    for f in &faces {
        f.validate(names.len())?;
    }
    Ok((faces, names))
}

/// Writes faces in the layout read by [`load_faces`], one directory per label.
pub fn save_faces(faces: &[FaceSample], root: &Path) -> Result<()> {
    for f in faces {
        let stem = format!("{}_{}", f.subject.replace('_', "-"), f.id.replace(['/', '_'], "-"));
        let fd = root.join("faces").join(f.label.to_string());
        let md = root.join("masks").join(f.label.to_string());
        fs::create_dir_all(&fd)?;
        fs::create_dir_all(&md)?;
        f.image.save_png(&fd.join(format!("{stem}.png")))?;
        f.mask.save_png(&md.join(format!("{stem}.png")))?;
    }
    Ok(())
}

/// Loads every `.png`/`.jpg`/`.jpeg` under `dir`; the id is the file stem.
pub fn load_backgrounds(dir: &Path) -> Result<Vec<BackgroundImage>> {
    let mut out = Vec::new();
    for path in sorted_entries(dir)? {
        let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
        if !matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            continue;
        }
        let bg = BackgroundImage {
            id: path.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
            image: ImageTensor::load_rgb(&path)?,
        };
        bg.validate()?;
        out.push(bg);
    }
    Ok(out)
}
