//! Renders a small toy-face dataset to disk and regenerates it from its manifest.
//!
//! `cargo run --release --example render_toy_dataset -- [out_dir]`

use std::path::PathBuf;

use feratt::renderer::{
    load_rendered, regenerate, render_dataset, save_rendered, toy_background_set, toy_face_set, RenderConfig,
};

fn main() -> feratt::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("feratt-render"));
    let faces = toy_face_set(8, 3, 1)?;
    let backgrounds = toy_background_set(6, 160, 1);
    let ds = render_dataset(&faces, &backgrounds, 24, 1, 8, &RenderConfig::default())?;
    save_rendered(&ds, &out)?;

    let manifest = load_rendered(&out)?.manifest;
    let again = regenerate(&manifest, &faces, &backgrounds)?;
    assert_eq!(again.samples, ds.samples);

    let mut per_class = vec![0; 8];
    for s in &ds.samples {
        per_class[s.label] += 1;
    }
    println!("wrote {} composites to {}", ds.len(), out.display());
    println!("per-class counts: {per_class:?}");
    Ok(())
}
