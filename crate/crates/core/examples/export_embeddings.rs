//! Exports 64-d embeddings to CSV and checks which anchor each class mean lands nearest.
//!
//! `cargo run --release --example export_embeddings -- [out.csv]`

use std::path::PathBuf;

use feratt::evaluation::{export_embeddings, nearest_anchors};
use feratt::network::ModelArm;
use feratt::renderer::{render_dataset, toy_background_set, toy_face_set, RenderConfig};
use feratt::training::{train, TrainConfig};

fn main() -> feratt::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("feratt-embeddings.csv"));
    let faces = toy_face_set(4, 4, 11)?;
    let backgrounds = toy_background_set(4, 160, 11);
    let ds = render_dataset(&faces, &backgrounds, 32, 11, 4, &RenderConfig::default())?;
    let run = train(&ds, None, &TrainConfig::overfit(ModelArm::AttRepCls))?;

    let table = export_embeddings(&run.checkpoint, &ds)?;
    table.write_csv(&out)?;
    println!("wrote {} rows of dimension {} to {}", table.rows.len(), table.dim(), out.display());
    let nearest = nearest_anchors(&table, &run.checkpoint.manifold.anchors);
    println!("nearest anchor per class mean: {nearest:?}");
    Ok(())
}
