//! Writes attention-image grids at seven input-noise levels.
//!
//! `cargo run --release --example attention_maps -- [out_dir]`

use std::path::PathBuf;

use feratt::evaluation::{attention_concentration, attention_map_dump, ATTENTION_DUMP_SIGMAS};
use feratt::network::ModelArm;
use feratt::renderer::{render_dataset, toy_background_set, toy_face_set, RenderConfig};
use feratt::training::{train, TrainConfig};

fn main() -> feratt::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("feratt-attention"));
    let faces = toy_face_set(4, 4, 11)?;
    let backgrounds = toy_background_set(4, 160, 11);
    let ds = render_dataset(&faces, &backgrounds, 32, 11, 4, &RenderConfig::default())?;
    let run = train(&ds, None, &TrainConfig::overfit(ModelArm::AttRepCls))?;

    let c = attention_concentration(&run.checkpoint, &ds)?;
    println!("attention inside mask {:.3}, outside {:.3}, ratio {:.1}", c.inside_mean, c.outside_mean, c.ratio());
    let images: Vec<_> = ds.samples.iter().take(4).map(|s| s.image.clone()).collect();
    for path in attention_map_dump(&run.checkpoint, &images, &ATTENTION_DUMP_SIGMAS, 0, &out)? {
        println!("{}", path.display());
    }
    Ok(())
}
