//! Prints the layer table of every model arm as JSON.
//!
//! `cargo run --release --example architecture_summary -- [width_multiplier]`

use feratt::network::{FerAtt, ModelArm, NetworkConfig};

fn main() -> feratt::Result<()> {
    let width: f64 = std::env::args().nth(1).map_or(Ok(0.25), |s| s.parse()).map_err(|e| feratt::Error::Config(format!("{e}")))?;
    let model = FerAtt::<f32>::new(NetworkConfig::new(8, width), 0)?;
    for arm in [ModelArm::Baseline, ModelArm::AttRepCls] {
        let s = model.summary(arm);
        println!("{arm}: {} layers, {} parameters", s.layers.len(), s.total_params);
    }
    println!("{}", serde_json::to_string_pretty(&model.summary(ModelArm::AttRepCls))?);
    Ok(())
}
