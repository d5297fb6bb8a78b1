//! Friedman test with both post-hoc procedures on a per-fold accuracy table.
//!
//! `cargo run --release --example stats_compare`

use feratt::evaluation::stats::{bonferroni_dunn_posthoc, friedman_test, nemenyi_posthoc};

fn main() -> feratt::Result<()> {
    let methods = ["baseline", "feratt-cls", "feratt-rep-cls"];
    let folds = [
        [0.71, 0.74, 0.79],
        [0.68, 0.73, 0.77],
        [0.75, 0.72, 0.80],
        [0.70, 0.76, 0.78],
        [0.66, 0.70, 0.75],
        [0.73, 0.71, 0.81],
        [0.69, 0.75, 0.74],
        [0.72, 0.74, 0.79],
        [0.70, 0.69, 0.76],
        [0.67, 0.72, 0.78],
    ];
    let scores: Vec<Vec<f64>> = folds.iter().map(|r| r.to_vec()).collect();
    let mut result = friedman_test(&scores)?;
    result.methods = methods.iter().map(|m| m.to_string()).collect();
    println!(
        "Friedman χ² = {:.3}, p = {:.2e} ({:?}), mean ranks {:?}",
        result.friedman_statistic, result.p_value, result.p_value_method, result.mean_ranks
    );
    let nemenyi = nemenyi_posthoc(&result.mean_ranks, result.n, 0.05)?;
    println!("{}", serde_json::to_string_pretty(&nemenyi)?);
    let dunn = bonferroni_dunn_posthoc(&result.mean_ranks, result.n, 2, 0.05)?;
    println!("{}", serde_json::to_string_pretty(&dunn)?);
    Ok(())
}
