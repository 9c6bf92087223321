//! Times adaptation of one cloud against the number of denoising steps and
//! fits a line through the medians.
//!
//!     cargo run --release --example timing_bench -- [ckpt_dir]

use std::path::PathBuf;

use driftback::adapt::AdaptationConfig;
use driftback::eval::bench_timing;
use driftback::recipe::{train_toy_models, ToyRecipe, TrainedModels};

fn main() -> driftback::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "target/toy-models".into());
    let (models, recipe) = match TrainedModels::load(&dir) {
        Ok(m) => (m, ToyRecipe::default()),
        Err(e) => {
            eprintln!("no checkpoints in {} ({e}); training the tiny recipe instead", dir.display());
            let recipe = ToyRecipe::tiny();
            (train_toy_models(&recipe, &recipe.train_corpus()?)?.0, recipe)
        }
    };
    let cloud = recipe.held_out_corpus()?.swap_remove(0).cloud;
    let report = bench_timing(&[1, 5, 10, 20, 30, 40], &cloud, &AdaptationConfig::default(), &models, 5)?;
    for r in &report.rows {
        println!("{:>3} steps  {:>8.1} ms", r.steps, r.millis);
    }
    println!(
        "{:.2} ms per step + {:.1} ms fixed, r^2 = {:.4}",
        report.slope, report.intercept, report.r_squared
    );
    Ok(())
}
