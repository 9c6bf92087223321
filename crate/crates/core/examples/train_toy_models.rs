//! Trains the VAE, the latent noise predictors and the classifier with the
//! built-in recipe and saves checkpoints the other examples and the command
//! line can load (`--ckpt <dir>`). Pass `--tiny` for a seconds-long smoke
//! run.
//!
//!     cargo run --release --example train_toy_models -- [--tiny] [out_dir]

use std::path::PathBuf;
use std::time::Instant;

use driftback::recipe::{train_toy_models, ToyRecipe};
use driftback::training::accuracy;

fn main() -> driftback::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let tiny = args.iter().any(|a| a == "--tiny");
    let out = args
        .iter()
        .find(|a| !a.starts_with("--"))
        .map(PathBuf::from)
        .unwrap_or_else(|| "target/toy-models".into());
    let recipe = if tiny { ToyRecipe::tiny() } else { ToyRecipe::default() };

    let start = Instant::now();
    let corpus = recipe.train_corpus()?;
    let (models, logs) = train_toy_models(&recipe, &corpus)?;
    println!("trained on {} clouds in {:.0} s", corpus.len(), start.elapsed().as_secs_f64());
    for (name, log) in [("vae", &logs.vae), ("diffusion", &logs.diffusion), ("classifier", &logs.classifier)] {
        if let (Some(first), Some(last)) = (log.epochs.first(), log.epochs.last()) {
            println!("  {name:<10} loss {:.4} -> {:.4} over {} epochs", first.loss, last.loss, log.epochs.len());
        }
    }
    let held_out = recipe.held_out_corpus()?;
    println!("clean held-out accuracy {:.1}%", accuracy(&models.classifier, &held_out)?);
    models.save(&out, recipe.vae_training.seed)?;
    println!("checkpoints in {}", out.display());
    Ok(())
}
