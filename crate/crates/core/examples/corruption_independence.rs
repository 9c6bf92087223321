//! Measures how far apart the Chamfer-distance distributions of different
//! corruptions sit before and after forward diffusion, and writes the
//! overlap figure.
//!
//!     cargo run --release --example corruption_independence -- [ckpt_dir] [out_dir]

use std::path::PathBuf;

use driftback::corpus::{generate_corpus, CorpusSpec};
use driftback::corruptions::CorruptionKind;
use driftback::eval::{cd_independence, DistanceSpace};
use driftback::recipe::{train_toy_models, ToyRecipe, TrainedModels};

fn main() -> driftback::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().map(PathBuf::from).unwrap_or_else(|| "target/toy-models".into());
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| "target/independence".into());
    let (models, points) = match TrainedModels::load(&dir) {
        Ok(m) => (m, 1024),
        Err(e) => {
            eprintln!("no checkpoints in {} ({e}); training the tiny recipe instead", dir.display());
            let recipe = ToyRecipe::tiny();
            (train_toy_models(&recipe, &recipe.train_corpus()?)?.0, recipe.train.points)
        }
    };
    let spec = CorpusSpec {
        families: models.classifier.arch.classes.clamp(2, 8),
        per_class: 100usize.div_ceil(models.classifier.arch.classes.clamp(2, 8)),
        points,
        seed: 7,
    };
    let clouds: Vec<_> = generate_corpus(&spec)?.into_iter().map(|c| c.cloud).collect();
    let kinds = [CorruptionKind::Uni, CorruptionKind::Gauss, CorruptionKind::Rbf];
    let report = cd_independence(&clouds, &kinds, 3, 5, &models.vae, &models.schedule, 7, DistanceSpace::Latent)?;

    println!("{} clouds, t_w = {}", clouds.len(), report.t_w);
    println!("{:<7} {:<7} {:>12} {:>12}", "a", "b", "W1 before", "W1 after");
    for p in &report.pairs {
        println!("{:<7} {:<7} {:>12.5} {:>12.5}", p.a, p.b, p.before, p.after);
    }
    report.write(&out)?;
    println!("figure and data in {}", out.display());
    Ok(())
}
