//! Corrupts one held-out shape, adapts it back and prints the per-step
//! trace along with Chamfer distances and class predictions.
//!
//!     cargo run --release --example train_toy_models
//!     cargo run --release --example adapt_single -- [ckpt_dir] [kind]

use std::path::{Path, PathBuf};

use driftback::adapt::{adapt_cloud, AdaptationConfig};
use driftback::corruptions::CorruptionSpec;
use driftback::geometry::chamfer_clouds;
use driftback::recipe::{train_toy_models, ToyRecipe, TrainedModels};

fn models(dir: &Path) -> driftback::Result<(TrainedModels, ToyRecipe)> {
    match TrainedModels::load(dir) {
        Ok(m) => Ok((m, ToyRecipe::default())),
        Err(e) => {
            eprintln!("no checkpoints in {} ({e}); training the tiny recipe instead", dir.display());
            let recipe = ToyRecipe::tiny();
            Ok((train_toy_models(&recipe, &recipe.train_corpus()?)?.0, recipe))
        }
    }
}

fn main() -> driftback::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().map(PathBuf::from).unwrap_or_else(|| "target/toy-models".into());
    let kind = args.next().unwrap_or_else(|| "impu".into());
    let (models, recipe) = models(&dir)?;

    let held_out = recipe.held_out_corpus()?;
    let item = &held_out[0];
    let corrupted = driftback::corruptions::apply_corruption(CorruptionSpec::named(&kind, 3, 11)?, &item.cloud)?.normalize();
    let cfg = AdaptationConfig::default();
    let (adapted, trace) = adapt_cloud(&corrupted, &cfg, models.adapt_models(), &models.schedule)?;

    println!("{} under {kind} (severity 3), t_w = {}", item.id, cfg.t_w);
    println!("{:>4} {:>4} {:>10} {:>10} {:>10}", "t", "prev", "l_cd", "|grad z|", "|guide|");
    for r in &trace.records {
        println!("{:>4} {:>4} {:>10.5} {:>10.2e} {:>10.2e}", r.t, r.t_prev, r.l_cd, r.grad_z_norm, r.guidance_norm);
    }
    let label = |c: &driftback::geometry::PointCloud| models.classifier.classify(c).map(|(l, _)| l);
    println!("chamfer to clean: corrupted {:.4}, adapted {:.4}", chamfer_clouds(&corrupted, &item.cloud)?, chamfer_clouds(&adapted, &item.cloud)?);
    println!("label {}: corrupted -> {}, adapted -> {}", item.label, label(&corrupted)?, label(&adapted)?);

    let (mut before, mut after, total) = (0, 0, 16);
    for (i, item) in held_out.iter().step_by(4).take(total).enumerate() {
        let x = driftback::corruptions::apply_corruption(CorruptionSpec::named(&kind, 3, i as u64)?, &item.cloud)?.normalize();
        let (y, _) = adapt_cloud(&x, &cfg, models.adapt_models(), &models.schedule)?;
        before += (label(&x)? == item.label) as usize;
        after += (label(&y)? == item.label) as usize;
    }
    println!("over {total} held-out clouds: {before} correct corrupted, {after} correct adapted");
    Ok(())
}
