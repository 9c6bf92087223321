//! Sweeps one adaptation hyperparameter over a small held-out set and
//! prints adapted accuracy per corruption.
//!
//!     cargo run --release --example ablation_sweep -- [ckpt_dir] [param] [values]
//!     cargo run --release --example ablation_sweep -- target/toy-models lambda 0.9,0.96,1

use std::path::PathBuf;

use driftback::adapt::AdaptationConfig;
use driftback::corruptions::CorruptionKind;
use driftback::eval::{ablate, EvalCorruption, SweepParam};
use driftback::recipe::{train_toy_models, ToyRecipe, TrainedModels};

fn main() -> driftback::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().map(PathBuf::from).unwrap_or_else(|| "target/toy-models".into());
    let param: SweepParam = args.next().unwrap_or_else(|| "t_w".into()).parse()?;
    let values: Vec<f64> = args
        .next()
        .unwrap_or_else(|| "1,5,20".into())
        .split(',')
        .map(|v| v.trim().parse().map_err(|_| driftback::Error::Argument(format!("bad value {v:?}"))))
        .collect::<driftback::Result<_>>()?;

    let (models, recipe) = match TrainedModels::load(&dir) {
        Ok(m) => (m, ToyRecipe::default()),
        Err(e) => {
            eprintln!("no checkpoints in {} ({e}); training the tiny recipe instead", dir.display());
            let recipe = ToyRecipe::tiny();
            (train_toy_models(&recipe, &recipe.train_corpus()?)?.0, recipe)
        }
    };
    let held_out: Vec<_> = recipe.held_out_corpus()?.into_iter().step_by(4).collect();
    let corruptions = [EvalCorruption::Kind(CorruptionKind::Uni), EvalCorruption::Kind(CorruptionKind::Back)];
    let result = ablate(param, &values, &AdaptationConfig::default(), &held_out, &corruptions, 3, &models, 0)?;

    println!("{} clouds, sweeping {}", held_out.len(), param.name());
    print!("{:>8}", param.name());
    for c in result.corruptions() {
        print!(" {c:>8}");
    }
    println!();
    for v in &values {
        print!("{v:>8}");
        for row in result.rows.iter().filter(|r| r.value == *v) {
            print!(" {:>7.1}%", row.accuracy);
        }
        println!();
    }
    for c in result.corruptions() {
        println!("best {} for {c}: {:?}", param.name(), result.best_value(&c));
    }
    Ok(())
}
