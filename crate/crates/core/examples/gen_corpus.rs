//! Generates a small labelled shape corpus and writes it in the on-disk
//! layout the command line reads.
//!
//!     cargo run --example gen_corpus -- [out_dir]

use std::path::PathBuf;

use driftback::corpus::{generate_corpus, load_corpus, save_corpus, CorpusSpec, ShapeFamily};

fn main() -> driftback::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "target/example-corpus".into());
    let spec = CorpusSpec {
        families: 8,
        per_class: 4,
        points: 1024,
        seed: 0,
    };
    let items = generate_corpus(&spec)?;
    save_corpus(&items, spec.families, &out)?;

    let (index, back) = load_corpus(&out)?;
    println!("{} clouds in {}", back.len(), out.display());
    for (label, name) in index.classes.iter().enumerate() {
        let members: Vec<&str> = back.iter().filter(|c| c.label == label).map(|c| c.id.as_str()).collect();
        println!("  {label} {name:<10} {}", members.join(" "));
    }
    let first = &back[0].cloud;
    println!(
        "first cloud: {} points, centroid {:?}, max norm {:.3}",
        first.len(),
        first.centroid_of_points().map(|v| (v * 1e6).round() / 1e6),
        first.max_norm()
    );
    println!("families available: {}", ShapeFamily::ALL.map(|f| f.name()).join(", "));
    Ok(())
}
