//! Applies every corruption at every severity to one shape and reports how
//! far each result moves from the clean cloud. Writes `.xyz` files for
//! viewing.
//!
//!     cargo run --example corrupt_gallery -- [out_dir]

use std::path::PathBuf;

use driftback::corpus::{sample_shape, ShapeFamily};
use driftback::corruptions::{apply_corruption, corruption_catalog, CorruptionSpec};
use driftback::geometry::{chamfer_clouds, save_cloud};
use driftback::seeding::rng;

fn main() -> driftback::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "target/corrupt-gallery".into());
    let clean = sample_shape(ShapeFamily::Torus, 1024, &mut rng(1))?;
    save_cloud(&clean, &out.join("clean.xyz"))?;

    println!("{:<7} {:<15} {:>28}", "kind", "family", "chamfer to clean (sev 1..5)");
    for (kind, family) in corruption_catalog() {
        let mut cds = Vec::new();
        for severity in 1..=5u8 {
            let x = apply_corruption(CorruptionSpec::new(kind, severity, 7)?, &clean)?;
            cds.push(format!("{:.4}", chamfer_clouds(&x.normalize(), &clean)?));
            if severity == 3 {
                save_cloud(&x, &out.join(format!("{}.xyz", kind.name())))?;
            }
        }
        println!("{:<7} {:<15} {}", kind.name(), format!("{family:?}"), cds.join(" "));
    }
    println!("severity-3 clouds written to {}", out.display());
    Ok(())
}
