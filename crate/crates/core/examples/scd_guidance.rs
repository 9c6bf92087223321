//! Selective Chamfer distance against plain Chamfer on a cloud with a few
//! far outliers, then a short gradient descent that pulls a noisy copy back
//! toward the reference while ignoring the outliers.
//!
//!     cargo run --example scd_guidance

use driftback::corpus::{sample_shape, ShapeFamily};
use driftback::geometry::{chamfer, scd, scd_grad, ScdSide};
use driftback::seeding::rng;
use driftback::tensor::Tensor;
use rand::Rng;

fn main() -> driftback::Result<()> {
    let reference = sample_shape(ShapeFamily::Sphere, 400, &mut rng(0))?.to_tensor();
    let mut r = rng(1);
    let mut noisy = reference.clone();
    for v in noisy.data_mut() {
        *v += 0.05 * r.random_range(-1.0..1.0);
    }
    for i in 0..8 {
        noisy.data_mut()[3 * i..3 * i + 3].copy_from_slice(&[3.0, -2.0 + i as f64, 2.5]);
    }

    println!("chamfer          {:.5}", chamfer(&reference, &noisy)?);
    for lambda in [1.0, 0.99, 0.96, 0.9] {
        println!("scd lambda={lambda:<5} {:.5}", scd(&reference, &noisy, lambda)?.value);
    }

    let mut x: Tensor = noisy.clone();
    let step = 0.5 * x.rows() as f64;
    for it in 0..=40 {
        if it % 10 == 0 {
            let outlier = x.row_slice(0).to_vec();
            println!(
                "iter {it:>2}: scd {:.5}, first outlier at ({:.2}, {:.2}, {:.2})",
                scd(&reference, &x, 0.96)?.value,
                outlier[0],
                outlier[1],
                outlier[2]
            );
        }
        let g = scd_grad(&reference, &x, 0.96, ScdSide::Second)?;
        x = x.axpy(-step, &g)?;
    }
    Ok(())
}
