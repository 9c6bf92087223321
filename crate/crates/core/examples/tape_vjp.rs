//! Records a small network on the tape, pulls a cotangent back to the input
//! and checks it against central differences.
//!
//!     cargo run --example tape_vjp

use driftback::seeding::rng;
use driftback::tensor::{Activation, Mlp, Tape, Tensor};

fn main() -> driftback::Result<()> {
    let mlp = Mlp::new(&[3, 16, 16, 2], Activation::Tanh, &mut rng(0));
    let x = Tensor::from_rows(&[[0.1, -0.4, 0.7], [0.9, 0.2, -0.3], [-0.5, 0.5, 0.0]])?;

    let mut tape = Tape::new();
    let xi = tape.leaf(x.clone(), true);
    let params = mlp.bind(&mut tape, false);
    let y = mlp.record(&mut tape, xi, &params)?;
    let pooled = tape.mean_rows(y)?;
    let sq = tape.square(pooled)?;
    let loss = tape.sum_all(sq)?;
    println!("tape has {} nodes, loss {:.6}", tape.len(), tape.value(loss).data()[0]);

    let grad = tape.vjp(loss, &Tensor::scalar(1.0), xi)?;
    let f = |x: &Tensor| {
        let pooled = mlp.forward(x).unwrap().mean_rows();
        pooled.map(|v| v * v).sum()
    };
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut p = x.clone();
        p.data_mut()[i] += h;
        let mut m = x.clone();
        m.data_mut()[i] -= h;
        let fd = (f(&p) - f(&m)) / (2.0 * h);
        worst = worst.max((fd - grad.data()[i]).abs());
        println!("  d loss / d x[{}][{}] = {:+.8}  (finite difference {:+.8})", i / 3, i % 3, grad.data()[i], fd);
    }
    println!("largest disagreement {worst:.2e}");
    Ok(())
}
