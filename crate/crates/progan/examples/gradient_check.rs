//! Verifies tape gradients against central finite differences, from single
//! operations up to a full critic loss with the penalty double-backward.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use progan::nn;
use progan::rng::Rng;
use progan::tensor::{grad_check, Tensor};
use progan::verify;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = Rng::seed_from_u64(42);
    let step = 1e-4;

    let x = Tensor::<f64>::randn(vec![1, 5, 5, 2], &mut rng);
    let w = Tensor::<f64>::randn(vec![3, 3, 2, 4], &mut rng);
    let report = grad_check(
        move |tape, v| {
            let wv = tape.leaf(&w, false)?;
            let h = v.conv2d(&wv, 1)?.leaky_relu(0.2)?;
            h.mul(&h)?.mean_all()
        },
        &x,
        step,
    )?;
    println!("conv + leaky relu     max rel err {:.3e}", report.max_rel_err);

    let x = Tensor::<f64>::randn(vec![3, 2, 2, 4], &mut rng);
    let report = grad_check(
        |_, v| {
            let y = nn::pixelnorm(v, nn::PIXELNORM_EPS)?;
            let y = nn::minibatch_stddev(&y)?;
            y.mul(&y)?.mean_all()
        },
        &x,
        step,
    )?;
    println!("pixelnorm + batchstat max rel err {:.3e}", report.max_rel_err);

    // full level-0 critic loss, probed along random parameter directions;
    // this exercises the double-backward inside the gradient penalty
    let err = verify::critic_loss_directional_err(5, 7)?;
    println!("level-0 critic loss   max rel err {err:.3e} (5 directional probes)");
    Ok(())
}
