//! Demonstrates the growth contract: a trained level is carried over
//! bit-exactly when the next level is added, and at fade-in start the grown
//! generator reproduces the smaller generator's output exactly, upsampled.
//!
//! ```text
//! cargo run --release --example progressive_growth
//! ```

use progan::networks::{Generator, NetworkPlan, PhaseState};
use progan::rng::Rng;
use progan::tensor::{Tape, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let plan = NetworkPlan::standard();
    let mut rng = Rng::seed_from_u64(3);

    let small = Generator::<f64>::build(&plan, 0, &mut rng)?;
    let grown = small.grow(&mut rng)?;
    println!(
        "level 0: {} parameters -> level 1: {} parameters",
        small.param_count(),
        grown.param_count()
    );

    let transferred = small
        .parameters()
        .iter()
        .filter(|p| {
            grown
                .parameters()
                .iter()
                .any(|q| q.name == p.name && q.value == p.value)
        })
        .count();
    println!(
        "transferred parameters identical: {transferred}/{}",
        small.parameters().len()
    );

    let z = Tensor::<f64>::randn(vec![4, 1, 1, plan.latent_dim], &mut rng);
    let eval = |g: &Generator<f64>, phase: &PhaseState| -> Result<Tensor<f64>, progan::TensorError> {
        let tape = Tape::new();
        let zv = tape.leaf(&z, false)?;
        Ok(g.bind(&tape, false)?.forward(&zv, phase)?.to_tensor())
    };

    let low = eval(&small, &PhaseState::stable(0))?;
    let up = {
        let tape = Tape::new();
        tape.leaf(&low, false)?.upsample_nearest_2x()?.to_tensor()
    };
    for alpha in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let out = eval(&grown, &PhaseState::new(1, alpha, 0)?)?;
        println!(
            "alpha {alpha:<5} output {:?}  |out - upsampled(level0)| = {:.6}",
            out.shape(),
            out.max_abs_diff(&up)
        );
    }
    Ok(())
}
