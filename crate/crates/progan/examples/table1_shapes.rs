//! Walks both networks at every progress level and prints each layer's
//! output dimensions, confirming the architecture table row by row.
//!
//! ```text
//! cargo run --release --example table1_shapes
//! ```

use progan::networks::{Discriminator, Generator, NetworkPlan, PhaseState};
use progan::rng::Rng;
use progan::tensor::{Tape, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let plan = NetworkPlan::standard();
    let mut rng = Rng::seed_from_u64(0);
    let batch = 1;

    for level in 0..=plan.max_level() {
        let resolution = 4 << level;
        println!("== level {level} ({resolution}x{resolution}) ==");

        let generator = Generator::<f32>::build(&plan, level, &mut rng)?;
        let tape = Tape::new();
        let z = tape.leaf_owned(Tensor::randn(vec![batch, 1, 1, plan.latent_dim], &mut rng), false)?;
        let mut trace = Vec::new();
        generator
            .bind(&tape, false)?
            .forward_traced(&z, &PhaseState::stable(level), &mut trace)?;
        println!("  generator ({} parameters)", generator.param_count());
        for entry in &trace {
            println!("    {:<16} {:?}", entry.name, entry.shape);
        }

        let critic = Discriminator::<f32>::build(&plan, level, &mut rng)?;
        let x = tape.leaf_owned(
            Tensor::randn(vec![2, resolution, resolution, 3], &mut rng),
            false,
        )?;
        let mut trace = Vec::new();
        critic
            .bind(&tape, false)?
            .forward_traced(&x, &PhaseState::stable(level), &mut trace)?;
        println!("  critic ({} parameters)", critic.param_count());
        for entry in &trace {
            println!("    {:<16} {:?}", entry.name, entry.shape);
        }
    }
    Ok(())
}
