//! Draws latents, runs the generator, and writes a tiled PNG grid. Uses a
//! freshly initialized generator, so the images are colorful noise; point
//! `--ckpt` at a trained checkpoint via the `progan sample` command for real
//! samples.
//!
//! ```text
//! cargo run --release --example sample_grid
//! ```

use progan::grid::{batch_image, image_to_u8, write_png_grid};
use progan::networks::{Generator, NetworkPlan, PhaseState};
use progan::rng::Rng;
use progan::tensor::{Tape, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let plan = NetworkPlan::standard();
    let level = 3; // 32x32
    let (rows, cols) = (3, 5);
    let count = rows * cols;

    let mut rng = Rng::seed_from_u64(2024);
    let generator = Generator::<f32>::build(&plan, level, &mut rng)?;

    let z = Tensor::randn(vec![count, 1, 1, plan.latent_dim], &mut rng);
    let tape = Tape::new();
    let zv = tape.leaf_owned(z, false)?;
    let batch = generator
        .bind(&tape, false)?
        .forward(&zv, &PhaseState::stable(level))?
        .to_tensor();

    let tiles: Vec<Vec<u8>> = (0..count)
        .map(|i| image_to_u8(&batch_image(&batch, i)))
        .collect();
    let out = std::env::temp_dir().join("progan-example-grid.png");
    write_png_grid(&tiles, 4 << level, rows, cols, &out)?;
    println!(
        "wrote {count} samples ({0}x{0} tiles, 2px gutters) to {1}",
        4 << level,
        out.display()
    );
    Ok(())
}
