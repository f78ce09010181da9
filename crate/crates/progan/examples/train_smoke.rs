//! Minutes-scale end-to-end training run on synthetic blob images: level 0
//! only, small latent, with per-epoch loss lines. Produces checkpoints and
//! sample grids under a temporary directory.
//!
//! ```text
//! cargo run --release --example train_smoke
//! ```

use progan::data;
use progan::rng::Rng;
use progan::train::{run_training, TrainingConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = std::env::temp_dir().join(format!("progan-example-smoke-{}", std::process::id()));
    let data_dir = base.join("data");
    let out_dir = base.join("out");
    std::fs::create_dir_all(&data_dir)?;

    // synthetic dataset: 32 seeded Gaussian blobs
    let mut rng = Rng::seed_from_u64(17);
    for i in 0..32 {
        let cx = 16.0 + rng.next_f64() * 32.0;
        let cy = 16.0 + rng.next_f64() * 32.0;
        let sigma = 4.0 + rng.next_f64() * 5.0;
        let img = image::RgbImage::from_fn(64, 64, |x, y| {
            let d2 = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)) / (2.0 * sigma * sigma);
            let v = (230.0 * (-d2).exp()) as u8;
            image::Rgb([v, v / 2, v / 3])
        });
        img.save(data_dir.join(format!("blob{i:02}.png")))?;
    }

    let config = TrainingConfig {
        total_epochs: 8,
        batch_size: 8,
        latent_dim: 64,
        max_level: 0,
        seed: 5,
        deterministic: true,
        workers: 1,
        ..TrainingConfig::default()
    };
    let (index, skipped) = data::ingest(&data_dir, config.seed)?;
    println!("dataset: {} images ({} skipped)", index.len(), skipped.entries.len());

    let summary = run_training(config, &index, &out_dir, None)?;
    println!(
        "ran {} epochs / {} steps; outputs under {}",
        summary.epochs_run,
        summary.steps_run,
        out_dir.display()
    );

    // show the loss trajectory from the metrics log
    let metrics = std::fs::read_to_string(&summary.metrics_path)?;
    println!("epoch step level alpha critic gen w gp drift");
    for line in metrics.lines().step_by(4) {
        println!("{line}");
    }
    Ok(())
}
