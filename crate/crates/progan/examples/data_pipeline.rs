//! Exercises the data pipeline: ingest with a skip report, preparation to
//! the 64x64 master, augmentation, and fade-blended batches at every
//! resolution.
//!
//! ```text
//! cargo run --release --example data_pipeline
//! ```

use progan::data::{augment, batch_at_resolution, ingest, prepare};
use progan::networks::PhaseState;
use progan::rng::Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("progan-example-data-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;

    // a few valid images, one deliberately broken file, one too small
    for i in 0..6 {
        let img = image::RgbImage::from_fn(80, 100, |x, y| {
            image::Rgb([(x * 3) as u8, (y * 2) as u8, (i * 40) as u8])
        });
        img.save(dir.join(format!("img{i}.png")))?;
    }
    std::fs::write(dir.join("broken.png"), b"definitely not a png")?;
    image::RgbImage::from_pixel(32, 32, image::Rgb([0, 0, 0])).save(dir.join("small.png"))?;

    let (index, skipped) = ingest(&dir, 9)?;
    println!("indexed {} images, skipped {}:", index.len(), skipped.entries.len());
    for (path, reason) in &skipped.entries {
        println!("  {} ({reason})", path.file_name().unwrap().to_string_lossy());
    }

    // preparation: center crop of the 80x100 image, then area resample
    let img = image::open(&index.records[0].path)?.to_rgb8();
    let master = prepare(&img)?;
    let (lo, hi) = master
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    println!("\nprepared master {:?}, value range [{lo:.3}, {hi:.3}]", master.shape());

    let mut rng = Rng::seed_from_u64(1);
    let augmented = augment(&master, &mut rng);
    println!("augmentation preserves the pixel multiset: shape {:?}", augmented.shape());

    println!("\nbatches across the schedule:");
    for (level, alpha) in [(0, 1.0), (1, 0.5), (2, 1.0), (4, 1.0)] {
        let phase = PhaseState::new(level, alpha, 0)?;
        let batch = batch_at_resolution(&index, &phase, 4, &mut rng)?;
        println!(
            "  level {level} alpha {alpha}: {:?}",
            batch.tensor.shape()
        );
    }

    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
