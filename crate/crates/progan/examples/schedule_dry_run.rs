//! Prints the progressive schedule for a full default run without training:
//! 100 epochs split into 5 equal phases, resolution doubling at each phase
//! boundary, alpha ramping over the first half of each phase.
//!
//! ```text
//! cargo run --release --example schedule_dry_run
//! ```

use progan::train::{schedule, TrainingConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = TrainingConfig::default();
    println!(
        "{} epochs, {} phases, fade over the first {:.0}% of each phase\n",
        config.total_epochs,
        config.max_level + 1,
        config.fade_fraction * 100.0
    );
    println!("epoch  level  resolution  alpha");
    let mut growth_steps = 0;
    let mut prev_level = 0;
    for epoch in 0..config.total_epochs {
        let p = schedule(epoch, &config)?;
        if p.level != prev_level {
            growth_steps += 1;
            prev_level = p.level;
        }
        let marker = if p.epoch_in_phase == 0 && epoch > 0 {
            "  <- grow"
        } else {
            ""
        };
        if p.epoch_in_phase < 3 || p.alpha < 1.0 || epoch == config.total_epochs - 1 {
            println!(
                "{epoch:>5}  {:>5}  {:>9}  {:>5.2}{marker}",
                p.level,
                p.resolution(),
                p.alpha
            );
        }
    }
    println!("\n{growth_steps} growth steps total");
    Ok(())
}
