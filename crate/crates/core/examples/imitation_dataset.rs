//! Export frames, ground-truth masks and noisy expert labels for two
//! trajectories into a temporary directory.

use falconwing::harness::{generate_il_dataset, tracking_scenario, Maneuver, TrialConfig};

fn main() {
    let out = std::env::temp_dir().join("falconwing-dataset-example");
    let cfg = TrialConfig::default();
    let scenarios = [
        tracking_scenario(Maneuver::LeftSDescent, 1, &cfg.gains, 0.05),
        tracking_scenario(Maneuver::RightSAscent, 2, &cfg.gains, 0.05),
    ];
    let manifest = generate_il_dataset(&scenarios, &cfg, &[0.02, 0.05, 0.02, 0.05], &out)
        .expect("dataset export");
    println!("{} samples under {}", manifest.rows.len(), out.display());
    let row = &manifest.rows[10];
    println!(
        "sample 10: image {}, label {:?}, applied {:?}",
        row.image, row.label, row.applied
    );
}
