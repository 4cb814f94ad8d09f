//! Vision-policy success rate on the straight leader as the leader shrinks
//! and as its pixels pick up salt-and-pepper noise.

use falconwing::harness::{
    perturbation_sweep, tracking_scenario, trial_seeds, Maneuver, PerturbationKind, PolicySpec,
    SweepLevel, TrialConfig,
};

fn main() {
    let cfg = TrialConfig::default();
    let scenarios: Vec<_> = trial_seeds(11, "straight", 10)
        .into_iter()
        .map(|s| tracking_scenario(Maneuver::Straight, s, &cfg.gains, 0.05))
        .collect();
    let mut levels: Vec<SweepLevel> = [2.0, 1.5, 1.0, 0.75, 0.5]
        .iter()
        .map(|&value| SweepLevel {
            kind: PerturbationKind::Scale,
            value,
        })
        .collect();
    levels.extend([0.0, 0.1, 0.2, 0.3].iter().map(|&value| SweepLevel {
        kind: PerturbationKind::SaltPepper,
        value,
    }));
    for row in perturbation_sweep(&scenarios, &levels, &PolicySpec::Vision, &cfg, 0) {
        println!(
            "{:<10?} {:>5}: SR {:>5.1}%",
            row.level.kind,
            row.level.value,
            100.0 * row.sr
        );
    }
}
