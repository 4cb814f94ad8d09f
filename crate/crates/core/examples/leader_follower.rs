//! Tracking trials on the three evaluation maneuvers with the state-based
//! expert and the vision policy.

use falconwing::harness::{
    compute_metrics, run_trials, tracking_scenario, trial_seeds, Maneuver, PolicySpec, TrialConfig,
};

fn main() {
    let cfg = TrialConfig::default();
    for policy in [PolicySpec::State, PolicySpec::Vision] {
        for m in Maneuver::EVALUATION {
            let scenarios: Vec<_> = trial_seeds(1, m.name(), 10)
                .into_iter()
                .map(|s| tracking_scenario(m, s, &cfg.gains, falconwing::DEFAULT_DT))
                .collect();
            let results = run_trials(&scenarios, &policy, &cfg, 0);
            let metrics = compute_metrics(&results, None).expect("ten trials");
            println!(
                "{:<7} {:<18} SR {:>4.0}%  ATE {:>6.1} cm  ART {:.3} ms",
                policy.name(),
                m.name(),
                100.0 * metrics.sr,
                metrics.ate.unwrap_or(f64::NAN),
                1e3 * metrics.art
            );
        }
    }
}
