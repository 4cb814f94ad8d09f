//! Glide-slope approach, flare and rollout onto the pad from perturbed
//! handoff points.

use falconwing::control::landing_phase;
use falconwing::harness::{
    compute_metrics, landing_scenario, run_trials, trial_seeds, PolicySpec, TrialConfig,
};

fn main() {
    let cfg = TrialConfig::default();
    let scenarios: Vec<_> = trial_seeds(3, "landing", 10)
        .into_iter()
        .map(|s| landing_scenario(&cfg.runway, s, falconwing::DEFAULT_DT))
        .collect();
    let results = run_trials(&scenarios, &PolicySpec::State, &cfg, 0);
    for (i, r) in results.iter().enumerate() {
        let start = &r.follower.states[0];
        match &r.touchdown {
            Some(t) => println!(
                "trial {i}: from ({:.1}, {:.1}, {:.1}) touched down at x = {:.2} m after {:.2} s, lateral {:.1} cm",
                start.position.x,
                start.position.y,
                start.position.z,
                t.position.x,
                t.time,
                100.0 * t.lateral
            ),
            None => println!("trial {i}: no touchdown, last phase {:?}", landing_phase(r.follower.last(), &cfg.runway)),
        }
    }
    let m = compute_metrics(&results, Some(&cfg.runway)).expect("ten trials");
    println!(
        "SR {:.0}%, ALD {:.2} cm",
        100.0 * m.sr,
        m.ald.unwrap_or(f64::NAN)
    );
}
