//! One trial through the ground link: frame drops, a degraded camera burst
//! that trips the safety monitor, and a pilot takeover.

use falconwing::dynamics::Control;
use falconwing::estimation::QualityMonitor;
use falconwing::harness::{tracking_scenario, Maneuver, TrialConfig, TrialSim, VisionFollower};
use falconwing::link::{
    deserialize, run_loop, serialize, LinkConfig, LinkMessage, LoopOptions, MemoryEnd, Mode,
    PilotScript,
};
use falconwing::percept::{corrupt_frame, Frame};

fn main() {
    let bytes = serialize(&LinkMessage::Mode(Mode::Manual), 1, 50_000);
    println!(
        "mode message: {} bytes, decodes to {:?}",
        bytes.len(),
        deserialize(&bytes).map(|m| m.0)
    );

    let cfg = TrialConfig::default();
    let scenario = tracking_scenario(Maneuver::Straight, 5, &cfg.gains, 0.05);
    let degrade = |tick: usize, f: Frame| {
        if (20..28).contains(&tick) {
            corrupt_frame(&f, 0.5, tick as u64)
        } else {
            f
        }
    };
    let (mut air, mut ground) = MemoryEnd::pair();
    let log = run_loop(
        TrialSim::new(&scenario, &cfg),
        &mut VisionFollower::new(cfg.gains, &cfg.render.intrinsics),
        QualityMonitor::default(),
        &LinkConfig {
            drop_probability: 0.1,
            latency_ticks: 1,
            seed: 5,
            ..LinkConfig::default()
        },
        &mut air,
        &mut ground,
        LoopOptions {
            pilot: PilotScript {
                mode_changes: vec![(40, Mode::Manual)],
                manual_control: Some(Control::new(cfg.gains.trim_throttle, 0.0, 0.0, 0.0)),
            },
            degrade: Some(&degrade),
        },
    );
    println!(
        "ticks {}, dropped {:?}",
        log.ticks.len(),
        log.dropped_ticks()
    );
    println!("safety flags at ticks {:?}", log.safety_ticks());
    for t in &log.ticks[38..43] {
        println!("{}", serde_json::to_string(t).expect("tick log serializes"));
    }
}
