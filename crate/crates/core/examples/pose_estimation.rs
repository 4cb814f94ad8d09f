//! Marker-or-fallback pose estimates along an approach, and the image
//! quality monitor reacting to a corrupted frame burst.

use falconwing::estimation::{
    hybrid_estimate, ssim, EstimatorNoiseModel, MarkerConfig, QualityMonitor,
};
use falconwing::geom::{CameraIntrinsics, Pose};
use falconwing::percept::{corrupt_frame, render_scene, LeaderAppearance, RenderConfig};

fn main() {
    let intr = CameraIntrinsics::desk();
    let marker = MarkerConfig::default();
    let marker_noise = EstimatorNoiseModel::calibrated(1).scaled(0.2);
    let fallback = EstimatorNoiseModel::calibrated(1);
    let mut rng = fallback.rng();
    for x in [-20.0, -12.0, -8.0, -4.0, -2.0] {
        let truth = Pose::new(nalgebra::Vector3::new(x, 0.0, 1.0), 0.0, 0.0, 0.0);
        let est = hybrid_estimate(&truth, &intr, &marker, &marker_noise, &fallback, &mut rng);
        println!(
            "x = {x:>6}: {:?} estimate, position error {:.3} m",
            est.source,
            (est.pose.position - truth.position).norm()
        );
    }

    let cfg = RenderConfig::desk(4);
    let cam = Pose::at(0.0, 0.0, 2.0);
    let leader = Pose::at(4.0, 0.0, 2.0);
    let (clean, _) = render_scene(&cfg, &cam, Some(&leader), &LeaderAppearance::default());
    let mut monitor = QualityMonitor::default();
    let mut prev = clean.clone();
    for tick in 0..10 {
        let frame = if (2..8).contains(&tick) {
            corrupt_frame(&clean, 0.5, tick)
        } else {
            clean.clone()
        };
        let s = ssim(&prev, &frame).expect("same size");
        let flag = monitor.update(s);
        println!(
            "tick {tick}: ssim {s:.3}{}",
            if flag { "  SAFETY FLAG" } else { "" }
        );
        prev = frame;
    }
}
