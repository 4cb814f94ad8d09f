//! Render the leader from a chase camera, segment it back out of the frame
//! and write both images as PPM/PGM.

use std::fs::File;
use std::io::BufWriter;

use falconwing::geom::Pose;
use falconwing::percept::{
    mask_stats, render_scene, segment_color, LeaderAppearance, RenderConfig, LEADER_COLOR,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RenderConfig::desk(7);
    let camera = Pose::at(0.0, 0.0, 2.0);
    let leader = Pose::new(nalgebra::Vector3::new(3.0, 0.4, 2.2), 0.0, 0.3, 0.2);
    let appearance = LeaderAppearance::default();
    let (frame, truth) = render_scene(&cfg, &camera, Some(&leader), &appearance);
    let seen = segment_color(&frame, LEADER_COLOR, 48);
    println!(
        "ground-truth area {} px, segmented {} px, IoU {:.3}",
        truth.area(),
        seen.area(),
        truth.iou(&seen)
    );
    if let Some(stats) = mask_stats(&seen) {
        println!(
            "centroid ({:.1}, {:.1}), bbox {:?}",
            stats.centroid.x, stats.centroid.y, stats.bbox
        );
    }

    let dir = std::env::temp_dir();
    frame.write_ppm(BufWriter::new(File::create(
        dir.join("falconwing_frame.ppm"),
    )?))?;
    truth.write_pgm(BufWriter::new(File::create(
        dir.join("falconwing_mask.pgm"),
    )?))?;
    println!("wrote {}", dir.join("falconwing_frame.ppm").display());
    Ok(())
}
