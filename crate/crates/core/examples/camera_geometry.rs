//! Pinhole projection, ellipsoid silhouettes and similarity registration.

use falconwing::geom::{
    kabsch_umeyama, project_ellipsoid, project_point, CameraIntrinsics, Ellipsoid, Pose,
};
use nalgebra::{Rotation3, Vector3};

fn main() {
    let intr = CameraIntrinsics::desk();
    let cam = Pose::new(Vector3::zeros(), 0.0, 0.0, 0.0);
    for p in [
        Vector3::new(5.0, 0.0, 0.0),
        Vector3::new(5.0, 1.0, 0.5),
        Vector3::new(-1.0, 0.0, 0.0),
    ] {
        println!(
            "point {:?} -> {:?}",
            p.as_slice(),
            project_point(&intr, &cam, &p).map(|uv| (uv.x, uv.y))
        );
    }

    println!("{:>8} {:>12} {:>14}", "depth m", "area px^2", "area * d^2");
    for d in [2.0, 4.0, 8.0, 16.0] {
        let ell = Ellipsoid::at_pose(&Pose::at(d, 0.0, 0.0), Vector3::new(0.35, 0.26, 0.08));
        if let Some(img) = project_ellipsoid(&intr, &cam, &ell) {
            println!("{d:>8} {:>12.2} {:>14.1}", img.area(), img.area() * d * d);
        }
    }

    let rot = Rotation3::from_euler_angles(0.3, -0.2, 1.1).into_inner();
    let src: Vec<Vector3<f64>> = (0..8)
        .map(|i| Vector3::new(i as f64, (i * i) as f64 * 0.1, (i % 3) as f64))
        .collect();
    let dst: Vec<Vector3<f64>> = src
        .iter()
        .map(|p| 2.5 * (rot * p) + Vector3::new(1.0, -4.0, 0.5))
        .collect();
    let fit = kabsch_umeyama(&src, &dst).expect("non-degenerate points");
    println!(
        "registration: scale {:.6}, translation {:?}, residual {:.2e}",
        fit.scale,
        fit.translation.as_slice(),
        fit.residual(&src, &dst)
    );
}
