//! # falconwing
//!
//! A desk-scale toolkit for vision-based indoor fixed-wing autonomy. It bundles
//! everything needed to fly, identify, perceive, guide and evaluate a 150 g
//! foam aircraft in a 40 x 20 x 5 m arena without the aircraft:
//!
//! - [`geom`]: Euler/rotation conventions, pinhole projection, ellipsoid
//!   projection and Kabsch-Umeyama similarity alignment.
//! - [`dynamics`]: the reduced-order discrete-time model, trim, rollouts,
//!   the lift/turn-radius performance formulas and the flight envelope.
//! - [`sysid`]: pose differentiation, outlier rejection and a
//!   Levenberg-Marquardt fit of the model parameters.
//! - [`estimation`]: the hybrid marker / fallback pose estimator contract,
//!   sine-cosine angle encoding, SSIM and the frame-quality monitor.
//! - [`percept`]: a deterministic synthetic camera with ground-truth leader
//!   masks and appearance randomization.
//! - [`control`]: expert waypoint, follower and landing guidance, the
//!   mask-centroid vision policy, expert noise and the control history.
//! - [`harness`]: tracking and landing trials, SR / ATE / ART / ALD metrics,
//!   perturbation sweeps and imitation-learning dataset export.
//! - [`link`]: PPM channel mapping, the `FWNG` wire format and the 20 Hz
//!   ground-station loop with mode arbitration and the safety monitor.
//! - [`cli`]: the `falconwing` command line front end.
//!
//! ## Conventions
//!
//! World frame: x along the runway centerline toward touchdown, y left, z up,
//! origin at the calibration marker center. Attitude is intrinsic yaw-pitch-roll
//! (Z-Y-X); positive pitch is nose up, positive yaw turns left (counter-clockwise
//! seen from above) and positive roll banks into a left turn. All units are SI
//! and angles are radians unless a name says otherwise.
//!
//! Runnable walkthroughs live in `examples/`, one per capability:
//!
//! ```bash
//! cargo run --release -p falconwing --example performance_envelope
//! cargo run --release -p falconwing --example system_identification
//! cargo run --release -p falconwing --example leader_follower
//! ```

pub mod cli;
pub mod config;
pub mod control;
pub mod dynamics;
pub mod estimation;
pub mod geom;
pub mod harness;
pub mod link;
pub mod percept;
pub mod rng;
pub mod sysid;

pub use dynamics::{AirframeConfig, Control, DynParams, State, Trajectory};
pub use geom::{CameraIntrinsics, Pose};

/// Default control period of the ground-station loop (20 Hz).
pub const DEFAULT_DT: f64 = 0.05;
