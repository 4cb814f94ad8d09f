//! Guidance laws and policies.
//!
//! The expert laws read ground-truth state. The vision policy reads only mask
//! statistics plus the aircraft's own attitude, and stands in for a learned
//! image policy with the same inputs.

use std::collections::VecDeque;

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{trim_throttle, Control, DynParams, State};
use crate::geom::{wrap_angle, CameraIntrinsics, Pose};
use crate::percept::MaskStats;

/// Number of past controls a policy may see.
pub const HISTORY_LEN: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceGains {
    /// Roll command per radian of heading error.
    pub k_heading: f64,
    /// Pitch command per meter of altitude error.
    pub k_alt: f64,
    /// Throttle per m/s of speed error.
    pub k_speed: f64,
    pub target_speed: f64,
    pub max_pitch_cmd: f64,
    pub capture_radius: f64,
    /// Follower standoff distance behind the leader.
    pub standoff: f64,
    /// Speed bias per meter of range error, (m/s)/m.
    pub k_closure: f64,
    /// Level-flight trim throttle at `target_speed`.
    pub trim_throttle: f64,
    /// Extra trim throttle per unit `sin(pitch)`, `g / k_thrust`.
    pub pitch_trim: f64,
}

impl Default for GuidanceGains {
    fn default() -> Self {
        Self::for_params(&DynParams::reference())
    }
}

impl GuidanceGains {
    pub fn for_params(params: &DynParams) -> Self {
        let target_speed = 8.0;
        Self {
            k_heading: 1.2,
            k_alt: 0.15,
            k_speed: 0.12,
            target_speed,
            max_pitch_cmd: 0.35,
            capture_radius: 2.0,
            standoff: 3.0,
            k_closure: 0.4,
            trim_throttle: trim_throttle(params, target_speed, 0.0),
            pitch_trim: crate::dynamics::GRAVITY / params.k_thrust,
        }
    }

    pub fn is_valid(&self) -> bool {
        [
            self.k_heading,
            self.k_alt,
            self.k_speed,
            self.target_speed,
            self.max_pitch_cmd,
            self.standoff,
            self.k_closure,
            self.trim_throttle,
            self.pitch_trim,
        ]
        .iter()
        .all(|v| v.is_finite() && *v >= 0.0)
            && self.capture_radius > 0.0
    }

    fn throttle_for(&self, speed: f64, target_speed: f64) -> f64 {
        (self.trim_throttle + self.k_speed * (target_speed - speed)).clamp(0.0, 1.0)
    }

    fn aileron_for(&self, heading_cmd: f64, state: &State) -> f64 {
        (self.k_heading * wrap_angle(heading_cmd - state.yaw) - state.roll).clamp(-1.0, 1.0)
    }
}

fn waypoint_control_at_speed(
    state: &State,
    waypoint: &Vector3<f64>,
    gains: &GuidanceGains,
    target_speed: f64,
) -> Control {
    let d = waypoint - state.position;
    let heading_cmd = d.y.atan2(d.x);
    let pitch_cmd = (gains.k_alt * d.z).clamp(-gains.max_pitch_cmd, gains.max_pitch_cmd);
    Control::new(
        gains.throttle_for(state.speed(), target_speed),
        gains.aileron_for(heading_cmd, state),
        pitch_cmd,
        heading_cmd,
    )
    .clamped()
}

/// Bank toward the bearing of `waypoint`, climb toward its altitude, hold
/// `target_speed`.
pub fn expert_waypoint_control(
    state: &State,
    waypoint: &Vector3<f64>,
    gains: &GuidanceGains,
) -> Control {
    waypoint_control_at_speed(state, waypoint, gains, gains.target_speed)
}

/// Point `standoff` meters behind the leader along its horizontal heading.
pub fn standoff_point(leader: &State, standoff: f64) -> Vector3<f64> {
    let (s, c) = leader.yaw.sin_cos();
    leader.position - standoff * Vector3::new(c, s, 0.0)
}

/// Pure pursuit of the leader position with a range-keeping speed bias.
///
/// Steering at the leader itself rather than at the standoff point keeps the
/// bearing well defined when the follower sits on the standoff point.
pub fn expert_follower_control(
    follower: &State,
    leader: &State,
    standoff: f64,
    gains: &GuidanceGains,
) -> Control {
    let range = (leader.position - follower.position).norm();
    let target_speed = leader.speed() + gains.k_closure * (range - standoff);
    waypoint_control_at_speed(follower, &leader.position, gains, target_speed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunwaySpec {
    /// Centerline from threshold to far end, along world +x.
    pub centerline_start: Vector3<f64>,
    pub centerline_end: Vector3<f64>,
    /// Pad extent along x, starting at `centerline_start`.
    pub pad_length: f64,
    pub pad_width: f64,
    pub pad_height: f64,
    /// Aim point of the glide slope.
    pub touchdown_target: Vector3<f64>,
    pub glide_slope: f64,
    /// Height above the touchdown surface where the flare starts.
    pub flare_altitude: f64,
    /// Height above the surface that counts as touchdown.
    pub touchdown_epsilon: f64,
    /// Lateral lookahead distance of the approach law.
    pub lookahead: f64,
    /// Pitch held during the flare.
    pub flare_pitch: f64,
}

impl Default for RunwaySpec {
    /// 13 m x 2 m x 0.1 m pad beside the origin marker, centerline at y = -2.
    fn default() -> Self {
        Self {
            centerline_start: Vector3::new(-3.0, -2.0, 0.1),
            centerline_end: Vector3::new(10.0, -2.0, 0.1),
            pad_length: 13.0,
            pad_width: 2.0,
            pad_height: 0.1,
            touchdown_target: Vector3::new(-2.0, -2.0, 0.1),
            glide_slope: 4.3f64.to_radians(),
            flare_altitude: 0.3,
            touchdown_epsilon: 0.05,
            lookahead: 8.0,
            flare_pitch: (-1.5f64).to_radians(),
        }
    }
}

impl RunwaySpec {
    pub fn is_valid(&self) -> bool {
        self.pad_length > 0.0
            && self.pad_width > 0.0
            && self.pad_height > 0.0
            && self.glide_slope > 0.0
            && self.flare_altitude >= 0.0
            && (self.centerline_end - self.centerline_start).xy().norm() > 0.0
    }

    fn axis(&self) -> Vector2<f64> {
        (self.centerline_end - self.centerline_start)
            .xy()
            .normalize()
    }

    pub fn heading(&self) -> f64 {
        let a = self.axis();
        a.y.atan2(a.x)
    }

    /// (along-track from `centerline_start`, signed cross-track, left positive).
    pub fn track_coordinates(&self, p: &Vector3<f64>) -> (f64, f64) {
        let a = self.axis();
        let d = (p - self.centerline_start).xy();
        (a.dot(&d), a.x * d.y - a.y * d.x)
    }

    /// Unsigned distance from the centerline.
    pub fn lateral_deviation(&self, p: &Vector3<f64>) -> f64 {
        self.track_coordinates(p).1.abs()
    }

    pub fn on_pad(&self, p: &Vector3<f64>) -> bool {
        let (along, cross) = self.track_coordinates(p);
        (0.0..=self.pad_length).contains(&along) && cross.abs() <= 0.5 * self.pad_width
    }

    /// Surface height under `p`: the pad top over the pad, the floor elsewhere.
    pub fn ground_height(&self, p: &Vector3<f64>) -> f64 {
        if self.on_pad(p) {
            self.pad_height
        } else {
            0.0
        }
    }

    /// Glide-slope altitude at the along-track position of `p`.
    pub fn glide_slope_altitude(&self, p: &Vector3<f64>) -> f64 {
        let (along, _) = self.track_coordinates(p);
        let (target_along, _) = self.track_coordinates(&self.touchdown_target);
        self.touchdown_target.z + (target_along - along) * self.glide_slope.tan()
    }

    /// Starting point `distance` meters before the aim point, on the slope.
    pub fn handoff_point(&self, distance: f64) -> Vector3<f64> {
        let a = self.axis();
        let xy = self.touchdown_target.xy() - distance * a;
        Vector3::new(
            xy.x,
            xy.y,
            self.touchdown_target.z + distance * self.glide_slope.tan(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LandingPhase {
    Approach,
    Flare,
    Rollout,
}

/// Phase implied by height above the surface alone.
pub fn landing_phase(state: &State, runway: &RunwaySpec) -> LandingPhase {
    let height = state.position.z - runway.ground_height(&state.position);
    if height <= runway.touchdown_epsilon {
        LandingPhase::Rollout
    } else if height <= runway.flare_altitude {
        LandingPhase::Flare
    } else {
        LandingPhase::Approach
    }
}

fn landing_control_in_phase(
    state: &State,
    runway: &RunwaySpec,
    gains: &GuidanceGains,
    phase: LandingPhase,
) -> Control {
    let (_, cross) = runway.track_coordinates(&state.position);
    let heading_cmd = wrap_angle(runway.heading() + (-cross).atan2(runway.lookahead));
    match phase {
        LandingPhase::Approach => {
            let alt_err = runway.glide_slope_altitude(&state.position) - state.position.z;
            let pitch_cmd = (-runway.glide_slope + gains.k_alt * alt_err)
                .clamp(-gains.max_pitch_cmd, gains.max_pitch_cmd);
            let trim = trim_throttle_scaled(gains, pitch_cmd);
            Control::new(
                (trim + gains.k_speed * (gains.target_speed - state.speed())).clamp(0.0, 1.0),
                gains.aileron_for(heading_cmd, state),
                pitch_cmd,
                heading_cmd,
            )
            .clamped()
        }
        LandingPhase::Flare => {
            let trim = trim_throttle_scaled(gains, runway.flare_pitch);
            Control::new(
                (trim + gains.k_speed * (gains.target_speed - state.speed())).clamp(0.0, 1.0),
                gains.aileron_for(heading_cmd, state),
                runway.flare_pitch,
                heading_cmd,
            )
            .clamped()
        }
        LandingPhase::Rollout => {
            Control::new(0.0, (-state.roll).clamp(-1.0, 1.0), 0.0, state.yaw).clamped()
        }
    }
}

fn trim_throttle_scaled(gains: &GuidanceGains, pitch: f64) -> f64 {
    gains.trim_throttle + gains.pitch_trim * pitch.sin()
}

/// Stateless three-phase law; the phase follows from the current height.
pub fn expert_landing_control(
    state: &State,
    runway: &RunwaySpec,
    gains: &GuidanceGains,
) -> Control {
    landing_control_in_phase(state, runway, gains, landing_phase(state, runway))
}

/// Landing law with a phase latch: once reached, a later phase is never left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandingGuidance {
    pub runway: RunwaySpec,
    pub gains: GuidanceGains,
    pub phase: LandingPhase,
}

impl LandingGuidance {
    pub fn new(runway: RunwaySpec, gains: GuidanceGains) -> Self {
        Self {
            runway,
            gains,
            phase: LandingPhase::Approach,
        }
    }

    pub fn update(&mut self, state: &State) -> Control {
        self.phase = self.phase.max(landing_phase(state, &self.runway));
        landing_control_in_phase(state, &self.runway, &self.gains, self.phase)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisionGains {
    /// Mask area of the leader at `standoff`, dead ahead (px).
    pub reference_area: f64,
    /// Throttle per meter of estimated range error.
    pub k_range: f64,
    /// Masks smaller than this are treated as no detection (px).
    pub min_area: f64,
}

impl VisionGains {
    /// Reference area from the projected leader silhouette seen from behind
    /// at `standoff`.
    pub fn for_camera(
        intrinsics: &CameraIntrinsics,
        semi_axes: &Vector3<f64>,
        standoff: f64,
    ) -> Self {
        let depth = standoff;
        let half_w = intrinsics.fx * semi_axes.x / depth;
        let half_h = intrinsics.fy * semi_axes.z / depth;
        Self {
            reference_area: std::f64::consts::PI * half_w * half_h,
            k_range: 0.05,
            min_area: 2.0,
        }
    }
}

/// Vision stand-in: steer the mask centroid toward the image center.
///
/// The centroid ray is rotated into the world frame with the aircraft's own
/// attitude, giving a bearing and an elevation to the leader; range comes
/// from the mask area against `reference_area`. Without a usable mask the
/// last command is held at trim throttle.
pub fn vision_follower_control(
    stats: Option<&MaskStats>,
    history: &ControlHistory,
    intrinsics: &CameraIntrinsics,
    attitude: &Pose,
    gains: &GuidanceGains,
    vision: &VisionGains,
) -> Control {
    let Some(stats) = stats.filter(|s| s.area as f64 >= vision.min_area) else {
        let last = history.latest();
        return Control {
            throttle: gains.trim_throttle,
            ..last
        }
        .clamped();
    };
    let ray_body = Vector3::new(
        1.0,
        -(stats.centroid.x - intrinsics.cx) / intrinsics.fx,
        -(stats.centroid.y - intrinsics.cy) / intrinsics.fy,
    );
    let ray = (attitude.rotation() * ray_body).normalize();
    let heading_cmd = ray.y.atan2(ray.x);
    let range = gains.standoff * (vision.reference_area / stats.area as f64).sqrt();
    let climb = range * ray.z;
    let pitch_cmd = (gains.k_alt * climb).clamp(-gains.max_pitch_cmd, gains.max_pitch_cmd);
    let aileron =
        (gains.k_heading * wrap_angle(heading_cmd - attitude.yaw) - attitude.roll).clamp(-1.0, 1.0);
    let throttle =
        (gains.trim_throttle + vision.k_range * (range - gains.standoff)).clamp(0.0, 1.0);
    Control::new(throttle, aileron, pitch_cmd, heading_cmd).clamped()
}

/// Adds seeded per-channel Gaussian noise `(throttle, aileron, pitch, yaw)`,
/// then saturates.
pub fn inject_expert_noise<R: Rng + ?Sized>(
    control: &Control,
    sigma: &[f64; 4],
    rng: &mut R,
) -> Control {
    let mut a = control.to_array();
    for (v, s) in a.iter_mut().zip(sigma) {
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        *v += s * z;
    }
    let mut noisy = Control::from_array(a).clamped();
    noisy.yaw_cmd = wrap_angle(noisy.yaw_cmd);
    noisy
}

/// Fixed-length FIFO of past controls; index `HISTORY_LEN - 1` is the newest.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlHistory {
    buf: VecDeque<Control>,
}

impl Default for ControlHistory {
    fn default() -> Self {
        Self::new()
    }
}

impl ControlHistory {
    /// All-zero history.
    pub fn new() -> Self {
        Self {
            buf: std::iter::repeat_n(Control::new(0.0, 0.0, 0.0, 0.0), HISTORY_LEN).collect(),
        }
    }

    pub fn push(&mut self, control: Control) {
        self.buf.pop_front();
        self.buf.push_back(control);
    }

    pub fn get(&self, index: usize) -> Control {
        self.buf[index]
    }

    pub fn latest(&self) -> Control {
        self.buf[HISTORY_LEN - 1]
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Control> {
        self.buf.iter()
    }

    /// Oldest first, four values per control.
    pub fn flatten(&self) -> Vec<f64> {
        self.buf.iter().flat_map(|c| c.to_array()).collect()
    }
}
