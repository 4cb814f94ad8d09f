//! Scenarios, trial execution, metrics, appearance sweeps and
//! imitation-learning dataset export.
//!
//! [`TrialSim`] is the single stepping core. [`run_trial`] drives it
//! directly; the link loop drives the same core through the wire format, so
//! both produce identical trajectories for the same scenario and policy.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{
    expert_follower_control, expert_waypoint_control, inject_expert_noise, vision_follower_control,
    ControlHistory, GuidanceGains, LandingGuidance, RunwaySpec, VisionGains,
};
use crate::dynamics::{
    check_envelope, min_turn_radius, step, AirframeConfig, Arena, Control, DynParams, State,
    Trajectory,
};
use crate::geom::{CameraIntrinsics, Pose};
use crate::percept::{
    ground_truth_mask, mask_stats, render_scene, segment_color, Frame, LeaderAppearance, Mask,
    RenderConfig, LEADER_COLOR,
};
use crate::rng::{hash_words, SeedTree};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("waypoint {index} at {position:?} leaves the arena")]
    OutOfArena {
        index: usize,
        position: Vector3<f64>,
    },
    #[error("no trial results")]
    EmptyResults,
    #[error("scenario kind does not match the requested trial")]
    WrongKind,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Nominal flight speed of leader and follower (m/s).
pub const CRUISE_SPEED: f64 = 8.0;
/// Arc radius of every scripted leader turn (m).
pub const MANEUVER_RADIUS: f64 = 12.0;
/// Spacing of route waypoints along the path (m).
pub const WAYPOINT_SPACING: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Maneuver {
    LeftSDescent,
    RightSAscent,
    RightSharpClimb,
    /// Level straight line; the baseline for vision-policy checks.
    Straight,
}

impl Maneuver {
    pub const EVALUATION: [Maneuver; 3] = [
        Maneuver::LeftSDescent,
        Maneuver::RightSAscent,
        Maneuver::RightSharpClimb,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Maneuver::LeftSDescent => "left-s-descent",
            Maneuver::RightSAscent => "right-s-ascent",
            Maneuver::RightSharpClimb => "right-sharp-climb",
            Maneuver::Straight => "straight",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Maneuver::LeftSDescent,
            Maneuver::RightSAscent,
            Maneuver::RightSharpClimb,
            Maneuver::Straight,
        ]
        .into_iter()
        .find(|m| m.name() == s)
    }

    /// Unperturbed leader start used by the evaluation scenarios.
    pub fn nominal_start(&self) -> State {
        let p = match self {
            Maneuver::LeftSDescent => Vector3::new(-26.0, -4.0, 3.0),
            Maneuver::RightSAscent => Vector3::new(-26.0, 4.0, 2.0),
            Maneuver::RightSharpClimb => Vector3::new(-26.0, 7.0, 2.0),
            Maneuver::Straight => Vector3::new(-26.0, 0.0, 2.5),
        };
        State::level(p, 0.0, CRUISE_SPEED)
    }
}

struct RouteBuilder {
    position: Vector3<f64>,
    heading: f64,
    points: Vec<Vector3<f64>>,
}

impl RouteBuilder {
    fn new(start: &State) -> Self {
        Self {
            position: start.position,
            heading: start.yaw,
            points: Vec::new(),
        }
    }

    fn straight(&mut self, length: f64, climb: f64) {
        let n = (length / WAYPOINT_SPACING).ceil().max(1.0) as usize;
        let (s, c) = self.heading.sin_cos();
        let start = self.position;
        for i in 1..=n {
            let f = i as f64 / n as f64;
            self.points
                .push(start + Vector3::new(c * length * f, s * length * f, climb * f));
        }
        self.position = *self.points.last().expect("at least one point");
    }

    /// Positive `angle` turns left.
    fn arc(&mut self, angle: f64, radius: f64, climb: f64) {
        let n = (angle.abs() * radius / WAYPOINT_SPACING).ceil().max(1.0) as usize;
        let sign = angle.signum();
        let h0 = self.heading;
        let center =
            self.position.xy() + sign * radius * nalgebra::Vector2::new(-h0.sin(), h0.cos());
        let z0 = self.position.z;
        for i in 1..=n {
            let f = i as f64 / n as f64;
            let h = h0 + angle * f;
            let xy = center + sign * radius * nalgebra::Vector2::new(h.sin(), -h.cos());
            self.points.push(Vector3::new(xy.x, xy.y, z0 + climb * f));
        }
        self.heading = h0 + angle;
        self.position = *self.points.last().expect("at least one point");
    }
}

/// Leader route for `maneuver` flown from `start`, fixed for a given start.
pub fn leader_maneuver_waypoints(
    maneuver: Maneuver,
    start: &State,
) -> Result<Vec<Vector3<f64>>, HarnessError> {
    leader_maneuver_waypoints_in(maneuver, start, &Arena::indoor())
}

pub fn leader_maneuver_waypoints_in(
    maneuver: Maneuver,
    start: &State,
    arena: &Arena,
) -> Result<Vec<Vector3<f64>>, HarnessError> {
    let mut b = RouteBuilder::new(start);
    let quarter = PI / 4.0;
    let r = MANEUVER_RADIUS;
    match maneuver {
        Maneuver::LeftSDescent => {
            b.straight(1.5, 0.0);
            b.arc(quarter, r, -0.5);
            b.arc(-quarter, r, -0.5);
        }
        Maneuver::RightSAscent => {
            b.straight(1.5, 0.0);
            b.arc(-quarter, r, 0.5);
            b.arc(quarter, r, 0.5);
        }
        Maneuver::RightSharpClimb => {
            b.straight(1.5, 0.0);
            b.arc(-FRAC_PI_2, r, 1.5);
            b.straight(1.5, 0.0);
        }
        Maneuver::Straight => b.straight(20.0, 0.0),
    }
    for (index, p) in b.points.iter().enumerate() {
        if !arena.contains(p) {
            return Err(HarnessError::OutOfArena {
                index,
                position: *p,
            });
        }
    }
    Ok(b.points)
}

/// Horizontal path length from `start` through `route`.
pub fn route_length(start: &Vector3<f64>, route: &[Vector3<f64>]) -> f64 {
    std::iter::once(start)
        .chain(route)
        .zip(route)
        .map(|(a, b)| (b - a).xy().norm())
        .sum()
}

/// Circumradius of three points in the horizontal plane (infinite when collinear).
pub fn circumradius_xy(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> f64 {
    let (ab, bc, ca) = (
        (b - a).xy().norm(),
        (c - b).xy().norm(),
        (a - c).xy().norm(),
    );
    let cross = (b - a).xy().perp(&(c - a).xy()).abs();
    if cross < 1e-12 {
        f64::INFINITY
    } else {
        ab * bc * ca / (2.0 * cross)
    }
}

/// Sequential waypoint tracking with capture-or-pass advancement. After the
/// last waypoint the route is extended straight along its final leg.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteFollower {
    pub waypoints: Vec<Vector3<f64>>,
    pub index: usize,
    pub gains: GuidanceGains,
}

impl RouteFollower {
    pub fn new(waypoints: Vec<Vector3<f64>>, gains: GuidanceGains) -> Self {
        Self {
            waypoints,
            index: 0,
            gains,
        }
    }

    pub fn finished(&self) -> bool {
        self.index >= self.waypoints.len()
    }

    fn target(&self, state: &State) -> Vector3<f64> {
        if let Some(wp) = self.waypoints.get(self.index) {
            return *wp;
        }
        let n = self.waypoints.len();
        let (last, dir) = match n {
            0 => (
                state.position,
                Vector3::new(state.yaw.cos(), state.yaw.sin(), 0.0),
            ),
            1 => (
                self.waypoints[0],
                Vector3::new(state.yaw.cos(), state.yaw.sin(), 0.0),
            ),
            _ => {
                let d = self.waypoints[n - 1] - self.waypoints[n - 2];
                (
                    self.waypoints[n - 1],
                    Vector3::new(d.x, d.y, 0.0).normalize(),
                )
            }
        };
        last + 50.0 * dir
    }

    pub fn update(&mut self, state: &State) -> Control {
        let forward = Vector3::new(state.yaw.cos(), state.yaw.sin(), 0.0);
        while let Some(wp) = self.waypoints.get(self.index) {
            let d = wp - state.position;
            if d.norm() <= self.gains.capture_radius || d.dot(&forward) < 0.0 {
                self.index += 1;
            } else {
                break;
            }
        }
        expert_waypoint_control(state, &self.target(state), &self.gains)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ScenarioKind {
    Tracking(Maneuver),
    Landing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub initial_follower: State,
    pub initial_leader: Option<State>,
    /// Leader waypoints (tracking only).
    pub route: Vec<Vector3<f64>>,
    pub seed: u64,
    pub duration: f64,
    pub dt: f64,
}

impl Scenario {
    pub fn ticks(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn with_duration(mut self, duration: f64) -> Self {
        self.duration = duration;
        self
    }
}

/// Position and heading perturbation limits of every scenario start.
pub const POSITION_JITTER: f64 = 0.5;
pub const HEADING_JITTER_DEG: f64 = 5.0;

fn jitter<R: Rng + ?Sized>(state: &State, rng: &mut R) -> State {
    let dp = Vector3::from_fn(|_, _| rng.random_range(-POSITION_JITTER..=POSITION_JITTER));
    let dyaw = rng
        .random_range(-HEADING_JITTER_DEG..=HEADING_JITTER_DEG)
        .to_radians();
    State::level(state.position + dp, state.yaw + dyaw, state.speed())
}

/// Tracking scenario: leader and follower starts jittered from the nominal
/// leader start, follower one standoff behind.
pub fn tracking_scenario(
    maneuver: Maneuver,
    seed: u64,
    gains: &GuidanceGains,
    dt: f64,
) -> Scenario {
    let nominal = maneuver.nominal_start();
    let route = leader_maneuver_waypoints(maneuver, &nominal)
        .expect("nominal routes stay inside the arena");
    let mut rng = SeedTree::new(seed).stream("initial-conditions");
    let leader = jitter(&nominal, &mut rng);
    let behind = State::level(
        crate::control::standoff_point(&nominal, gains.standoff),
        nominal.yaw,
        CRUISE_SPEED,
    );
    let follower = jitter(&behind, &mut rng);
    let duration = route_length(&nominal.position, &route) / CRUISE_SPEED + 1.0;
    Scenario {
        kind: ScenarioKind::Tracking(maneuver),
        initial_follower: follower,
        initial_leader: Some(leader),
        route,
        seed,
        duration,
        dt,
    }
}

/// Nominal landing handoff: 20 m before the aim point, 1.5 m above the floor,
/// on the centerline.
pub fn nominal_handoff(runway: &RunwaySpec) -> State {
    let p = runway.handoff_point(20.0);
    State::level(Vector3::new(p.x, p.y, 1.5), runway.heading(), CRUISE_SPEED)
}

pub fn landing_scenario(runway: &RunwaySpec, seed: u64, dt: f64) -> Scenario {
    let mut rng = SeedTree::new(seed).stream("initial-conditions");
    Scenario {
        kind: ScenarioKind::Landing,
        initial_follower: jitter(&nominal_handoff(runway), &mut rng),
        initial_leader: None,
        route: Vec::new(),
        seed,
        duration: 10.0,
        dt,
    }
}

/// Scenario seeds for `count` trials under one root seed.
pub fn trial_seeds(root: u64, purpose: &str, count: usize) -> Vec<u64> {
    let tree = SeedTree::new(root);
    (0..count as u64)
        .map(|i| tree.seed_indexed(purpose, i))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub params: DynParams,
    pub gains: GuidanceGains,
    pub runway: RunwaySpec,
    pub render: RenderConfig,
    pub appearance: LeaderAppearance,
    /// Minimum ground-truth mask area that counts as visual lock (px).
    pub lock_min_area: usize,
    pub airframe: AirframeConfig,
    pub arena: Arena,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            params: DynParams::reference(),
            gains: GuidanceGains::default(),
            runway: RunwaySpec::default(),
            render: RenderConfig::desk(0),
            appearance: LeaderAppearance::default(),
            lock_min_area: 4,
            airframe: AirframeConfig::umx(),
            arena: Arena::indoor(),
        }
    }
}

/// What a policy sees at one tick.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub tick: usize,
    pub t: f64,
    pub own: &'a State,
    pub leader: Option<&'a State>,
    pub frame: Option<&'a Frame>,
    pub history: &'a ControlHistory,
    pub intrinsics: &'a CameraIntrinsics,
}

pub trait Policy: Send {
    fn name(&self) -> &str;

    /// Whether [`Observation::frame`] must be rendered.
    fn needs_frame(&self) -> bool {
        false
    }

    fn act(&mut self, obs: &Observation<'_>) -> Control;
}

/// State-based pursuit of the leader.
#[derive(Debug, Clone)]
pub struct ExpertFollower {
    pub gains: GuidanceGains,
}

impl Policy for ExpertFollower {
    fn name(&self) -> &str {
        "state"
    }

    fn act(&mut self, obs: &Observation<'_>) -> Control {
        match obs.leader {
            Some(leader) => {
                expert_follower_control(obs.own, leader, self.gains.standoff, &self.gains)
            }
            None => Control {
                throttle: self.gains.trim_throttle,
                ..obs.history.latest()
            },
        }
    }
}

/// Color-segmentation front end feeding the mask-centroid policy.
#[derive(Debug, Clone)]
pub struct VisionFollower {
    pub gains: GuidanceGains,
    pub vision: VisionGains,
    pub color: [u8; 3],
    pub tolerance: u8,
}

impl VisionFollower {
    pub fn new(gains: GuidanceGains, intrinsics: &CameraIntrinsics) -> Self {
        Self {
            gains,
            vision: VisionGains::for_camera(
                intrinsics,
                &LeaderAppearance::default().semi_axes,
                gains.standoff,
            ),
            color: LEADER_COLOR,
            tolerance: 48,
        }
    }

    pub fn perceive(&self, frame: &Frame) -> Mask {
        segment_color(frame, self.color, self.tolerance)
    }
}

impl Policy for VisionFollower {
    fn name(&self) -> &str {
        "vision"
    }

    fn needs_frame(&self) -> bool {
        true
    }

    fn act(&mut self, obs: &Observation<'_>) -> Control {
        let stats = obs.frame.and_then(|f| mask_stats(&self.perceive(f)));
        vision_follower_control(
            stats.as_ref(),
            obs.history,
            obs.intrinsics,
            &obs.own.pose(),
            &self.gains,
            &self.vision,
        )
    }
}

/// State-based three-phase landing law.
#[derive(Debug, Clone)]
pub struct ExpertLanding {
    pub guidance: LandingGuidance,
}

impl Policy for ExpertLanding {
    fn name(&self) -> &str {
        "state"
    }

    fn act(&mut self, obs: &Observation<'_>) -> Control {
        self.guidance.update(obs.own)
    }
}

/// Fixed command every tick.
#[derive(Debug, Clone)]
pub struct ConstantPolicy(pub Control);

impl Policy for ConstantPolicy {
    fn name(&self) -> &str {
        "constant"
    }

    fn act(&mut self, _obs: &Observation<'_>) -> Control {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicySpec {
    State,
    Vision,
    Constant(Control),
}

impl PolicySpec {
    pub fn build(&self, kind: &ScenarioKind, config: &TrialConfig) -> Box<dyn Policy> {
        match (self, kind) {
            (PolicySpec::Constant(c), _) => Box::new(ConstantPolicy(*c)),
            (_, ScenarioKind::Landing) => Box::new(ExpertLanding {
                guidance: LandingGuidance::new(config.runway, config.gains),
            }),
            (PolicySpec::State, _) => Box::new(ExpertFollower {
                gains: config.gains,
            }),
            (PolicySpec::Vision, _) => {
                Box::new(VisionFollower::new(config.gains, &config.render.intrinsics))
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::State => "state",
            PolicySpec::Vision => "vision",
            PolicySpec::Constant(_) => "constant",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Touchdown {
    pub position: Vector3<f64>,
    pub time: f64,
    /// Unsigned distance from the runway centerline (m).
    pub lateral: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub kind: ScenarioKind,
    pub follower: Trajectory,
    pub leader: Option<Trajectory>,
    /// Visual lock at each observed frame (tracking only).
    pub lock_flags: Vec<bool>,
    /// Wall-clock policy time per frame (s).
    pub per_frame_runtime: Vec<f64>,
    pub touchdown: Option<Touchdown>,
    pub timed_out: bool,
    pub success: bool,
    /// Follower states outside the flight envelope.
    pub envelope_violations: usize,
}

impl TrialResult {
    /// Signed ATE in meters: mean separation minus the initial separation.
    pub fn tracking_error(&self) -> Option<f64> {
        let leader = self.leader.as_ref()?;
        let n = leader.states.len().min(self.follower.states.len());
        if n == 0 {
            return None;
        }
        let sep = |k: usize| (leader.states[k].position - self.follower.states[k].position).norm();
        let mean = (0..n).map(sep).sum::<f64>() / n as f64;
        Some(mean - sep(0))
    }

    pub fn mean_runtime(&self) -> f64 {
        if self.per_frame_runtime.is_empty() {
            0.0
        } else {
            self.per_frame_runtime.iter().sum::<f64>() / self.per_frame_runtime.len() as f64
        }
    }
}

/// Stepping core shared by the direct harness and the link loop.
pub struct TrialSim {
    pub scenario: Scenario,
    pub config: TrialConfig,
    own: State,
    leader: Option<(State, RouteFollower)>,
    pub history: ControlHistory,
    tick: usize,
    follower_traj: Trajectory,
    leader_traj: Option<Trajectory>,
    lock_flags: Vec<bool>,
    runtimes: Vec<f64>,
    touchdown: Option<Touchdown>,
    violations: usize,
}

impl TrialSim {
    pub fn new(scenario: &Scenario, config: &TrialConfig) -> Self {
        let leader = scenario
            .initial_leader
            .map(|s| (s, RouteFollower::new(scenario.route.clone(), config.gains)));
        Self {
            scenario: scenario.clone(),
            config: *config,
            own: scenario.initial_follower,
            leader_traj: scenario
                .initial_leader
                .map(|s| Trajectory::new(scenario.dt, s)),
            leader,
            history: ControlHistory::new(),
            tick: 0,
            follower_traj: Trajectory::new(scenario.dt, scenario.initial_follower),
            lock_flags: Vec::new(),
            runtimes: Vec::new(),
            touchdown: None,
            violations: 0,
        }
    }

    pub fn tick(&self) -> usize {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.scenario.dt
    }

    pub fn own(&self) -> &State {
        &self.own
    }

    pub fn leader(&self) -> Option<&State> {
        self.leader.as_ref().map(|(s, _)| s)
    }

    pub fn finished(&self) -> bool {
        self.tick >= self.scenario.ticks() || self.touchdown.is_some()
    }

    fn render_config(&self) -> RenderConfig {
        self.config
            .render
            .with_noise_seed(hash_words(&[self.scenario.seed, self.tick as u64]))
    }

    /// Camera frame and ground-truth leader mask at the current tick.
    pub fn render(&self) -> (Frame, Mask) {
        let leader_pose = self.leader().map(State::pose);
        render_scene(
            &self.render_config(),
            &self.own.pose(),
            leader_pose.as_ref(),
            &self.config.appearance,
        )
    }

    fn ground_truth(&self) -> Option<Mask> {
        let leader = self.leader()?;
        Some(ground_truth_mask(
            &self.config.render,
            &self.own.pose(),
            &leader.pose(),
            &self.config.appearance,
        ))
    }

    pub fn observation<'a>(&'a self, frame: Option<&'a Frame>) -> Observation<'a> {
        Observation {
            tick: self.tick,
            t: self.time(),
            own: &self.own,
            leader: self.leader(),
            frame,
            history: &self.history,
            intrinsics: &self.config.render.intrinsics,
        }
    }

    /// Records lock for the current frame, applies `control` and advances
    /// both aircraft one tick.
    pub fn advance(&mut self, control: Control, runtime: f64) {
        if let Some(mask) = self.ground_truth() {
            self.lock_flags
                .push(mask.area() >= self.config.lock_min_area);
        }
        self.runtimes.push(runtime);
        let dt = self.scenario.dt;
        let next = step(&self.config.params, &self.own, &control, dt);
        if !check_envelope(&self.config.airframe, &next, &self.config.arena).is_empty() {
            self.violations += 1;
        }
        self.follower_traj.push(control, next);
        if let Some((leader, route)) = self.leader.as_mut() {
            let c = route.update(leader);
            *leader = step(&self.config.params, leader, &c, dt);
            if let Some(t) = self.leader_traj.as_mut() {
                t.push(c, *leader);
            }
        }
        self.history.push(control);
        self.tick += 1;
        if matches!(self.scenario.kind, ScenarioKind::Landing) {
            let runway = &self.config.runway;
            let ground = runway.ground_height(&next.position);
            if next.position.z <= ground + runway.touchdown_epsilon && next.velocity.z < 0.0 {
                self.touchdown = Some(Touchdown {
                    position: next.position,
                    time: self.time(),
                    lateral: runway.lateral_deviation(&next.position),
                });
            }
        }
        self.own = next;
    }

    pub fn into_result(self) -> TrialResult {
        let timed_out;
        let success = match self.scenario.kind {
            ScenarioKind::Landing => {
                timed_out = self.touchdown.is_none();
                self.touchdown
                    .as_ref()
                    .is_some_and(|t| self.config.runway.on_pad(&t.position))
            }
            ScenarioKind::Tracking(_) => {
                timed_out = false;
                !self.lock_flags.is_empty() && self.lock_flags.iter().all(|&l| l)
            }
        };
        TrialResult {
            seed: self.scenario.seed,
            kind: self.scenario.kind,
            follower: self.follower_traj,
            leader: self.leader_traj,
            lock_flags: self.lock_flags,
            per_frame_runtime: self.runtimes,
            touchdown: self.touchdown,
            timed_out,
            success,
            envelope_violations: self.violations,
        }
    }
}

/// Runs one trial to completion with `policy`.
pub fn run_trial(
    scenario: &Scenario,
    policy: &mut dyn Policy,
    config: &TrialConfig,
) -> TrialResult {
    let mut sim = TrialSim::new(scenario, config);
    while !sim.finished() {
        let frame = policy.needs_frame().then(|| sim.render().0);
        let obs = sim.observation(frame.as_ref());
        let start = Instant::now();
        let control = policy.act(&obs);
        let runtime = start.elapsed().as_secs_f64();
        sim.advance(control, runtime);
    }
    sim.into_result()
}

pub fn run_tracking_trial(
    scenario: &Scenario,
    policy: &mut dyn Policy,
    config: &TrialConfig,
) -> Result<TrialResult, HarnessError> {
    match scenario.kind {
        ScenarioKind::Tracking(_) => Ok(run_trial(scenario, policy, config)),
        ScenarioKind::Landing => Err(HarnessError::WrongKind),
    }
}

pub fn run_landing_trial(
    scenario: &Scenario,
    policy: &mut dyn Policy,
    config: &TrialConfig,
) -> Result<TrialResult, HarnessError> {
    match scenario.kind {
        ScenarioKind::Landing => Ok(run_trial(scenario, policy, config)),
        ScenarioKind::Tracking(_) => Err(HarnessError::WrongKind),
    }
}

/// Runs scenarios on `jobs` threads; results keep the scenario order.
pub fn run_trials(
    scenarios: &[Scenario],
    policy: &PolicySpec,
    config: &TrialConfig,
    jobs: usize,
) -> Vec<TrialResult> {
    let run = |s: &Scenario| run_trial(s, policy.build(&s.kind, config).as_mut(), config);
    if jobs <= 1 {
        return scenarios.iter().map(run).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(|| scenarios.par_iter().map(run).collect()),
        Err(_) => scenarios.iter().map(run).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub trials: usize,
    pub sr: f64,
    /// Signed average tracking error (cm).
    pub ate: Option<f64>,
    /// Average per-frame policy runtime (s).
    pub art: f64,
    /// Mean absolute lateral deviation of successful landings (cm).
    pub ald: Option<f64>,
}

impl Metrics {
    /// JSON without the wall-clock field, for reproducibility checks.
    pub fn deterministic_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("metrics are serializable");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("art");
        }
        v
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// SR, ATE, ART and ALD over a set of trials. With `runway` given, ALD is
/// recomputed from the touchdown points.
pub fn compute_metrics(
    results: &[TrialResult],
    runway: Option<&RunwaySpec>,
) -> Result<Metrics, HarnessError> {
    if results.is_empty() {
        return Err(HarnessError::EmptyResults);
    }
    let successes = results.iter().filter(|r| r.success).count();
    let ate = mean(results.iter().filter_map(TrialResult::tracking_error)).map(|m| 100.0 * m);
    let all_runtimes: Vec<f64> = results
        .iter()
        .flat_map(|r| r.per_frame_runtime.iter().copied())
        .collect();
    let art = mean(all_runtimes.into_iter()).unwrap_or(0.0);
    let ald = mean(
        results
            .iter()
            .filter(|r| r.success)
            .filter_map(|r| r.touchdown.as_ref())
            .map(|t| runway.map_or(t.lateral, |rw| rw.lateral_deviation(&t.position))),
    )
    .map(|m| 100.0 * m);
    Ok(Metrics {
        trials: results.len(),
        sr: successes as f64 / results.len() as f64,
        ate,
        art,
        ald,
    })
}

pub const TRIALS_CSV_HEADER: &str = "seed,success,ate_cm,art_s,ald_cm";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// One row per trial; `#` lines carry the provenance header.
pub fn write_trials_csv<W: Write>(
    results: &[TrialResult],
    mut out: W,
    comment: Option<&str>,
) -> io::Result<()> {
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    writeln!(out, "{TRIALS_CSV_HEADER}")?;
    for r in results {
        writeln!(
            out,
            "{},{},{},{:.9},{}",
            r.seed,
            u8::from(r.success),
            opt(r.tracking_error().map(|e| 100.0 * e)),
            r.mean_runtime(),
            opt(r.touchdown.filter(|_| r.success).map(|t| 100.0 * t.lateral)),
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationKind {
    Scale,
    SaltPepper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepLevel {
    pub kind: PerturbationKind,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub level: SweepLevel,
    pub trials: usize,
    pub sr: f64,
}

/// Appearance with one perturbation applied on top of `base`.
pub fn apply_level(base: &LeaderAppearance, level: &SweepLevel) -> LeaderAppearance {
    match level.kind {
        PerturbationKind::Scale => base.with_scale(level.value),
        PerturbationKind::SaltPepper => base.with_salt_pepper(level.value),
    }
}

/// Runs every scenario once per level, appearance fixed within a level.
pub fn perturbation_sweep(
    scenarios: &[Scenario],
    levels: &[SweepLevel],
    policy: &PolicySpec,
    config: &TrialConfig,
    jobs: usize,
) -> Vec<SweepRow> {
    levels
        .iter()
        .map(|level| {
            let cfg = TrialConfig {
                appearance: apply_level(&config.appearance, level),
                ..*config
            };
            let results = run_trials(scenarios, policy, &cfg, jobs);
            let ok = results.iter().filter(|r| r.success).count();
            SweepRow {
                level: *level,
                trials: results.len(),
                sr: if results.is_empty() {
                    0.0
                } else {
                    ok as f64 / results.len() as f64
                },
            }
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(
    rows: &[SweepRow],
    mut out: W,
    comment: Option<&str>,
) -> io::Result<()> {
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    writeln!(out, "kind,level,trials,sr")?;
    for r in rows {
        let kind = match r.level.kind {
            PerturbationKind::Scale => "scale",
            PerturbationKind::SaltPepper => "salt-pepper",
        };
        writeln!(out, "{kind},{},{},{:.6}", r.level.value, r.trials, r.sr)?;
    }
    Ok(())
}

/// One imitation-learning sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub trial: usize,
    pub frame: usize,
    pub t: f64,
    pub image: String,
    pub mask: String,
    /// Past controls, oldest first, four values each.
    pub history: Vec<f64>,
    /// Expert action before noise.
    pub label: [f64; 4],
    /// Action applied to the plant.
    pub applied: [f64; 4],
    pub camera: Pose,
    pub leader: Pose,
    pub scale_factor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub rows: Vec<ManifestRow>,
}

/// Flies the state expert with injected noise and records every frame.
///
/// Writes `trial_XXX/frame_XXXXX.ppm`, the matching `.pgm` mask and one
/// `manifest.jsonl` row per frame. Paths in the manifest are relative to
/// `out_dir`.
pub fn generate_il_dataset(
    scenarios: &[Scenario],
    config: &TrialConfig,
    noise_sigma: &[f64; 4],
    out_dir: &Path,
) -> Result<DatasetManifest, HarnessError> {
    fs::create_dir_all(out_dir)?;
    let mut manifest = io::BufWriter::new(fs::File::create(out_dir.join("manifest.jsonl"))?);
    let mut rows = Vec::new();
    for (trial, scenario) in scenarios.iter().enumerate() {
        let dir = format!("trial_{trial:03}");
        fs::create_dir_all(out_dir.join(&dir))?;
        let mut rng = SeedTree::new(scenario.seed).stream("expert-noise");
        let mut expert = ExpertFollower {
            gains: config.gains,
        };
        let mut sim = TrialSim::new(scenario, config);
        while !sim.finished() {
            let (frame, mask) = sim.render();
            let image = format!("{dir}/frame_{:05}.ppm", sim.tick());
            let mask_path = format!("{dir}/frame_{:05}.pgm", sim.tick());
            frame.write_ppm(io::BufWriter::new(fs::File::create(out_dir.join(&image))?))?;
            mask.write_pgm(io::BufWriter::new(fs::File::create(
                out_dir.join(&mask_path),
            )?))?;
            let label = expert.act(&sim.observation(Some(&frame)));
            let applied = inject_expert_noise(&label, noise_sigma, &mut rng);
            let row = ManifestRow {
                trial,
                frame: sim.tick(),
                t: sim.time(),
                image,
                mask: mask_path,
                history: sim.history.flatten(),
                label: label.to_array(),
                applied: applied.to_array(),
                camera: sim.own().pose(),
                leader: sim
                    .leader()
                    .map_or_else(|| Pose::at(0.0, 0.0, 0.0), State::pose),
                scale_factor: config.appearance.scale_factor,
            };
            serde_json::to_writer(&mut manifest, &row)?;
            manifest.write_all(b"\n")?;
            rows.push(row);
            sim.advance(applied, 0.0);
        }
    }
    manifest.flush()?;
    Ok(DatasetManifest {
        root: out_dir.to_path_buf(),
        rows,
    })
}

/// Minimum turn radius the scripted routes must respect.
pub fn route_radius_floor(airframe: &AirframeConfig) -> f64 {
    min_turn_radius(airframe, CRUISE_SPEED, airframe.max_bank)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TrialConfig {
        TrialConfig::default()
    }

    #[test]
    fn s_descent_from_arena_center() {
        let start = State::level(Arena::indoor().center(), 0.0, CRUISE_SPEED);
        let wps = leader_maneuver_waypoints(Maneuver::LeftSDescent, &start).unwrap();
        assert!((wps.last().unwrap().z - (start.position.z - 1.0)).abs() < 1e-12);
        assert!(wps.last().unwrap().y > start.position.y);
    }

    #[test]
    fn ascent_mirrors_descent() {
        let start = State::level(Vector3::new(-20.0, 0.0, 2.5), 0.0, CRUISE_SPEED);
        let l = leader_maneuver_waypoints(Maneuver::LeftSDescent, &start).unwrap();
        let r = leader_maneuver_waypoints(Maneuver::RightSAscent, &start).unwrap();
        assert_eq!(l.len(), r.len());
        for (a, b) in l.iter().zip(&r) {
            assert!((a.x - b.x).abs() < 1e-12);
            assert!((a.y + b.y).abs() < 1e-12);
            assert!(((a.z - 2.5) + (b.z - 2.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn routes_respect_turn_radius() {
        let floor = route_radius_floor(&AirframeConfig::umx());
        for m in Maneuver::EVALUATION.into_iter().chain([Maneuver::Straight]) {
            let start = m.nominal_start();
            let pts: Vec<_> = std::iter::once(start.position)
                .chain(leader_maneuver_waypoints(m, &start).unwrap())
                .collect();
            for w in pts.windows(3) {
                assert!(circumradius_xy(&w[0], &w[1], &w[2]) >= floor, "{m:?}");
            }
        }
    }

    #[test]
    fn sharp_climb_turns_right_ninety_and_climbs() {
        let start = Maneuver::RightSharpClimb.nominal_start();
        let w = leader_maneuver_waypoints(Maneuver::RightSharpClimb, &start).unwrap();
        let n = w.len();
        let d = w[n - 1] - w[n - 2];
        assert!((d.y.atan2(d.x) + FRAC_PI_2).abs() < 1e-9);
        assert!((w[n - 1].z - start.position.z - 1.5).abs() < 1e-12);
    }

    #[test]
    fn out_of_arena_route_is_rejected() {
        let start = State::level(Vector3::new(5.0, 0.0, 2.0), 0.0, CRUISE_SPEED);
        assert!(matches!(
            leader_maneuver_waypoints(Maneuver::Straight, &start),
            Err(HarnessError::OutOfArena { .. })
        ));
    }

    #[test]
    fn jittered_starts_stay_in_arena() {
        let g = GuidanceGains::default();
        for seed in 0..200 {
            for m in Maneuver::EVALUATION {
                let s = tracking_scenario(m, seed, &g, 0.05);
                assert!(Arena::indoor().contains(&s.initial_follower.position));
                assert!(Arena::indoor().contains(&s.initial_leader.unwrap().position));
            }
            let l = landing_scenario(&RunwaySpec::default(), seed, 0.05);
            assert!(Arena::indoor().contains(&l.initial_follower.position));
        }
    }

    #[test]
    fn state_follower_succeeds_and_is_deterministic() {
        let c = cfg();
        let s = tracking_scenario(Maneuver::RightSharpClimb, 3, &c.gains, 0.05);
        let a = run_trial(&s, &mut ExpertFollower { gains: c.gains }, &c);
        let b = run_trial(&s, &mut ExpertFollower { gains: c.gains }, &c);
        assert!(a.success);
        assert_eq!(a.follower, b.follower);
        assert_eq!(a.leader, b.leader);
        assert_eq!(a.lock_flags.len(), s.ticks());
        assert_eq!(a.follower.states.len(), s.ticks() + 1);
    }

    #[test]
    fn straight_ahead_follower_loses_the_turning_leader() {
        let c = cfg();
        let s = tracking_scenario(Maneuver::RightSharpClimb, 1, &c.gains, 0.05);
        let trim = crate::dynamics::trim_control(&c.params, CRUISE_SPEED, s.initial_follower.yaw);
        let r = run_trial(&s, &mut ConstantPolicy(trim), &c);
        assert!(!r.success);
        assert!(r.lock_flags.iter().any(|l| !l));
    }

    #[test]
    fn landing_expert_and_timeout() {
        let c = cfg();
        let s = landing_scenario(&c.runway, 0, 0.05);
        let r = run_landing_trial(&s, PolicySpec::State.build(&s.kind, &c).as_mut(), &c).unwrap();
        assert!(r.success, "{:?}", r.touchdown);
        let t = r.touchdown.unwrap();
        assert!(t.lateral <= 1.0);
        let abeam = Scenario {
            initial_follower: State::level(Vector3::new(3.0, 3.0, 1.5), PI / 2.0, CRUISE_SPEED),
            duration: 0.5,
            ..s
        };
        let r = run_landing_trial(
            &abeam,
            PolicySpec::State.build(&abeam.kind, &c).as_mut(),
            &c,
        )
        .unwrap();
        assert!(r.timed_out && !r.success);
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let c = cfg();
        let s = landing_scenario(&c.runway, 0, 0.05);
        assert!(matches!(
            run_tracking_trial(&s, &mut ExpertFollower { gains: c.gains }, &c),
            Err(HarnessError::WrongKind)
        ));
    }

    fn synthetic_result(leader: &[f64], follower: &[f64], success: bool) -> TrialResult {
        let traj = |xs: &[f64]| Trajectory {
            dt: 0.05,
            states: xs
                .iter()
                .map(|&x| State::level(Vector3::new(x, 0.0, 1.0), 0.0, 8.0))
                .collect(),
            controls: vec![Control::new(0.0, 0.0, 0.0, 0.0); xs.len() - 1],
        };
        TrialResult {
            seed: 0,
            kind: ScenarioKind::Tracking(Maneuver::Straight),
            follower: traj(follower),
            leader: Some(traj(leader)),
            lock_flags: vec![success; leader.len() - 1],
            per_frame_runtime: vec![0.001; leader.len() - 1],
            touchdown: None,
            timed_out: false,
            success,
            envelope_violations: 0,
        }
    }

    #[test]
    fn metrics_hand_computation() {
        // Trial 1 separations 3, 3, 3 -> ATE 0. Trial 2 separations 3, 4, 5 -> mean 4, ATE 1 m.
        let a = synthetic_result(&[3.0, 4.0, 5.0], &[0.0, 1.0, 2.0], true);
        let b = synthetic_result(&[3.0, 5.0, 7.0], &[0.0, 1.0, 2.0], false);
        assert_eq!(a.tracking_error(), Some(0.0));
        let m = compute_metrics(&[a.clone(), b], None).unwrap();
        assert_eq!(m.sr, 0.5);
        assert!((m.ate.unwrap() - 50.0).abs() < 1e-9);
        assert!((m.art - 0.001).abs() < 1e-15);
        assert_eq!(m.ald, None);
        assert_eq!(compute_metrics(&[a.clone(), a], None).unwrap().sr, 1.0);
        assert!(matches!(
            compute_metrics(&[], None),
            Err(HarnessError::EmptyResults)
        ));
    }

    #[test]
    fn landing_boundary_is_strict() {
        let rw = RunwaySpec::default();
        let inside = Vector3::new(2.0, rw.centerline_start.y + 0.99, 0.1);
        let outside = Vector3::new(2.0, rw.centerline_start.y + 1.01, 0.1);
        assert!(rw.on_pad(&inside));
        assert!(!rw.on_pad(&outside));
    }

    #[test]
    fn parallel_runs_keep_order() {
        let c = cfg();
        let scenarios: Vec<_> = trial_seeds(9, "trial", 4)
            .into_iter()
            .map(|s| tracking_scenario(Maneuver::LeftSDescent, s, &c.gains, 0.05))
            .collect();
        let serial = run_trials(&scenarios, &PolicySpec::State, &c, 1);
        let parallel = run_trials(&scenarios, &PolicySpec::State, &c, 3);
        for (a, b) in serial.iter().zip(&parallel) {
            assert_eq!(a.seed, b.seed);
            assert_eq!(a.follower, b.follower);
        }
    }

    #[test]
    fn sweep_state_policy_ignores_appearance() {
        let c = cfg();
        let scenarios: Vec<_> = (0..2)
            .map(|s| tracking_scenario(Maneuver::LeftSDescent, s, &c.gains, 0.05))
            .collect();
        let levels = [
            SweepLevel {
                kind: PerturbationKind::Scale,
                value: 1.0,
            },
            SweepLevel {
                kind: PerturbationKind::SaltPepper,
                value: 0.0,
            },
        ];
        let rows = perturbation_sweep(&scenarios, &levels, &PolicySpec::State, &c, 1);
        assert!(rows.iter().all(|r| r.sr == 1.0 && r.trials == 2));
    }

    #[test]
    fn trials_csv_shape() {
        let r = synthetic_result(&[3.0, 4.0], &[0.0, 1.0], true);
        let mut buf = Vec::new();
        write_trials_csv(&[r], &mut buf, Some("seed=1")).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "# seed=1");
        assert_eq!(lines[1], TRIALS_CSV_HEADER);
        assert!(lines[2].starts_with("0,1,0.000000,"));
    }
}
