//! Reduced-order discrete-time fixed-wing model.
//!
//! The state is `[px, py, pz, pitch, yaw, roll, vx, vy, vz]` and the command
//! is `[throttle, aileron, pitch_cmd, yaw_cmd]`. Velocity is slaved to the
//! attitude, so the only dynamic speed state is its magnitude. One forward
//! Euler step of length `dt` with `V = max(|v|, 0.5)`:
//!
//! ```text
//! roll'  = roll + dt (k_roll_aileron aileron - k_roll_damp roll)
//! pitch' = pitch + dt k_pitch (pitch_cmd - pitch)
//! yaw'   = wrap(yaw + dt (k_yaw wrap(yaw_cmd - yaw) + (g / V) tan roll'))
//! V'     = max(0, V + dt (k_thrust throttle - k_drag V - g sin pitch'))
//! v'     = V' (cos pitch' cos yaw', cos pitch' sin yaw', sin pitch')
//! p'     = p + dt v'
//! ```

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{wrap_angle, Pose};

/// Gravitational acceleration used throughout (m/s^2).
pub const GRAVITY: f64 = 9.8;

/// Speed floor inside the turn-coupling term.
pub const MIN_MODEL_SPEED: f64 = 0.5;

/// Pitch is kept inside `+-(pi/2 - PITCH_MARGIN)`.
pub const PITCH_MARGIN: f64 = 1e-3;

/// Maximum magnitude of the pitch command (rad).
pub const MAX_PITCH_CMD: f64 = 0.5;

/// Header of the trajectory CSV format.
pub const TRAJECTORY_CSV_HEADER: &str = "t,px,py,pz,pitch,yaw,roll,vx,vy,vz,uT,da,thc,gac";

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("trajectory csv, line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub position: Vector3<f64>,
    pub pitch: f64,
    pub yaw: f64,
    pub roll: f64,
    /// World-frame velocity (m/s).
    pub velocity: Vector3<f64>,
}

impl State {
    /// Wings-level state flying along `yaw` at `speed`.
    pub fn level(position: Vector3<f64>, yaw: f64, speed: f64) -> Self {
        Self {
            position,
            pitch: 0.0,
            yaw,
            roll: 0.0,
            velocity: speed * Vector3::new(yaw.cos(), yaw.sin(), 0.0),
        }
    }

    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.position, self.pitch, self.yaw, self.roll)
    }

    pub fn to_array(&self) -> [f64; 9] {
        let p = self.position;
        let v = self.velocity;
        [
            p.x, p.y, p.z, self.pitch, self.yaw, self.roll, v.x, v.y, v.z,
        ]
    }

    pub fn from_array(a: &[f64; 9]) -> Self {
        Self {
            position: Vector3::new(a[0], a[1], a[2]),
            pitch: a[3],
            yaw: a[4],
            roll: a[5],
            velocity: Vector3::new(a[6], a[7], a[8]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Throttle, aileron, absolute pitch command and absolute heading command.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Control {
    pub throttle: f64,
    pub aileron: f64,
    pub pitch_cmd: f64,
    pub yaw_cmd: f64,
}

impl Control {
    pub fn new(throttle: f64, aileron: f64, pitch_cmd: f64, yaw_cmd: f64) -> Self {
        Self {
            throttle,
            aileron,
            pitch_cmd,
            yaw_cmd,
        }
    }

    /// Saturates every channel into its valid range.
    pub fn clamped(&self) -> Self {
        Self {
            throttle: self.throttle.clamp(0.0, 1.0),
            aileron: self.aileron.clamp(-1.0, 1.0),
            pitch_cmd: self.pitch_cmd.clamp(-MAX_PITCH_CMD, MAX_PITCH_CMD),
            yaw_cmd: wrap_angle(self.yaw_cmd),
        }
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.throttle)
            && (-1.0..=1.0).contains(&self.aileron)
            && (-MAX_PITCH_CMD..=MAX_PITCH_CMD).contains(&self.pitch_cmd)
            && (-PI..PI).contains(&self.yaw_cmd)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.throttle, self.aileron, self.pitch_cmd, self.yaw_cmd]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

/// Identified parameter vector of the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynParams {
    pub k_roll_aileron: f64,
    pub k_roll_damp: f64,
    pub k_pitch: f64,
    pub k_yaw: f64,
    pub k_thrust: f64,
    pub k_drag: f64,
}

impl DynParams {
    pub const NAMES: [&'static str; 6] = [
        "k_roll_aileron",
        "k_roll_damp",
        "k_pitch",
        "k_yaw",
        "k_thrust",
        "k_drag",
    ];

    /// Reference set used by every desk-scale experiment (trim ~8 m/s at 0.8 throttle).
    pub fn reference() -> Self {
        Self {
            k_roll_aileron: 3.0,
            k_roll_damp: 2.0,
            k_pitch: 3.0,
            k_yaw: 1.5,
            k_thrust: 12.0,
            k_drag: 1.2,
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.k_roll_aileron,
            self.k_roll_damp,
            self.k_pitch,
            self.k_yaw,
            self.k_thrust,
            self.k_drag,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            k_roll_aileron: a[0],
            k_roll_damp: a[1],
            k_pitch: a[2],
            k_yaw: a[3],
            k_thrust: a[4],
            k_drag: a[5],
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::from_array(self.to_array().map(|v| v * factor))
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite() && *v > 0.0)
    }
}

impl Default for DynParams {
    fn default() -> Self {
        Self::reference()
    }
}

/// Mass and aerodynamic constants for the performance formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AirframeConfig {
    pub mass: f64,
    pub wing_area: f64,
    pub air_density: f64,
    pub lift_coeff: f64,
    pub max_bank: f64,
    pub g: f64,
}

impl AirframeConfig {
    /// The 150 g indoor airframe.
    pub fn umx() -> Self {
        Self {
            mass: 0.15,
            wing_area: 0.076,
            air_density: 1.3,
            lift_coeff: 0.6,
            max_bank: PI / 6.0,
            g: GRAVITY,
        }
    }

    pub fn with_mass(mut self, mass: f64) -> Self {
        self.mass = mass;
        self
    }
}

impl Default for AirframeConfig {
    fn default() -> Self {
        Self::umx()
    }
}

/// Fixed-step state/control log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<State>,
    /// `controls[i]` takes `states[i]` to `states[i + 1]`.
    pub controls: Vec<Control>,
}

impl Trajectory {
    pub fn new(dt: f64, initial: State) -> Self {
        Self {
            dt,
            states: vec![initial],
            controls: Vec::new(),
        }
    }

    pub fn push(&mut self, control: Control, next: State) {
        self.controls.push(control);
        self.states.push(next);
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> &State {
        self.states
            .last()
            .expect("trajectory holds at least one state")
    }

    /// Writes the trajectory CSV. `comment`, when given, becomes leading `#` lines.
    pub fn write_csv<W: Write>(&self, mut out: W, comment: Option<&str>) -> std::io::Result<()> {
        if let Some(c) = comment {
            for line in c.lines() {
                writeln!(out, "# {line}")?;
            }
        }
        writeln!(out, "{TRAJECTORY_CSV_HEADER}")?;
        let mut row = String::new();
        for (i, s) in self.states.iter().enumerate() {
            row.clear();
            row.push_str(&sig9(i as f64 * self.dt));
            for v in s.to_array() {
                row.push(',');
                row.push_str(&sig9(v));
            }
            match self.controls.get(i) {
                Some(c) => {
                    for v in c.to_array() {
                        row.push(',');
                        row.push_str(&sig9(v));
                    }
                }
                None => row.push_str(",,,,"),
            }
            writeln!(out, "{row}")?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self, comment: Option<&str>) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, comment)
            .expect("writing to memory");
        String::from_utf8(buf).expect("csv is ascii")
    }

    /// Parses the trajectory CSV; `dt` is recovered from the time column.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, DynamicsError> {
        let mut header_seen = false;
        let mut times = Vec::new();
        let mut states = Vec::new();
        let mut controls = Vec::new();
        let mut open_tail = false;
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if !header_seen {
                if trimmed != TRAJECTORY_CSV_HEADER {
                    return Err(DynamicsError::Csv {
                        line: lineno,
                        message: format!("expected header `{TRAJECTORY_CSV_HEADER}`"),
                    });
                }
                header_seen = true;
                continue;
            }
            if open_tail {
                return Err(DynamicsError::Csv {
                    line: lineno,
                    message: "row after a row without controls".into(),
                });
            }
            let fields: Vec<&str> = trimmed.split(',').collect();
            if fields.len() != 14 {
                return Err(DynamicsError::Csv {
                    line: lineno,
                    message: format!("expected 14 fields, found {}", fields.len()),
                });
            }
            let parse = |s: &str| -> Result<f64, DynamicsError> {
                s.trim().parse::<f64>().map_err(|e| DynamicsError::Csv {
                    line: lineno,
                    message: format!("bad number `{s}`: {e}"),
                })
            };
            times.push(parse(fields[0])?);
            let mut st = [0.0; 9];
            for (k, f) in fields[1..10].iter().enumerate() {
                st[k] = parse(f)?;
            }
            states.push(State::from_array(&st));
            if fields[10..].iter().all(|f| f.trim().is_empty()) {
                open_tail = true;
            } else {
                let mut c = [0.0; 4];
                for (k, f) in fields[10..].iter().enumerate() {
                    c[k] = parse(f)?;
                }
                controls.push(Control::from_array(c));
            }
        }
        if states.is_empty() {
            return Err(DynamicsError::Csv {
                line: 0,
                message: "no data rows".into(),
            });
        }
        // A trailing row with controls leaves one more control than transitions.
        if controls.len() == states.len() {
            controls.pop();
        }
        let dt = if times.len() >= 2 {
            (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64
        } else {
            crate::DEFAULT_DT
        };
        Ok(Self {
            dt,
            states,
            controls,
        })
    }
}

/// Formats with 9 significant digits.
pub fn sig9(v: f64) -> String {
    let mut s = String::new();
    if v == 0.0 {
        s.push('0');
    } else {
        write!(s, "{v:.8e}").expect("formatting to string");
    }
    s
}

/// One model step. Controls are saturated before use.
pub fn step(params: &DynParams, state: &State, control: &Control, dt: f64) -> State {
    let u = control.clamped();
    let speed = state.velocity.norm().max(MIN_MODEL_SPEED);
    let pitch_limit = PI / 2.0 - PITCH_MARGIN;

    let roll =
        state.roll + dt * (params.k_roll_aileron * u.aileron - params.k_roll_damp * state.roll);
    let pitch = (state.pitch + dt * params.k_pitch * (u.pitch_cmd - state.pitch))
        .clamp(-pitch_limit, pitch_limit);
    let yaw_rate =
        params.k_yaw * wrap_angle(u.yaw_cmd - state.yaw) + (GRAVITY / speed) * roll.tan();
    let yaw = wrap_angle(state.yaw + dt * yaw_rate);
    let new_speed = (speed
        + dt * (params.k_thrust * u.throttle - params.k_drag * speed - GRAVITY * pitch.sin()))
    .max(0.0);

    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    let velocity = new_speed * Vector3::new(cp * cy, cp * sy, sp);
    State {
        position: state.position + dt * velocity,
        pitch,
        yaw,
        roll,
        velocity,
    }
}

/// Iterated [`step`] from `initial`.
pub fn rollout(params: &DynParams, initial: &State, controls: &[Control], dt: f64) -> Trajectory {
    let mut traj = Trajectory::new(dt, *initial);
    traj.states.reserve(controls.len());
    traj.controls.reserve(controls.len());
    for c in controls {
        let next = step(params, traj.last(), c, dt);
        traj.push(*c, next);
    }
    traj
}

/// Throttle holding `speed` at constant `pitch`.
pub fn trim_throttle(params: &DynParams, speed: f64, pitch: f64) -> f64 {
    (params.k_drag * speed + GRAVITY * pitch.sin()) / params.k_thrust
}

/// Level trim command for a state flying at `speed` along `yaw`.
pub fn trim_control(params: &DynParams, speed: f64, yaw: f64) -> Control {
    Control::new(trim_throttle(params, speed, 0.0), 0.0, 0.0, wrap_angle(yaw))
}

/// Lowest speed at which lift carries the weight: `sqrt(2 m g / (rho S C))`.
pub fn min_airspeed(config: &AirframeConfig) -> f64 {
    (2.0 * config.mass * config.g / (config.air_density * config.wing_area * config.lift_coeff))
        .sqrt()
}

/// Coordinated-turn radius `V^2 / (g tan(bank))`.
pub fn min_turn_radius(config: &AirframeConfig, airspeed: f64, bank: f64) -> f64 {
    airspeed * airspeed / (config.g * bank.tan())
}

/// Axis-aligned flight volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arena {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Arena {
    /// The 40 x 20 x 5 m hall; the landing pad sits at the +x end.
    pub fn indoor() -> Self {
        Self {
            min: Vector3::new(-30.0, -10.0, 0.0),
            max: Vector3::new(10.0, 10.0, 5.0),
        }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn center(&self) -> Vector3<f64> {
        0.5 * (self.min + self.max)
    }
}

impl Default for Arena {
    fn default() -> Self {
        Self::indoor()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    StallRisk { speed: f64, min_airspeed: f64 },
    ExcessBank { roll: f64, max_bank: f64 },
    OutOfArena { position: Vector3<f64> },
}

/// Reports every envelope violation of `state`.
pub fn check_envelope(config: &AirframeConfig, state: &State, arena: &Arena) -> Vec<Violation> {
    let mut out = Vec::new();
    let floor = min_airspeed(config);
    let speed = state.speed();
    if speed < floor {
        out.push(Violation::StallRisk {
            speed,
            min_airspeed: floor,
        });
    }
    if state.roll.abs() > config.max_bank {
        out.push(Violation::ExcessBank {
            roll: state.roll,
            max_bank: config.max_bank,
        });
    }
    if !arena.contains(&state.position) {
        out.push(Violation::OutOfArena {
            position: state.position,
        });
    }
    out
}
