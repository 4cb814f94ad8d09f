//! Least-squares identification of [`DynParams`] from state-action data.
//!
//! The fit minimizes the weighted one-step prediction error
//! `sum_t |W (f_K(x_t, u_t) - x_{t+1})|^2` with a Levenberg-Marquardt loop
//! over `ln K`, which keeps every parameter positive. The Jacobian is taken
//! by central differences in log space.
//!
//! Pose-only logs go through [`filter_outliers`] first and
//! [`differentiate_poses`] second, then [`dataset_from_poses`] stitches the
//! surviving contiguous runs into transitions.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix6, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    check_envelope, rollout, step, AirframeConfig, Arena, Control, DynParams, State, Trajectory,
    MAX_PITCH_CMD,
};
use crate::geom::{wrap_angle, Pose};

/// Residual weight on position components (per meter).
pub const POSITION_WEIGHT: f64 = 1.0;
/// Residual weight on attitude components (per radian).
pub const ANGLE_WEIGHT: f64 = 10.0;
/// Residual weight on velocity components (per m/s).
pub const VELOCITY_WEIGHT: f64 = 0.5;

/// Absolute implied-speed ceiling for pose outliers (m/s).
pub const OUTLIER_SPEED_LIMIT: f64 = 25.0;
/// Multiple of the running median implied speed that marks an outlier.
pub const OUTLIER_MEDIAN_FACTOR: f64 = 3.0;
/// Half width of the running-median window, in implied-speed samples.
const MEDIAN_HALF_WINDOW: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SysidError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("dataset has no transitions")]
    EmptyDataset,
    #[error("residual is not finite (invalid data or parameters)")]
    NonFiniteResidual,
    #[error("initial guess must be finite and strictly positive")]
    InvalidGuess,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: State,
    pub control: Control,
    pub next: State,
}

/// Uniform-`dt` state-action triples.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StateActionDataset {
    pub dt: f64,
    pub transitions: Vec<Transition>,
}

impl StateActionDataset {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            transitions: Vec::new(),
        }
    }

    pub fn from_trajectory(traj: &Trajectory) -> Self {
        let mut ds = Self::new(traj.dt);
        ds.extend_from(traj);
        ds
    }

    pub fn from_trajectories(trajs: &[Trajectory]) -> Self {
        let mut ds = Self::new(trajs.first().map_or(crate::DEFAULT_DT, |t| t.dt));
        for t in trajs {
            ds.extend_from(t);
        }
        ds
    }

    pub fn extend_from(&mut self, traj: &Trajectory) {
        self.transitions.extend(
            traj.controls
                .iter()
                .zip(traj.states.windows(2))
                .map(|(c, w)| Transition {
                    state: w[0],
                    control: *c,
                    next: w[1],
                }),
        );
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// Weighted one-step prediction error of a single transition.
pub fn transition_residual(params: &DynParams, t: &Transition, dt: f64) -> [f64; 9] {
    let pred = step(params, &t.state, &t.control, dt).to_array();
    let obs = t.next.to_array();
    let mut r = [0.0; 9];
    for i in 0..9 {
        let diff = match i {
            4 | 5 => wrap_angle(pred[i] - obs[i]),
            _ => pred[i] - obs[i],
        };
        let w = match i {
            0..=2 => POSITION_WEIGHT,
            3..=5 => ANGLE_WEIGHT,
            _ => VELOCITY_WEIGHT,
        };
        r[i] = w * diff;
    }
    r
}

/// Sum over transitions of the weighted squared residual norm.
pub fn residual_sse(params: &DynParams, dataset: &StateActionDataset) -> f64 {
    dataset
        .transitions
        .iter()
        .map(|t| {
            transition_residual(params, t, dataset.dt)
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
        })
        .sum()
}

fn stacked_residuals(log_params: &DVector<f64>, dataset: &StateActionDataset) -> DVector<f64> {
    let params = params_from_log(log_params);
    let mut r = DVector::zeros(9 * dataset.len());
    for (k, t) in dataset.transitions.iter().enumerate() {
        let tr = transition_residual(&params, t, dataset.dt);
        r.rows_mut(9 * k, 9).copy_from_slice(&tr);
    }
    r
}

fn params_from_log(log_params: &DVector<f64>) -> DynParams {
    let mut a = [0.0; 6];
    for (slot, v) in a.iter_mut().zip(log_params.iter()) {
        *slot = v.exp();
    }
    DynParams::from_array(a)
}

fn log_of(params: &DynParams) -> DVector<f64> {
    DVector::from_iterator(6, params.to_array().iter().map(|v| v.ln()))
}

/// Jacobian of the stacked residual with respect to `ln K`, by central
/// differences with step `h`.
pub fn residual_jacobian(params: &DynParams, dataset: &StateActionDataset, h: f64) -> DMatrix<f64> {
    let theta = log_of(params);
    let mut jac = DMatrix::zeros(9 * dataset.len(), 6);
    for j in 0..6 {
        let mut plus = theta.clone();
        let mut minus = theta.clone();
        plus[j] += h;
        minus[j] -= h;
        let col =
            (stacked_residuals(&plus, dataset) - stacked_residuals(&minus, dataset)) / (2.0 * h);
        jac.set_column(j, &col);
    }
    jac
}

/// Gauss-Newton approximation `J^T J` of the Hessian in log-parameter space.
pub fn gauss_newton_hessian(params: &DynParams, dataset: &StateActionDataset) -> Matrix6<f64> {
    let jac = residual_jacobian(params, dataset, FitOptions::default().fd_step);
    let jtj = jac.transpose() * &jac;
    Matrix6::from_fn(|i, j| jtj[(i, j)])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Converged when the relative SSE decrease or the step norm drops below this.
    pub tolerance: f64,
    /// Central-difference step in log-parameter space.
    pub fd_step: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-10,
            fd_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: DynParams,
    pub sse: f64,
    pub iterations: usize,
    pub converged: bool,
    /// One-sigma Gauss-Newton standard errors, in parameter units.
    pub per_param_stderr: [f64; 6],
    /// SSE after each accepted iteration, starting with the initial guess.
    pub sse_history: Vec<f64>,
    pub final_step_norm: f64,
}

#[derive(Serialize, Deserialize)]
struct FitResultJson {
    params: DynParams,
    sse: f64,
    iterations: usize,
    converged: bool,
    stderr: [f64; 6],
}

impl FitResult {
    /// `{params:{...}, sse, iterations, converged, stderr:[...]}`
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(FitResultJson {
            params: self.params,
            sse: self.sse,
            iterations: self.iterations,
            converged: self.converged,
            stderr: self.per_param_stderr,
        })
        .expect("fit result is serializable")
    }

    /// Reads back the fields written by [`FitResult::to_json`].
    pub fn from_json(value: &serde_json::Value) -> Result<Self, serde_json::Error> {
        let j: FitResultJson = serde_json::from_value(value.clone())?;
        Ok(Self {
            params: j.params,
            sse: j.sse,
            iterations: j.iterations,
            converged: j.converged,
            per_param_stderr: j.stderr,
            sse_history: Vec::new(),
            final_step_norm: f64::NAN,
        })
    }
}

pub fn fit_params(
    dataset: &StateActionDataset,
    initial_guess: &DynParams,
) -> Result<FitResult, SysidError> {
    fit_params_with(dataset, initial_guess, &FitOptions::default())
}

/// Levenberg-Marquardt fit with Marquardt (diagonal) damping.
pub fn fit_params_with(
    dataset: &StateActionDataset,
    initial_guess: &DynParams,
    options: &FitOptions,
) -> Result<FitResult, SysidError> {
    if dataset.is_empty() {
        return Err(SysidError::EmptyDataset);
    }
    if !initial_guess.is_valid() {
        return Err(SysidError::InvalidGuess);
    }
    let residual_count = 9 * dataset.len();
    let mut theta = log_of(initial_guess);
    let mut r = stacked_residuals(&theta, dataset);
    let mut sse = r.norm_squared();
    if !sse.is_finite() {
        return Err(SysidError::NonFiniteResidual);
    }
    // Below this the residual is at the floating-point noise floor.
    let sse_floor = 1e-28 * residual_count as f64;

    let mut lambda = 1e-3;
    let mut history = vec![sse];
    let mut iterations = 0;
    let mut converged = sse <= sse_floor;
    let mut final_step_norm = 0.0;

    while !converged && iterations < options.max_iterations {
        iterations += 1;
        let jac = jacobian_at(&theta, dataset, options.fd_step);
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        if !grad.iter().all(|v| v.is_finite()) {
            return Err(SysidError::NonFiniteResidual);
        }

        let mut accepted = None;
        while lambda < 1e16 {
            let mut damped = jtj.clone();
            for i in 0..6 {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 4.0;
                continue;
            };
            let delta = -chol.solve(&grad);
            let trial = &theta + &delta;
            let trial_r = stacked_residuals(&trial, dataset);
            let trial_sse = trial_r.norm_squared();
            if trial_sse.is_finite() && trial_sse < sse {
                lambda = (lambda / 3.0).max(1e-12);
                accepted = Some((trial, trial_r, trial_sse, delta.norm()));
                break;
            }
            lambda *= 4.0;
        }

        match accepted {
            Some((trial, trial_r, trial_sse, step_norm)) => {
                let relative_decrease = (sse - trial_sse) / sse;
                theta = trial;
                r = trial_r;
                sse = trial_sse;
                history.push(sse);
                final_step_norm = step_norm;
                if relative_decrease < options.tolerance
                    || step_norm < options.tolerance
                    || sse <= sse_floor
                {
                    converged = true;
                }
            }
            None => {
                // No descent direction left at any damping: a minimum to machine precision.
                final_step_norm = 0.0;
                converged = true;
            }
        }
    }

    let params = params_from_log(&theta);
    let per_param_stderr = standard_errors(&params, &theta, dataset, sse, options.fd_step);
    Ok(FitResult {
        params,
        sse,
        iterations,
        converged,
        per_param_stderr,
        sse_history: history,
        final_step_norm,
    })
}

fn jacobian_at(theta: &DVector<f64>, dataset: &StateActionDataset, h: f64) -> DMatrix<f64> {
    residual_jacobian(&params_from_log(theta), dataset, h)
}

fn standard_errors(
    params: &DynParams,
    theta: &DVector<f64>,
    dataset: &StateActionDataset,
    sse: f64,
    h: f64,
) -> [f64; 6] {
    let m = 9 * dataset.len();
    if m <= 6 {
        return [f64::NAN; 6];
    }
    let jac = jacobian_at(theta, dataset, h);
    let Some(cov) = (jac.transpose() * &jac).try_inverse() else {
        return [f64::NAN; 6];
    };
    let s2 = sse / (m - 6) as f64;
    let k = params.to_array();
    std::array::from_fn(|i| k[i] * (s2 * cov[(i, i)]).max(0.0).sqrt())
}

/// Velocities by central differences inside, second-order one-sided at the ends.
pub fn differentiate_poses(poses: &[Pose], dt: f64) -> Result<Vec<Vector3<f64>>, SysidError> {
    let n = poses.len();
    if n < 3 {
        return Err(SysidError::TooFewSamples { needed: 3, got: n });
    }
    let p = |i: usize| poses[i].position;
    let mut out = Vec::with_capacity(n);
    out.push((-3.0 * p(0) + 4.0 * p(1) - p(2)) / (2.0 * dt));
    for i in 1..n - 1 {
        out.push((p(i + 1) - p(i - 1)) / (2.0 * dt));
    }
    out.push((3.0 * p(n - 1) - 4.0 * p(n - 2) + p(n - 3)) / (2.0 * dt));
    Ok(out)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Drops isolated implausible poses.
///
/// Sample `i` is rejected when the implied speeds both from the last kept
/// sample and to the next sample exceed 25 m/s or three times the running
/// median implied speed. A lone jump therefore costs only the jumped sample,
/// never its neighbours. The first and last samples are always kept.
pub fn filter_outliers(poses: &[Pose], dt: f64) -> Result<(Vec<Pose>, Vec<usize>), SysidError> {
    let n = poses.len();
    if n < 5 {
        return Err(SysidError::TooFewSamples { needed: 5, got: n });
    }
    let speeds: Vec<f64> = poses
        .windows(2)
        .map(|w| (w[1].position - w[0].position).norm() / dt)
        .collect();
    let excessive = |speed: f64, reference: f64| {
        speed > OUTLIER_SPEED_LIMIT || speed > OUTLIER_MEDIAN_FACTOR * reference
    };

    let mut kept = vec![poses[0]];
    let mut rejected = Vec::new();
    let mut last_kept = 0;
    for i in 1..n - 1 {
        let lo = i.saturating_sub(MEDIAN_HALF_WINDOW);
        let hi = (i + MEDIAN_HALF_WINDOW).min(speeds.len());
        let mut window = speeds[lo..hi].to_vec();
        let reference = median(&mut window);
        let from_prev =
            (poses[i].position - poses[last_kept].position).norm() / ((i - last_kept) as f64 * dt);
        let to_next = speeds[i];
        if excessive(from_prev, reference) && excessive(to_next, reference) {
            rejected.push(i);
        } else {
            kept.push(poses[i]);
            last_kept = i;
        }
    }
    kept.push(poses[n - 1]);
    Ok((kept, rejected))
}

/// Builds full states from poses and their differentiated velocities.
pub fn states_from_poses(poses: &[Pose], dt: f64) -> Result<Vec<State>, SysidError> {
    let vel = differentiate_poses(poses, dt)?;
    Ok(poses
        .iter()
        .zip(vel)
        .map(|(p, v)| State {
            position: p.position,
            pitch: p.pitch,
            yaw: p.yaw,
            roll: p.roll,
            velocity: v,
        })
        .collect())
}

/// Pose log plus per-step controls to transitions: filter, then differentiate
/// each contiguous run that survived. `controls[i]` drives pose `i` to `i + 1`.
/// Returns the dataset and the rejected indices.
pub fn dataset_from_poses(
    poses: &[Pose],
    controls: &[Control],
    dt: f64,
) -> Result<(StateActionDataset, Vec<usize>), SysidError> {
    let n = poses.len();
    if controls.len() + 1 < n {
        return Err(SysidError::TooFewSamples {
            needed: n - 1,
            got: controls.len(),
        });
    }
    let (_, rejected) = filter_outliers(poses, dt)?;
    let mut ds = StateActionDataset::new(dt);
    let mut start = 0;
    let mut cuts = rejected.clone();
    cuts.push(n);
    for cut in cuts {
        if cut >= start + 3 {
            let run = &poses[start..cut];
            let states = states_from_poses(run, dt)?;
            for k in 0..states.len() - 1 {
                ds.transitions.push(Transition {
                    state: states[k],
                    control: controls[start + k],
                    next: states[k + 1],
                });
            }
        }
        start = cut + 1;
    }
    if ds.is_empty() {
        return Err(SysidError::EmptyDataset);
    }
    Ok((ds, rejected))
}

/// Synthetic identification flights: piecewise-constant controls redrawn
/// every segment, uniform over the full control box, with any segment that
/// leaves the flight envelope redrawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExcitationConfig {
    /// Total transitions to produce.
    pub transitions: usize,
    pub dt: f64,
    pub segment_duration: f64,
    /// Longest single flight before a fresh start.
    pub flight_transitions: usize,
    pub max_segment_tries: usize,
    pub start_speed: f64,
    pub airframe: AirframeConfig,
    pub arena: Arena,
}

impl Default for ExcitationConfig {
    fn default() -> Self {
        Self {
            transitions: 500,
            dt: crate::DEFAULT_DT,
            segment_duration: 0.5,
            flight_transitions: 100,
            max_segment_tries: 50,
            start_speed: 8.0,
            airframe: AirframeConfig::umx(),
            arena: Arena::indoor(),
        }
    }
}

fn random_control<R: Rng + ?Sized>(rng: &mut R) -> Control {
    Control::new(
        rng.random_range(0.0..=1.0),
        rng.random_range(-1.0..=1.0),
        rng.random_range(-MAX_PITCH_CMD..=MAX_PITCH_CMD),
        rng.random_range(-PI..PI),
    )
}

/// Generates excitation flights totalling `config.transitions` transitions.
pub fn excitation_flights<R: Rng + ?Sized>(
    params: &DynParams,
    config: &ExcitationConfig,
    rng: &mut R,
) -> Vec<Trajectory> {
    let segment = ((config.segment_duration / config.dt).round() as usize).max(1);
    let margin = Vector3::new(6.0, 4.0, 1.5);
    let lo = config.arena.min + margin;
    let hi = config.arena.max - margin;
    let mut flights = Vec::new();
    let mut total = 0;
    while total < config.transitions {
        let start = State::level(
            Vector3::new(
                rng.random_range(lo.x..=hi.x),
                rng.random_range(lo.y..=hi.y),
                rng.random_range(lo.z..=hi.z),
            ),
            rng.random_range(-PI..PI),
            config.start_speed,
        );
        let mut flight = Trajectory::new(config.dt, start);
        let budget = config.flight_transitions.min(config.transitions - total);
        while flight.controls.len() < budget {
            let steps = segment.min(budget - flight.controls.len());
            let from = *flight.last();
            let chosen = (0..config.max_segment_tries).find_map(|_| {
                let c = random_control(rng);
                let seg = rollout(params, &from, &vec![c; steps], config.dt);
                let inside = seg.states[1..]
                    .iter()
                    .all(|s| check_envelope(&config.airframe, s, &config.arena).is_empty());
                inside.then_some(seg)
            });
            let Some(seg) = chosen else { break };
            for (c, s) in seg.controls.iter().zip(&seg.states[1..]) {
                flight.push(*c, *s);
            }
        }
        total += flight.controls.len();
        if !flight.controls.is_empty() {
            flights.push(flight);
        }
    }
    flights
}

/// Adds independent Gaussian noise of standard deviation `sigma` to every
/// state component; controls are untouched.
pub fn add_state_noise<R: Rng + ?Sized>(traj: &Trajectory, sigma: f64, rng: &mut R) -> Trajectory {
    let normal = rand_distr::Normal::new(0.0, sigma).expect("sigma is finite and non-negative");
    let states = traj
        .states
        .iter()
        .map(|s| {
            let mut a = s.to_array();
            for v in a.iter_mut() {
                *v += rng.sample(normal);
            }
            State::from_array(&a)
        })
        .collect();
    Trajectory {
        dt: traj.dt,
        states,
        controls: traj.controls.clone(),
    }
}
