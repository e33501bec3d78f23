//! Kinematic bicycle model: forward integration and inverse derivation of
//! kinematic quantities from pose sequences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{dist, wrap_angle};
use crate::limits::{MAX_ACCEL_CMD, MAX_STEER, MAX_STEER_RATE_CMD, MIN_VELOCITY};
use crate::scenario::{EgoState, Pose};

/// Acceleration + steering-rate command pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlCommand {
    pub accel: f64,
    pub steer_rate: f64,
}

impl ControlCommand {
    /// Builds a command, clamping to the actuator limits. Non-finite inputs
    /// collapse to zero.
    pub fn new(accel: f64, steer_rate: f64) -> Self {
        let sane = |x: f64, lim: f64| {
            if x.is_finite() {
                x.clamp(-lim, lim)
            } else {
                0.0
            }
        };
        ControlCommand {
            accel: sane(accel, MAX_ACCEL_CMD),
            steer_rate: sane(steer_rate, MAX_STEER_RATE_CMD),
        }
    }

    pub fn zero() -> Self {
        ControlCommand {
            accel: 0.0,
            steer_rate: 0.0,
        }
    }
}

/// Kinematic bicycle parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BicycleParams {
    /// Wheelbase, meters.
    pub wheelbase: f64,
    /// Steering angle limit, rad.
    pub max_steer: f64,
    /// Integration step, seconds.
    pub dt: f64,
}

impl Default for BicycleParams {
    fn default() -> Self {
        BicycleParams {
            wheelbase: 3.0,
            max_steer: MAX_STEER,
            dt: 0.1,
        }
    }
}

/// One forward-Euler step of the kinematic bicycle. All right-hand sides use
/// the pre-update state; steering is clamped and yaw wrapped afterwards.
pub fn bicycle_step(state: &EgoState, cmd: ControlCommand, params: &BicycleParams) -> EgoState {
    let v = state.velocity;
    let yaw = state.pose.yaw;
    let steer = state.steering;
    let dt = params.dt;

    let x = state.pose.x + v * yaw.cos() * dt;
    let y = state.pose.y + v * yaw.sin() * dt;
    let new_yaw = wrap_angle(yaw + v * steer.tan() / params.wheelbase * dt);
    let new_v = (v + cmd.accel * dt).max(MIN_VELOCITY);
    let new_steer = (steer + cmd.steer_rate * dt).clamp(-params.max_steer, params.max_steer);

    EgoState {
        pose: Pose {
            x,
            y,
            yaw: new_yaw,
        },
        velocity: new_v,
        acceleration: cmd.accel,
        steering: new_steer,
        timestamp: state.timestamp + dt,
    }
}

/// Repeated [`bicycle_step`]; the output has one state per command.
pub fn rollout_dynamics(
    state: &EgoState,
    commands: &[ControlCommand],
    params: &BicycleParams,
) -> Vec<EgoState> {
    let mut out = Vec::with_capacity(commands.len());
    let mut cur = *state;
    for cmd in commands {
        cur = bicycle_step(&cur, *cmd, params);
        out.push(cur);
    }
    out
}

/// Recovers velocity, acceleration, and steering from a pose sequence.
///
/// Velocity comes from central finite differences of arc position (one-sided
/// at the ends), acceleration from differences of velocity, and steering from
/// the bicycle relation `delta = atan(L * yaw_rate / v)` with the yaw rate
/// taken on the unwrapped heading. Below 0.1 m/s the steering estimate is
/// meaningless and is reported as zero.
pub fn derive_kinematics(poses: &[Pose], dt: f64, wheelbase: f64) -> Result<Vec<EgoState>> {
    let n = poses.len();
    if n < 3 {
        return Err(Error::Dynamics(format!(
            "derive_kinematics needs at least 3 poses, got {n}"
        )));
    }

    let mut arc = Vec::with_capacity(n);
    let mut s = 0.0;
    arc.push(0.0);
    for w in poses.windows(2) {
        s += dist((w[0].x, w[0].y), (w[1].x, w[1].y));
        arc.push(s);
    }

    let diff = |vals: &[f64], i: usize| -> f64 {
        if i == 0 {
            (vals[1] - vals[0]) / dt
        } else if i == n - 1 {
            (vals[n - 1] - vals[n - 2]) / dt
        } else {
            (vals[i + 1] - vals[i - 1]) / (2.0 * dt)
        }
    };

    let vel: Vec<f64> = (0..n).map(|i| diff(&arc, i)).collect();
    let acc: Vec<f64> = (0..n).map(|i| diff(&vel, i)).collect();

    // Unwrap headings so the yaw-rate differences are continuous.
    let mut unwrapped = Vec::with_capacity(n);
    unwrapped.push(poses[0].yaw);
    for i in 1..n {
        let prev = unwrapped[i - 1];
        unwrapped.push(prev + wrap_angle(poses[i].yaw - poses[i - 1].yaw));
    }

    let states = (0..n)
        .map(|i| {
            let yaw_rate = diff(&unwrapped, i);
            let steering = if vel[i] > 0.1 {
                (wheelbase * yaw_rate / vel[i]).atan().clamp(-MAX_STEER, MAX_STEER)
            } else {
                0.0
            };
            EgoState {
                pose: poses[i],
                velocity: vel[i],
                acceleration: acc[i],
                steering,
                timestamp: i as f64 * dt,
            }
        })
        .collect();
    Ok(states)
}
