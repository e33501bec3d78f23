//! LQR trajectory tracker: decoupled lateral/longitudinal discrete LQR with
//! feedforward from the reference trajectory.
//!
//! Lateral states are [e_y, e_theta] with A = [[1, v dt], [0, 1]] and
//! B = [0, v dt / (L cos^2 delta_ref)]; the input is a steering-angle
//! correction. Longitudinal states are [e_s, e_v] with a double-integrator
//! model and an acceleration input. Gains are recomputed each call at the
//! reference speed.

use serde::{Deserialize, Serialize};

use crate::dynamics::{BicycleParams, ControlCommand};
use crate::error::{Error, Result};
use crate::geom::wrap_angle;
use crate::scenario::{EgoState, DT, FUTURE_LEN};
use crate::trajectory::PlannedTrajectory;

pub type Mat2 = [[f64; 2]; 2];
pub type Vec2 = [f64; 2];

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LqrConfig {
    /// Lateral state weights on [e_y, e_theta].
    pub q_lat: Mat2,
    /// Lateral input weight.
    pub r_lat: f64,
    /// Longitudinal state weights on [e_s, e_v].
    pub q_lon: Mat2,
    /// Longitudinal input weight.
    pub r_lon: f64,
    /// Riccati iteration cap.
    pub max_iter: usize,
    /// Riccati gain convergence tolerance.
    pub tol: f64,
    /// Lookahead, seconds.
    pub lookahead: f64,
}

impl Default for LqrConfig {
    fn default() -> Self {
        LqrConfig {
            q_lat: diag(1.0, 0.5),
            r_lat: 1.0,
            q_lon: diag(0.5, 1.0),
            r_lon: 1.0,
            // Gain convergence at low reference speeds needs well over the
            // nominal 200 sweeps; the gain cache keeps this cheap.
            max_iter: 2000,
            tol: 1e-9,
            lookahead: 0.5,
        }
    }
}

pub fn diag(a: f64, b: f64) -> Mat2 {
    [[a, 0.0], [0.0, b]]
}

fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn mat_t(a: &Mat2) -> Mat2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

fn mat_vec(a: &Mat2, v: &Vec2) -> Vec2 {
    [
        a[0][0] * v[0] + a[0][1] * v[1],
        a[1][0] * v[0] + a[1][1] * v[1],
    ]
}

/// Iterates the discrete Riccati recursion
/// `P <- Q + A'PA - A'PB (R + B'PB)^-1 B'PA`
/// to a fixed point of the feedback gain `K = (R + B'PB)^-1 B'PA`.
pub fn lqr_gain(a: Mat2, b: Vec2, q: Mat2, r: f64, tol: f64, max_iter: usize) -> Result<Vec2> {
    let at = mat_t(&a);
    let mut p = q;
    let mut k_prev = [f64::INFINITY, f64::INFINITY];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        // s = R + B'PB (scalar), k = s^-1 B'PA (1x2)
        let pb = mat_vec(&p, &b);
        let s = r + b[0] * pb[0] + b[1] * pb[1];
        let bpa = [
            b[0] * (p[0][0] * a[0][0] + p[0][1] * a[1][0]) + b[1] * (p[1][0] * a[0][0] + p[1][1] * a[1][0]),
            b[0] * (p[0][0] * a[0][1] + p[0][1] * a[1][1]) + b[1] * (p[1][0] * a[0][1] + p[1][1] * a[1][1]),
        ];
        let k = [bpa[0] / s, bpa[1] / s];

        residual = (k[0] - k_prev[0]).abs().max((k[1] - k_prev[1]).abs());
        if residual < tol {
            return Ok(k);
        }
        k_prev = k;

        let apa = mat_mul(&at, &mat_mul(&p, &a));
        // A'PB (2x1) times K (1x2)
        let apb = [
            a[0][0] * pb[0] + a[1][0] * pb[1],
            a[0][1] * pb[0] + a[1][1] * pb[1],
        ];
        let mut next = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                next[i][j] = q[i][j] + apa[i][j] - apb[i] * k[j];
            }
        }
        p = next;
    }
    Err(Error::RiccatiDiverged {
        iters: max_iter,
        residual,
    })
}

/// Spectral radius of the 2x2 closed-loop matrix A - B K.
pub fn closed_loop_spectral_radius(a: &Mat2, b: &Vec2, k: &Vec2) -> f64 {
    let m = [
        [a[0][0] - b[0] * k[0], a[0][1] - b[0] * k[1]],
        [a[1][0] - b[1] * k[0], a[1][1] - b[1] * k[1]],
    ];
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = tr * tr - 4.0 * det;
    if disc >= 0.0 {
        let r = disc.sqrt();
        ((tr + r) / 2.0).abs().max(((tr - r) / 2.0).abs())
    } else {
        // Complex pair: |lambda| = sqrt(det).
        det.abs().sqrt()
    }
}

/// Feedforward and feedback split of a tracking command, exposed for tests.
#[derive(Debug, Clone, Copy)]
pub struct TrackBreakdown {
    pub feedforward: ControlCommand,
    pub accel_feedback: f64,
    pub steer_feedback: f64,
    pub command: ControlCommand,
}

/// Tracks a planned trajectory: feedforward from the reference point half a
/// second ahead plus LQR feedback on the tracking errors. Stateless; an
/// empty plan is unrepresentable ([`PlannedTrajectory`] enforces 80 points).
pub fn track(
    state: &EgoState,
    plan: &PlannedTrajectory,
    cfg: &LqrConfig,
    bike: &BicycleParams,
) -> ControlCommand {
    track_breakdown(state, plan, cfg, bike).command
}

pub fn track_breakdown(
    state: &EgoState,
    plan: &PlannedTrajectory,
    cfg: &LqrConfig,
    bike: &BicycleParams,
) -> TrackBreakdown {
    let poses = plan.poses();

    // Longitudinal anchor: sample 0 is the pose the plan assigns to *now*
    // (planners re-issue trajectories each tick). Lateral anchor: the point
    // half a second ahead of the nearest sample, for preview.
    let mut nearest = 0;
    let mut best = f64::INFINITY;
    for (i, p) in poses.iter().enumerate() {
        let d = p.distance_to(&state.pose);
        if d < best {
            best = d;
            nearest = i;
        }
    }
    let ahead = (cfg.lookahead / DT).round() as usize;
    let r = (nearest + ahead).min(FUTURE_LEN - 3);

    // Reference speeds and acceleration from half-second windows of the
    // plan. Adjacent-sample differencing would double-differentiate the
    // planner's raw output: centimetre-level pose noise from a learned
    // planner then turns into full-scale acceleration commands.
    let mut arc = [0.0f64; FUTURE_LEN];
    for i in 1..FUTURE_LEN {
        arc[i] = arc[i - 1] + poses[i - 1].distance_to(&poses[i]);
    }
    const W: usize = 5;
    let window_speed = |i: usize| -> f64 {
        let a = i.min(FUTURE_LEN - 1 - W);
        (arc[a + W] - arc[a]) / (W as f64 * DT)
    };
    // Window means lag by half a window on accelerating plans; recenter.
    let a_ref = (window_speed(W) - window_speed(0)) / (W as f64 * DT);
    let v_ref = window_speed(0) - a_ref * (W - 1) as f64 / 2.0 * DT;

    // Reference steering from the windowed path curvature around i.
    let steer_of = |i: usize| -> f64 {
        let a = i.min(FUTURE_LEN - 1 - 4);
        let ds = (arc[a + 4] - arc[a]).max(1e-3);
        let kappa = wrap_angle(poses[a + 4].yaw - poses[a].yaw) / ds;
        (bike.wheelbase * kappa).atan()
    };
    let steer_preview = steer_of(r);

    // All errors are measured against the time-synchronized sample: sample 0
    // is where the plan says the vehicle should be right now. Measuring the
    // lateral error in the lookahead point's frame instead would report a
    // phantom offset on curved plans (a point behind an arc is laterally
    // displaced in the arc frame); the lookahead informs gain scheduling and
    // the curvature feedforward.
    let local0 = state.pose.in_frame(&poses[0]);
    let e_s = local0.x;
    let e_v = state.velocity - v_ref;
    let e_y = local0.y;
    let e_theta = local0.yaw;

    // Gains at the reference speed (floored so B stays controllable).
    let v_lin = window_speed(r).max(0.5);
    let sec2 = 1.0 / steer_preview.cos().powi(2);
    let (k_lat, k_lon) = cached_gains(cfg, bike, v_lin, sec2);

    let u_lat = -(k_lat[0] * e_y + k_lat[1] * e_theta);
    let u_lon = -(k_lon[0] * e_s + k_lon[1] * e_v);

    // Feedforward: the plan's own acceleration and the steering-rate that
    // slews onto the plan's next steering angle. Both are exact for a
    // bicycle-feasible plan followed from its own state.
    let ff_steer_rate = (steer_of(1) - state.steering) / DT;
    let feedforward = ControlCommand::new(a_ref, ff_steer_rate);
    let command = ControlCommand::new(a_ref + u_lon, ff_steer_rate + u_lat / DT);

    TrackBreakdown {
        feedforward,
        accel_feedback: u_lon,
        steer_feedback: u_lat / DT,
        command,
    }
}

/// Gain cache keyed by quantized (speed, sec^2, weights-independent) inputs.
/// Thread-local, so concurrent rollouts never contend.
fn cached_gains(cfg: &LqrConfig, bike: &BicycleParams, v_lin: f64, sec2: f64) -> (Vec2, Vec2) {
    use std::cell::RefCell;
    use std::collections::HashMap;
    thread_local! {
        static CACHE: RefCell<HashMap<(u64, u64, u64), (Vec2, Vec2)>> = RefCell::new(HashMap::new());
    }
    let cfg_key = [
        cfg.q_lat[0][0],
        cfg.q_lat[1][1],
        cfg.r_lat,
        cfg.q_lon[0][0],
        cfg.q_lon[1][1],
        cfg.r_lon,
    ]
    .iter()
    .fold(0u64, |h, x| {
        h.rotate_left(11) ^ x.to_bits()
    });
    // Quantize: 0.01 m/s speed buckets, 0.001 sec^2 buckets.
    let vq = (v_lin * 100.0).round() as u64;
    let sq = (sec2 * 1000.0).round() as u64;
    let v_q = vq as f64 / 100.0;
    let s_q = sq as f64 / 1000.0;
    CACHE.with(|c| {
        if let Some(hit) = c.borrow().get(&(vq, sq, cfg_key)) {
            return *hit;
        }
        let a_lat = [[1.0, v_q * DT], [0.0, 1.0]];
        let b_lat = [0.0, v_q * DT / bike.wheelbase * s_q];
        let k_lat = lqr_gain(a_lat, b_lat, cfg.q_lat, cfg.r_lat, cfg.tol, cfg.max_iter)
            .expect("lateral Riccati converges for the path-tracking linearization");
        let a_lon = [[1.0, DT], [0.0, 1.0]];
        let b_lon = [0.0, DT];
        let k_lon = lqr_gain(a_lon, b_lon, cfg.q_lon, cfg.r_lon, cfg.tol, cfg.max_iter)
            .expect("longitudinal Riccati converges for the double integrator");
        c.borrow_mut().insert((vq, sq, cfg_key), (k_lat, k_lon));
        (k_lat, k_lon)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{bicycle_step, derive_kinematics, rollout_dynamics};
    use crate::scenario::Pose;

    #[test]
    fn dead_state_needs_no_correction() {
        // A = 0: the state dies in one step regardless of control.
        let k = lqr_gain([[0.0, 0.0], [0.0, 0.0]], [0.0, 1.0], diag(1.0, 1.0), 1.0, 1e-12, 100)
            .unwrap();
        assert!(k[0].abs() < 1e-12 && k[1].abs() < 1e-12);
    }

    #[test]
    fn scalar_riccati_matches_closed_form() {
        // Embed the scalar problem A=B=Q=R=1 in the 2x2 solver with a dead
        // second state. Analytic fixed point: P = (1+sqrt(5))/2, K = P/(1+P).
        let k = lqr_gain([[1.0, 0.0], [0.0, 0.0]], [1.0, 0.0], diag(1.0, 0.0), 1.0, 1e-12, 500)
            .unwrap();
        let p = (1.0 + 5.0f64.sqrt()) / 2.0;
        let expected = p / (1.0 + p);
        assert!((k[0] - expected).abs() < 1e-9, "K = {}", k[0]);
        assert!((expected - 0.618034).abs() < 1e-6);
        assert!(k[1].abs() < 1e-12);
    }

    #[test]
    fn gain_matches_brute_force_fixed_point() {
        // Independent oracle: iterate the textbook recursion 10^4 times.
        let a = [[1.0, 0.0], [0.0, 1.0]];
        let b = [0.0, 0.1];
        let q = diag(1.0, 1.0);
        let r = 1.0;
        let k = lqr_gain(a, b, q, r, 1e-12, 500).unwrap();

        let mut p = q;
        for _ in 0..10_000 {
            let pb = mat_vec(&p, &b);
            let s = r + b[0] * pb[0] + b[1] * pb[1];
            let at = mat_t(&a);
            let apa = mat_mul(&at, &mat_mul(&p, &a));
            let apb = [
                a[0][0] * pb[0] + a[1][0] * pb[1],
                a[0][1] * pb[0] + a[1][1] * pb[1],
            ];
            let bpa = [
                b[0] * (p[0][0] * a[0][0] + p[0][1] * a[1][0])
                    + b[1] * (p[1][0] * a[0][0] + p[1][1] * a[1][0]),
                b[0] * (p[0][0] * a[0][1] + p[0][1] * a[1][1])
                    + b[1] * (p[1][0] * a[0][1] + p[1][1] * a[1][1]),
            ];
            let kk = [bpa[0] / s, bpa[1] / s];
            let mut next = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    next[i][j] = q[i][j] + apa[i][j] - apb[i] * kk[j];
                }
            }
            p = next;
        }
        let pb = mat_vec(&p, &b);
        let s = r + b[0] * pb[0] + b[1] * pb[1];
        let oracle_k = [
            (b[0] * (p[0][0] * a[0][0] + p[0][1] * a[1][0])
                + b[1] * (p[1][0] * a[0][0] + p[1][1] * a[1][0]))
                / s,
            (b[0] * (p[0][0] * a[0][1] + p[0][1] * a[1][1])
                + b[1] * (p[1][0] * a[0][1] + p[1][1] * a[1][1]))
                / s,
        ];
        assert!((k[0] - oracle_k[0]).abs() < 1e-8, "{} vs {}", k[0], oracle_k[0]);
        assert!((k[1] - oracle_k[1]).abs() < 1e-8, "{} vs {}", k[1], oracle_k[1]);
    }

    #[test]
    fn closed_loop_is_stable_across_speeds() {
        let cfg = LqrConfig::default();
        let bike = BicycleParams::default();
        for v in [0.5, 2.0, 5.0, 10.0, 15.0] {
            let a = [[1.0, v * DT], [0.0, 1.0]];
            let b = [0.0, v * DT / bike.wheelbase];
            let k = lqr_gain(a, b, cfg.q_lat, cfg.r_lat, cfg.tol, cfg.max_iter).unwrap();
            let rho = closed_loop_spectral_radius(&a, &b, &k);
            assert!(rho < 1.0, "v = {v}: spectral radius {rho}");
        }
        let a = [[1.0, DT], [0.0, 1.0]];
        let b = [0.0, DT];
        let k = lqr_gain(a, b, cfg.q_lon, cfg.r_lon, cfg.tol, cfg.max_iter).unwrap();
        assert!(closed_loop_spectral_radius(&a, &b, &k) < 1.0);
    }

    fn straight_plan(v: f64) -> PlannedTrajectory {
        let poses = (0..FUTURE_LEN)
            .map(|i| Pose::new(v * DT * i as f64, 0.0, 0.0))
            .collect();
        PlannedTrajectory::new(poses).unwrap()
    }

    #[test]
    fn on_plan_command_is_pure_feedforward() {
        let plan = straight_plan(5.0);
        let state = EgoState {
            pose: Pose::new(0.0, 0.0, 0.0),
            velocity: 5.0,
            acceleration: 0.0,
            steering: 0.0,
            timestamp: 0.0,
        };
        let b = track_breakdown(&state, &plan, &LqrConfig::default(), &BicycleParams::default());
        assert!(b.accel_feedback.abs() < 1e-9);
        assert!(b.steer_feedback.abs() < 1e-9);
        assert!((b.command.accel - b.feedforward.accel).abs() < 1e-9);
        assert!((b.command.steer_rate - b.feedforward.steer_rate).abs() < 1e-9);
    }

    #[test]
    fn lateral_offset_steers_toward_path() {
        let plan = straight_plan(5.0);
        // Offset to the left (+y): must steer right (negative feedback).
        let state = EgoState {
            pose: Pose::new(0.0, 0.8, 0.0),
            velocity: 5.0,
            acceleration: 0.0,
            steering: 0.0,
            timestamp: 0.0,
        };
        let b = track_breakdown(&state, &plan, &LqrConfig::default(), &BicycleParams::default());
        assert!(b.steer_feedback < 0.0);
        // Mirror case.
        let state = EgoState {
            pose: Pose::new(0.0, -0.8, 0.0),
            ..state
        };
        let b = track_breakdown(&state, &plan, &LqrConfig::default(), &BicycleParams::default());
        assert!(b.steer_feedback > 0.0);
    }

    /// Plan window starting at reference sample `k`, as a re-planning
    /// simulator would issue it.
    fn window(reference: &[Pose], k: usize) -> PlannedTrajectory {
        PlannedTrajectory::new(reference[k..k + FUTURE_LEN].to_vec()).unwrap()
    }

    #[test]
    fn recovers_half_meter_offset_within_forty_steps() {
        let cfg = LqrConfig::default();
        let bike = BicycleParams::default();
        let reference: Vec<Pose> = (0..FUTURE_LEN + 60)
            .map(|i| Pose::new(5.0 * DT * i as f64, 0.0, 0.0))
            .collect();
        let mut state = EgoState {
            pose: Pose::new(0.0, 0.5, 0.0),
            velocity: 5.0,
            acceleration: 0.0,
            steering: 0.0,
            timestamp: 0.0,
        };
        for k in 0..40 {
            let cmd = track(&state, &window(&reference, k), &cfg, &bike);
            state = bicycle_step(&state, cmd, &bike);
        }
        assert!(state.pose.y.abs() < 0.05, "final offset {}", state.pose.y);
    }

    #[test]
    fn tracks_feasible_plan_within_tenth_of_a_meter() {
        // A bicycle-feasible trajectory tracked from its own initial state,
        // with the plan window advancing each step.
        let bike = BicycleParams::default();
        let cfg = LqrConfig::default();
        let start = EgoState {
            pose: Pose::new(0.0, 0.0, 0.0),
            velocity: 6.0,
            acceleration: 0.0,
            steering: 0.0,
            timestamp: 0.0,
        };
        let mut cmds: Vec<crate::dynamics::ControlCommand> = (0..FUTURE_LEN - 1)
            .map(|i| {
                crate::dynamics::ControlCommand::new(
                    0.3 * ((i as f64) * 0.06).sin(),
                    0.15 * ((i as f64) * 0.045).cos(),
                )
            })
            .collect();
        // Coast beyond the horizon so every window is full length.
        cmds.extend(vec![crate::dynamics::ControlCommand::zero(); FUTURE_LEN]);
        let states = rollout_dynamics(&start, &cmds, &bike);
        let mut reference = vec![start.pose];
        reference.extend(states.iter().map(|s| s.pose));

        let mut state = start;
        let mut max_dev: f64 = 0.0;
        for k in 0..FUTURE_LEN - 1 {
            let cmd = track(&state, &window(&reference, k), &cfg, &bike);
            state = bicycle_step(&state, cmd, &bike);
            max_dev = max_dev.max(state.pose.distance_to(&reference[k + 1]));
        }
        assert!(max_dev < 0.1, "max deviation {max_dev}");
        // Sanity: the plan itself was feasible.
        let derived = derive_kinematics(&reference[..FUTURE_LEN], DT, bike.wheelbase).unwrap();
        assert!(derived.iter().all(|s| s.steering.abs() <= 0.6));
    }

    #[test]
    fn track_is_stateless_and_deterministic() {
        let plan = straight_plan(4.0);
        let state = EgoState {
            pose: Pose::new(1.0, 0.3, 0.05),
            velocity: 3.5,
            acceleration: 0.0,
            steering: 0.02,
            timestamp: 0.0,
        };
        let cfg = LqrConfig::default();
        let bike = BicycleParams::default();
        let a = track(&state, &plan, &cfg, &bike);
        let b = track(&state, &plan, &cfg, &bike);
        assert_eq!(a, b);
    }
}
