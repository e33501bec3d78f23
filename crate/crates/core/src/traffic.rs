//! Background traffic: reactive IDM car-following along lane centerlines,
//! non-reactive log replay, and the IDM rule-based baseline planner.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Centerline;
use crate::scenario::{AgentWaypoint, EgoState, Extent, Pose, SceneSnapshot, DT, FUTURE_LEN};
use crate::trajectory::PlannedTrajectory;

/// Intelligent Driver Model parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IdmParams {
    /// Desired speed, m/s.
    pub v0: f64,
    /// Desired time headway, s.
    pub headway: f64,
    /// Minimum gap, m.
    pub min_gap: f64,
    /// Maximum acceleration, m/s^2.
    pub a_max: f64,
    /// Comfortable deceleration, m/s^2.
    pub b_comfort: f64,
    /// Free-road exponent.
    pub exponent: f64,
}

impl IdmParams {
    pub fn with_v0(v0: f64) -> Self {
        IdmParams {
            v0,
            headway: 1.5,
            min_gap: 2.0,
            a_max: 1.4,
            b_comfort: 2.0,
            exponent: 4.0,
        }
    }
}

/// IDM acceleration law. `gap` is bumper-to-bumper distance to the leader
/// (None on a free road) and `closing_speed` is `v - v_leader`.
pub fn idm_acceleration(v: f64, gap: Option<f64>, closing_speed: f64, p: &IdmParams) -> f64 {
    let free = 1.0 - (v / p.v0).powf(p.exponent);
    let interaction = match gap {
        Some(g) => {
            let desired = (p.min_gap
                + v * p.headway
                + v * closing_speed / (2.0 * (p.a_max * p.b_comfort).sqrt()))
            .max(0.0);
            (desired / g.max(1e-6)).powi(2)
        }
        None => 0.0,
    };
    p.a_max * (free - interaction)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficMode {
    LogReplay,
    Reactive,
}

/// Live motion state of one background agent.
#[derive(Debug, Clone)]
pub struct AgentMotion {
    pub id: u32,
    pub extent: Extent,
    pub pose: Pose,
    pub velocity: f64,
    /// Lane chain index into [`TrafficWorld::lanes`] (reactive agents only).
    pub lane: Option<usize>,
    /// Arc-length position on the lane chain.
    pub lane_s: f64,
    /// Desired free-flow speed.
    pub target_speed: f64,
}

/// World state consumed by [`step_agents`]. Timelines are the recorded agent
/// motions (history + future + extension), indexed by simulation step and
/// aligned with `agents`; they drive log-replay mode.
pub struct TrafficWorld<'a> {
    pub lanes: &'a [Centerline],
    pub halfwidth: f64,
    pub agents: &'a [AgentMotion],
    pub timelines: &'a [Vec<AgentWaypoint>],
    /// Current simulation step (timeline index of the *current* poses).
    pub step: usize,
    /// Ego acts as an obstacle for reactive agents.
    pub ego: Option<(Pose, f64, Extent)>,
}

/// Advances every agent by one tick. Log replay interpolates the recorded
/// timeline; reactive agents follow their lane centerline with IDM against
/// the nearest in-lane leader (including the ego vehicle).
pub fn step_agents(world: &TrafficWorld<'_>, mode: TrafficMode, dt: f64) -> Vec<AgentMotion> {
    match mode {
        TrafficMode::LogReplay => world
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let timeline = &world.timelines[i];
                let next = timeline[(world.step + 1).min(timeline.len() - 1)];
                AgentMotion {
                    pose: next.pose,
                    velocity: next.velocity,
                    ..a.clone()
                }
            })
            .collect(),
        TrafficMode::Reactive => world
            .agents
            .iter()
            .map(|a| {
                let lane_idx = a.lane.expect("reactive agent without a lane");
                let lane = &world.lanes[lane_idx];
                let leader = find_leader_on_lane(world, lane, a.lane_s, a.extent.length, a.id);
                let accel = {
                    let p = IdmParams::with_v0(a.target_speed);
                    match leader {
                        Some((gap, v_l)) => idm_acceleration(a.velocity, Some(gap), a.velocity - v_l, &p),
                        None => idm_acceleration(a.velocity, None, 0.0, &p),
                    }
                };
                let s = a.lane_s + a.velocity * dt;
                let v = (a.velocity + accel * dt).max(0.0);
                let (pos, yaw) = lane.pose_at(s);
                AgentMotion {
                    pose: Pose::new(pos.0, pos.1, yaw),
                    velocity: v,
                    lane_s: s,
                    ..a.clone()
                }
            })
            .collect(),
    }
}

/// Nearest obstacle ahead of `s` on the lane: any other agent (or the ego)
/// whose projection is within the lane halfwidth and less than 100 m ahead.
/// Returns (bumper gap, leader speed).
fn find_leader_on_lane(
    world: &TrafficWorld<'_>,
    lane: &Centerline,
    s: f64,
    own_length: f64,
    own_id: u32,
) -> Option<(f64, f64)> {
    let mut best: Option<(f64, f64, f64)> = None; // (s_proj, v, length)
    let mut consider = |pos: (f64, f64), v: f64, length: f64| {
        let (sp, lat, _) = lane.project(pos);
        if lat.abs() <= world.halfwidth && sp > s && sp - s <= 100.0 {
            if best.map_or(true, |(bs, _, _)| sp < bs) {
                best = Some((sp, v, length));
            }
        }
    };
    for other in world.agents {
        if other.id != own_id {
            consider(other.pose.position(), other.velocity, other.extent.length);
        }
    }
    if let Some((pose, v, extent)) = &world.ego {
        consider(pose.position(), *v, extent.length);
    }
    best.map(|(sp, v, length)| ((sp - s - (length + own_length) / 2.0).max(0.01), v))
}

/// Rule-based baseline planner: follow the route centerline with IDM speed
/// against the nearest leading obstacle and the route speed limit.
pub fn plan_idm(
    ego: &EgoState,
    snap: &SceneSnapshot<'_>,
    route: &Centerline,
    speed_limit: f64,
) -> Result<PlannedTrajectory> {
    if route.total_len() <= 0.0 {
        return Err(Error::PlannerFailure("empty route".into()));
    }
    let params = IdmParams::with_v0(speed_limit.max(0.5));
    let (s0, _, _) = route.project(ego.pose.position());

    // Leading obstacle on the route, advanced at constant speed during the
    // planning horizon.
    let mut leader: Option<(f64, f64, f64)> = None; // (s, v, length)
    for agent in &snap.agents {
        let cur = agent.current();
        let (sp, lat, _) = route.project(cur.pose.position());
        if lat.abs() <= snap.drivable_halfwidth && sp > s0 && sp - s0 <= 100.0 {
            if leader.map_or(true, |(ls, _, _)| sp < ls) {
                leader = Some((sp, cur.velocity, agent.extent.length));
            }
        }
    }

    let mut poses = Vec::with_capacity(FUTURE_LEN);
    let mut s = s0;
    let mut v = ego.velocity.max(0.0);
    let (pos, yaw) = route.pose_at(s);
    poses.push(Pose::new(pos.0, pos.1, yaw));
    for k in 1..FUTURE_LEN {
        let t = k as f64 * DT;
        let gap = leader.map(|(ls, lv, llen)| {
            let ls_t = ls + lv * t;
            (ls_t - s - (llen + crate::limits::EGO_LENGTH) / 2.0).max(0.01)
        });
        let closing = leader.map_or(0.0, |(_, lv, _)| v - lv);
        let a = idm_acceleration(v, gap, closing, &params);
        s += v * DT;
        v = (v + a * DT).max(0.0);
        let (pos, yaw) = route.pose_at(s);
        poses.push(Pose::new(pos.0, pos.1, yaw));
    }
    PlannedTrajectory::new(poses)
}
