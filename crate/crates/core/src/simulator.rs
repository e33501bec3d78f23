//! Closed-loop engine: replan at 10 Hz for 15 s, actuate with the configured
//! tracker (LQR, adapter policy, or perfect tracking), update the ego through
//! the bicycle model, step traffic, and log every step.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::control::{track, LqrConfig};
use crate::dynamics::{bicycle_step, BicycleParams, ControlCommand};
use crate::error::{Error, Result};
use crate::geom::{wrap_angle, Centerline};
use crate::limits::{EGO_LENGTH, EGO_WIDTH};
use crate::scenario::{
    AgentSnapshot, AgentWaypoint, EgoState, Extent, PolylineKind, Pose, Scenario, SceneSnapshot,
    DT, FUTURE_LEN, HISTORY_LEN,
};
use crate::traffic::{plan_idm, step_agents, AgentMotion, TrafficMode, TrafficWorld};
use crate::trajectory::PlannedTrajectory;

/// 15 s rollout at 10 Hz.
pub const SIM_STEPS: usize = 150;

/// A planner queried at every replanning tick.
pub trait Planner {
    fn name(&self) -> &str;
    /// Produces a global-frame trajectory for the scene at simulation `step`.
    fn plan(&self, snap: &SceneSnapshot<'_>, step: usize) -> Result<PlannedTrajectory>;
}

/// Maps (state, plan) to a control command; the adapter policy plugs in here.
pub trait CommandPolicy {
    fn command(&self, state: &EgoState, plan: &PlannedTrajectory) -> ControlCommand;
}

/// How planned trajectories are executed.
pub enum Actuation<'a> {
    Lqr(&'a LqrConfig),
    Adapter(&'a dyn CommandPolicy),
    /// Teleports the ego to the plan's first future pose each tick.
    PerfectTracking,
}

impl Actuation<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Actuation::Lqr(_) => "lqr",
            Actuation::Adapter(_) => "rl_adapter",
            Actuation::PerfectTracking => "perfect",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentStepRecord {
    pub id: u32,
    pub pose: Pose,
    pub velocity: f64,
}

/// One simulation step: the state at `time`, the command applied over the
/// following tick, and the executed-motion quantities for that tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub time: f64,
    pub ego: EgoState,
    pub cmd: ControlCommand,
    /// Step at which the active plan was produced.
    pub plan_id: u64,
    pub agents: Vec<AgentStepRecord>,
    pub lon_accel: f64,
    pub jerk: f64,
    pub yaw_rate: f64,
    pub collision: bool,
    pub off_drivable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ErrorRecord {
    planner_error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationLog {
    pub scenario_id: String,
    pub steps: Vec<StepRecord>,
    pub collision: bool,
    pub off_drivable: bool,
    pub error: Option<String>,
}

impl SimulationLog {
    /// JSON-lines: one record per step, plus a trailing error record when the
    /// rollout was truncated by a planner failure.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for step in &self.steps {
            out.push_str(&serde_json::to_string(step).expect("step record serializes"));
            out.push('\n');
        }
        if let Some(err) = &self.error {
            out.push_str(
                &serde_json::to_string(&ErrorRecord {
                    planner_error: err.clone(),
                })
                .expect("error record serializes"),
            );
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str, scenario_id: &str) -> Result<SimulationLog> {
        let mut steps = Vec::new();
        let mut error = None;
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<StepRecord>(line) {
                Ok(step) => steps.push(step),
                Err(_) => {
                    let err: ErrorRecord =
                        serde_json::from_str(line).map_err(|e| Error::Parse {
                            path: format!("{scenario_id} log line {}", n + 1),
                            detail: e.to_string(),
                        })?;
                    error = Some(err.planner_error);
                }
            }
        }
        let collision = steps.iter().any(|s| s.collision);
        let off_drivable = steps.iter().any(|s| s.off_drivable);
        Ok(SimulationLog {
            scenario_id: scenario_id.to_string(),
            steps,
            collision,
            off_drivable,
            error,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    /// Replan every N steps (1 = every tick).
    pub replan_interval: usize,
    pub bike: BicycleParams,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            replan_interval: 1,
            bike: BicycleParams::default(),
        }
    }
}

/// Driving lanes for traffic: the route chain plus every non-route polyline.
fn build_lanes(scenario: &Scenario) -> Vec<Centerline> {
    let mut lanes: Vec<Centerline> = vec![scenario.route_centerline()];
    for (i, poly) in scenario.map.iter().enumerate() {
        if !scenario.route_ids.contains(&(i as u32)) {
            lanes.push(poly.centerline());
        }
    }
    lanes
}

/// Recorded agent motion indexed by simulation step: the stored 8 s future,
/// then constant-speed extrapolation along the agent's own lane (stopped
/// agents stay put). `horizon` is the last step index filled.
fn raw_agent_timelines(
    scenario: &Scenario,
    lanes: &[Centerline],
    horizon: usize,
) -> Vec<Vec<AgentWaypoint>> {
    scenario
        .agents
        .iter()
        .map(|track| {
            let mut timeline: Vec<AgentWaypoint> = Vec::with_capacity(horizon + 1);
            for k in 0..FUTURE_LEN {
                let v = if k + 1 < FUTURE_LEN {
                    track.future[k].distance_to(&track.future[k + 1]) / DT
                } else {
                    track.future[FUTURE_LEN - 2].distance_to(&track.future[FUTURE_LEN - 1]) / DT
                };
                timeline.push(AgentWaypoint {
                    pose: track.future[k],
                    velocity: v,
                });
            }
            let last = *timeline.last().unwrap();
            let ext_lane =
                nearest_lane(lanes, last.pose.position(), f64::INFINITY).map(|(i, s, _)| (i, s));
            let mut s = ext_lane.map(|(_, s)| s).unwrap_or(0.0);
            for _ in timeline.len()..=horizon {
                if last.velocity < 0.05 || ext_lane.is_none() {
                    timeline.push(AgentWaypoint {
                        pose: timeline.last().unwrap().pose,
                        velocity: 0.0,
                    });
                } else {
                    let lane = &lanes[ext_lane.unwrap().0];
                    s += last.velocity * DT;
                    let (pos, yaw) = lane.pose_at(s);
                    timeline.push(AgentWaypoint {
                        pose: Pose::new(pos.0, pos.1, yaw),
                        velocity: last.velocity,
                    });
                }
            }
            timeline
        })
        .collect()
}

/// Ghost-agent timelines for non-reactive simulation: recorded futures, then
/// IDM re-extension against the expert ghost and the other agents, so a
/// recorded follower does not blindly plow into a stopping expert. Returns
/// (agent timelines, expert ghost trajectory).
fn build_agent_timelines(
    scenario: &Scenario,
    lanes: &[Centerline],
    horizon: usize,
) -> (Vec<Vec<AgentWaypoint>>, Vec<Pose>) {
    let raw = raw_agent_timelines(scenario, lanes, horizon);
    let expert_ghost = extend_expert(scenario, &raw, horizon);

    let timelines = scenario
        .agents
        .iter()
        .zip(&raw)
        .enumerate()
        .map(|(i, (track, timeline))| {
            let mut out = timeline[..FUTURE_LEN.min(timeline.len())].to_vec();
            let last = *out.last().unwrap();
            if last.velocity < 0.05 {
                out.resize(horizon + 1, AgentWaypoint { pose: last.pose, velocity: 0.0 });
                return out;
            }
            let Some((lane_idx, mut s_pos, _)) =
                nearest_lane(lanes, last.pose.position(), f64::INFINITY)
            else {
                out.resize(horizon + 1, last);
                return out;
            };
            let lane = &lanes[lane_idx];
            let params = crate::traffic::IdmParams::with_v0(last.velocity.max(0.5));
            let mut v = last.velocity;
            for step in out.len()..=horizon {
                // Nearest leader among the expert ghost and the other agents.
                let mut leader: Option<(f64, f64, f64)> = None;
                let mut consider = |pos: (f64, f64), vel: f64, length: f64| {
                    let (sp, lat, _) = lane.project(pos);
                    if lat.abs() <= 2.0 && sp > s_pos && sp - s_pos <= 100.0 {
                        if leader.map_or(true, |(ls, _, _)| sp < ls) {
                            leader = Some((sp, vel, length));
                        }
                    }
                };
                let ghost = expert_ghost[step.min(expert_ghost.len() - 1)];
                let ghost_prev = expert_ghost[(step.max(1) - 1).min(expert_ghost.len() - 1)];
                consider(
                    ghost.position(),
                    ghost_prev.distance_to(&ghost) / DT,
                    EGO_LENGTH,
                );
                for (j, (other, tl)) in scenario.agents.iter().zip(&raw).enumerate() {
                    if j != i {
                        let w = &tl[step.min(tl.len() - 1)];
                        consider(w.pose.position(), w.velocity, other.extent.length);
                    }
                }
                let accel = match leader {
                    Some((sp, lv, llen)) => crate::traffic::idm_acceleration(
                        v,
                        Some((sp - s_pos - (llen + track.extent.length) / 2.0).max(0.01)),
                        v - lv,
                        &params,
                    ),
                    None => crate::traffic::idm_acceleration(v, None, 0.0, &params),
                };
                s_pos += v * DT;
                v = (v + accel * DT).max(0.0);
                let (pos, yaw) = lane.pose_at(s_pos);
                out.push(AgentWaypoint {
                    pose: Pose::new(pos.0, pos.1, yaw),
                    velocity: v,
                });
            }
            out
        })
        .collect();
    (timelines, expert_ghost)
}

/// Continues the expert beyond the recorded 8 s: IDM along the route against
/// the recorded traffic (with a predictive yield to agents about to cross),
/// comfort-shaped exactly like the scenario generator's driver.
fn extend_expert(
    scenario: &Scenario,
    timelines: &[Vec<AgentWaypoint>],
    horizon: usize,
) -> Vec<Pose> {
    use crate::scenario::gen_driver::{
        expert_desired_speed, expert_steering, EXPERT_EMERGENCY_DECEL, EXPERT_MAX_ACCEL,
        EXPERT_MAX_BRAKE_JERK_STEP, EXPERT_MAX_DECEL, EXPERT_MAX_JERK_STEP,
    };
    use crate::traffic::{idm_acceleration, IdmParams};

    let route = scenario.route_centerline();
    let expert = &scenario.expert_future;
    let mut timeline = expert.clone();

    let bike = BicycleParams::default();
    let speed_limit = scenario.speed_limit();
    let derived = crate::dynamics::derive_kinematics(expert, DT, bike.wheelbase)
        .expect("expert has enough samples");
    // Spacing(k, k+1) is v(k) dt under the bicycle's Euler update, so the
    // tail state's velocity extrapolates one step past the last spacing;
    // anything else puts an acceleration blip at the splice.
    let d_last = expert[FUTURE_LEN - 2].distance_to(&expert[FUTURE_LEN - 1]);
    let d_prev = expert[FUTURE_LEN - 3].distance_to(&expert[FUTURE_LEN - 2]);
    let splice_speed = ((2.0 * d_last - d_prev) / DT).max(0.0);
    let tail = derived[FUTURE_LEN - 1];
    let mut state = EgoState {
        velocity: splice_speed,
        timestamp: (FUTURE_LEN - 1) as f64 * DT,
        ..tail
    };
    let mut prev_accel = tail.acceleration.clamp(-EXPERT_MAX_DECEL, EXPERT_MAX_ACCEL);

    for step in FUTURE_LEN - 1..horizon + FUTURE_LEN {
        let (s_proj, _, _) = route.project(state.pose.position());
        let steer_rate = expert_steering(&state, &route, s_proj, &bike);
        let idm = IdmParams::with_v0(expert_desired_speed(&route, s_proj, speed_limit).max(1.5));
        let mut accel = idm_acceleration(state.velocity, None, 0.0, &idm);

        for (a, tl) in scenario.agents.iter().zip(timelines) {
            let w = &tl[step.min(tl.len() - 1)];
            let (sp, lat, _) = route.project(w.pose.position());
            if lat.abs() <= 2.0 && sp > s_proj && sp - s_proj <= 100.0 {
                let gap = (sp - s_proj - (a.extent.length + EGO_LENGTH) / 2.0).max(0.01);
                accel = accel.min(idm_acceleration(
                    state.velocity,
                    Some(gap),
                    state.velocity - w.velocity,
                    &idm,
                ));
            }
            // Predictive yield: an agent about to cross the route ahead
            // becomes a virtual stop point at its entry.
            for f in 1..25 {
                let wf = &tl[(step + f).min(tl.len() - 1)];
                let (sf, latf, _) = route.project(wf.pose.position());
                if latf.abs() <= 2.2 && sf > s_proj + 2.0 && sf - s_proj <= 60.0 {
                    let stop_gap = (sf - s_proj - 6.0 - EGO_LENGTH / 2.0).max(0.01);
                    accel = accel.min(idm_acceleration(
                        state.velocity,
                        Some(stop_gap),
                        state.velocity,
                        &idm,
                    ));
                    break;
                }
            }
        }

        let emergency = accel < -EXPERT_MAX_DECEL;
        let floor = if emergency { EXPERT_EMERGENCY_DECEL } else { EXPERT_MAX_DECEL };
        let accel = accel.clamp(-floor, EXPERT_MAX_ACCEL);
        let brake_step = if accel < prev_accel {
            EXPERT_MAX_BRAKE_JERK_STEP
        } else {
            EXPERT_MAX_JERK_STEP
        };
        let accel = prev_accel + (accel - prev_accel).clamp(-brake_step, EXPERT_MAX_JERK_STEP);
        // Ease the brake out as the car reaches standstill; an instant
        // release at v = 0 is a jerk spike.
        let accel = accel.max(-(1.6 * state.velocity + 0.05));
        prev_accel = accel;
        state = bicycle_step(&state, ControlCommand::new(accel, steer_rate), &bike);
        state.velocity = state.velocity.max(0.0);
        timeline.push(state.pose);
    }
    timeline
}

/// Expert log-replay planner: replays the recorded expert trajectory
/// regardless of the actual ego state, behavior-extended beyond the recorded
/// horizon.
pub struct LogReplayPlanner {
    timeline: Vec<Pose>,
}

impl LogReplayPlanner {
    pub fn new(scenario: &Scenario) -> Self {
        let lanes = build_lanes(scenario);
        let (_, timeline) = build_agent_timelines(scenario, &lanes, SIM_STEPS + 1);
        LogReplayPlanner { timeline }
    }
}

impl Planner for LogReplayPlanner {
    fn name(&self) -> &str {
        "log_replay"
    }

    fn plan(&self, _snap: &SceneSnapshot<'_>, step: usize) -> Result<PlannedTrajectory> {
        let start = step.min(self.timeline.len() - FUTURE_LEN);
        PlannedTrajectory::new(self.timeline[start..start + FUTURE_LEN].to_vec())
    }
}

/// Rule-based IDM baseline planner.
pub struct IdmPlanner {
    route: Centerline,
    speed_limit: f64,
}

impl IdmPlanner {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        if scenario.route_ids.is_empty() {
            return Err(Error::PlannerFailure("scenario has no route".into()));
        }
        Ok(IdmPlanner {
            route: scenario.route_centerline(),
            speed_limit: scenario.speed_limit(),
        })
    }
}

impl Planner for IdmPlanner {
    fn name(&self) -> &str {
        "idm"
    }

    fn plan(&self, snap: &SceneSnapshot<'_>, _step: usize) -> Result<PlannedTrajectory> {
        plan_idm(&snap.ego, snap, &self.route, self.speed_limit)
    }
}

struct AgentRuntime {
    motion: AgentMotion,
    history: VecDeque<AgentWaypoint>,
    extent: Extent,
}

/// Runs the 15 s closed loop. Deterministic given its inputs; `seed` is
/// recorded for bookkeeping and reserved for stochastic planners.
pub fn run_closed_loop(
    scenario: &Scenario,
    planner: &dyn Planner,
    actuation: Actuation<'_>,
    traffic_mode: TrafficMode,
    _seed: u64,
    opts: &SimOptions,
) -> Result<SimulationLog> {
    let drivable: Vec<Centerline> = scenario
        .map
        .iter()
        .filter(|p| p.kind != PolylineKind::LaneBoundary)
        .map(|p| p.centerline())
        .collect();

    let lanes = build_lanes(scenario);
    let (all_timelines, _) = build_agent_timelines(scenario, &lanes, SIM_STEPS + 1);

    let mut agents: Vec<AgentRuntime> = Vec::with_capacity(scenario.agents.len());
    let mut timelines: Vec<Vec<AgentWaypoint>> = Vec::with_capacity(scenario.agents.len());
    for (track_, timeline) in scenario.agents.iter().zip(all_timelines) {
        let current = *track_.current();
        let lane_assignment = nearest_lane(&lanes, current.pose.position(), scenario.drivable_halfwidth);
        if traffic_mode == TrafficMode::Reactive && lane_assignment.is_none() {
            return Err(Error::InvalidScenario {
                id: scenario.id.clone(),
                reason: format!(
                    "reactive agent {} is not within {} m of any lane",
                    track_.id, scenario.drivable_halfwidth
                ),
            });
        }
        let mean_speed = track_.history.iter().map(|w| w.velocity).sum::<f64>()
            / track_.history.len() as f64;
        agents.push(AgentRuntime {
            motion: AgentMotion {
                id: track_.id,
                extent: track_.extent,
                pose: current.pose,
                velocity: current.velocity,
                lane: lane_assignment.map(|(i, _, _)| i),
                lane_s: lane_assignment.map(|(_, s, _)| s).unwrap_or(0.0),
                target_speed: mean_speed.max(1.0),
            },
            history: track_.history.iter().copied().collect(),
            extent: track_.extent,
        });
        timelines.push(timeline);
    }

    let mut ego = *scenario.current_ego();
    let mut ego_history: VecDeque<EgoState> = scenario.ego_history.iter().copied().collect();
    let mut prev_lon_accel = ego.acceleration;

    let mut steps: Vec<StepRecord> = Vec::with_capacity(SIM_STEPS);
    let mut log_error = None;
    let mut any_collision = false;
    let mut any_off_drivable = false;
    let mut plan: Option<(u64, PlannedTrajectory)> = None;

    for step in 0..SIM_STEPS {
        let snap = SceneSnapshot {
            ego,
            ego_history: ego_history.iter().copied().collect(),
            agents: agents
                .iter()
                .map(|a| AgentSnapshot {
                    id: a.motion.id,
                    extent: a.extent,
                    history: a.history.iter().copied().collect(),
                })
                .collect(),
            map: &scenario.map,
            route_ids: &scenario.route_ids,
            drivable_halfwidth: scenario.drivable_halfwidth,
        };

        if plan.is_none() || step % opts.replan_interval == 0 {
            match planner.plan(&snap, step) {
                Ok(p) => plan = Some((step as u64, p)),
                Err(e) => {
                    log_error = Some(e.to_string());
                    break;
                }
            }
        }
        let (plan_id, current_plan) = plan.as_ref().expect("plan present after replanning");

        // Actuate.
        let (cmd, next_ego) = match &actuation {
            Actuation::Lqr(cfg) => {
                let cmd = track(&ego, current_plan, cfg, &opts.bike);
                (cmd, bicycle_step(&ego, cmd, &opts.bike))
            }
            Actuation::Adapter(policy) => {
                let cmd = policy.command(&ego, current_plan);
                (cmd, bicycle_step(&ego, cmd, &opts.bike))
            }
            Actuation::PerfectTracking => {
                let p1 = current_plan.get(1);
                let p2 = current_plan.get(2);
                let v0 = current_plan.get(0).distance_to(&p1) / DT;
                let v1 = p1.distance_to(&p2) / DT;
                let accel = (v1 - v0) / DT;
                let yaw_rate = wrap_angle(p2.yaw - p1.yaw) / DT;
                let steering = if v1 > 0.1 {
                    (opts.bike.wheelbase * yaw_rate / v1)
                        .atan()
                        .clamp(-opts.bike.max_steer, opts.bike.max_steer)
                } else {
                    0.0
                };
                let next = EgoState {
                    pose: p1,
                    velocity: v1,
                    acceleration: accel,
                    steering,
                    timestamp: ego.timestamp + DT,
                };
                (
                    ControlCommand::new(accel, (steering - ego.steering) / DT),
                    next,
                )
            }
        };

        // Traffic.
        let motions: Vec<AgentMotion> = agents.iter().map(|a| a.motion.clone()).collect();
        let world = TrafficWorld {
            lanes: &lanes,
            halfwidth: scenario.drivable_halfwidth,
            agents: &motions,
            timelines: &timelines,
            step,
            ego: Some((
                ego.pose,
                ego.velocity,
                Extent {
                    length: EGO_LENGTH,
                    width: EGO_WIDTH,
                },
            )),
        };
        let new_motions = step_agents(&world, traffic_mode, DT);

        // Executed-motion quantities for this tick.
        let lon_accel = (next_ego.velocity - ego.velocity) / DT;
        let jerk = (lon_accel - prev_lon_accel) / DT;
        let yaw_rate = wrap_angle(next_ego.pose.yaw - ego.pose.yaw) / DT;

        // Collision and drivable-area checks on the post-step configuration.
        let ego_box = next_ego.footprint();
        let collision = agents.iter().zip(&new_motions).any(|(a, m)| {
            ego_box.overlaps(&crate::geom::Obb {
                center: m.pose.position(),
                yaw: m.pose.yaw,
                length: a.extent.length,
                width: a.extent.width,
            })
        });
        let off_drivable = drivable
            .iter()
            .map(|line| line.min_distance(next_ego.pose.position()))
            .fold(f64::INFINITY, f64::min)
            > scenario.drivable_halfwidth;

        steps.push(StepRecord {
            time: step as f64 * DT,
            ego,
            cmd,
            plan_id: *plan_id,
            agents: agents
                .iter()
                .map(|a| AgentStepRecord {
                    id: a.motion.id,
                    pose: a.motion.pose,
                    velocity: a.motion.velocity,
                })
                .collect(),
            lon_accel,
            jerk,
            yaw_rate,
            collision,
            off_drivable,
        });

        any_collision |= collision;
        any_off_drivable |= off_drivable;
        if collision {
            break;
        }

        // Commit the step.
        ego = next_ego;
        prev_lon_accel = lon_accel;
        ego_history.pop_front();
        ego_history.push_back(ego);
        debug_assert_eq!(ego_history.len(), HISTORY_LEN);
        for (agent, motion) in agents.iter_mut().zip(new_motions) {
            agent.history.pop_front();
            agent.history.push_back(AgentWaypoint {
                pose: motion.pose,
                velocity: motion.velocity,
            });
            agent.motion = motion;
        }
    }

    Ok(SimulationLog {
        scenario_id: scenario.id.clone(),
        steps,
        collision: any_collision,
        off_drivable: any_off_drivable,
        error: log_error,
    })
}

/// Single plan at t = 0 paired with the ground truth for open-loop scoring.
pub fn run_open_loop(
    scenario: &Scenario,
    planner: &dyn Planner,
) -> Result<(PlannedTrajectory, Vec<Pose>)> {
    let snap = scenario.snapshot();
    let plan = planner.plan(&snap, 0)?;
    Ok((plan, scenario.expert_future.clone()))
}

fn nearest_lane(
    lanes: &[Centerline],
    pos: (f64, f64),
    max_lateral: f64,
) -> Option<(usize, f64, f64)> {
    let mut best: Option<(usize, f64, f64)> = None;
    for (i, lane) in lanes.iter().enumerate() {
        let (s, _, d) = lane.project(pos);
        if d <= max_lateral && best.map_or(true, |(_, _, bd)| d < bd) {
            best = Some((i, s, d));
        }
    }
    best
}
