//! Synthetic scenario generation.
//!
//! Every expert trajectory is produced by rolling an IDM-guided driver along
//! the route through the kinematic bicycle model, so expert futures are
//! dynamically feasible by construction. Generation is fully deterministic:
//! identical (config, seed) pairs produce bit-identical scenarios.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dynamics::{bicycle_step, BicycleParams, ControlCommand};
use crate::error::{Error, Result};
use crate::geom::{dist, Centerline};
use crate::limits::EGO_LENGTH;
use crate::rng::{derive_seed, Rng};
use crate::scenario::{
    AgentTrack, AgentWaypoint, EgoState, Extent, MapPolyline, PolylineKind, Pose, Scenario, DT,
    FUTURE_LEN, HISTORY_LEN, POLYLINE_LEN,
};
use crate::traffic::{idm_acceleration, IdmParams};

/// Scenario families, chosen to mirror urban challenge types at desk scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioFamily {
    Straight,
    LeftTurn,
    RightTurn,
    LaneFollowWithLeader,
    UnprotectedTurn,
}

impl ScenarioFamily {
    pub const ALL: [ScenarioFamily; 5] = [
        ScenarioFamily::Straight,
        ScenarioFamily::LeftTurn,
        ScenarioFamily::RightTurn,
        ScenarioFamily::LaneFollowWithLeader,
        ScenarioFamily::UnprotectedTurn,
    ];
}

impl fmt::Display for ScenarioFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ScenarioFamily::Straight => "straight",
            ScenarioFamily::LeftTurn => "left_turn",
            ScenarioFamily::RightTurn => "right_turn",
            ScenarioFamily::LaneFollowWithLeader => "lane_follow_with_leader",
            ScenarioFamily::UnprotectedTurn => "unprotected_turn",
        };
        f.write_str(s)
    }
}

impl FromStr for ScenarioFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "straight" => Ok(ScenarioFamily::Straight),
            "left_turn" => Ok(ScenarioFamily::LeftTurn),
            "right_turn" => Ok(ScenarioFamily::RightTurn),
            "lane_follow_with_leader" => Ok(ScenarioFamily::LaneFollowWithLeader),
            "unprotected_turn" => Ok(ScenarioFamily::UnprotectedTurn),
            other => Err(Error::InvalidConfig(format!(
                "unknown scenario family `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenConfig {
    pub family: ScenarioFamily,
    /// Ambient agents beyond the ones the family requires.
    pub num_agents: usize,
    /// Speed-limit draw range, m/s.
    pub speed_range: (f64, f64),
    /// Drivable halfwidth per lane, m.
    pub drivable_halfwidth: f64,
    /// Scales all route segment lengths; must be positive.
    pub route_scale: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            family: ScenarioFamily::Straight,
            num_agents: 2,
            speed_range: (6.0, 13.0),
            drivable_halfwidth: 2.0,
            route_scale: 1.0,
        }
    }
}

impl GenConfig {
    fn validate(&self) -> Result<()> {
        if self.route_scale <= 0.0 {
            return Err(Error::InvalidConfig(
                "route_scale must be positive (zero-length route)".into(),
            ));
        }
        if !(self.speed_range.0 > 0.0 && self.speed_range.1 >= self.speed_range.0) {
            return Err(Error::InvalidConfig(format!(
                "speed_range {:?} is not an increasing positive interval",
                self.speed_range
            )));
        }
        if self.num_agents > 12 {
            return Err(Error::InvalidConfig(format!(
                "num_agents {} exceeds the supported 12",
                self.num_agents
            )));
        }
        Ok(())
    }
}

/// Dense polyline builder from line/arc segments, marking logical segment
/// boundaries so each becomes one 20-point map polyline.
struct PathBuilder {
    pts: Vec<(f64, f64)>,
    yaw: f64,
    segment_starts: Vec<usize>,
}

const PATH_STEP: f64 = 0.5;

impl PathBuilder {
    fn new(start: (f64, f64), yaw: f64) -> Self {
        PathBuilder {
            pts: vec![start],
            yaw,
            segment_starts: Vec::new(),
        }
    }

    fn begin_segment(&mut self) {
        self.segment_starts.push(self.pts.len() - 1);
    }

    fn line(&mut self, length: f64) {
        let n = (length / PATH_STEP).ceil().max(1.0) as usize;
        let step = length / n as f64;
        for _ in 0..n {
            let last = *self.pts.last().unwrap();
            self.pts
                .push((last.0 + step * self.yaw.cos(), last.1 + step * self.yaw.sin()));
        }
    }

    /// Circular arc; positive angle turns left.
    fn arc(&mut self, radius: f64, angle: f64) {
        let length = radius * angle.abs();
        let n = (length / PATH_STEP).ceil().max(2.0) as usize;
        let dyaw = angle / n as f64;
        let ds = length / n as f64;
        for _ in 0..n {
            // Chord stepping at the mid-heading keeps the radius accurate.
            let mid = self.yaw + dyaw / 2.0;
            let last = *self.pts.last().unwrap();
            self.pts.push((last.0 + ds * mid.cos(), last.1 + ds * mid.sin()));
            self.yaw += dyaw;
        }
    }

    /// One 20-point polyline per logical segment.
    fn polylines(&self) -> Vec<Vec<(f64, f64)>> {
        let mut out = Vec::new();
        for (i, &start) in self.segment_starts.iter().enumerate() {
            let end = self
                .segment_starts
                .get(i + 1)
                .copied()
                .unwrap_or(self.pts.len() - 1);
            let sub = Centerline::new(self.pts[start..=end].to_vec());
            out.push(sub.resample(POLYLINE_LEN));
        }
        out
    }
}

/// Scripted longitudinal behavior for background agents.
#[derive(Debug, Clone, Copy)]
enum Behavior {
    Cruise,
    /// Brakes at a fixed rate to a stop, starting at `t_start`.
    BrakeToStop { t_start: f64, decel: f64 },
    /// IDM against a recorded leader timeline on the same lane.
    FollowTimeline,
}

struct AgentSpec {
    lane: usize,
    start_s: f64,
    speed: f64,
    behavior: Behavior,
    extent: Extent,
}

/// Total generated timeline: 2 s of history + 8 s of future, inclusive ends.
const GEN_STEPS: usize = HISTORY_LEN + FUTURE_LEN; // 101 samples, t in [-2.0, 8.0]

/// Comfort envelope of the expert driver, with margin under the scoring
/// thresholds. Shared with the expert's log-replay extension.
pub(crate) const EXPERT_MAX_ACCEL: f64 = 1.4;
pub(crate) const EXPERT_MAX_DECEL: f64 = 2.2;
pub(crate) const EXPERT_MAX_JERK_STEP: f64 = 0.3; // m/s^2 change per tick
/// Yielding may brake harder than comfort allows, never past feasibility.
pub(crate) const EXPERT_EMERGENCY_DECEL: f64 = 3.2;
/// Brake onsets stay just inside the comfort-jerk boundary.
pub(crate) const EXPERT_MAX_BRAKE_JERK_STEP: f64 = 0.39;
const EXPERT_MAX_LAT_ACCEL: f64 = 2.6;
const EXPERT_MAX_YAW_RATE: f64 = 0.9;

/// Curvature-limited speed at arc position `s`.
pub(crate) fn expert_curve_speed(route: &Centerline, s: f64) -> f64 {
    let (_, yaw_a) = route.pose_at(s);
    let (_, yaw_b) = route.pose_at(s + 2.0);
    let kappa = (crate::geom::wrap_angle(yaw_b - yaw_a) / 2.0).abs();
    if kappa < 1e-4 {
        f64::INFINITY
    } else {
        ((EXPERT_MAX_LAT_ACCEL / kappa).sqrt()).min(EXPERT_MAX_YAW_RATE / kappa)
    }
}

/// Curvature-anticipating desired speed: the limit, capped by upcoming
/// curvature with braking-distance lookahead.
pub(crate) fn expert_desired_speed(route: &Centerline, s_proj: f64, speed_limit: f64) -> f64 {
    let mut v_desired = speed_limit;
    let mut d = 0.0;
    while d <= 60.0 {
        let vc = expert_curve_speed(route, s_proj + d);
        if vc.is_finite() {
            v_desired = v_desired.min((vc * vc + 2.0 * EXPERT_MAX_DECEL * 0.8 * d).sqrt());
        }
        d += 3.0;
    }
    v_desired
}

/// Pure-pursuit steering rate toward the route.
pub(crate) fn expert_steering(state: &EgoState, route: &Centerline, s_proj: f64, bike: &BicycleParams) -> f64 {
    let lookahead = (0.6 * state.velocity).clamp(2.5, 8.0);
    let (target, _) = route.pose_at(s_proj + lookahead);
    let local = crate::geom::to_frame(target, state.pose.position(), state.pose.yaw);
    let alpha = local.1.atan2(local.0);
    let steer_target = (2.0 * bike.wheelbase * alpha.sin() / lookahead)
        .atan()
        .clamp(-0.95 * bike.max_steer, 0.95 * bike.max_steer);
    ((steer_target - state.steering) / bike.dt).clamp(-0.8, 0.8)
}

struct Layout {
    /// Full-resolution driving lanes agents roll along: 0 = the route,
    /// then one per additional road.
    driving: Vec<Centerline>,
    /// Map polylines (resampled to 20 points; long roads are split into
    /// chained chunks so consecutive points stay within 10 m).
    map_polys: Vec<(Vec<(f64, f64)>, PolylineKind)>,
    /// Indices into `map_polys`, in travel order.
    route_lane_ids: Vec<u32>,
    route: Centerline,
    /// Ego arc-length position on the route at t = -2 s.
    ego_start_s: f64,
    /// Conflict handling for unprotected turns: (route s of conflict,
    /// oncoming agent index, oncoming s of conflict).
    conflict: Option<(f64, usize, f64)>,
    agent_specs: Vec<AgentSpec>,
}

/// Splits a dense polyline into 20-point map chunks no longer than 150 m.
fn map_chunks(points: &[(f64, f64)], kind: PolylineKind) -> Vec<(Vec<(f64, f64)>, PolylineKind)> {
    let line = Centerline::new(points.to_vec());
    let total = line.total_len();
    let n_chunks = (total / 150.0).ceil().max(1.0) as usize;
    let mut out = Vec::with_capacity(n_chunks);
    let mut prev = 0.0;
    for c in 0..n_chunks {
        let end = total * (c + 1) as f64 / n_chunks as f64;
        let pts: Vec<(f64, f64)> = (0..POLYLINE_LEN)
            .map(|i| {
                let s = prev + (end - prev) * i as f64 / (POLYLINE_LEN - 1) as f64;
                line.pose_at(s).0
            })
            .collect();
        out.push((pts, kind));
        prev = end;
    }
    out
}

/// Offset-parallel copy of a centerline; positive offsets go to the left of
/// the travel direction.
fn offset_parallel(line: &Centerline, offset: f64) -> Vec<(f64, f64)> {
    let total = line.total_len();
    let n = ((total / 2.0).ceil() as usize).max(2);
    (0..=n)
        .map(|i| {
            let s = total * i as f64 / n as f64;
            let (p, yaw) = line.pose_at(s);
            (p.0 - offset * yaw.sin(), p.1 + offset * yaw.cos())
        })
        .collect()
}

pub fn generate_scenario(config: &GenConfig, seed: u64) -> Result<Scenario> {
    config.validate()?;
    let mut rng = Rng::new(derive_seed(
        seed,
        config.family as u64 + 1,
        config.num_agents as u64 + 1,
    ));

    let speed_limit = rng.range(config.speed_range.0, config.speed_range.1);
    let layout = build_layout(config, speed_limit, &mut rng)?;

    // Phase 1: roll scripted agents (leaders, oncoming, side traffic).
    let mut timelines: Vec<Vec<AgentWaypoint>> = vec![Vec::new(); layout.agent_specs.len()];
    for (i, spec) in layout.agent_specs.iter().enumerate() {
        if !matches!(spec.behavior, Behavior::FollowTimeline) {
            timelines[i] = roll_scripted(spec, &layout, speed_limit);
        }
    }

    // Phase 2: roll the expert against the scripted agents. Starting speeds
    // straddle the desired speed so the recorded data teaches braking as
    // well as acceleration; an accelerate-only prior turns into closed-loop
    // speed runaway for planners that see their own velocity.
    let v0_high = if config.family == ScenarioFamily::UnprotectedTurn {
        // Yields must stay resolvable from the start speed.
        0.95
    } else {
        1.3
    };
    let ego_v0 = (speed_limit * rng.range(0.4, v0_high)).clamp(1.0, 14.5);
    let expert_states = roll_expert(&layout, &timelines, speed_limit, ego_v0);

    // Phase 3: followers react to the expert's own timeline.
    for (i, spec) in layout.agent_specs.iter().enumerate() {
        if let Behavior::FollowTimeline = spec.behavior {
            timelines[i] = roll_follower(spec, &layout, &expert_states, speed_limit);
        }
    }

    let map: Vec<MapPolyline> = layout
        .map_polys
        .iter()
        .map(|(points, kind)| MapPolyline {
            points: points.clone(),
            kind: *kind,
            speed_limit,
        })
        .collect();

    let agents: Vec<AgentTrack> = layout
        .agent_specs
        .iter()
        .enumerate()
        .map(|(i, spec)| AgentTrack {
            id: i as u32 + 1,
            history: timelines[i][..HISTORY_LEN].to_vec(),
            extent: spec.extent,
            // Same convention as the expert future: sample 0 is the current
            // pose, covering t in [0, 7.9].
            future: timelines[i][HISTORY_LEN - 1..HISTORY_LEN - 1 + FUTURE_LEN]
                .iter()
                .map(|w| w.pose)
                .collect(),
        })
        .collect();

    let ego_history: Vec<EgoState> = expert_states[..HISTORY_LEN].to_vec();
    let expert_future: Vec<Pose> = expert_states[HISTORY_LEN - 1..HISTORY_LEN - 1 + FUTURE_LEN]
        .iter()
        .map(|s| s.pose)
        .collect();

    let scenario = Scenario {
        id: format!("{}-{seed:08x}", config.family),
        map,
        route_ids: layout.route_lane_ids,
        agents,
        ego_history,
        expert_future,
        drivable_halfwidth: config.drivable_halfwidth,
    };
    scenario.validate()?;
    Ok(scenario)
}

fn build_layout(config: &GenConfig, speed_limit: f64, rng: &mut Rng) -> Result<Layout> {
    let scale = config.route_scale;
    // Random global placement for coordinate diversity.
    let origin = (rng.range(-30.0, 30.0), rng.range(-30.0, 30.0));
    let heading = rng.range(-std::f64::consts::PI, std::f64::consts::PI);

    let lane_offset = 3.5;
    let mut driving: Vec<Centerline> = Vec::new();
    let mut map_polys: Vec<(Vec<(f64, f64)>, PolylineKind)> = Vec::new();
    let mut route_lane_ids: Vec<u32> = Vec::new();

    // The route is built in local coordinates (start at origin, heading +x)
    // and then placed globally.
    let place = |p: (f64, f64)| -> (f64, f64) {
        let r = crate::geom::rotate(p, heading);
        (r.0 + origin.0, r.1 + origin.1)
    };

    let mut local_route = PathBuilder::new((0.0, 0.0), 0.0);
    let mut conflict_local: Option<f64> = None;

    // Routes must comfortably cover 15 s of driving plus the 8 s horizon.
    match config.family {
        ScenarioFamily::Straight => {
            local_route.begin_segment();
            local_route.line(140.0 * scale);
            local_route.begin_segment();
            local_route.line(140.0 * scale);
        }
        ScenarioFamily::LeftTurn | ScenarioFamily::UnprotectedTurn => {
            let mut approach = rng.range(52.0, 68.0) * scale;
            if config.family == ScenarioFamily::UnprotectedTurn {
                // Room to resolve the yield from the worst-case approach
                // speed without exceeding the emergency deceleration.
                let stop_distance = speed_limit * speed_limit / (2.0 * 2.0);
                approach = approach.max(36.0 + 2.0 * speed_limit + stop_distance * 0.6);
            }
            let radius = rng.range(10.0, 18.0);
            let angle = rng.range(1.35, 1.75);
            local_route.begin_segment();
            local_route.line(approach);
            local_route.begin_segment();
            if config.family == ScenarioFamily::UnprotectedTurn {
                // Conflict where the turn crosses the oncoming lane.
                let theta = (1.0 - (lane_offset / radius).min(0.95)).acos();
                conflict_local = Some(approach + radius * theta);
            }
            local_route.arc(radius, angle);
            local_route.begin_segment();
            local_route.line(180.0 * scale.max(0.5));
        }
        ScenarioFamily::RightTurn => {
            let approach = rng.range(52.0, 68.0) * scale;
            let radius = rng.range(9.0, 15.0);
            let angle = -rng.range(1.35, 1.75);
            local_route.begin_segment();
            local_route.line(approach);
            local_route.begin_segment();
            local_route.arc(radius, angle);
            local_route.begin_segment();
            local_route.line(180.0 * scale.max(0.5));
        }
        ScenarioFamily::LaneFollowWithLeader => {
            let radius = rng.range(60.0, 120.0);
            let sign = if rng.chance(0.5) { 1.0 } else { -1.0 };
            local_route.begin_segment();
            local_route.line(65.0 * scale);
            local_route.begin_segment();
            local_route.arc(radius, sign * rng.range(0.25, 0.45));
            local_route.begin_segment();
            local_route.line(180.0 * scale.max(0.5));
        }
    }

    let route_polylines = local_route.polylines();
    for poly in &route_polylines {
        let placed: Vec<(f64, f64)> = poly.iter().map(|&p| place(p)).collect();
        route_lane_ids.push(map_polys.len() as u32);
        map_polys.push((placed, PolylineKind::RouteLane));
    }
    // The full-resolution route for expert rolling and agent lanes.
    let route_dense: Vec<(f64, f64)> = {
        let mut pts: Vec<(f64, f64)> = Vec::new();
        for &p in &local_route.pts {
            let placed = place(p);
            if pts.last().map_or(true, |&q| dist(q, placed) > 1e-9) {
                pts.push(placed);
            }
        }
        pts
    };
    let route = Centerline::new(route_dense);
    driving.push(route.clone());

    // Oncoming lane. For non-crossing families it parallels the route in the
    // opposite direction, so it can never intersect the ego's path. For turn
    // families it runs straight along the approach road; left turns cross it,
    // and ambient oncoming agents must spawn past the crossing.
    let turning = matches!(
        config.family,
        ScenarioFamily::LeftTurn | ScenarioFamily::RightTurn | ScenarioFamily::UnprotectedTurn
    );
    let oncoming_lane_idx = driving.len();
    let mut oncoming_cross_s: Option<f64> = None;
    if turning {
        // Long run-up so oncoming cars (and the conflict car's spawn) fit.
        let approach_x = local_route
            .segment_starts
            .get(1)
            .map_or(60.0, |&i| local_route.pts[i].0);
        let onc_start_x = approach_x + 130.0 * scale.max(0.5);
        let onc_len = onc_start_x + 40.0 * scale;
        let mut oncoming =
            PathBuilder::new((onc_start_x, lane_offset), std::f64::consts::PI);
        oncoming.begin_segment();
        oncoming.line(onc_len.min(170.0));
        let placed: Vec<(f64, f64)> = oncoming.pts.iter().map(|&p| place(p)).collect();
        map_polys.extend(map_chunks(&placed, PolylineKind::LaneCenter));
        driving.push(Centerline::new(placed));
        // Where does the (left-turning) route cross y = +3.5? In oncoming
        // coordinates that's measured from its start toward -x.
        if config.family != ScenarioFamily::RightTurn {
            let mut local = Centerline::new(local_route.pts.clone());
            let total = local.total_len();
            let mut cross_x = None;
            let mut s = 0.0;
            while s < total {
                let (p, _) = local.pose_at(s);
                if p.1 >= lane_offset {
                    cross_x = Some(p.0);
                    break;
                }
                s += 0.5;
            }
            let _ = &mut local;
            if let Some(x) = cross_x {
                oncoming_cross_s = Some(onc_start_x - x);
            }
        }
    } else {
        let pts: Vec<(f64, f64)> = offset_parallel(
            &Centerline::new(local_route.pts.clone()),
            lane_offset,
        )
        .into_iter()
        .rev()
        .collect();
        let placed: Vec<(f64, f64)> = pts.iter().map(|&p| place(p)).collect();
        map_polys.extend(map_chunks(&placed, PolylineKind::LaneCenter));
        driving.push(Centerline::new(placed));
    }

    // A same-direction side lane, offset-parallel so it follows the route and
    // never crosses it.
    let side_pts = offset_parallel(&Centerline::new(local_route.pts.clone()), -lane_offset);
    let side_lane_idx = driving.len();
    let placed: Vec<(f64, f64)> = side_pts.iter().map(|&p| place(p)).collect();
    map_polys.extend(map_chunks(&placed, PolylineKind::LaneCenter));
    driving.push(Centerline::new(placed));

    // Ego placement: 2 s before the current frame, far enough into the route
    // that followers behind the ego are still on the mapped road, and spread
    // across route phases so training snapshots cover approach, turn, and
    // exit states (closed-loop rollouts visit all of them).
    let route_total = route.total_len();
    let ego_start_s = match config.family {
        ScenarioFamily::Straight | ScenarioFamily::LaneFollowWithLeader => {
            rng.range(28.0, (route_total - 180.0).max(29.0))
        }
        ScenarioFamily::LeftTurn | ScenarioFamily::RightTurn => {
            // Anywhere from deep approach to mid-turn.
            rng.range(28.0, (route_total - 185.0).max(29.0))
        }
        ScenarioFamily::UnprotectedTurn => {
            // Keep the yield ahead of the ego.
            let stop_s = conflict_local.unwrap_or(route_total * 0.4);
            rng.range(28.0, (stop_s - 28.0).max(29.0))
        }
    };

    // Agents.
    let mut agent_specs: Vec<AgentSpec> = Vec::new();
    let mut conflict: Option<(f64, usize, f64)> = None;
    let car = |rng: &mut Rng| Extent {
        length: rng.range(4.2, 5.0),
        width: rng.range(1.75, 1.95),
    };

    match config.family {
        ScenarioFamily::LaneFollowWithLeader => {
            // The defining leader ahead of the ego on the route.
            let gap = rng.range(16.0, 34.0);
            let behavior = if rng.chance(0.5) {
                Behavior::BrakeToStop {
                    t_start: rng.range(0.5, 3.5),
                    decel: rng.range(1.6, 2.6),
                }
            } else {
                Behavior::Cruise
            };
            let speed = speed_limit * rng.range(0.35, 0.75);
            agent_specs.push(AgentSpec {
                lane: 0, // the route
                start_s: ego_start_s + gap,
                speed,
                behavior,
                extent: car(rng),
            });
        }
        ScenarioFamily::UnprotectedTurn => {
            // Oncoming car timed to cross the conflict point within the
            // planning horizon.
            let c_local = conflict_local.expect("unprotected turn has a conflict");
            let v_onc = speed_limit * rng.range(0.7, 1.0);
            let t_pass = rng.range(2.5, 6.5);
            // Oncoming lane runs from x = extent-20 backwards; the conflict
            // sits where the route crosses y = +3.5. Its local x there is the
            // turn center x = approach; express it as oncoming arc length.
            let approach = c_local; // conflict measured along the route
            let _ = approach;
            // Conflict x in local coordinates: end of approach segment + the
            // lateral cut happens at x = approach_x + radius*sin(theta); we
            // recover it by direct projection below instead.
            let placeholder_s = v_onc * t_pass; // distance from conflict at t = -2+2
            agent_specs.push(AgentSpec {
                lane: oncoming_lane_idx,
                start_s: placeholder_s, // fixed up after projection
                speed: v_onc,
                behavior: Behavior::Cruise,
                extent: car(rng),
            });
            conflict = Some((c_local, agent_specs.len() - 1, 0.0));
        }
        _ => {}
    }

    // Ambient agents: follower behind the ego, oncoming cruiser, slow car far
    // ahead on the route, side-lane cruiser.
    for k in 0..config.num_agents {
        let extent = car(rng);
        match k % 4 {
            0 => agent_specs.push(AgentSpec {
                lane: 0,
                start_s: ego_start_s - rng.range(14.0, 26.0),
                speed: speed_limit * rng.range(0.4, 0.7),
                behavior: Behavior::FollowTimeline,
                extent,
            }),
            1 => {
                // Left-crossing families: spawn past the crossing so ambient
                // oncoming traffic can never meet the ego's path.
                let start_s = match oncoming_cross_s {
                    Some(cross) => cross + rng.range(8.0, 40.0),
                    None => rng.range(5.0, 40.0),
                };
                agent_specs.push(AgentSpec {
                    lane: oncoming_lane_idx,
                    start_s,
                    speed: speed_limit * rng.range(0.6, 1.0),
                    behavior: Behavior::Cruise,
                    extent,
                });
            }
            2 => agent_specs.push(AgentSpec {
                lane: side_lane_idx,
                start_s: rng.range(5.0, 50.0),
                speed: speed_limit * rng.range(0.5, 0.9),
                behavior: Behavior::Cruise,
                extent,
            }),
            _ => agent_specs.push(AgentSpec {
                lane: 0,
                start_s: ego_start_s + rng.range(55.0, 85.0),
                speed: speed_limit * rng.range(0.5, 0.8),
                behavior: Behavior::Cruise,
                extent,
            }),
        }
    }

    // Resolve the conflict bookkeeping now that lanes are final: find the
    // oncoming-lane arc length at the conflict point.
    if let Some((c_route_s, agent_idx, _)) = conflict {
        let conflict_pos = route.pose_at(c_route_s).0;
        let onc_lane = &driving[oncoming_lane_idx];
        let (onc_s, _, _) = onc_lane.project(conflict_pos);
        // Start the oncoming car so it reaches the conflict at its draw time.
        let spec = &mut agent_specs[agent_idx];
        // The draw encoded the desired pass time (seconds after t = 0) as
        // start_s / speed; generation starts 2 s earlier.
        let t_pass = spec.start_s / spec.speed.max(0.1);
        spec.start_s = (onc_s - spec.speed * (t_pass + 2.0)).max(1.0);
        conflict = Some((c_route_s, agent_idx, onc_s));
    }

    Ok(Layout {
        driving,
        map_polys,
        route_lane_ids,
        route,
        ego_start_s,
        conflict,
        agent_specs,
    })
}

/// Driving lane used by an agent spec (0 is the route).
fn agent_lane<'a>(spec: &AgentSpec, layout: &'a Layout) -> &'a Centerline {
    &layout.driving[spec.lane]
}

fn roll_scripted(spec: &AgentSpec, layout: &Layout, _speed_limit: f64) -> Vec<AgentWaypoint> {
    let lane = agent_lane(spec, layout);
    let mut out = Vec::with_capacity(GEN_STEPS);
    let mut s = spec.start_s;
    let mut v = spec.speed;
    for k in 0..GEN_STEPS {
        let t = -2.0 + k as f64 * DT;
        let (pos, yaw) = lane.pose_at(s);
        out.push(AgentWaypoint {
            pose: Pose::new(pos.0, pos.1, yaw),
            velocity: v,
        });
        let accel = match spec.behavior {
            Behavior::Cruise => 0.0,
            Behavior::BrakeToStop { t_start, decel } => {
                if t >= t_start && v > 0.0 {
                    -decel
                } else {
                    0.0
                }
            }
            Behavior::FollowTimeline => 0.0,
        };
        s += v * DT;
        v = (v + accel * DT).max(0.0);
    }
    out
}

/// Followers run IDM against the expert's already-rolled trajectory.
fn roll_follower(
    spec: &AgentSpec,
    layout: &Layout,
    expert: &[EgoState],
    speed_limit: f64,
) -> Vec<AgentWaypoint> {
    let lane = agent_lane(spec, layout);
    let params = IdmParams::with_v0(spec.speed.min(speed_limit));
    let mut out = Vec::with_capacity(GEN_STEPS);
    let mut s = spec.start_s;
    let mut v = spec.speed;
    for k in 0..GEN_STEPS {
        let (pos, yaw) = lane.pose_at(s);
        out.push(AgentWaypoint {
            pose: Pose::new(pos.0, pos.1, yaw),
            velocity: v,
        });
        let ego_state = &expert[k.min(expert.len() - 1)];
        let (ego_s, _, _) = lane.project(ego_state.pose.position());
        let gap = ego_s - s - (spec.extent.length + EGO_LENGTH) / 2.0;
        let accel = if gap > 0.0 && ego_s - s < 100.0 {
            idm_acceleration(v, Some(gap.max(0.01)), v - ego_state.velocity, &params)
        } else {
            idm_acceleration(v, None, 0.0, &params)
        };
        s += v * DT;
        v = (v + accel * DT).max(0.0);
    }
    out
}

/// Pure-pursuit steering toward the route plus IDM longitudinal control
/// with curvature-aware speed caps and jerk-limited acceleration, integrated
/// through the bicycle model. The resulting expert stays inside the comfort
/// envelope the closed-loop score checks.
fn roll_expert(
    layout: &Layout,
    timelines: &[Vec<AgentWaypoint>],
    speed_limit: f64,
    v0: f64,
) -> Vec<EgoState> {
    let bike = BicycleParams::default();
    let route = &layout.route;

    let max_accel = EXPERT_MAX_ACCEL;
    let max_decel = EXPERT_MAX_DECEL;
    let max_jerk_step = EXPERT_MAX_JERK_STEP;

    let (start_pos, start_yaw) = route.pose_at(layout.ego_start_s);
    let mut state = EgoState {
        pose: Pose::new(start_pos.0, start_pos.1, start_yaw),
        velocity: v0.min(speed_limit),
        acceleration: 0.0,
        steering: 0.0,
        timestamp: -2.0,
    };
    let mut prev_accel = 0.0;

    let mut out = Vec::with_capacity(GEN_STEPS);
    for k in 0..GEN_STEPS {
        out.push(state);

        let (s_proj, _, _) = route.project(state.pose.position());

        // Steering: pure pursuit on the route centerline.
        let steer_rate = expert_steering(&state, route, s_proj, &bike);

        let v_desired = expert_desired_speed(route, s_proj, speed_limit);
        let idm = IdmParams::with_v0(v_desired.max(1.5));

        // Longitudinal: IDM against the nearest in-lane leader and, for
        // unprotected turns, a virtual stop point at the conflict until the
        // oncoming car has cleared it.
        let mut accel = idm_acceleration(state.velocity, None, 0.0, &idm);
        for (i, timeline) in timelines.iter().enumerate() {
            if timeline.is_empty() {
                continue;
            }
            let w = &timeline[k];
            let (sp, lat, _) = route.project(w.pose.position());
            if lat.abs() <= 2.0 && sp > s_proj && sp - s_proj <= 100.0 {
                let gap = (sp - s_proj - (layout.agent_specs[i].extent.length + EGO_LENGTH) / 2.0)
                    .max(0.01);
                accel = accel.min(idm_acceleration(
                    state.velocity,
                    Some(gap),
                    state.velocity - w.velocity,
                    &idm,
                ));
            }
        }
        let mut emergency = false;
        if let Some((conflict_s, onc_idx, onc_conflict_s)) = layout.conflict {
            let timeline = &timelines[onc_idx];
            if !timeline.is_empty() {
                let w = &timeline[k];
                let onc_lane = &layout.driving[layout.agent_specs[onc_idx].lane];
                let (onc_s, _, _) = onc_lane.project(w.pose.position());
                let cleared = onc_s > onc_conflict_s + 7.0;
                let stop_s = conflict_s - 5.0;
                let gap = stop_s - s_proj - EGO_LENGTH / 2.0;
                if !cleared && gap > 0.3 {
                    let hold = idm_acceleration(
                        state.velocity,
                        Some(gap.max(0.01)),
                        state.velocity,
                        &idm,
                    );
                    if hold < accel {
                        accel = hold;
                        emergency = hold < -max_decel;
                    }
                }
            }
        }

        // Comfort shaping: clamp magnitude, then rate-limit the change.
        // Yields may brake past the comfort decel; never past feasibility.
        let floor = if emergency { EXPERT_EMERGENCY_DECEL } else { max_decel };
        let accel = accel.clamp(-floor, max_accel);
        let brake_step = if accel < prev_accel { EXPERT_MAX_BRAKE_JERK_STEP } else { max_jerk_step };
        let accel = prev_accel + (accel - prev_accel).clamp(-brake_step, max_jerk_step);
        // Ease the brake out as the car reaches standstill; an instant
        // release at v = 0 is a jerk spike.
        let accel = accel.max(-(1.6 * state.velocity + 0.05));
        prev_accel = accel;

        let cmd = ControlCommand::new(accel, steer_rate);
        state = bicycle_step(&state, cmd, &bike);
        state.velocity = state.velocity.max(0.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::derive_kinematics;
    use crate::scenario::scenario_to_json;

    #[test]
    fn straight_no_agents_expert_follows_lane_center() {
        let cfg = GenConfig {
            family: ScenarioFamily::Straight,
            num_agents: 0,
            ..GenConfig::default()
        };
        let sc = generate_scenario(&cfg, 7).unwrap();
        let route = sc.route_centerline();
        for p in &sc.expert_future {
            assert!(route.min_distance(p.position()) < 0.1);
        }
        assert!(sc.agents.is_empty());
    }

    #[test]
    fn generation_is_bit_deterministic() {
        let cfg = GenConfig {
            family: ScenarioFamily::LeftTurn,
            ..GenConfig::default()
        };
        let a = generate_scenario(&cfg, 3).unwrap();
        let b = generate_scenario(&cfg, 3).unwrap();
        assert_eq!(scenario_to_json(&a), scenario_to_json(&b));
        let c = generate_scenario(&cfg, 4).unwrap();
        assert_ne!(scenario_to_json(&a), scenario_to_json(&c));
    }

    #[test]
    fn leader_scenario_has_no_expert_collision() {
        let cfg = GenConfig {
            family: ScenarioFamily::LaneFollowWithLeader,
            num_agents: 1,
            ..GenConfig::default()
        };
        for seed in 0..20 {
            let sc = generate_scenario(&cfg, seed).unwrap();
            // Exhaustive per-step footprint check over the logged future.
            let leader = &sc.agents[0];
            for (k, ego_pose) in sc.expert_future.iter().enumerate() {
                let ego = EgoState {
                    pose: *ego_pose,
                    velocity: 0.0,
                    acceleration: 0.0,
                    steering: 0.0,
                    timestamp: 0.0,
                };
                let leader_pose = leader.future[k];
                assert!(
                    !ego.footprint().overlaps(&leader.footprint_at(&leader_pose)),
                    "seed {seed}: collision at step {k}"
                );
            }
        }
    }

    #[test]
    fn expert_is_bicycle_feasible() {
        for (f_idx, family) in ScenarioFamily::ALL.iter().enumerate() {
            let cfg = GenConfig {
                family: *family,
                ..GenConfig::default()
            };
            for seed in 0..8 {
                let sc = generate_scenario(&cfg, seed + 100 * f_idx as u64).unwrap();
                let derived = derive_kinematics(&sc.expert_future, DT, 3.0).unwrap();
                for d in &derived {
                    assert!(
                        d.acceleration.abs() <= 4.0 + 1e-6,
                        "{family} seed {seed}: accel {}",
                        d.acceleration
                    );
                    assert!(
                        d.steering.abs() <= 0.6 + 1e-9,
                        "{family} seed {seed}: steer {}",
                        d.steering
                    );
                }
            }
        }
    }

    #[test]
    fn zero_route_scale_is_rejected() {
        let cfg = GenConfig {
            route_scale: 0.0,
            ..GenConfig::default()
        };
        let err = generate_scenario(&cfg, 1).unwrap_err();
        assert!(err.to_string().contains("zero-length route"));
    }

    #[test]
    fn all_families_validate_across_seeds() {
        for family in ScenarioFamily::ALL {
            let cfg = GenConfig {
                family,
                num_agents: 3,
                ..GenConfig::default()
            };
            for seed in 0..12 {
                let sc = generate_scenario(&cfg, seed).unwrap();
                sc.validate().unwrap();
                assert!(!sc.agents.is_empty());
            }
        }
    }

    #[test]
    fn unprotected_turn_expert_yields_to_oncoming() {
        let cfg = GenConfig {
            family: ScenarioFamily::UnprotectedTurn,
            num_agents: 0,
            ..GenConfig::default()
        };
        let mut any_slowdown = false;
        for seed in 0..10 {
            let sc = generate_scenario(&cfg, seed).unwrap();
            let derived = derive_kinematics(&sc.expert_future, DT, 3.0).unwrap();
            let vmin = derived
                .iter()
                .map(|s| s.velocity)
                .fold(f64::INFINITY, f64::min);
            let v0 = derived[0].velocity;
            if vmin < 0.5 * v0 {
                any_slowdown = true;
            }
            // Never collides with the oncoming car.
            let onc = &sc.agents[0];
            for (k, ego_pose) in sc.expert_future.iter().enumerate() {
                let ego = EgoState {
                    pose: *ego_pose,
                    velocity: 0.0,
                    acceleration: 0.0,
                    steering: 0.0,
                    timestamp: 0.0,
                };
                assert!(
                    !ego.footprint().overlaps(&onc.footprint_at(&onc.future[k])),
                    "seed {seed}: conflict collision at step {k}"
                );
            }
        }
        assert!(any_slowdown, "no seed produced a yielding expert");
    }
}
