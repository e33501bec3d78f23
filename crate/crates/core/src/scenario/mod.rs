//! Scenario data model, ego-centric normalization, and file I/O.
//!
//! A [`Scenario`] is the unit of benchmarking: map polylines, a route, agent
//! tracks with 2 s of history and 8 s of future, 21 ego history states, and
//! the 8 s expert trajectory the planner imitates. Scenario files are single
//! JSON documents (`*.scenario.json`) with numbers at full double precision.

mod gen;

pub use gen::{generate_scenario, GenConfig, ScenarioFamily};

pub(crate) mod gen_driver {
    pub(crate) use super::gen::{
        expert_desired_speed, expert_steering, EXPERT_EMERGENCY_DECEL, EXPERT_MAX_ACCEL,
        EXPERT_MAX_BRAKE_JERK_STEP, EXPERT_MAX_DECEL, EXPERT_MAX_JERK_STEP,
    };
}

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{dist, to_frame, wrap_angle, Centerline, Obb};
use crate::limits::{EGO_LENGTH, EGO_WIDTH, MAX_STEER, MIN_VELOCITY};

/// Simulation tick, seconds.
pub const DT: f64 = 0.1;
/// Ego/agent history length (2 s at 10 Hz, last sample = current).
pub const HISTORY_LEN: usize = 21;
/// Planning horizon length (8 s at 10 Hz, first sample = current).
pub const FUTURE_LEN: usize = 80;
/// Points per map polyline.
pub const POLYLINE_LEN: usize = 20;
/// Agent cap for feature extraction (nearest first).
pub const MAX_AGENT_TOKENS: usize = 16;
/// Map polyline cap for feature extraction.
pub const MAX_MAP_TOKENS: usize = 32;

/// Planar pose. `yaw` is kept wrapped in (-pi, pi].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Pose {
            x,
            y,
            yaw: wrap_angle(yaw),
        }
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x, self.y)
    }

    pub fn distance_to(&self, other: &Pose) -> f64 {
        dist(self.position(), other.position())
    }

    /// Expresses this pose in the given frame.
    pub fn in_frame(&self, frame: &Pose) -> Pose {
        let (x, y) = to_frame(self.position(), frame.position(), frame.yaw);
        Pose {
            x,
            y,
            yaw: wrap_angle(self.yaw - frame.yaw),
        }
    }

    /// Maps a pose expressed in `frame` back to global coordinates.
    pub fn from_frame(&self, frame: &Pose) -> Pose {
        let (x, y) = crate::geom::from_frame(self.position(), frame.position(), frame.yaw);
        Pose {
            x,
            y,
            yaw: wrap_angle(self.yaw + frame.yaw),
        }
    }
}

/// Full kinematic state of the ego vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub pose: Pose,
    /// Longitudinal velocity, m/s.
    pub velocity: f64,
    /// Longitudinal acceleration, m/s^2.
    pub acceleration: f64,
    /// Steering angle, rad.
    pub steering: f64,
    /// Seconds; 0 at the current frame.
    pub timestamp: f64,
}

impl EgoState {
    pub fn footprint(&self) -> Obb {
        Obb {
            center: self.pose.position(),
            yaw: self.pose.yaw,
            length: EGO_LENGTH,
            width: EGO_WIDTH,
        }
    }
}

/// Vehicle footprint dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub length: f64,
    pub width: f64,
}

/// One observed agent sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentWaypoint {
    pub pose: Pose,
    pub velocity: f64,
}

/// A tracked background agent: 21 history samples at 0.1 s (last = current)
/// and an 80-sample future used as ground truth for the prediction head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub id: u32,
    pub history: Vec<AgentWaypoint>,
    pub extent: Extent,
    pub future: Vec<Pose>,
}

impl AgentTrack {
    pub fn current(&self) -> &AgentWaypoint {
        self.history.last().expect("agent history non-empty")
    }

    pub fn footprint_at(&self, pose: &Pose) -> Obb {
        Obb {
            center: pose.position(),
            yaw: pose.yaw,
            length: self.extent.length,
            width: self.extent.width,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolylineKind {
    LaneCenter,
    LaneBoundary,
    RouteLane,
}

/// A map polyline: 20 points, a kind, and the lane speed limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapPolyline {
    pub points: Vec<(f64, f64)>,
    pub kind: PolylineKind,
    /// m/s.
    pub speed_limit: f64,
}

impl MapPolyline {
    pub fn centerline(&self) -> Centerline {
        Centerline::new(self.points.clone())
    }
}

/// A complete benchmark scenario. `route_ids` index into `map` in travel
/// order and must form a connected chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub map: Vec<MapPolyline>,
    pub route_ids: Vec<u32>,
    pub agents: Vec<AgentTrack>,
    pub ego_history: Vec<EgoState>,
    pub expert_future: Vec<Pose>,
    pub drivable_halfwidth: f64,
}

impl Scenario {
    pub fn current_ego(&self) -> &EgoState {
        self.ego_history.last().expect("ego history non-empty")
    }

    /// Speed limit along the route (all route polylines share one).
    pub fn speed_limit(&self) -> f64 {
        self.route_ids
            .first()
            .map(|&i| self.map[i as usize].speed_limit)
            .unwrap_or(f64::INFINITY)
    }

    /// Concatenated route centerline, de-duplicating the joint points.
    pub fn route_centerline(&self) -> Centerline {
        let mut pts: Vec<(f64, f64)> = Vec::new();
        for &id in &self.route_ids {
            for &p in &self.map[id as usize].points {
                if pts.last().map_or(true, |&q| dist(q, p) > 1e-9) {
                    pts.push(p);
                }
            }
        }
        Centerline::new(pts)
    }

    /// Checks every structural invariant; returns a descriptive error on the
    /// first violation.
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| -> Result<()> {
            Err(Error::InvalidScenario {
                id: self.id.clone(),
                reason,
            })
        };

        if self.route_ids.is_empty() {
            return fail("empty route".into());
        }
        for &id in &self.route_ids {
            if id as usize >= self.map.len() {
                return fail(format!("route id {id} out of range"));
            }
        }
        if self.ego_history.len() != HISTORY_LEN {
            return fail(format!(
                "ego history has {} samples, expected {HISTORY_LEN}",
                self.ego_history.len()
            ));
        }
        for w in self.ego_history.windows(2) {
            let step = w[1].timestamp - w[0].timestamp;
            if !((step - DT).abs() < 1e-6) {
                return fail(format!("ego history timestamps step {step}, expected {DT}"));
            }
        }
        for (i, s) in self.ego_history.iter().enumerate() {
            if s.steering.abs() > MAX_STEER + 1e-9 {
                return fail(format!("ego history[{i}] steering {} over limit", s.steering));
            }
            if s.velocity < MIN_VELOCITY - 1e-9 {
                return fail(format!("ego history[{i}] velocity {} under limit", s.velocity));
            }
        }
        if self.expert_future.len() != FUTURE_LEN {
            return fail(format!(
                "expert future has {} samples, expected {FUTURE_LEN}",
                self.expert_future.len()
            ));
        }
        let gap = self.current_ego().pose.distance_to(&self.expert_future[0]);
        if gap >= 0.1 {
            return fail(format!(
                "expert future starts {gap:.3} m from the current ego pose"
            ));
        }
        for (i, poly) in self.map.iter().enumerate() {
            if poly.points.len() < 2 {
                return fail(format!("polyline {i} has fewer than 2 points"));
            }
            for w in poly.points.windows(2) {
                if dist(w[0], w[1]) > 10.0 {
                    return fail(format!("polyline {i} has a gap over 10 m"));
                }
            }
        }
        for w in self.route_ids.windows(2) {
            let a = &self.map[w[0] as usize];
            let b = &self.map[w[1] as usize];
            let joint = dist(*a.points.last().unwrap(), b.points[0]);
            if joint > 1.0 {
                return fail(format!(
                    "route polylines {} and {} are {joint:.2} m apart",
                    w[0], w[1]
                ));
            }
        }
        for agent in &self.agents {
            if agent.history.len() != HISTORY_LEN {
                return fail(format!(
                    "agent {} history has {} samples, expected {HISTORY_LEN}",
                    agent.id,
                    agent.history.len()
                ));
            }
            if agent.future.len() != FUTURE_LEN {
                return fail(format!(
                    "agent {} future has {} samples, expected {FUTURE_LEN}",
                    agent.id,
                    agent.future.len()
                ));
            }
        }
        Ok(())
    }

    /// View of the scene at t = 0, as the simulator would present it.
    pub fn snapshot(&self) -> SceneSnapshot<'_> {
        SceneSnapshot {
            ego: *self.current_ego(),
            ego_history: self.ego_history.clone(),
            agents: self
                .agents
                .iter()
                .map(|a| AgentSnapshot {
                    id: a.id,
                    extent: a.extent,
                    history: a.history.clone(),
                })
                .collect(),
            map: &self.map,
            route_ids: &self.route_ids,
            drivable_halfwidth: self.drivable_halfwidth,
        }
    }

    fn wrap_all_yaws(&mut self) {
        for s in &mut self.ego_history {
            s.pose.yaw = wrap_angle(s.pose.yaw);
        }
        for p in &mut self.expert_future {
            p.yaw = wrap_angle(p.yaw);
        }
        for a in &mut self.agents {
            for w in &mut a.history {
                w.pose.yaw = wrap_angle(w.pose.yaw);
            }
            for p in &mut a.future {
                p.yaw = wrap_angle(p.yaw);
            }
        }
    }
}

/// A live view of the scene at some simulation time: what feature extraction
/// and the planners see.
#[derive(Debug, Clone)]
pub struct SceneSnapshot<'a> {
    pub ego: EgoState,
    /// 21 samples, last = current.
    pub ego_history: Vec<EgoState>,
    pub agents: Vec<AgentSnapshot>,
    pub map: &'a [MapPolyline],
    pub route_ids: &'a [u32],
    pub drivable_halfwidth: f64,
}

#[derive(Debug, Clone)]
pub struct AgentSnapshot {
    pub id: u32,
    pub extent: Extent,
    /// 21 samples, last = current.
    pub history: Vec<AgentWaypoint>,
}

impl AgentSnapshot {
    pub fn current(&self) -> &AgentWaypoint {
        self.history.last().expect("agent history non-empty")
    }
}

/// Per-sample agent feature row: x, y, cos(yaw), sin(yaw), v.
pub type AgentFeatureRow = [f64; 5];
/// Per-point map feature row: x, y, on-route flag, speed limit.
pub type MapFeatureRow = [f64; 4];

/// Scene features rigidly transformed into a target frame.
///
/// The ego position components are exactly (0, 0) and the yaw exactly 0 when
/// the target frame is the ego's own current pose.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedFeatures {
    /// x, y, yaw, velocity, acceleration, steering in the target frame.
    pub ego_state_vector: [f64; 6],
    /// Ego past motion, 21 rows (same layout as agent rows).
    pub ego_history: Vec<AgentFeatureRow>,
    /// Ids of the agents kept (nearest-first), aligned with `agent_tensors`.
    pub agent_ids: Vec<u32>,
    /// Per-agent 21-row history tensors.
    pub agent_tensors: Vec<Vec<AgentFeatureRow>>,
    /// Per-polyline 20-row tensors.
    pub map_tensors: Vec<Vec<MapFeatureRow>>,
    /// Validity flags for the agent slots.
    pub agent_mask: Vec<bool>,
    /// Validity flags for the map slots.
    pub map_mask: Vec<bool>,
}

fn waypoint_row(pose: &Pose, velocity: f64, frame: &Pose) -> AgentFeatureRow {
    let p = pose.in_frame(frame);
    [p.x, p.y, p.yaw.cos(), p.yaw.sin(), velocity]
}

/// Rigidly transforms every coordinate of the snapshot into `frame`.
pub fn normalize_to_frame(snap: &SceneSnapshot<'_>, frame: &Pose) -> NormalizedFeatures {
    let ego_pose = snap.ego.pose.in_frame(frame);
    let ego_state_vector = [
        ego_pose.x,
        ego_pose.y,
        ego_pose.yaw,
        snap.ego.velocity,
        snap.ego.acceleration,
        snap.ego.steering,
    ];

    let ego_history = snap
        .ego_history
        .iter()
        .map(|s| waypoint_row(&s.pose, s.velocity, frame))
        .collect();

    // Nearest agents first (distance to the frame origin), ties by id.
    let mut order: Vec<usize> = (0..snap.agents.len()).collect();
    let key = |i: usize| {
        let a = &snap.agents[i];
        dist(a.current().pose.position(), frame.position())
    };
    order.sort_by(|&a, &b| {
        key(a)
            .partial_cmp(&key(b))
            .unwrap()
            .then(snap.agents[a].id.cmp(&snap.agents[b].id))
    });
    order.truncate(MAX_AGENT_TOKENS);

    let mut agent_ids = Vec::with_capacity(order.len());
    let mut agent_tensors = Vec::with_capacity(order.len());
    for &i in &order {
        let a = &snap.agents[i];
        agent_ids.push(a.id);
        agent_tensors.push(
            a.history
                .iter()
                .map(|w| waypoint_row(&w.pose, w.velocity, frame))
                .collect(),
        );
    }

    let mut poly_order: Vec<usize> = (0..snap.map.len()).collect();
    if snap.map.len() > MAX_MAP_TOKENS {
        poly_order.sort_by(|&a, &b| {
            let da = snap.map[a].centerline().min_distance(frame.position());
            let db = snap.map[b].centerline().min_distance(frame.position());
            da.partial_cmp(&db).unwrap().then(a.cmp(&b))
        });
        poly_order.truncate(MAX_MAP_TOKENS);
        poly_order.sort_unstable();
    }

    let map_tensors: Vec<Vec<MapFeatureRow>> = poly_order
        .iter()
        .map(|&i| {
            let poly = &snap.map[i];
            let on_route = if snap.route_ids.contains(&(i as u32)) || poly.kind == PolylineKind::RouteLane
            {
                1.0
            } else {
                0.0
            };
            poly.points
                .iter()
                .map(|&p| {
                    let q = to_frame(p, frame.position(), frame.yaw);
                    [q.0, q.1, on_route, poly.speed_limit]
                })
                .collect()
        })
        .collect();

    let agent_mask = vec![true; agent_tensors.len()];
    let map_mask = vec![true; map_tensors.len()];

    NormalizedFeatures {
        ego_state_vector,
        ego_history,
        agent_ids,
        agent_tensors,
        map_tensors,
        agent_mask,
        map_mask,
    }
}

/// Spec-surface convenience: normalizes the scenario's t = 0 snapshot.
pub fn normalize_scenario(scenario: &Scenario, frame: &Pose) -> NormalizedFeatures {
    normalize_to_frame(&scenario.snapshot(), frame)
}

/// Re-expresses a pose sequence in a target frame (used for training
/// targets).
pub fn poses_in_frame(poses: &[Pose], frame: &Pose) -> Vec<Pose> {
    poses.iter().map(|p| p.in_frame(frame)).collect()
}

/// Serializes a scenario to a JSON string (full double precision).
pub fn scenario_to_json(scenario: &Scenario) -> String {
    serde_json::to_string_pretty(scenario).expect("scenario serialization cannot fail")
}

pub fn save_scenario(scenario: &Scenario, path: &Path) -> Result<()> {
    std::fs::write(path, scenario_to_json(scenario))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Loads and validates a scenario. Yaw values are wrapped into (-pi, pi] on
/// load; structural violations are reported with field context.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    scenario_from_json(&text, &path.display().to_string())
}

pub fn scenario_from_json(text: &str, origin: &str) -> Result<Scenario> {
    let mut scenario: Scenario = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: origin.to_string(),
        detail: e.to_string(),
    })?;
    scenario.wrap_all_yaws();
    scenario.validate()?;
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn sample_scenario() -> Scenario {
        generate_scenario(
            &GenConfig {
                family: ScenarioFamily::LeftTurn,
                num_agents: 2,
                speed_range: (6.0, 10.0),
                ..GenConfig::default()
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn snapshot_normalized_to_own_pose_is_centered() {
        let sc = sample_scenario();
        let feats = normalize_scenario(&sc, &sc.current_ego().pose);
        assert_eq!(feats.ego_state_vector[0], 0.0);
        assert_eq!(feats.ego_state_vector[1], 0.0);
        assert_eq!(feats.ego_state_vector[2], 0.0);
        // Newest history row coincides with the origin.
        let last = feats.ego_history.last().unwrap();
        assert!(last[0].abs() < 1e-12 && last[1].abs() < 1e-12);
    }

    #[test]
    fn normalization_is_se2_equivariant() {
        let sc = sample_scenario();
        let frame = sc.current_ego().pose;
        let base = normalize_to_frame(&sc.snapshot(), &frame);

        // Apply a rigid transform to the whole scene and the frame together.
        let t = Pose::new(13.0, -4.0, 0.83);
        let mut moved = sc.clone();
        let map_pose = |p: &mut Pose| *p = p.from_frame(&t);
        for s in &mut moved.ego_history {
            map_pose(&mut s.pose);
        }
        for p in &mut moved.expert_future {
            map_pose(p);
        }
        for a in &mut moved.agents {
            for w in &mut a.history {
                map_pose(&mut w.pose);
            }
            for p in &mut a.future {
                map_pose(p);
            }
        }
        for poly in &mut moved.map {
            for pt in poly.points.iter_mut() {
                *pt = crate::geom::from_frame(*pt, t.position(), t.yaw);
            }
        }
        let moved_frame = frame.from_frame(&t);
        let transformed = normalize_to_frame(&moved.snapshot(), &moved_frame);

        for (a, b) in base
            .ego_state_vector
            .iter()
            .zip(transformed.ego_state_vector.iter())
        {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        for (ra, rb) in base.ego_history.iter().zip(&transformed.ego_history) {
            for (a, b) in ra.iter().zip(rb.iter()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        for (ta, tb) in base.agent_tensors.iter().zip(&transformed.agent_tensors) {
            for (ra, rb) in ta.iter().zip(tb) {
                for (a, b) in ra.iter().zip(rb.iter()) {
                    assert!((a - b).abs() < 1e-9);
                }
            }
        }
        for (ta, tb) in base.map_tensors.iter().zip(&transformed.map_tensors) {
            for (ra, rb) in ta.iter().zip(tb) {
                for (a, b) in ra.iter().zip(rb.iter()) {
                    assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn lateral_frame_offset_shifts_agent_coordinates() {
        let sc = sample_scenario();
        let frame = sc.current_ego().pose;
        let base = normalize_to_frame(&sc.snapshot(), &frame);

        // Frame moved +1 m laterally (left in the frame's own axes).
        let offset = Pose::new(0.0, 1.0, 0.0).from_frame(&frame);
        let shifted = normalize_to_frame(&sc.snapshot(), &offset);

        // Brute-force oracle: every transformed y drops by exactly 1.
        for (ta, tb) in base.agent_tensors.iter().zip(&shifted.agent_tensors) {
            for (ra, rb) in ta.iter().zip(tb) {
                assert!((rb[1] - (ra[1] - 1.0)).abs() < 1e-9);
                assert!((rb[0] - ra[0]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn save_load_round_trip() {
        let sc = sample_scenario();
        let dir = std::env::temp_dir().join(format!("planlab-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.scenario.json");
        save_scenario(&sc, &path).unwrap();
        let loaded = load_scenario(&path).unwrap();
        assert_eq!(sc, loaded);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let sc = sample_scenario();
        let text = scenario_to_json(&sc);
        let cut = &text[..text.len() / 2];
        let err = scenario_from_json(cut, "truncated.json").unwrap_err();
        match err {
            Error::Parse { path, .. } => assert_eq!(path, "truncated.json"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_yaw_is_wrapped_on_load() {
        let mut sc = sample_scenario();
        // Push one yaw out of range, serialize, reload.
        sc.expert_future[40].yaw = 4.0;
        let text = scenario_to_json(&sc);
        let loaded = scenario_from_json(&text, "wrap.json").unwrap();
        let expected = 4.0 - std::f64::consts::TAU;
        assert!((loaded.expert_future[40].yaw - expected).abs() < 1e-12);
        assert!((expected + 2.2832).abs() < 1e-4);
    }

    #[test]
    fn validation_rejects_short_history() {
        let mut sc = sample_scenario();
        sc.ego_history.pop();
        assert!(sc.validate().is_err());
    }

    #[test]
    fn agent_cap_keeps_nearest() {
        let sc = sample_scenario();
        let mut snap = sc.snapshot();
        // Blow up the agent count with far-away clones.
        let template = snap.agents[0].clone();
        let mut rng = Rng::new(5);
        for k in 0..30 {
            let mut a = template.clone();
            a.id = 100 + k;
            let shift = 500.0 + 10.0 * rng.uniform();
            for w in &mut a.history {
                w.pose.x += shift;
            }
            snap.agents.push(a);
        }
        let feats = normalize_to_frame(&snap, &snap.ego.pose);
        assert_eq!(feats.agent_tensors.len(), MAX_AGENT_TOKENS);
        // The far clones must not displace the near originals.
        for id in feats.agent_ids.iter().take(sc.agents.len()) {
            assert!(*id < 100);
        }
    }
}
