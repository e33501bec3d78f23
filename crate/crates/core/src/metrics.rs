//! Desk-scale scoring: open-loop displacement score, closed-loop composite
//! score with hard gates, and benchmark aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::limits::{COMFORT_MAX_JERK, COMFORT_MAX_LON_ACCEL, COMFORT_MAX_YAW_RATE};
use crate::scenario::{Pose, Scenario, FUTURE_LEN};
use crate::simulator::SimulationLog;
use crate::trajectory::PlannedTrajectory;

/// Scoring horizons, in samples (3 s, 5 s, 8 s).
const HORIZONS: [usize; 3] = [30, 50, 80];
/// Per-horizon ADE at which the open-loop subscore reaches zero, meters.
const ADE_MAX: [f64; 3] = [2.0, 4.0, 8.0];

/// Composite weights for the closed-loop score.
const W_PROGRESS: f64 = 0.5;
const W_COMFORT: f64 = 0.3;
const W_SPEED: f64 = 0.2;

/// Closed-loop score breakdown for one rollout. The open-loop score is
/// computed separately and filled in by the benchmark assembler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    /// Open-loop score in [0, 100]; 0 until paired with an open-loop run.
    pub ols: f64,
    /// Closed-loop score in [0, 100]; 0 whenever a gate fires.
    pub cls: f64,
    pub collision: bool,
    pub off_drivable: bool,
    pub progress: f64,
    pub comfort: f64,
    pub speed_compliance: f64,
}

/// Average and final displacement errors at the 3/5/8 s horizons.
pub fn displacement_errors(
    plan: &PlannedTrajectory,
    expert: &[Pose],
) -> Result<([f64; 3], [f64; 3])> {
    if expert.len() != FUTURE_LEN {
        return Err(Error::Other(format!(
            "expert future has {} samples, expected {FUTURE_LEN}",
            expert.len()
        )));
    }
    let dists: Vec<f64> = plan
        .poses()
        .iter()
        .zip(expert)
        .map(|(a, b)| a.distance_to(b))
        .collect();
    let mut ade = [0.0; 3];
    let mut fde = [0.0; 3];
    for (h, &n) in HORIZONS.iter().enumerate() {
        ade[h] = dists[..n].iter().sum::<f64>() / n as f64;
        fde[h] = dists[n - 1];
    }
    Ok((ade, fde))
}

/// Open-loop score: 100 * mean over horizons of max(0, 1 - ADE_h / ADE_max_h).
pub fn open_loop_score(plan: &PlannedTrajectory, expert: &[Pose]) -> Result<f64> {
    let (ade, _) = displacement_errors(plan, expert)?;
    let mean: f64 = ade
        .iter()
        .zip(ADE_MAX.iter())
        .map(|(a, m)| (1.0 - a / m).max(0.0))
        .sum::<f64>()
        / HORIZONS.len() as f64;
    Ok(100.0 * mean)
}

/// Closed-loop composite: gates (collision, off-drivable) zero the score;
/// otherwise cls = 100 * (0.5 progress + 0.3 comfort + 0.2 speed compliance).
pub fn closed_loop_score(log: &SimulationLog, scenario: &Scenario) -> ScoreBreakdown {
    let collision = log.collision;
    let off_drivable = log.off_drivable;

    let route = scenario.route_centerline();
    let progress = if log.steps.is_empty() {
        0.0
    } else {
        let s_of = |p: (f64, f64)| route.project(p).0;
        let ego_start = s_of(log.steps[0].ego.pose.position());
        let ego_end = s_of(log.steps.last().unwrap().ego.pose.position());
        let expert_start = s_of(scenario.expert_future[0].position());
        let expert_end = s_of(scenario.expert_future[FUTURE_LEN - 1].position());
        let expert_prog = expert_end - expert_start;
        if expert_prog < 0.5 {
            // The expert barely moves (full-stop scenario): nothing to
            // make progress against.
            1.0
        } else {
            ((ego_end - ego_start) / expert_prog).clamp(0.0, 1.0)
        }
    };

    let (comfort, speed_compliance) = if log.steps.is_empty() {
        (0.0, 0.0)
    } else {
        let n = log.steps.len() as f64;
        let comfortable = log
            .steps
            .iter()
            .filter(|s| {
                s.lon_accel.abs() <= COMFORT_MAX_LON_ACCEL
                    && s.jerk.abs() <= COMFORT_MAX_JERK
                    && s.yaw_rate.abs() <= COMFORT_MAX_YAW_RATE
            })
            .count() as f64;
        let limit = scenario.speed_limit();
        let compliant = log
            .steps
            .iter()
            .filter(|s| s.ego.velocity <= limit + 1e-6)
            .count() as f64;
        (comfortable / n, compliant / n)
    };

    let gate_ok = !(collision || off_drivable);
    let cls = if gate_ok {
        100.0 * (W_PROGRESS * progress + W_COMFORT * comfort + W_SPEED * speed_compliance)
    } else {
        0.0
    };

    ScoreBreakdown {
        ols: 0.0,
        cls,
        collision,
        off_drivable,
        progress,
        comfort,
        speed_compliance,
    }
}

/// One benchmark line: a scenario scored under one planner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario_id: String,
    pub planner: String,
    pub ols: f64,
    /// Non-reactive (log-replay traffic) closed-loop breakdown.
    pub nr: ScoreBreakdown,
    /// Reactive-traffic closed-loop breakdown, when simulated.
    pub r: Option<ScoreBreakdown>,
}

/// Mean scores over a result set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub count: usize,
    pub ols: f64,
    pub nr_cls: f64,
    pub r_cls: f64,
}

pub fn aggregate(results: &[ScenarioResult]) -> Result<AggregateRow> {
    if results.is_empty() {
        return Err(Error::Other("cannot aggregate an empty result set".into()));
    }
    let n = results.len() as f64;
    Ok(AggregateRow {
        count: results.len(),
        ols: results.iter().map(|r| r.ols).sum::<f64>() / n,
        nr_cls: results.iter().map(|r| r.nr.cls).sum::<f64>() / n,
        r_cls: results
            .iter()
            .map(|r| r.r.map(|b| b.cls).unwrap_or(f64::NAN))
            .sum::<f64>()
            / n,
    })
}

pub const RESULTS_CSV_SCHEMA: &str = "planlab.results.v1";

/// Per-scenario results as CSV, sorted by scenario id, with a versioned
/// schema line. Sub-columns (collision, progress, ...) report the
/// non-reactive rollout.
pub fn results_csv(results: &[ScenarioResult]) -> String {
    let mut rows: Vec<&ScenarioResult> = results.iter().collect();
    rows.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));
    let mut out = String::new();
    out.push_str(&format!("# schema={RESULTS_CSV_SCHEMA}\n"));
    out.push_str(
        "scenario_id,planner,ols,nr_cls,r_cls,collision,off_drivable,progress,comfort,speed\n",
    );
    for r in rows {
        let r_cls = r.r.map(|b| format!("{:.6}", b.cls)).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{},{},{},{:.6},{:.6},{:.6}\n",
            r.scenario_id,
            r.planner,
            r.ols,
            r.nr.cls,
            r_cls,
            r.nr.collision,
            r.nr.off_drivable,
            r.nr.progress,
            r.nr.comfort,
            r.nr.speed_compliance
        ));
    }
    out
}

/// Parses a results CSV produced by [`results_csv`], validating the schema.
pub fn parse_results_csv(text: &str, origin: &str) -> Result<Vec<ScenarioResult>> {
    let mut lines = text.lines();
    let schema = lines.next().unwrap_or_default();
    if schema.trim() != format!("# schema={RESULTS_CSV_SCHEMA}") {
        return Err(Error::Parse {
            path: origin.to_string(),
            detail: format!("unexpected schema line `{schema}`"),
        });
    }
    let _header = lines.next();
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 10 {
            return Err(Error::Parse {
                path: origin.to_string(),
                detail: format!("line {}: expected 10 columns, got {}", n + 3, cols.len()),
            });
        }
        let f = |i: usize| -> Result<f64> {
            cols[i].parse::<f64>().map_err(|e| Error::Parse {
                path: origin.to_string(),
                detail: format!("line {}: column {i}: {e}", n + 3),
            })
        };
        let b = |i: usize| cols[i] == "true";
        let nr = ScoreBreakdown {
            ols: 0.0,
            cls: f(3)?,
            collision: b(5),
            off_drivable: b(6),
            progress: f(7)?,
            comfort: f(8)?,
            speed_compliance: f(9)?,
        };
        let r = if cols[4].is_empty() {
            None
        } else {
            Some(ScoreBreakdown {
                ols: 0.0,
                cls: f(4)?,
                collision: false,
                off_drivable: false,
                progress: 0.0,
                comfort: 0.0,
                speed_compliance: 0.0,
            })
        };
        out.push(ScenarioResult {
            scenario_id: cols[0].to_string(),
            planner: cols[1].to_string(),
            ols: f(2)?,
            nr,
            r,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_scenario, GenConfig, ScenarioFamily, DT};
    use crate::simulator::{
        run_closed_loop, run_open_loop, Actuation, IdmPlanner, LogReplayPlanner, SimOptions,
        SimulationLog, StepRecord,
    };
    use crate::traffic::TrafficMode;

    fn sample_scenario() -> Scenario {
        generate_scenario(
            &GenConfig {
                family: ScenarioFamily::LeftTurn,
                num_agents: 1,
                ..GenConfig::default()
            },
            13,
        )
        .unwrap()
    }

    fn expert_plan(sc: &Scenario) -> PlannedTrajectory {
        PlannedTrajectory::new(sc.expert_future.clone()).unwrap()
    }

    #[test]
    fn perfect_plan_scores_100() {
        let sc = sample_scenario();
        let ols = open_loop_score(&expert_plan(&sc), &sc.expert_future).unwrap();
        assert!((ols - 100.0).abs() < 1e-12);
    }

    #[test]
    fn ade_at_max_scores_zero() {
        // Offset the plan so each horizon ADE equals its maximum.
        let sc = sample_scenario();
        for (h, (&n, &m)) in HORIZONS.iter().zip(ADE_MAX.iter()).enumerate() {
            let _ = n;
            let poses: Vec<Pose> = sc
                .expert_future
                .iter()
                .map(|p| Pose::new(p.x + m, p.y, p.yaw))
                .collect();
            let plan = PlannedTrajectory::new(poses).unwrap();
            let (ade, _) = displacement_errors(&plan, &sc.expert_future).unwrap();
            assert!((ade[h] - m).abs() < 1e-9);
        }
        // A plan offset by every horizon's max at once scores ~0 only for the
        // horizon whose max matches; the formula evaluation example instead:
        let poses: Vec<Pose> = sc
            .expert_future
            .iter()
            .map(|p| Pose::new(p.x + 100.0, p.y, p.yaw))
            .collect();
        let plan = PlannedTrajectory::new(poses).unwrap();
        assert_eq!(open_loop_score(&plan, &sc.expert_future).unwrap(), 0.0);
    }

    #[test]
    fn constant_lateral_offset_formula() {
        // 1 m offset at every sample: ols = 100*mean(1/2, 3/4, 7/8) = 70.8333.
        let sc = sample_scenario();
        let poses: Vec<Pose> = sc
            .expert_future
            .iter()
            .map(|p| {
                let n = (p.yaw + std::f64::consts::FRAC_PI_2, 1.0);
                Pose::new(p.x + n.1 * n.0.cos(), p.y + n.1 * n.0.sin(), p.yaw)
            })
            .collect();
        let plan = PlannedTrajectory::new(poses).unwrap();
        let ols = open_loop_score(&plan, &sc.expert_future).unwrap();
        let expected = 100.0 * (0.5 + 0.75 + 0.875) / 3.0;
        assert!((ols - expected).abs() < 1e-9, "ols {ols} vs {expected}");
        assert!((expected - 70.833333).abs() < 1e-4);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let sc = sample_scenario();
        assert!(open_loop_score(&expert_plan(&sc), &sc.expert_future[..79]).is_err());
    }

    #[test]
    fn collision_gates_cls_to_zero() {
        let sc = sample_scenario();
        let mut log = SimulationLog {
            scenario_id: sc.id.clone(),
            steps: Vec::new(),
            collision: true,
            off_drivable: false,
            error: None,
        };
        // Even with perfect subscores the gate dominates.
        log.steps.push(StepRecord {
            time: 0.0,
            ego: *sc.current_ego(),
            cmd: crate::dynamics::ControlCommand::zero(),
            plan_id: 0,
            agents: Vec::new(),
            lon_accel: 0.0,
            jerk: 0.0,
            yaw_rate: 0.0,
            collision: true,
            off_drivable: false,
        });
        let score = closed_loop_score(&log, &sc);
        assert_eq!(score.cls, 0.0);
        assert!(score.collision);
    }

    #[test]
    fn perfect_tracking_expert_rollout_scores_100() {
        let sc = sample_scenario();
        let planner = LogReplayPlanner::new(&sc);
        let log = run_closed_loop(
            &sc,
            &planner,
            Actuation::PerfectTracking,
            TrafficMode::LogReplay,
            0,
            &SimOptions::default(),
        )
        .unwrap();
        let score = closed_loop_score(&log, &sc);
        assert!(!score.collision && !score.off_drivable);
        assert!((score.progress - 1.0).abs() < 1e-9, "progress {}", score.progress);
        assert!((score.comfort - 1.0).abs() < 1e-9, "comfort {}", score.comfort);
        assert!(
            (score.speed_compliance - 1.0).abs() < 1e-9,
            "speed {}",
            score.speed_compliance
        );
        assert!((score.cls - 100.0).abs() < 1e-9);
    }

    #[test]
    fn half_comfort_violations_formula() {
        let sc = sample_scenario();
        let ego = *sc.current_ego();
        let steps: Vec<StepRecord> = (0..100)
            .map(|k| StepRecord {
                time: k as f64 * DT,
                ego: crate::scenario::EgoState {
                    pose: sc.expert_future[k.min(FUTURE_LEN - 1)],
                    velocity: 0.1,
                    ..ego
                },
                cmd: crate::dynamics::ControlCommand::zero(),
                plan_id: 0,
                agents: Vec::new(),
                lon_accel: if k % 2 == 0 { 3.0 } else { 0.0 },
                jerk: 0.0,
                yaw_rate: 0.0,
                collision: false,
                off_drivable: false,
            })
            .collect();
        let mut log = SimulationLog {
            scenario_id: sc.id.clone(),
            steps,
            collision: false,
            off_drivable: false,
            error: None,
        };
        // Force full progress by ending on the expert endpoint.
        log.steps.last_mut().unwrap().ego.pose = sc.expert_future[FUTURE_LEN - 1];
        let score = closed_loop_score(&log, &sc);
        assert!((score.comfort - 0.5).abs() < 1e-9);
        assert!((score.speed_compliance - 1.0).abs() < 1e-9);
        let expected = 100.0 * (0.5 * score.progress + 0.3 * 0.5 + 0.2 * 1.0);
        assert!((score.cls - expected).abs() < 1e-9);
    }

    #[test]
    fn aggregate_means_match_brute_force() {
        let mk = |id: &str, ols: f64, cls: f64| ScenarioResult {
            scenario_id: id.into(),
            planner: "test".into(),
            ols,
            nr: ScoreBreakdown {
                ols: 0.0,
                cls,
                collision: false,
                off_drivable: false,
                progress: 1.0,
                comfort: 1.0,
                speed_compliance: 1.0,
            },
            r: Some(ScoreBreakdown {
                ols: 0.0,
                cls: cls / 2.0,
                collision: false,
                off_drivable: false,
                progress: 1.0,
                comfort: 1.0,
                speed_compliance: 1.0,
            }),
        };
        let single = aggregate(&[mk("a", 80.0, 60.0)]).unwrap();
        assert_eq!(single.ols, 80.0);
        assert_eq!(single.nr_cls, 60.0);

        let two = aggregate(&[mk("a", 80.0, 80.0), mk("b", 60.0, 60.0)]).unwrap();
        assert_eq!(two.nr_cls, 70.0);

        // Spreadsheet-style oracle over 20 entries.
        let results: Vec<ScenarioResult> = (0..20)
            .map(|i| mk(&format!("s{i:02}"), 50.0 + i as f64, 40.0 + 2.0 * i as f64))
            .collect();
        let row = aggregate(&results).unwrap();
        let mut sum_ols = 0.0;
        let mut sum_cls = 0.0;
        for r in &results {
            sum_ols += r.ols;
            sum_cls += r.nr.cls;
        }
        assert!((row.ols - sum_ols / 20.0).abs() < 1e-9);
        assert!((row.nr_cls - sum_cls / 20.0).abs() < 1e-9);
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn results_csv_round_trip_and_ordering() {
        let mk = |id: &str| ScenarioResult {
            scenario_id: id.into(),
            planner: "idm".into(),
            ols: 42.5,
            nr: ScoreBreakdown {
                ols: 0.0,
                cls: 77.25,
                collision: false,
                off_drivable: true,
                progress: 0.5,
                comfort: 0.75,
                speed_compliance: 1.0,
            },
            r: None,
        };
        let csv = results_csv(&[mk("zzz"), mk("aaa")]);
        assert!(csv.starts_with("# schema="));
        let lines: Vec<&str> = csv.lines().collect();
        assert!(lines[2].starts_with("aaa,"));
        assert!(lines[3].starts_with("zzz,"));
        let parsed = parse_results_csv(&csv, "mem").unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].scenario_id, "aaa");
        assert!((parsed[0].nr.cls - 77.25).abs() < 1e-9);
        assert!(parse_results_csv("bogus", "mem").is_err());
    }

    #[test]
    fn idm_open_loop_smoke() {
        let sc = sample_scenario();
        let planner = IdmPlanner::new(&sc).unwrap();
        let (plan, expert) = run_open_loop(&sc, &planner).unwrap();
        let ols = open_loop_score(&plan, &expert).unwrap();
        assert!((0.0..=100.0).contains(&ols));
    }

    #[test]
    fn monotone_worsening_ade_never_raises_ols() {
        let sc = sample_scenario();
        let mut prev = f64::INFINITY;
        for off in [0.0, 0.5, 1.0, 2.0, 4.0, 8.0] {
            let poses: Vec<Pose> = sc
                .expert_future
                .iter()
                .map(|p| Pose::new(p.x + off, p.y, p.yaw))
                .collect();
            let plan = PlannedTrajectory::new(poses).unwrap();
            let ols = open_loop_score(&plan, &sc.expert_future).unwrap();
            assert!(ols <= prev + 1e-12);
            assert!((0.0..=100.0).contains(&ols));
            prev = ols;
        }
    }
}
