use planlab_core::control::LqrConfig;
use planlab_core::scenario::{generate_scenario, GenConfig, ScenarioFamily};
use planlab_core::simulator::*;
use planlab_core::traffic::TrafficMode;

fn main() {
    for family in ScenarioFamily::ALL {
        for seed in 0..8u64 {
            let sc = generate_scenario(
                &GenConfig { family, num_agents: 2, ..GenConfig::default() },
                1000 + seed,
            ).unwrap();
            let planner = LogReplayPlanner::new(&sc);
            let lqr = LqrConfig::default();
            for (name, act) in [("perfect", Actuation::PerfectTracking), ("lqr", Actuation::Lqr(&lqr))] {
                let log = run_closed_loop(&sc, &planner, act, TrafficMode::LogReplay, 0, &SimOptions::default()).unwrap();
                for st in &log.steps {
                    if st.jerk.abs() > 4.0 {
                        println!("{} {name}: t={:.1} jerk {:.1} accel {:.2} v={:.2}", sc.id, st.time, st.jerk, st.lon_accel, st.ego.velocity);
                    }
                    if st.collision {
                        println!("{} {name}: COLLISION t={:.1} ego=({:.1},{:.1})", sc.id, st.time, st.ego.pose.x, st.ego.pose.y);
                        for a in &st.agents {
                            let d = ((a.pose.x - st.ego.pose.x).powi(2) + (a.pose.y - st.ego.pose.y).powi(2)).sqrt();
                            if d < 8.0 { println!("   agent {} at d={:.2} v={:.2}", a.id, d, a.velocity); }
                        }
                    }
                }
            }
        }
    }
}
