use planlab_core::adapter::*;
use planlab_core::control::LqrConfig;
use planlab_core::metrics::closed_loop_score;
use planlab_core::scenario::{generate_scenario, GenConfig, ScenarioFamily};
use planlab_core::simulator::*;
use planlab_core::traffic::TrafficMode;

fn main() {
    let cfg = PpoConfig { total_steps: 200_000, ..PpoConfig::default() };
    let out = ppo_train(&cfg, 21).unwrap();

    let lqr = LqrConfig::default();
    let names = ["perfect", "lqr", "adapter"];
    let mut cls_sums = [0.0f64; 3];
    let mut comfort_sums = [0.0f64; 3];
    let mut jerk_max = [0.0f64; 3];
    let mut yaw_max = [0.0f64; 3];
    let mut accel_max = [0.0f64; 3];
    let mut n = 0;
    for family in ScenarioFamily::ALL {
        for seed in 0..8 {
            let sc = generate_scenario(
                &GenConfig { family, num_agents: 2, ..GenConfig::default() },
                1000 + seed,
            ).unwrap();
            let planner = LogReplayPlanner::new(&sc);
            for (i, act) in [
                Actuation::PerfectTracking,
                Actuation::Lqr(&lqr),
                Actuation::Adapter(&out.policy),
            ].into_iter().enumerate() {
                let log = run_closed_loop(&sc, &planner, act, TrafficMode::LogReplay, 0, &SimOptions::default()).unwrap();
                let score = closed_loop_score(&log, &sc);
                if i == 0 && (score.collision || score.off_drivable || score.progress < 0.99) {
                    println!("  {} perfect: cls {:.1} col {} off {} prog {:.2} comfort {:.2}",
                        sc.id, score.cls, score.collision, score.off_drivable, score.progress, score.comfort);
                }
                cls_sums[i] += score.cls;
                comfort_sums[i] += score.comfort;
                for st in &log.steps {
                    jerk_max[i] = jerk_max[i].max(st.jerk.abs());
                    yaw_max[i] = yaw_max[i].max(st.yaw_rate.abs());
                    accel_max[i] = accel_max[i].max(st.lon_accel.abs());
                }
            }
            n += 1;
        }
    }
    println!("scenarios: {n}  (thresholds: accel 2.4, jerk 4.0, yaw 0.95)");
    for i in 0..3 {
        println!(
            "{:8} cls {:6.2}  comfort {:.4}  max|a| {:5.2}  max|jerk| {:6.2}  max|yaw| {:5.2}",
            names[i], cls_sums[i] / n as f64, comfort_sums[i] / n as f64,
            accel_max[i], jerk_max[i], yaw_max[i]
        );
    }
}
