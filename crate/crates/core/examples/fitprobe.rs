use planlab_core::metrics::open_loop_score;
use planlab_core::planner::*;
use planlab_core::scenario::*;
use planlab_core::simulator::{run_open_loop, run_closed_loop, Actuation, SimOptions};
use planlab_core::control::LqrConfig;
use planlab_core::metrics::closed_loop_score;
use planlab_core::traffic::TrafficMode;
use planlab_core::rng::derive_seed;

fn main() {
    let gen = |n: usize, base: u64| -> Vec<Scenario> {
        (0..n).map(|i| {
            let family = ScenarioFamily::ALL[i % 5];
            generate_scenario(&GenConfig { family, num_agents: 2, ..GenConfig::default() },
                derive_seed(base, i as u64, 0xc0)).unwrap()
        }).collect()
    };
    let train: Vec<Scenario> = gen(160, 9000);
    let eval: Vec<Scenario> = gen(24, 9900);

    let cfg = VariantConfig {
        input_variant: InputVariant::State6,
        use_sde: false, d_model: 32, layers: 2, heads: 4, sde_dropout: 0.75,
    };
    let hyper = TrainConfig { epochs: 250, batch_size: 8, ..TrainConfig::default() };
    let t0 = std::time::Instant::now();
    let (model, report) = train_imitation(&train, cfg, &AugmentConfig::default(), &hyper, 42).unwrap();
    println!("trained in {:.0}s, loss {:.3} -> {:.4}", t0.elapsed().as_secs_f64(),
        report.epoch_losses[0], report.epoch_losses.last().unwrap());

    let planner = LearnedPlanner::new(model);
    let mut ols_train = 0.0;
    for sc in train.iter().take(24) {
        let (plan, expert) = run_open_loop(sc, &planner).unwrap();
        ols_train += open_loop_score(&plan, &expert).unwrap();
    }
    println!("train OLS: {:.1}", ols_train / 24.0);
    // Recovery probe: offset the ego laterally; a recovery-trained model
    // should plan back toward the centerline (plan y ~ -offset in ego frame).
    {
        use planlab_core::simulator::Planner;
        let sc = &eval[0];
        let route = sc.route_centerline();
        for offset in [0.0f64, 0.5, 1.0, -1.0] {
            let mut snap = sc.snapshot();
            let yaw = snap.ego.pose.yaw;
            snap.ego.pose.x += -offset * yaw.sin();
            snap.ego.pose.y += offset * yaw.cos();
            let plan = planner.plan(&snap, 0).unwrap();
            let p40 = plan.get(40).in_frame(&snap.ego.pose);
            let (_, lat40, _) = route.project(plan.get(40).position());
            println!("offset {offset:+.1}: plan40 ego-frame y {:+.2}, centerline lat {:+.2}", p40.y, lat40);
        }
    }
    let mut ols_eval = 0.0;
    let mut cls_eval = 0.0;
    let lqr = LqrConfig::default();
    for (i, sc) in eval.iter().enumerate() {
        let (plan, expert) = run_open_loop(sc, &planner).unwrap();
        ols_eval += open_loop_score(&plan, &expert).unwrap();
        let log = run_closed_loop(sc, &planner, Actuation::Lqr(&lqr), TrafficMode::LogReplay, 0, &SimOptions::default()).unwrap();
        let s = closed_loop_score(&log, sc);
        cls_eval += s.cls;
        if i == 0 {
            // Plan inspection along the first rollout.
            use planlab_core::simulator::Planner;
            let mut state = *sc.current_ego();
            let snap0 = sc.snapshot();
            let bike = planlab_core::dynamics::BicycleParams::default();
            let mut hist: std::collections::VecDeque<planlab_core::scenario::EgoState> = sc.ego_history.iter().copied().collect();
            for k in 0..100 {
                let snap = planlab_core::scenario::SceneSnapshot {
                    ego: state,
                    ego_history: hist.iter().copied().collect(),
                    agents: snap0.agents.clone(),
                    map: &sc.map,
                    route_ids: &sc.route_ids,
                    drivable_halfwidth: sc.drivable_halfwidth,
                };
                let plan = planner.plan(&snap, k).unwrap();
                let sp = plan.speeds();
                let v_plan: f64 = sp[..10].iter().sum::<f64>() / 10.0;
                let cmd = planlab_core::control::track(&state, &plan, &lqr, &bike);
                if k % 10 == 0 {
                    let p40 = plan.get(40);
                    let local = p40.in_frame(&state.pose);
                    println!("  k={k:3} v={:5.2} plan_v10={:5.2} cmd=({:+.2},{:+.2}) plan40_local=({:6.1},{:6.1})",
                        state.velocity, v_plan, cmd.accel, cmd.steer_rate, local.x, local.y);
                }
                state = planlab_core::dynamics::bicycle_step(&state, cmd, &bike);
                hist.pop_front(); hist.push_back(state);
            }
        }
        if i < 6 {
            println!("{}: cls {:.1} col {} off {} steps {} prog {:.2} comfort {:.2}",
                sc.id, s.cls, s.collision, s.off_drivable, log.steps.len(), s.progress, s.comfort);
            let route = sc.route_centerline();
            for (k, st) in log.steps.iter().enumerate() {
                if k % 30 == 0 || (st.collision || st.off_drivable) {
                    let (rs, lat, d) = route.project(st.ego.pose.position());
                    println!("   t={:4.1} v={:5.2} route_s={:6.1} lat={:6.2} dist={:5.2} col={} off={}",
                        st.time, st.ego.velocity, rs, lat, d, st.collision, st.off_drivable);
                    if st.collision || st.off_drivable { break; }
                }
            }
        }
    }
    println!("eval OLS: {:.1}, eval NR-CLS: {:.1}", ols_eval / eval.len() as f64, cls_eval / eval.len() as f64);
}
