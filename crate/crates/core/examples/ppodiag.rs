use planlab_core::adapter::*;
use planlab_core::control::{track, LqrConfig};
use planlab_core::dynamics::{bicycle_step, BicycleParams, ControlCommand};
use planlab_core::scenario::{DT, FUTURE_LEN};
use planlab_core::trajectory::PlannedTrajectory;

fn eval_lqr(episodes: usize, seed: u64) -> f64 {
    let bike = BicycleParams::default();
    let cfg = LqrConfig::default();
    let mut total = 0.0;
    for e in 0..episodes {
        let ep = random_episode(planlab_core::rng::derive_seed(seed, 0x6576616c, e as u64));
        let mut state = ep.start;
        let mut prev = ControlCommand::zero();
        for t in 0..EPISODE_STEPS {
            let window: Vec<_> = (t..t + FUTURE_LEN)
                .map(|i| ep.reference[i.min(ep.reference.len() - 1)])
                .collect();
            let plan = PlannedTrajectory::new(window).unwrap();
            let cmd = track(&state, &plan, &cfg, &bike);
            let next = bicycle_step(&state, cmd, &bike);
            let (r, _) = reward(&next, &ep.reference[t + 1], cmd, prev, DT);
            total += r;
            state = next;
            prev = cmd;
        }
    }
    total / episodes as f64
}

fn main() {
    println!("lqr eval: {:.2}", eval_lqr(8, 900));
    let cfg = PpoConfig { total_steps: 20_000, ..PpoConfig::default() };
    let init = AdapterPolicy::new(21);
    println!("init eval: {:.2}", evaluate_policy(&init, 8, 900));
    let out = ppo_train_traced(&cfg, 21, |iter, policy| {
        if iter % 3 == 2 {
            println!("  iter {iter}: eval {:.2}", evaluate_policy(policy, 8, 900));
        }
    }).unwrap();
    println!("final eval: {:.2}", evaluate_policy(&out.policy, 8, 900));
    let ls = out.policy.params.get_by_name("pi.log_std").unwrap();
    println!("log_std: {:?}", ls.data);
    let lens = &out.iteration_episode_lengths;
    println!("mean episode length first/mid/last: {:.1} / {:.1} / {:.1}",
        lens[0], lens[lens.len()/2], lens[lens.len()-1]);

    // Mean-mode rollout breakdown on one episode.
    use planlab_core::dynamics::{bicycle_step, BicycleParams, ControlCommand};
    let ep = random_episode(planlab_core::rng::derive_seed(900, 0x6576616c, 0));
    let bike = BicycleParams::default();
    let mut state = ep.start;
    let mut prev = ControlCommand::zero();
    for t in 0..EPISODE_STEPS {
        let obs = observe_window(&state, &ep.reference[t..], &ep.ref_speeds[t..]);
        let cmd = out.policy.act_mean(&obs);
        let next = bicycle_step(&state, cmd, &bike);
        let (r, terms) = reward(&next, &ep.reference[t + 1], cmd, prev, DT);
        if t % 16 == 0 {
            let d = next.pose.distance_to(&ep.reference[t + 1]);
            println!("  t={t:2} d={d:6.3} r={r:6.2} cmd=({:5.2},{:5.2}) track={:.3} rate={:.3} jerk={} yaw={}",
                cmd.accel, cmd.steer_rate, terms.tracking, terms.action_rate,
                terms.jerk_limit, terms.yaw_rate);
        }
        state = next;
        prev = cmd;
    }
}
