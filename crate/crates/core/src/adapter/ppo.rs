//! Tracking environment over random feasible trajectories and the PPO
//! training loop (clipped surrogate, GAE, advantage normalization).

use crate::augment::{perturb_state, PerturbConfig};
use crate::dynamics::{bicycle_step, BicycleParams, ControlCommand};
use crate::error::{Error, Result};
use crate::nn::{AdamW, Session, Tensor};
use crate::rng::{derive_seed, Rng};
use crate::scenario::{EgoState, Pose, DT, FUTURE_LEN};
use crate::trajectory::PlannedTrajectory;

use super::policy::{AdapterPolicy, PpoConfig, ACT_DIM, OBS_DIM};
use super::{observe_window, reward};

/// Episode length: one 80-point trajectory.
pub const EPISODE_STEPS: usize = FUTURE_LEN;
/// Reference length: episode plus the observation lookahead.
const REF_LEN: usize = FUTURE_LEN + 16;

/// A tracking episode: follow a random bicycle-feasible trajectory from a
/// perturbed start.
pub struct TrackingEpisode {
    pub reference: Vec<Pose>,
    pub ref_speeds: Vec<f64>,
    pub start: EgoState,
}

/// Random feasible reference: piecewise-constant acceleration and steering
/// targets rolled through the bicycle model.
pub fn random_episode(seed: u64) -> TrackingEpisode {
    let mut rng = Rng::new(seed);
    let params = BicycleParams::default();
    let v0 = rng.range(1.0, 12.0);
    let mut state = EgoState {
        pose: Pose::new(0.0, 0.0, 0.0),
        velocity: v0,
        acceleration: 0.0,
        steering: 0.0,
        timestamp: 0.0,
    };

    // Reference difficulty is drawn per episode and biased toward gentle:
    // batches always contain attainable episodes, while the hard end is
    // still represented.
    let difficulty = rng.uniform().powf(1.5);
    let mut reference = Vec::with_capacity(REF_LEN);
    let mut ref_speeds = Vec::with_capacity(REF_LEN);
    let mut accel = 0.0;
    let mut steer_target = 0.0;
    for k in 0..REF_LEN {
        if k % 30 == 0 {
            accel = rng.range(-2.2 * difficulty, (1.5 * difficulty).max(0.2));
        }
        if k % 25 == 0 {
            let range = 0.28 * difficulty;
            steer_target = rng.range(-range, range);
        }
        reference.push(state.pose);
        ref_speeds.push(state.velocity);
        // Keep speeds in a sane band.
        let a = if state.velocity > 12.5 {
            accel.min(0.0)
        } else if state.velocity < 0.3 {
            accel.max(0.0)
        } else {
            accel
        };
        let steer_rate = ((steer_target - state.steering) / (6.0 * DT)).clamp(-0.5, 0.5);
        state = bicycle_step(&state, ControlCommand::new(a, steer_rate), &params);
    }

    let start_nominal = EgoState {
        pose: reference[0],
        velocity: ref_speeds[0],
        acceleration: 0.0,
        steering: 0.0,
        timestamp: 0.0,
    };
    // Start offsets must stay inside the tracking reward's useful radius:
    // exp(-15 d) is numerically zero beyond ~0.5 m. The magnitude mix is
    // biased toward tiny offsets so holding the trajectory is learnable
    // before recovery is.
    let level = rng.uniform().powi(2);
    let start_noise = PerturbConfig {
        apply_probability: 1.0,
        lateral: 0.35 * level,
        longitudinal: 0.35 * level,
        yaw: 0.05 * level,
        velocity: 0.4 * level,
    };
    let start = perturb_state(&start_nominal, &start_noise, derive_seed(seed, 0x7374, 1));
    TrackingEpisode {
        reference,
        ref_speeds,
        start: EgoState {
            velocity: start.velocity.max(0.0),
            ..start
        },
    }
}

struct Transition {
    obs: [f64; OBS_DIM],
    z: [f64; ACT_DIM],
    reward: f64,
    value: f64,
    log_prob: f64,
    /// Episode boundary for GAE.
    done: bool,
    /// V(next) carried across the boundary. Every boundary is a truncation:
    /// the observation carries no time-remaining signal, so an episodic
    /// zero-terminal would make value targets depend on unobservable time
    /// and poison the advantages at episode tails.
    boundary_value: f64,
}

/// PPO training outcome: the policy plus the per-iteration mean episode
/// reward (undiscounted, on the training rollouts).
pub struct PpoOutcome {
    pub policy: AdapterPolicy,
    pub iteration_rewards: Vec<f64>,
    /// Mean training-episode length per iteration.
    pub iteration_episode_lengths: Vec<f64>,
}

pub fn ppo_train(cfg: &PpoConfig, seed: u64) -> Result<PpoOutcome> {
    ppo_train_traced(cfg, seed, |_, _| {})
}

/// PPO with a per-iteration callback (progress inspection).
pub fn ppo_train_traced(
    cfg: &PpoConfig,
    seed: u64,
    mut trace: impl FnMut(usize, &AdapterPolicy),
) -> Result<PpoOutcome> {
    let mut policy = AdapterPolicy::new(seed);
    let mut opt = AdamW::new(&policy.params, 0.0);
    let mut rng = Rng::new(derive_seed(seed, 0x70706f, 2));

    let iterations = cfg.total_steps.div_ceil(cfg.rollout_steps);
    let mut iteration_rewards = Vec::with_capacity(iterations);
    let mut iteration_episode_lengths = Vec::with_capacity(iterations);
    let mut episode_counter = 0u64;

    for iter in 0..iterations {
        // ---- Rollout collection (single worker, deterministic).
        let mut transitions: Vec<Transition> = Vec::with_capacity(cfg.rollout_steps);
        let mut episode_rewards: Vec<f64> = Vec::new();

        let bike = BicycleParams::default();
        let value_of = |policy: &AdapterPolicy, obs: &[f64; OBS_DIM]| -> Result<f64> {
            let mut sess = Session::new(&policy.params);
            let o = sess.tape.leaf(Tensor::new(vec![1, OBS_DIM], obs.to_vec()));
            let v = policy.value(&mut sess, o)?;
            Ok(sess.tape.value(v).item())
        };
        while transitions.len() < cfg.rollout_steps {
            let episode = random_episode(derive_seed(seed, 0x657069, episode_counter));
            episode_counter += 1;
            let mut state = episode.start;
            let mut prev_cmd = ControlCommand::zero();
            let mut episode_reward = 0.0;
            let mut noise = [0.0f64; 2];

            for t in 0..EPISODE_STEPS {
                // Redraw the exploration noise every few steps: smooth
                // excursions have real positional consequences while staying
                // out of the rate/jerk indicators' teeth.
                if t % 8 == 0 {
                    noise = [rng.normal(), rng.normal()];
                }
                let obs = observe_window(
                    &state,
                    &episode.reference[t..],
                    &episode.ref_speeds[t..],
                );
                let (value, log_prob, z, cmd) = {
                    let mut sess = Session::new(&policy.params);
                    let o = sess.tape.leaf(Tensor::new(vec![1, OBS_DIM], obs.to_vec()));
                    let v = policy.value(&mut sess, o)?;
                    let v = sess.tape.value(v).item();
                    let (cmd, z) = policy.act_with_noise(&obs, noise);
                    let zt = sess.tape.leaf(Tensor::new(vec![1, ACT_DIM], z.to_vec()));
                    let lp = policy.log_prob(&mut sess, o, zt)?;
                    (v, sess.tape.value(lp).item(), z, cmd)
                };

                let next = bicycle_step(&state, cmd, &bike);
                let (r, _) = reward(&next, &episode.reference[t + 1], cmd, prev_cmd, DT);
                episode_reward += r;
                // Once the ego is this far off, the tracking term is
                // numerically dead for the rest of the episode; truncate to
                // keep the batch inside the informative region.
                let lost = next.pose.distance_to(&episode.reference[t + 1]) > 1.0;
                let horizon = t + 1 == EPISODE_STEPS;
                let cut = transitions.len() + 1 == cfg.rollout_steps;
                let done = horizon || lost || cut;
                let boundary_value = if done {
                    let next_obs = observe_window(
                        &next,
                        &episode.reference[t + 1..],
                        &episode.ref_speeds[t + 1..],
                    );
                    value_of(&policy, &next_obs)?
                } else {
                    0.0
                };
                transitions.push(Transition {
                    obs,
                    z,
                    reward: r,
                    value,
                    log_prob,
                    done,
                    boundary_value,
                });
                state = next;
                prev_cmd = cmd;
                if done {
                    break;
                }
            }
            episode_rewards.push(episode_reward);
            if transitions.len() >= cfg.rollout_steps {
                break;
            }
        }
        iteration_rewards
            .push(episode_rewards.iter().sum::<f64>() / episode_rewards.len() as f64);
        iteration_episode_lengths
            .push(transitions.len() as f64 / episode_rewards.len().max(1) as f64);

        // ---- GAE. Boundaries stop the recursion; every boundary is a
        // truncation carrying the bootstrapped next-state value.
        let n = transitions.len();
        let mut advantages = vec![0.0; n];
        let mut gae = 0.0;
        for t in (0..n).rev() {
            let next_value = if transitions[t].done {
                transitions[t].boundary_value
            } else {
                transitions[t + 1].value
            };
            let not_done = if transitions[t].done { 0.0 } else { 1.0 };
            let delta = transitions[t].reward + cfg.gamma * next_value - transitions[t].value;
            gae = delta + cfg.gamma * cfg.gae_lambda * not_done * gae;
            advantages[t] = gae;
        }
        let returns: Vec<f64> = advantages
            .iter()
            .zip(&transitions)
            .map(|(a, tr)| a + tr.value)
            .collect();
        let advantages = normalize_advantages(&advantages);

        // ---- Clipped-surrogate updates.
        let mut order: Vec<usize> = (0..n).collect();
        for epoch in 0..cfg.epochs {
            let mut shuffle = Rng::new(derive_seed(seed, 0x7368 + iter as u64, epoch as u64));
            shuffle.shuffle(&mut order);
            for chunk in order.chunks(cfg.minibatch) {
                let b = chunk.len();
                let mut obs = Vec::with_capacity(b * OBS_DIM);
                let mut zs = Vec::with_capacity(b * ACT_DIM);
                let mut old_lp = Vec::with_capacity(b);
                let mut adv = Vec::with_capacity(b);
                let mut ret = Vec::with_capacity(b);
                for &i in chunk {
                    obs.extend_from_slice(&transitions[i].obs);
                    zs.extend_from_slice(&transitions[i].z);
                    old_lp.push(transitions[i].log_prob);
                    adv.push(advantages[i]);
                    ret.push(returns[i]);
                }

                let mut sess = Session::new(&policy.params);
                let o = sess.tape.leaf(Tensor::new(vec![b, OBS_DIM], obs));
                let z = sess.tape.leaf(Tensor::new(vec![b, ACT_DIM], zs));
                let lp_new = policy.log_prob(&mut sess, o, z)?;
                let lp_old = sess.tape.leaf(Tensor::new(vec![b, 1], old_lp));
                let diff = sess.tape.sub(lp_new, lp_old)?;
                let ratio = sess.tape.exp(diff);
                let adv_t = sess.tape.leaf(Tensor::new(vec![b, 1], adv));
                let surr1 = sess.tape.mul(ratio, adv_t)?;
                let clipped = sess.tape.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
                let surr2 = sess.tape.mul(clipped, adv_t)?;
                let surr = sess.tape.min_elem(surr1, surr2)?;
                let policy_obj = sess.tape.mean(surr);
                let policy_loss = sess.tape.scale(policy_obj, -1.0);

                let v = policy.value(&mut sess, o)?;
                let ret_t = sess.tape.leaf(Tensor::new(vec![b, 1], ret));
                let value_loss = sess.tape.mse_loss(v, ret_t)?;
                let weighted_value = sess.tape.scale(value_loss, cfg.value_coef);
                // First iteration warms the value function up alone;
                // advantages from an untrained critic would push the policy
                // in arbitrary directions.
                let loss = if iter == 0 {
                    weighted_value
                } else {
                    sess.tape.add(policy_loss, weighted_value)?
                };

                let loss_value = sess.tape.value(loss).item();
                if !loss_value.is_finite() {
                    return Err(Error::TrainingDiverged(format!(
                        "non-finite PPO loss at iteration {iter}: policy {:.4e}, value {:.4e}, \
                         mean advantage {:.4e}, mean return {:.4e}",
                        sess.tape.value(policy_loss).item(),
                        sess.tape.value(value_loss).item(),
                        advantages.iter().sum::<f64>() / n as f64,
                        returns.iter().sum::<f64>() / n as f64,
                    )));
                }
                let mut grads = sess.param_grads(loss);
                clip_grad_norm(&mut grads, 0.5);
                // Linear learning-rate anneal over the whole run.
                let progress = iter as f64 / iterations.max(1) as f64;
                opt.step(&mut policy.params, &grads, cfg.lr * (1.0 - progress));
                // Keep the exploration scale in a sane band.
                let log_std = policy.log_std;
                for v in policy.params.tensor_mut(log_std).data.iter_mut() {
                    *v = v.clamp(-1.6, 0.3);
                }
            }
        }
        trace(iter, &policy);
    }

    Ok(PpoOutcome {
        policy,
        iteration_rewards,
        iteration_episode_lengths,
    })
}

/// Scales gradients so their global L2 norm stays under `max_norm`.
fn clip_grad_norm(grads: &mut [Option<Tensor>], max_norm: f64) {
    let sq: f64 = grads
        .iter()
        .flatten()
        .map(|g| g.data.iter().map(|v| v * v).sum::<f64>())
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            for v in g.data.iter_mut() {
                *v *= scale;
            }
        }
    }
}

/// Per-batch advantage normalization to zero mean and unit variance.
pub fn normalize_advantages(advantages: &[f64]) -> Vec<f64> {
    let n = advantages.len() as f64;
    let mean = advantages.iter().sum::<f64>() / n;
    let var = advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    advantages.iter().map(|a| (a - mean) / std).collect()
}

/// Mean undiscounted episode reward of the mean-mode policy over a fixed
/// evaluation set of trajectories.
pub fn evaluate_policy(policy: &AdapterPolicy, episodes: usize, seed: u64) -> f64 {
    let bike = BicycleParams::default();
    let mut total = 0.0;
    for e in 0..episodes {
        let episode = random_episode(derive_seed(seed, 0x6576616c, e as u64));
        let mut state = episode.start;
        let mut prev_cmd = ControlCommand::zero();
        for t in 0..EPISODE_STEPS {
            let obs = observe_window(&state, &episode.reference[t..], &episode.ref_speeds[t..]);
            let cmd = policy.act_mean(&obs);
            let next = bicycle_step(&state, cmd, &bike);
            let (r, _) = reward(&next, &episode.reference[t + 1], cmd, prev_cmd, DT);
            total += r;
            state = next;
            prev_cmd = cmd;
        }
    }
    total / episodes as f64
}

/// Rolls the policy (mean actions) along a plan from a start state; the
/// actuation backend the simulator plugs in where LQR would be.
pub fn adapt(
    plan: &PlannedTrajectory,
    state: &EgoState,
    policy: &AdapterPolicy,
) -> Vec<ControlCommand> {
    let bike = BicycleParams::default();
    let speeds = plan.speeds();
    let mut out = Vec::with_capacity(FUTURE_LEN);
    let mut s = *state;
    for t in 0..FUTURE_LEN {
        let window: Vec<Pose> = (t..t + 12).map(|i| plan.get(i)).collect();
        let speed_window: Vec<f64> = (t..t + 12)
            .map(|i| speeds[i.min(FUTURE_LEN - 1)])
            .collect();
        let obs = observe_window(&s, &window, &speed_window);
        let cmd = policy.act_mean(&obs);
        out.push(cmd);
        s = bicycle_step(&s, cmd, &bike);
    }
    out
}
