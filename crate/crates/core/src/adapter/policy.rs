//! Squashed-Gaussian control policy and value function.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::ControlCommand;
use crate::error::{Error, Result};
use crate::limits::{MAX_ACCEL_CMD, MAX_STEER_RATE_CMD};
use crate::nn::{Linear, ParamId, ParamSet, Session, TapeId, Tensor};
use crate::rng::Rng;

pub const OBS_DIM: usize = 45;
pub const ACT_DIM: usize = 2;
const HIDDEN: usize = 64;
pub const ACTION_LIMITS: [f64; 2] = [MAX_ACCEL_CMD, MAX_STEER_RATE_CMD];
/// Pre-squash scaling: a = limit * tanh(k * z). Spreads the useful command
/// range over a wide z interval so the Gaussian can carry unit-scale sigma;
/// tight sigmas make log-density curvature (1/sigma^2) blow up PPO's ratios.
const SQUASH_SCALE: [f64; 2] = [0.25, 0.6];

/// Observation scaling applied inside the network.
const OBS_SCALE_HEAD: [f64; 5] = [1.0, 1.0, 0.3, 0.1, 1.0];
const OBS_SCALE_POINT: [f64; 4] = [0.1, 0.1, 1.0, 0.1];

fn obs_scale_row() -> Tensor {
    let mut data = Vec::with_capacity(OBS_DIM);
    data.extend_from_slice(&OBS_SCALE_HEAD);
    for _ in 0..10 {
        data.extend_from_slice(&OBS_SCALE_POINT);
    }
    Tensor::new(vec![OBS_DIM], data)
}

/// Actor-critic MLPs (2x64 hidden each) with a state-independent learned
/// log standard deviation; actions are tanh-squashed to the command limits.
pub struct AdapterPolicy {
    pub params: ParamSet,
    pi1: Linear,
    pi2: Linear,
    pi_head: Linear,
    pub log_std: ParamId,
    v1: Linear,
    v2: Linear,
    v_head: Linear,
}

impl AdapterPolicy {
    pub fn new(seed: u64) -> Self {
        let mut rng = Rng::new(crate::rng::derive_seed(seed, 0x61646170, 0));
        let mut params = ParamSet::new();
        let pi1 = Linear::new(&mut params, "pi.fc1", OBS_DIM, HIDDEN, &mut rng);
        let pi2 = Linear::new(&mut params, "pi.fc2", HIDDEN, HIDDEN, &mut rng);
        let pi_head = Linear::new(&mut params, "pi.head", HIDDEN, ACT_DIM, &mut rng);
        // Near-zero initial commands: coasting stays close to most references,
        // which keeps the sharp tracking term informative from the start.
        // Exploration noise must also start below the jerk indicator's bite.
        for v in params.tensor_mut(pi_head.w).data.iter_mut() {
            *v *= 0.01;
        }
        let log_std = params.add("pi.log_std", Tensor::new(vec![ACT_DIM], vec![-0.7; ACT_DIM]));
        let v1 = Linear::new(&mut params, "vf.fc1", OBS_DIM, HIDDEN, &mut rng);
        let v2 = Linear::new(&mut params, "vf.fc2", HIDDEN, HIDDEN, &mut rng);
        let v_head = Linear::new(&mut params, "vf.head", HIDDEN, 1, &mut rng);
        AdapterPolicy {
            params,
            pi1,
            pi2,
            pi_head,
            log_std,
            v1,
            v2,
            v_head,
        }
    }

    /// Pre-squash action means for a batch of observations [B, 45].
    pub fn mean_raw(&self, sess: &mut Session<'_>, obs: TapeId) -> Result<TapeId> {
        let scale = sess.tape.leaf(obs_scale_row());
        let x = sess.tape.mul_row(obs, scale)?;
        let h = self.pi1.forward(sess, x)?;
        let h = sess.tape.tanh(h);
        let h = self.pi2.forward(sess, h)?;
        let h = sess.tape.tanh(h);
        self.pi_head.forward(sess, h)
    }

    /// Value estimates [B, 1].
    pub fn value(&self, sess: &mut Session<'_>, obs: TapeId) -> Result<TapeId> {
        let scale = sess.tape.leaf(obs_scale_row());
        let x = sess.tape.mul_row(obs, scale)?;
        let h = self.v1.forward(sess, x)?;
        let h = sess.tape.tanh(h);
        let h = self.v2.forward(sess, h)?;
        let h = sess.tape.tanh(h);
        self.v_head.forward(sess, h)
    }

    fn mean_values(&self, obs: &[f64; OBS_DIM]) -> [f64; ACT_DIM] {
        let mut sess = Session::new(&self.params);
        let o = sess.tape.leaf(Tensor::new(vec![1, OBS_DIM], obs.to_vec()));
        let mu = self.mean_raw(&mut sess, o).expect("policy shapes are fixed");
        let v = sess.tape.value(mu);
        [v.data[0], v.data[1]]
    }

    fn std_values(&self) -> [f64; ACT_DIM] {
        let t = self.params.get(self.log_std);
        [t.data[0].exp(), t.data[1].exp()]
    }

    /// Deterministic (mean-mode) command.
    pub fn act_mean(&self, obs: &[f64; OBS_DIM]) -> ControlCommand {
        let mu = self.mean_values(obs);
        ControlCommand::new(
            ACTION_LIMITS[0] * (SQUASH_SCALE[0] * mu[0]).tanh(),
            ACTION_LIMITS[1] * (SQUASH_SCALE[1] * mu[1]).tanh(),
        )
    }

    /// Stochastic command; returns the pre-squash sample for the buffer.
    pub fn act_sample(&self, obs: &[f64; OBS_DIM], rng: &mut Rng) -> (ControlCommand, [f64; 2]) {
        let eps = [rng.normal(), rng.normal()];
        self.act_with_noise(obs, eps)
    }

    /// Stochastic command with caller-provided unit noise. Holding the same
    /// noise across several steps gives temporally smooth exploration, which
    /// the rate/jerk reward terms demand.
    pub fn act_with_noise(&self, obs: &[f64; OBS_DIM], eps: [f64; 2]) -> (ControlCommand, [f64; 2]) {
        let mu = self.mean_values(obs);
        let std = self.std_values();
        let z = [mu[0] + std[0] * eps[0], mu[1] + std[1] * eps[1]];
        (
            ControlCommand::new(
                ACTION_LIMITS[0] * (SQUASH_SCALE[0] * z[0]).tanh(),
                ACTION_LIMITS[1] * (SQUASH_SCALE[1] * z[1]).tanh(),
            ),
            z,
        )
    }

    /// Gaussian log-density of stored pre-squash samples under the current
    /// parameters; [B, 1]. The tanh-squash correction is constant given the
    /// stored samples, so it cancels in PPO's probability ratios and is
    /// omitted here.
    pub fn log_prob(&self, sess: &mut Session<'_>, obs: TapeId, z: TapeId) -> Result<TapeId> {
        let mu = self.mean_raw(sess, obs)?;
        let diff = sess.tape.sub(z, mu)?;
        let log_std = sess.p(self.log_std);
        let neg_log_std = sess.tape.scale(log_std, -1.0);
        let inv_std = sess.tape.exp(neg_log_std);
        let scaled = sess.tape.mul_row(diff, inv_std)?;
        let sq = sess.tape.mul(scaled, scaled)?;
        let ones = sess.tape.leaf(Tensor::new(vec![ACT_DIM, 1], vec![1.0; ACT_DIM]));
        let row_sums = sess.tape.matmul(sq, ones)?;
        let quad = sess.tape.scale(row_sums, -0.5);
        // Constant per-batch terms: -sum(log_std) - ln(2*pi).
        let sum_log_std = sess.tape.sum(log_std);
        let neg_sum = sess.tape.scale(sum_log_std, -1.0);
        let with_std = sess.tape.add_bias(quad, neg_sum)?;
        let tau = sess
            .tape
            .leaf(Tensor::new(vec![1], vec![-(std::f64::consts::TAU.ln())]));
        sess.tape.add_bias(with_std, tau)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.params.save(path, r#"{"kind":"adapter"}"#)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (loaded, meta) = ParamSet::load(path)?;
        if !meta.contains("adapter") {
            return Err(Error::Parse {
                path: path.display().to_string(),
                detail: format!("checkpoint kind {meta} is not an adapter"),
            });
        }
        let mut policy = AdapterPolicy::new(0);
        let names: Vec<String> = policy.params.names().map(String::from).collect();
        for name in names {
            let src = loaded.get_by_name(&name).ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                detail: format!("checkpoint is missing parameter `{name}`"),
            })?;
            let id = policy.params.id_of(&name).expect("fresh policy has the name");
            policy.params.tensor_mut(id).data.clone_from(&src.data);
        }
        Ok(policy)
    }
}

/// Serializable PPO hyperparameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PpoConfig {
    pub lr: f64,
    /// Total environment steps; 80k is the full run, 20k the desk default.
    pub total_steps: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub epochs: usize,
    pub minibatch: usize,
    /// Environment steps collected per iteration.
    pub rollout_steps: usize,
    pub value_coef: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            lr: 1e-3,
            total_steps: 20_000,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            epochs: 4,
            minibatch: 64,
            rollout_steps: 1_600,
            value_coef: 0.5,
        }
    }
}

impl PpoConfig {
    /// The paper-scale run length.
    pub fn full() -> Self {
        PpoConfig {
            total_steps: 80_000,
            ..PpoConfig::default()
        }
    }
}
