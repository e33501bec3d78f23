//! The learned planner: per-class encoders, a transformer encoder backbone
//! over the token set, an 80-point trajectory head for the ego, and an
//! auxiliary future-prediction head for every agent token.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Mlp, ParamId, ParamSet, Session, TapeId, Tensor, TransformerLayer};
use crate::planner::features::{InputVariant, PlannerFeatures, VariantConfig};
use crate::planner::sde::{SdeEncoder, SdeMode};
use crate::rng::Rng;
use crate::scenario::{Pose, FUTURE_LEN, HISTORY_LEN, POLYLINE_LEN};
use crate::trajectory::PlannedTrajectory;

/// Internal feature scaling: positions and speeds into decameters so every
/// encoder input is O(1).
const POS_SCALE: f64 = 0.1;
const AGENT_ROW_SCALE: [f64; 5] = [POS_SCALE, POS_SCALE, 1.0, 1.0, POS_SCALE];
const MAP_ROW_SCALE: [f64; 4] = [POS_SCALE, POS_SCALE, 1.0, POS_SCALE];
const EGO_SCALE: [f64; 6] = [POS_SCALE, POS_SCALE, 1.0, POS_SCALE, 0.5, 1.0];

const AGENT_FLAT: usize = HISTORY_LEN * 5;
const MAP_FLAT: usize = POLYLINE_LEN * 4;
const ENC_HIDDEN: usize = 128;
const HEAD_HIDDEN: usize = 256;

pub struct PlannerModel {
    pub cfg: VariantConfig,
    pub params: ParamSet,
    arch: Architecture,
}

impl Clone for PlannerModel {
    fn clone(&self) -> Self {
        PlannerModel {
            cfg: self.cfg,
            params: self.params.clone(),
            arch: self.arch.clone(),
        }
    }
}

#[derive(Clone)]
struct Architecture {
    agent_enc: Mlp,
    map_enc: Mlp,
    ego_state_enc: Option<Mlp>,
    ego_history_enc: Option<Mlp>,
    sde: Option<SdeEncoder>,
    type_ego: ParamId,
    type_agent: ParamId,
    type_map: ParamId,
    layers: Vec<TransformerLayer>,
    final_ln: LayerNorm,
    ego_head: Mlp,
    agent_head: Mlp,
}

/// How a forward pass treats the SDE dropout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ForwardMode {
    Train { dropout_seed: u64 },
    Eval,
    /// SDE models only: every droppable token removed.
    EvalDropped,
}

/// Tape handles from one forward pass, for loss building and sensitivities.
pub struct ForwardArtifacts {
    /// [80, 3] scaled trajectory (x, y in decameters, yaw in radians).
    pub plan_scaled: TapeId,
    /// Per-agent [80, 2] scaled position predictions, aligned with the
    /// feature agent order.
    pub agent_preds_scaled: Vec<TapeId>,
    /// The raw (unscaled) ego input leaf, when the variant has one.
    pub ego_input: Option<TapeId>,
}

/// Eval-mode planner output.
pub struct PlanOutput {
    /// Ego-frame trajectory at plan time.
    pub trajectory: PlannedTrajectory,
    /// Per-agent predicted future positions (ego frame).
    pub agent_predictions: Vec<Vec<(f64, f64)>>,
}

fn build_architecture(cfg: &VariantConfig, params: &mut ParamSet, rng: &mut Rng) -> Architecture {
    let d = cfg.d_model;
    let agent_enc = Mlp::new(params, "agent_enc", AGENT_FLAT, ENC_HIDDEN, d, rng);
    let map_enc = Mlp::new(params, "map_enc", MAP_FLAT, ENC_HIDDEN, d, rng);

    let mut ego_state_enc = None;
    let mut ego_history_enc = None;
    let mut sde = None;
    match cfg.input_variant {
        InputVariant::HistoryShared => {}
        InputVariant::HistorySeparate => {
            ego_history_enc = Some(Mlp::new(params, "ego_hist_enc", AGENT_FLAT, ENC_HIDDEN, d, rng));
        }
        state => {
            let k = state.state_count().expect("state variant");
            if cfg.use_sde {
                sde = Some(SdeEncoder::new(params, "sde", k, d, rng));
            } else {
                ego_state_enc = Some(Mlp::new(params, "ego_enc", k, 64, d, rng));
            }
        }
    }

    let type_ego = params.add("type.ego", Tensor::xavier(1, d, rng));
    let type_agent = params.add("type.agent", Tensor::xavier(1, d, rng));
    let type_map = params.add("type.map", Tensor::xavier(1, d, rng));

    let layers = (0..cfg.layers)
        .map(|i| TransformerLayer::new(params, &format!("layer{i}"), d, cfg.heads, rng))
        .collect();
    let final_ln = LayerNorm::new(params, "final_ln", d);
    let ego_head = Mlp::new(params, "ego_head", d, HEAD_HIDDEN, FUTURE_LEN * 3, rng);
    let agent_head = Mlp::new(params, "agent_head", d, HEAD_HIDDEN, FUTURE_LEN * 2, rng);

    Architecture {
        agent_enc,
        map_enc,
        ego_state_enc,
        ego_history_enc,
        sde,
        type_ego,
        type_agent,
        type_map,
        layers,
        final_ln,
        ego_head,
        agent_head,
    }
}

fn scaled_rows<const W: usize>(rows: &[[f64; W]], scale: &[f64; W]) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * W);
    for row in rows {
        for (v, s) in row.iter().zip(scale) {
            out.push(v * s);
        }
    }
    out
}

impl PlannerModel {
    pub fn new(cfg: VariantConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::new(crate::rng::derive_seed(seed, 0x706c616e, 1));
        let mut params = ParamSet::new();
        let arch = build_architecture(&cfg, &mut params, &mut rng);
        Ok(PlannerModel { cfg, params, arch })
    }

    /// Forward pass on a fresh session. Feature/variant mismatches error.
    pub fn forward(
        &self,
        sess: &mut Session<'_>,
        feats: &PlannerFeatures,
        mode: ForwardMode,
    ) -> Result<ForwardArtifacts> {
        if feats.variant != self.cfg.input_variant {
            return Err(Error::InvalidConfig(format!(
                "features are for `{}` but the model expects `{}`",
                feats.variant, self.cfg.input_variant
            )));
        }
        let d = self.cfg.d_model;

        // Ego token.
        let mut ego_input = None;
        let ego_token: TapeId = match self.cfg.input_variant {
            InputVariant::HistoryShared | InputVariant::HistorySeparate => {
                let history = feats
                    .ego_history
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("history features missing".into()))?;
                let flat = sess.tape.leaf(Tensor::new(
                    vec![1, AGENT_FLAT],
                    scaled_rows(history, &AGENT_ROW_SCALE),
                ));
                match self.cfg.input_variant {
                    InputVariant::HistoryShared => self.arch.agent_enc.forward(sess, flat)?,
                    _ => self
                        .arch
                        .ego_history_enc
                        .as_ref()
                        .expect("separate history encoder")
                        .forward(sess, flat)?,
                }
            }
            state => {
                let k = state.state_count().expect("state variant");
                if feats.ego_vector.len() != k {
                    return Err(Error::InvalidConfig(format!(
                        "ego vector has {} values, variant `{state}` needs {k}",
                        feats.ego_vector.len()
                    )));
                }
                // Raw leaf (for sensitivities), scaled on-tape.
                let raw = sess
                    .tape
                    .leaf(Tensor::new(vec![1, k], feats.ego_vector.clone()));
                ego_input = Some(raw);
                let scale = sess
                    .tape
                    .leaf(Tensor::new(vec![1, k], EGO_SCALE[..k].to_vec()));
                let scaled = sess.tape.mul(raw, scale)?;
                match (&self.arch.sde, mode) {
                    (Some(sde), ForwardMode::Train { dropout_seed }) => sde.encode(
                        sess,
                        scaled,
                        self.cfg.sde_dropout,
                        SdeMode::Train { seed: dropout_seed },
                    )?,
                    (Some(sde), ForwardMode::Eval) => {
                        sde.encode(sess, scaled, self.cfg.sde_dropout, SdeMode::Eval)?
                    }
                    (Some(sde), ForwardMode::EvalDropped) => {
                        sde.encode(sess, scaled, self.cfg.sde_dropout, SdeMode::EvalDropped)?
                    }
                    (None, _) => self
                        .arch
                        .ego_state_enc
                        .as_ref()
                        .expect("plain ego encoder")
                        .forward(sess, scaled)?,
                }
            }
        };
        let type_ego = sess.p(self.arch.type_ego);
        let ego_token = sess.tape.add(ego_token, type_ego)?;

        // Agent tokens.
        let num_agents = feats.agents.len();
        let agent_tokens = if num_agents > 0 {
            let mut flat = Vec::with_capacity(num_agents * AGENT_FLAT);
            for a in &feats.agents {
                flat.extend(scaled_rows(a, &AGENT_ROW_SCALE));
            }
            let block = sess
                .tape
                .leaf(Tensor::new(vec![num_agents, AGENT_FLAT], flat));
            let enc = self.arch.agent_enc.forward(sess, block)?;
            let type_agent = self.arch.type_agent;
            let t = sess.p(type_agent);
            let t_row = sess.tape.reshape(t, vec![d])?;
            Some(sess.tape.add_bias(enc, t_row)?)
        } else {
            None
        };

        // Map tokens.
        let num_maps = feats.maps.len();
        if num_maps == 0 {
            return Err(Error::InvalidConfig("no map polylines in features".into()));
        }
        let mut flat = Vec::with_capacity(num_maps * MAP_FLAT);
        for m in &feats.maps {
            flat.extend(scaled_rows(m, &MAP_ROW_SCALE));
        }
        let block = sess.tape.leaf(Tensor::new(vec![num_maps, MAP_FLAT], flat));
        let enc = self.arch.map_enc.forward(sess, block)?;
        let t = sess.p(self.arch.type_map);
        let t_row = sess.tape.reshape(t, vec![d])?;
        let map_tokens = sess.tape.add_bias(enc, t_row)?;

        // Backbone over the token set (no token-order encodings: the scene is
        // a set, so agent permutations cannot change the plan).
        let mut parts = vec![ego_token];
        if let Some(a) = agent_tokens {
            parts.push(a);
        }
        parts.push(map_tokens);
        let mut x = sess.tape.concat_rows(&parts)?;
        for layer in &self.arch.layers {
            x = layer.forward(sess, x)?;
        }
        let x = self.arch.final_ln.forward(sess, x)?;

        // Heads.
        let ego_out = sess.tape.slice_rows(x, 0, 1)?;
        let plan_flat = self.arch.ego_head.forward(sess, ego_out)?;
        let plan_scaled = sess.tape.reshape(plan_flat, vec![FUTURE_LEN, 3])?;

        let mut agent_preds_scaled = Vec::with_capacity(num_agents);
        if num_agents > 0 {
            let agent_out = sess.tape.slice_rows(x, 1, num_agents)?;
            let preds = self.arch.agent_head.forward(sess, agent_out)?;
            for i in 0..num_agents {
                let row = sess.tape.slice_rows(preds, i, 1)?;
                agent_preds_scaled.push(sess.tape.reshape(row, vec![FUTURE_LEN, 2])?);
            }
        }

        Ok(ForwardArtifacts {
            plan_scaled,
            agent_preds_scaled,
            ego_input,
        })
    }

    /// Deterministic eval-mode planning.
    pub fn plan(&self, feats: &PlannerFeatures) -> Result<PlanOutput> {
        let mut sess = Session::new(&self.params);
        let art = self.forward(&mut sess, feats, ForwardMode::Eval)?;
        let plan = sess.tape.value(art.plan_scaled);
        let poses: Vec<Pose> = (0..FUTURE_LEN)
            .map(|i| {
                Pose::new(
                    plan.data[i * 3] / POS_SCALE,
                    plan.data[i * 3 + 1] / POS_SCALE,
                    plan.data[i * 3 + 2],
                )
            })
            .collect();
        let agent_predictions = art
            .agent_preds_scaled
            .iter()
            .map(|&id| {
                let v = sess.tape.value(id);
                (0..FUTURE_LEN)
                    .map(|i| (v.data[i * 2] / POS_SCALE, v.data[i * 2 + 1] / POS_SCALE))
                    .collect()
            })
            .collect();
        Ok(PlanOutput {
            trajectory: PlannedTrajectory::new(poses)?,
            agent_predictions,
        })
    }

    /// Converts a metric-space target into the head's scaled representation.
    pub fn scale_plan_target(target: &[Pose]) -> Tensor {
        let mut data = Vec::with_capacity(target.len() * 3);
        for p in target {
            data.push(p.x * POS_SCALE);
            data.push(p.y * POS_SCALE);
            data.push(p.yaw);
        }
        Tensor::new(vec![target.len(), 3], data)
    }

    pub fn scale_agent_target(target: &[Pose]) -> Tensor {
        let mut data = Vec::with_capacity(target.len() * 2);
        for p in target {
            data.push(p.x * POS_SCALE);
            data.push(p.y * POS_SCALE);
        }
        Tensor::new(vec![target.len(), 2], data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::to_string(&CheckpointMeta {
            kind: "planner".into(),
            variant: self.cfg,
        })
        .expect("meta serializes");
        self.params.save(path, &meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (loaded, meta) = ParamSet::load(path)?;
        let meta: CheckpointMeta = serde_json::from_str(&meta).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            detail: format!("checkpoint metadata: {e}"),
        })?;
        if meta.kind != "planner" {
            return Err(Error::Parse {
                path: path.display().to_string(),
                detail: format!("checkpoint kind `{}` is not a planner", meta.kind),
            });
        }
        let mut model = PlannerModel::new(meta.variant, 0)?;
        // Rebuild with the stored values, matched by name.
        let names: Vec<String> = model.params.names().map(String::from).collect();
        for name in names {
            let src = loaded.get_by_name(&name).ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                detail: format!("checkpoint is missing parameter `{name}`"),
            })?;
            let id = model.params.id_of(&name).expect("fresh model has the name");
            let dst = model.params.tensor_mut(id);
            if dst.shape != src.shape {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    detail: format!("parameter `{name}` has shape {:?}, expected {:?}", src.shape, dst.shape),
                });
            }
            dst.data.clone_from(&src.data);
        }
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    kind: String,
    variant: VariantConfig,
}

/// Gradient magnitudes of the plan endpoint's distance with respect to each
/// ego state variable, with a finite-difference cross-check.
#[derive(Debug, Clone)]
pub struct SensitivityReport {
    /// Reverse-mode gradients, padded to 6 slots (absent inputs are 0).
    pub autodiff: [f64; 6],
    /// Central finite differences of the same quantity.
    pub finite_diff: [f64; 6],
}

/// d ||(X_T, Y_T)|| / d s0 for the endpoint of the planned trajectory.
pub fn endpoint_sensitivity(
    model: &PlannerModel,
    feats: &PlannerFeatures,
    mode: ForwardMode,
) -> Result<SensitivityReport> {
    let mut autodiff = [0.0; 6];
    let mut finite_diff = [0.0; 6];

    let k = feats.ego_vector.len();
    let endpoint_norm = |f: &PlannerFeatures| -> Result<f64> {
        let mut sess = Session::new(&model.params);
        let art = model.forward(&mut sess, f, mode)?;
        let plan = sess.tape.value(art.plan_scaled);
        let (x, y) = (
            plan.data[(FUTURE_LEN - 1) * 3] / POS_SCALE,
            plan.data[(FUTURE_LEN - 1) * 3 + 1] / POS_SCALE,
        );
        Ok((x * x + y * y).sqrt())
    };

    if k > 0 {
        let mut sess = Session::new(&model.params);
        let art = model.forward(&mut sess, feats, mode)?;
        let ep = sess.tape.slice_rows(art.plan_scaled, FUTURE_LEN - 1, 1)?;
        let xy = sess.tape.slice_cols(ep, 0, 2)?;
        let sq = sess.tape.mul(xy, xy)?;
        let sum = sess.tape.sum(sq);
        let norm_scaled = sess.tape.sqrt(sum);
        // Undo the head's position scaling so the norm is in meters.
        let norm = sess.tape.scale(norm_scaled, 1.0 / POS_SCALE);
        let grads = sess.tape.backward(norm);
        if let Some(input) = art.ego_input {
            if let Some(g) = &grads[input.index()] {
                for (i, v) in g.data.iter().enumerate() {
                    autodiff[i] = *v;
                }
            }
        }

        for i in 0..k {
            let eps = 1e-4;
            let mut up = feats.clone();
            up.ego_vector[i] += eps;
            let mut down = feats.clone();
            down.ego_vector[i] -= eps;
            finite_diff[i] = (endpoint_norm(&up)? - endpoint_norm(&down)?) / (2.0 * eps);
        }
    }

    Ok(SensitivityReport {
        autodiff,
        finite_diff,
    })
}
