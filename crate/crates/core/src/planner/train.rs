//! Imitation training with the perturbation/re-normalization/future-
//! correction augmentation pipeline.

use serde::{Deserialize, Serialize};

use crate::augment::{correct_future, perturb_state, renormalize, smooth_history, PerturbConfig};
use crate::dynamics::BicycleParams;
use crate::error::{Error, Result};
use crate::nn::{cosine_lr, AdamW, Session, Tensor};
use crate::planner::features::{extract_features, PlannerFeatures, VariantConfig};
use crate::planner::model::{ForwardMode, PlannerModel};
use crate::rng::{derive_seed, Rng};
use crate::scenario::{normalize_to_frame, poses_in_frame, Scenario};

/// Augmentation toggles mirroring the P / RN / FC pipeline stages.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub perturb: bool,
    pub renormalize: bool,
    pub future_correction: bool,
    pub ranges: PerturbConfig,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        // Flagship configuration: perturb + re-normalize, supervise with the
        // original expert future.
        AugmentConfig {
            perturb: true,
            renormalize: true,
            future_correction: false,
            ranges: PerturbConfig::default(),
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig {
            perturb: false,
            renormalize: false,
            future_correction: false,
            ranges: PerturbConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    /// Weight of the auxiliary agent-prediction loss.
    pub agent_loss_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 25,
            batch_size: 128,
            base_lr: 1e-3,
            weight_decay: 1e-4,
            agent_loss_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Mean loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    pub steps: usize,
}

/// One training sample: model inputs plus scaled supervision tensors.
struct SampleData {
    features: PlannerFeatures,
    plan_target: Tensor,
    agent_targets: Vec<Tensor>,
}

/// Assembles the (possibly augmented) training sample for one scenario.
/// Pipeline order: perturb -> smooth history -> re-normalize? -> correct
/// future?; without re-normalization features stay in the original ego frame
/// and supervision is expressed there too.
fn build_sample(
    scenario: &Scenario,
    variant: &VariantConfig,
    aug: &AugmentConfig,
    sample_seed: u64,
) -> Result<SampleData> {
    let mut rng = Rng::new(sample_seed);
    let apply = aug.perturb && rng.chance(aug.ranges.apply_probability);

    let original = *scenario.current_ego();
    let mut snap = scenario.snapshot();

    let (frame_state, supervision) = if apply {
        let perturbed = perturb_state(&original, &aug.ranges, derive_seed(sample_seed, 11, 1));
        snap.ego_history = smooth_history(&scenario.ego_history, &perturbed);
        snap.ego = perturbed;
        let frame_state = if aug.renormalize { perturbed } else { original };
        let supervision = if aug.future_correction {
            correct_future(&scenario.expert_future, &perturbed, &BicycleParams::default())?
                .trajectory
                .poses()
                .to_vec()
        } else {
            scenario.expert_future.clone()
        };
        (frame_state, supervision)
    } else {
        (original, scenario.expert_future.clone())
    };

    let frame = frame_state.pose;
    let normalized = if aug.renormalize || !apply {
        renormalize(&snap, &frame_state)
    } else {
        normalize_to_frame(&snap, &original.pose)
    };
    let features = extract_features(&normalized, variant.input_variant);

    let plan_target = PlannerModel::scale_plan_target(&poses_in_frame(&supervision, &frame));

    // Agent supervision follows the feature agent order.
    let mut agent_targets = Vec::with_capacity(normalized.agent_ids.len());
    for id in &normalized.agent_ids {
        let track = scenario
            .agents
            .iter()
            .find(|a| a.id == *id)
            .expect("feature agent exists in the scenario");
        agent_targets.push(PlannerModel::scale_agent_target(&poses_in_frame(
            &track.future,
            &frame,
        )));
    }

    Ok(SampleData {
        features,
        plan_target,
        agent_targets,
    })
}

/// Trains a planner by imitation. Deterministic given (dataset order, seed).
pub fn train_imitation(
    dataset: &[Scenario],
    variant: VariantConfig,
    aug: &AugmentConfig,
    hyper: &TrainConfig,
    seed: u64,
) -> Result<(PlannerModel, TrainReport)> {
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("empty training dataset".into()));
    }
    variant.validate()?;

    let mut model = PlannerModel::new(variant, derive_seed(seed, 0x696e6974, 0))?;
    let mut opt = AdamW::new(&model.params, hyper.weight_decay);

    let n = dataset.len();
    let batches_per_epoch = n.div_ceil(hyper.batch_size);
    let total_steps = hyper.epochs * batches_per_epoch;

    let mut step_losses = Vec::with_capacity(total_steps);
    let mut epoch_losses = Vec::with_capacity(hyper.epochs);
    let mut step = 0usize;

    for epoch in 0..hyper.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng = Rng::new(derive_seed(seed, 0x6f726465, epoch as u64));
        shuffle_rng.shuffle(&mut order);

        let mut epoch_loss = 0.0;
        for chunk in order.chunks(hyper.batch_size) {
            let mut grad_sum: Vec<Option<Tensor>> = vec![None; model.params.len()];
            let mut batch_loss = 0.0;

            for &idx in chunk {
                let sample_seed =
                    derive_seed(seed, (epoch * n + idx) as u64, 0x73616d70);
                let sample = build_sample(&dataset[idx], &variant, aug, sample_seed)?;

                let mut sess = Session::new(&model.params);
                let art = model.forward(
                    &mut sess,
                    &sample.features,
                    ForwardMode::Train {
                        dropout_seed: derive_seed(sample_seed, 0x64726f70, 0),
                    },
                )?;

                let target = sess.tape.leaf(sample.plan_target.clone());
                let mut loss = sess.tape.mse_loss(art.plan_scaled, target)?;

                if !art.agent_preds_scaled.is_empty() && hyper.agent_loss_weight > 0.0 {
                    let preds = sess.tape.concat_rows(&art.agent_preds_scaled)?;
                    let mut t_data = Vec::new();
                    for t in &sample.agent_targets {
                        t_data.extend_from_slice(&t.data);
                    }
                    let rows = t_data.len() / 2;
                    let targets = sess.tape.leaf(Tensor::new(vec![rows, 2], t_data));
                    let agent_loss = sess.tape.mse_loss(preds, targets)?;
                    let weighted = sess.tape.scale(agent_loss, hyper.agent_loss_weight);
                    loss = sess.tape.add(loss, weighted)?;
                }

                let loss_value = sess.tape.value(loss).item();
                if !loss_value.is_finite() {
                    return Err(Error::TrainingDiverged(format!(
                        "non-finite loss at epoch {epoch}, scenario `{}`",
                        dataset[idx].id
                    )));
                }
                batch_loss += loss_value;

                for (slot, g) in grad_sum.iter_mut().zip(sess.param_grads(loss)) {
                    match (slot.as_mut(), g) {
                        (Some(acc), Some(g)) => {
                            for (a, b) in acc.data.iter_mut().zip(&g.data) {
                                *a += b;
                            }
                        }
                        (None, Some(g)) => *slot = Some(g),
                        _ => {}
                    }
                }
            }

            let scale = 1.0 / chunk.len() as f64;
            for g in grad_sum.iter_mut().flatten() {
                for v in g.data.iter_mut() {
                    *v *= scale;
                }
            }
            let lr = cosine_lr(step, total_steps, hyper.base_lr);
            opt.step(&mut model.params, &grad_sum, lr);
            step += 1;

            let mean_loss = batch_loss / chunk.len() as f64;
            step_losses.push(mean_loss);
            epoch_loss += mean_loss;
        }
        epoch_losses.push(epoch_loss / batches_per_epoch as f64);
    }

    Ok((
        model,
        TrainReport {
            epoch_losses,
            step_losses,
            steps: step,
        },
    ))
}

/// Builds eval-time features for a scenario (no augmentation, normalized to
/// the current ego pose).
pub fn eval_features(scenario: &Scenario, variant: &VariantConfig) -> PlannerFeatures {
    let normalized = normalize_to_frame(&scenario.snapshot(), &scenario.current_ego().pose);
    extract_features(&normalized, variant.input_variant)
}
