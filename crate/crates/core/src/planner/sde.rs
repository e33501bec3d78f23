//! Attention-based state dropout encoder.
//!
//! Each ego state variable is embedded through its own linear layer, gets a
//! learned per-slot encoding, and a single learnable query aggregates the
//! token set through cross-attention. During training each kinematic token
//! (velocity, acceleration, steering - never position or heading) is
//! independently removed from the key/value set with the configured
//! probability.

use crate::error::{Error, Result};
use crate::nn::{Linear, MultiHeadAttention, ParamId, ParamSet, Session, TapeId, Tensor};
use crate::rng::Rng;

/// Pose slots (x, y, yaw) are never dropped.
pub const KEPT_SLOTS: usize = 3;

/// How the encoder treats droppable tokens.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SdeMode {
    /// Random dropout with the given seed (training).
    Train { seed: u64 },
    /// All tokens kept (inference).
    Eval,
    /// Every droppable token removed (probing the pose-only path).
    EvalDropped,
}

#[derive(Debug, Clone)]
pub struct SdeEncoder {
    embed: Vec<Linear>,
    slot_encodings: ParamId,
    query: ParamId,
    attn: MultiHeadAttention,
    pub state_count: usize,
}

impl SdeEncoder {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        state_count: usize,
        d_model: usize,
        rng: &mut Rng,
    ) -> Self {
        assert!(state_count >= 4, "nothing to drop below 4 state variables");
        let embed = (0..state_count)
            .map(|i| Linear::new(params, &format!("{name}.embed{i}"), 1, d_model, rng))
            .collect();
        let slot_encodings = params.add(
            &format!("{name}.slots"),
            Tensor::xavier(state_count, d_model, rng),
        );
        let query = params.add(&format!("{name}.query"), Tensor::xavier(1, d_model, rng));
        let attn = MultiHeadAttention::new(params, &format!("{name}.attn"), d_model, 1, rng);
        SdeEncoder {
            embed,
            slot_encodings,
            query,
            attn,
            state_count,
        }
    }

    /// Samples the keep decisions for the droppable tokens. Pose tokens are
    /// unconditionally kept and are not represented here.
    pub fn sample_keep_mask(droppable: usize, dropout_rate: f64, rng: &mut Rng) -> Vec<bool> {
        (0..droppable)
            .map(|_| rng.uniform() >= dropout_rate)
            .collect()
    }

    /// Encodes the ego state vector into a single d_model embedding. The ego
    /// vector arrives as a [1, state_count] tape node so gradients can flow
    /// back to the raw inputs.
    pub fn encode(
        &self,
        s: &mut Session<'_>,
        ego_row: TapeId,
        dropout_rate: f64,
        mode: SdeMode,
    ) -> Result<TapeId> {
        if !(0.0..=1.0).contains(&dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout rate {dropout_rate} outside [0, 1]"
            )));
        }
        let droppable = self.state_count - KEPT_SLOTS;
        let keep: Vec<bool> = match mode {
            SdeMode::Train { seed } => {
                let mut rng = Rng::new(seed);
                Self::sample_keep_mask(droppable, dropout_rate, &mut rng)
            }
            SdeMode::Eval => vec![true; droppable],
            SdeMode::EvalDropped => vec![false; droppable],
        };

        let mut tokens = Vec::with_capacity(self.state_count);
        for i in 0..self.state_count {
            if i >= KEPT_SLOTS && !keep[i - KEPT_SLOTS] {
                continue;
            }
            let scalar = s.tape.slice_cols(ego_row, i, 1)?;
            let embedded = self.embed[i].forward(s, scalar)?;
            let slots = s.p(self.slot_encodings);
            let slot = s.tape.slice_rows(slots, i, 1)?;
            tokens.push(s.tape.add(embedded, slot)?);
        }
        let token_block = s.tape.concat_rows(&tokens)?;
        let query = s.p(self.query);
        self.attn.forward(s, query, token_block, None)
    }
}
