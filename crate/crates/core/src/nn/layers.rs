//! Network building blocks: linear layers, multi-head attention, and the
//! pre-norm transformer encoder layer.

use crate::error::Result;
use crate::nn::params::{ParamId, ParamSet, Session};
use crate::nn::tape::TapeId;
use crate::nn::tensor::Tensor;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(params: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        Linear {
            w: params.add(&format!("{name}.w"), Tensor::xavier(fan_in, fan_out, rng)),
            b: params.add(&format!("{name}.b"), Tensor::zeros(vec![fan_out])),
        }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: TapeId) -> Result<TapeId> {
        let w = s.p(self.w);
        let b = s.p(self.b);
        let h = s.tape.matmul(x, w)?;
        s.tape.add_bias(h, b)
    }
}

/// Two-layer MLP with GELU.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        fan_in: usize,
        hidden: usize,
        fan_out: usize,
        rng: &mut Rng,
    ) -> Self {
        Mlp {
            fc1: Linear::new(params, &format!("{name}.fc1"), fan_in, hidden, rng),
            fc2: Linear::new(params, &format!("{name}.fc2"), hidden, fan_out, rng),
        }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: TapeId) -> Result<TapeId> {
        let h = self.fc1.forward(s, x)?;
        let h = s.tape.gelu(h);
        self.fc2.forward(s, h)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(params: &mut ParamSet, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: params.add(&format!("{name}.gamma"), Tensor::new(vec![dim], vec![1.0; dim])),
            beta: params.add(&format!("{name}.beta"), Tensor::zeros(vec![dim])),
        }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: TapeId) -> Result<TapeId> {
        let gamma = s.p(self.gamma);
        let beta = s.p(self.beta);
        s.tape.layer_norm(x, gamma, beta)
    }
}

/// Standard multi-head attention with packed projections.
#[derive(Debug, Clone, Copy)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
    pub d_model: usize,
}

impl MultiHeadAttention {
    pub fn new(params: &mut ParamSet, name: &str, d_model: usize, heads: usize, rng: &mut Rng) -> Self {
        assert_eq!(d_model % heads, 0, "d_model must divide into heads");
        MultiHeadAttention {
            wq: Linear::new(params, &format!("{name}.wq"), d_model, d_model, rng),
            wk: Linear::new(params, &format!("{name}.wk"), d_model, d_model, rng),
            wv: Linear::new(params, &format!("{name}.wv"), d_model, d_model, rng),
            wo: Linear::new(params, &format!("{name}.wo"), d_model, d_model, rng),
            heads,
            d_model,
        }
    }

    /// `mask`, when present, is added to the attention logits ([Tq, Tk];
    /// large negative entries disable pairs).
    pub fn forward(
        &self,
        s: &mut Session<'_>,
        query_input: TapeId,
        kv_input: TapeId,
        mask: Option<TapeId>,
    ) -> Result<TapeId> {
        let q = self.wq.forward(s, query_input)?;
        let k = self.wk.forward(s, kv_input)?;
        let v = self.wv.forward(s, kv_input)?;
        let dh = self.d_model / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let mut head_outputs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = s.tape.slice_cols(q, h * dh, dh)?;
            let kh = s.tape.slice_cols(k, h * dh, dh)?;
            let vh = s.tape.slice_cols(v, h * dh, dh)?;
            let kt = s.tape.transpose(kh);
            let logits = s.tape.matmul(qh, kt)?;
            let logits = s.tape.scale(logits, scale);
            let logits = match mask {
                Some(m) => s.tape.add(logits, m)?,
                None => logits,
            };
            let attn = s.tape.softmax(logits);
            head_outputs.push(s.tape.matmul(attn, vh)?);
        }
        let merged = s.tape.concat_cols(&head_outputs)?;
        self.wo.forward(s, merged)
    }
}

/// Pre-norm transformer encoder layer: x + MHA(LN(x)), then x + FFN(LN(x)).
#[derive(Debug, Clone, Copy)]
pub struct TransformerLayer {
    pub attn: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub ffn: Mlp,
    pub ln2: LayerNorm,
}

impl TransformerLayer {
    pub fn new(params: &mut ParamSet, name: &str, d_model: usize, heads: usize, rng: &mut Rng) -> Self {
        TransformerLayer {
            attn: MultiHeadAttention::new(params, &format!("{name}.attn"), d_model, heads, rng),
            ln1: LayerNorm::new(params, &format!("{name}.ln1"), d_model),
            ffn: Mlp::new(
                params,
                &format!("{name}.ffn"),
                d_model,
                4 * d_model,
                d_model,
                rng,
            ),
            ln2: LayerNorm::new(params, &format!("{name}.ln2"), d_model),
        }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: TapeId) -> Result<TapeId> {
        let normed = self.ln1.forward(s, x)?;
        let attended = self.attn.forward(s, normed, normed, None)?;
        let x = s.tape.add(x, attended)?;
        let normed = self.ln2.forward(s, x)?;
        let ff = self.ffn.forward(s, normed)?;
        s.tape.add(x, ff)
    }
}
