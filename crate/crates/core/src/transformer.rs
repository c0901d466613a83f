//! The decoder forward pass for a single token.

use crate::arena::RunState;
use crate::error::{Error, Result};
use crate::kernels::{self, KernelVariant};
use crate::model_format::{MappedWeights, ModelConfig};

/// One generation session: borrowed weights plus a private run state.
///
/// Any number of sessions may share one [`MappedWeights`].
#[derive(Debug)]
pub struct TransformerSession<'w> {
    config: ModelConfig,
    weights: &'w MappedWeights,
    state: RunState,
    variant: KernelVariant,
}

impl<'w> TransformerSession<'w> {
    pub fn new(weights: &'w MappedWeights, variant: KernelVariant) -> Result<Self> {
        let config = *weights.config();
        let state = RunState::new(&config)?;
        Ok(Self {
            config,
            weights,
            state,
            variant,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> KernelVariant {
        self.variant
    }

    pub fn weights(&self) -> &'w MappedWeights {
        self.weights
    }

    pub fn state(&self) -> &RunState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut RunState {
        &mut self.state
    }

    /// Logits left by the last [`forward`](Self::forward) call.
    pub fn logits(&self) -> &[f32] {
        &self.state.logits
    }

    /// Runs every layer for `token` at `pos` and returns the logits.
    ///
    /// Keys and values for `pos` are written into the cache; attention reads
    /// cache rows `0..=pos` only. Performs no heap allocation.
    pub fn forward(&mut self, token: usize, pos: usize) -> Result<&[f32]> {
        let cfg = self.config;
        if pos >= cfg.seq_len {
            return Err(Error::SequenceOverflow {
                pos,
                seq_len: cfg.seq_len,
            });
        }
        if token >= cfg.vocab_size {
            return Err(Error::TokenOutOfRange {
                token,
                vocab_size: cfg.vocab_size,
            });
        }

        let v = self.variant;
        let w = self.weights;
        let s = &mut self.state;
        let head_size = cfg.head_size();
        let kv_dim = cfg.kv_dim();
        let kv_group = cfg.kv_group();
        let seq_len = cfg.seq_len;
        let score_scale = (head_size as f32).sqrt();

        s.x.copy_from_slice(w.embedding(token));

        for l in 0..cfg.n_layers {
            let lw = w.layer(l);

            kernels::rmsnorm(&mut s.xb, &s.x, lw.rms_att_weight, v);

            let layer_base = l * seq_len * kv_dim;
            let row = layer_base + pos * kv_dim;
            let k_row = &mut s.key_cache[row..row + kv_dim];
            kernels::gemv(&mut s.q, lw.wq, &s.xb, v);
            kernels::gemv(k_row, lw.wk, &s.xb, v);
            kernels::gemv(&mut s.value_cache[row..row + kv_dim], lw.wv, &s.xb, v);
            kernels::rope_apply(
                &mut s.q,
                &mut s.key_cache[row..row + kv_dim],
                pos,
                head_size,
                v,
            );

            for h in 0..cfg.n_heads {
                let q = &s.q[h * head_size..(h + 1) * head_size];
                let att = &mut s.att[h * seq_len..h * seq_len + pos + 1];
                let kv_off = (h / kv_group) * head_size;

                for (t, score) in att.iter_mut().enumerate() {
                    let k = &s.key_cache[layer_base + t * kv_dim + kv_off..][..head_size];
                    *score = kernels::dot(q, k, v) / score_scale;
                }
                kernels::softmax_inplace(att, v);

                let out = &mut s.xb[h * head_size..(h + 1) * head_size];
                out.fill(0.0);
                for (t, &a) in att.iter().enumerate() {
                    let val = &s.value_cache[layer_base + t * kv_dim + kv_off..][..head_size];
                    kernels::axpy(out, a, val, v);
                }
            }

            kernels::gemv(&mut s.xb2, lw.wo, &s.xb, v);
            kernels::residual_add(&mut s.x, &s.xb2, v);

            kernels::rmsnorm(&mut s.xb, &s.x, lw.rms_ffn_weight, v);
            kernels::gemv(&mut s.hb, lw.w1, &s.xb, v);
            kernels::gemv(&mut s.hb2, lw.w3, &s.xb, v);
            kernels::swiglu_inplace(&mut s.hb, &s.hb2, v);
            kernels::gemv(&mut s.xb, lw.w2, &s.hb, v);
            kernels::residual_add(&mut s.x, &s.xb, v);
        }

        kernels::rmsnorm_inplace(&mut s.x, w.rms_final_weight(), v);
        kernels::gemv(&mut s.logits, w.wcls(), &s.x, v);
        Ok(&s.logits)
    }
}
