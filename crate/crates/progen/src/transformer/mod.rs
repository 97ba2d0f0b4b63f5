//! Transformer building blocks: multi-head attention with optional memory
//! slots, meshed cross-attention over all encoder layers, positional
//! encodings, and full encoder/decoder stacks.

mod attention;
mod stack;

pub use attention::{Mask, MemorySlots, MultiHeadAttention};
pub use stack::{Decoder, Encoder, FeedForward, LayerNormParams, Linear, MeshedCross};

use crate::tensor::{Tensor, TensorError};

/// Shape of one attention sublayer.
#[derive(Debug, Clone, Copy)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub n_heads: usize,
    /// Number of learnable memory slots appended to keys/values; 0 recovers
    /// standard attention exactly.
    pub memory_slots: usize,
    pub dropout: f64,
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<(), TensorError> {
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(TensorError::InvalidShape {
                op: "attention_config",
                shape: vec![self.d_model, self.n_heads],
                reason: "d_model must be a positive multiple of n_heads".into(),
            });
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TensorError::InvalidShape {
                op: "attention_config",
                shape: vec![],
                reason: format!("dropout {} outside [0, 1)", self.dropout),
            });
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Shape of a full encoder/decoder stack.
#[derive(Debug, Clone, Copy)]
pub struct StackConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub memory_slots: usize,
    /// Meshed decoder cross-attention over all encoder layers; when false the
    /// decoder attends to the last encoder layer only (the vanilla baseline).
    pub mesh: bool,
    pub dropout: f64,
    /// Positional table size; no sequence longer than this may pass through.
    pub max_len: usize,
}

impl StackConfig {
    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            memory_slots: self.memory_slots,
            dropout: self.dropout,
        }
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        self.attention().validate()?;
        if self.d_ff == 0 || self.n_enc_layers == 0 || self.n_dec_layers == 0 || self.max_len == 0 {
            return Err(TensorError::InvalidShape {
                op: "stack_config",
                shape: vec![self.d_ff, self.n_enc_layers, self.n_dec_layers, self.max_len],
                reason: "widths, depths and max_len must be positive".into(),
            });
        }
        if !self.d_model.is_multiple_of(2) {
            return Err(TensorError::InvalidShape {
                op: "stack_config",
                shape: vec![self.d_model],
                reason: "d_model must be even for sinusoidal positions".into(),
            });
        }
        Ok(())
    }
}

/// Sinusoidal positional table: `PE[p, 2i] = sin(p / 10000^(2i/d))` and
/// `PE[p, 2i+1] = cos(...)`.
pub fn positional_encoding(max_len: usize, d_model: usize) -> Result<Tensor, TensorError> {
    if d_model == 0 || !d_model.is_multiple_of(2) {
        return Err(TensorError::InvalidShape {
            op: "positional_encoding",
            shape: vec![max_len, d_model],
            reason: "d_model must be a positive even number".into(),
        });
    }
    let mut data = Vec::with_capacity(max_len * d_model);
    for p in 0..max_len {
        for i in 0..d_model / 2 {
            let rate = (p as f64) / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            data.push(rate.sin());
            data.push(rate.cos());
        }
    }
    Tensor::new(vec![max_len, d_model], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn position_zero_alternates_zero_one() {
        let pe = positional_encoding(4, 6).unwrap();
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn all_entries_bounded_by_one() {
        let pe = positional_encoding(50, 16).unwrap();
        assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn first_position_first_channel_is_sin_one() {
        let pe = positional_encoding(4, 8).unwrap();
        assert!((pe.get2(1, 0) - 1f64.sin()).abs() < 1e-12);
        assert!((pe.get2(1, 0) - 0.841471).abs() < 1e-6);
    }

    #[test]
    fn odd_width_rejected() {
        assert!(positional_encoding(4, 7).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = AttentionConfig {
            d_model: 10,
            n_heads: 4,
            memory_slots: 0,
            dropout: 0.0,
        };
        assert!(bad.validate().is_err());
        let good = AttentionConfig {
            d_model: 12,
            n_heads: 4,
            memory_slots: 2,
            dropout: 0.1,
        };
        assert!(good.validate().is_ok());
    }
}
