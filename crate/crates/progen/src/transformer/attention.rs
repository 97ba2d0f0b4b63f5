//! Scaled dot-product attention: the standard multi-head form and the
//! memory-augmented variant that appends learnable slots to keys and values.

use rand_chacha::ChaCha8Rng;

use crate::tensor::{
    BoundParams, Graph, ParamGroup, ParamId, ParameterStore, Tensor, TensorError,
};

use super::stack::Linear;
use super::AttentionConfig;

type Result<T> = std::result::Result<T, TensorError>;

/// Boolean attention mask over `[n_queries, n_keys]`; `true` means the key
/// position may be attended to.
#[derive(Debug, Clone)]
pub struct Mask {
    pub n_queries: usize,
    pub n_keys: usize,
    allowed: Vec<bool>,
}

impl Mask {
    pub fn full(n_queries: usize, n_keys: usize) -> Self {
        Self {
            n_queries,
            n_keys,
            allowed: vec![true; n_queries * n_keys],
        }
    }

    /// Causal self-attention mask: position `i` sees keys `0..=i`.
    pub fn causal(len: usize) -> Self {
        let mut allowed = vec![false; len * len];
        for i in 0..len {
            for j in 0..=i {
                allowed[i * len + j] = true;
            }
        }
        Self {
            n_queries: len,
            n_keys: len,
            allowed,
        }
    }

    /// Key-padding mask: key `j` is visible iff `valid[j]`.
    pub fn key_padding(n_queries: usize, valid: &[bool]) -> Self {
        let n_keys = valid.len();
        let mut allowed = vec![false; n_queries * n_keys];
        for i in 0..n_queries {
            for (j, &ok) in valid.iter().enumerate() {
                allowed[i * n_keys + j] = ok;
            }
        }
        Self {
            n_queries,
            n_keys,
            allowed,
        }
    }

    /// Intersection of two masks of identical shape.
    pub fn and(&self, other: &Mask) -> Result<Mask> {
        if self.n_queries != other.n_queries || self.n_keys != other.n_keys {
            return Err(TensorError::ShapeMismatch {
                op: "mask_and",
                lhs: vec![self.n_queries, self.n_keys],
                rhs: vec![other.n_queries, other.n_keys],
            });
        }
        Ok(Mask {
            n_queries: self.n_queries,
            n_keys: self.n_keys,
            allowed: self
                .allowed
                .iter()
                .zip(&other.allowed)
                .map(|(a, b)| a & b)
                .collect(),
        })
    }

    /// Appends `extra` always-visible key columns (the memory positions).
    fn extend_keys(&self, extra: usize) -> Mask {
        let n_keys = self.n_keys + extra;
        let mut allowed = Vec::with_capacity(self.n_queries * n_keys);
        for i in 0..self.n_queries {
            allowed.extend_from_slice(&self.allowed[i * self.n_keys..(i + 1) * self.n_keys]);
            allowed.extend(std::iter::repeat_n(true, extra));
        }
        Mask {
            n_queries: self.n_queries,
            n_keys,
            allowed,
        }
    }

    pub fn allowed(&self) -> &[bool] {
        &self.allowed
    }
}

/// Learnable memory: `m` key rows and `m` value rows, shared across inputs
/// (slot contents never depend on the example) and updated by the optimizer
/// like any other parameter.
#[derive(Debug, Clone)]
pub struct MemorySlots {
    pub m: usize,
    pub keys: ParamId,
    pub values: ParamId,
}

impl MemorySlots {
    pub fn init(
        store: &mut ParameterStore,
        prefix: &str,
        m: usize,
        d_model: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let std = 1.0 / (d_model as f64).sqrt();
        let keys = store.register_gaussian(
            &format!("{prefix}.mem_k"),
            vec![m, d_model],
            std,
            rng,
            ParamGroup::Other,
        )?;
        let values = store.register_gaussian(
            &format!("{prefix}.mem_v"),
            vec![m, d_model],
            std,
            rng,
            ParamGroup::Other,
        )?;
        Ok(Self { m, keys, values })
    }
}

/// Multi-head attention with projection weights and an optional memory bank.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub cfg: AttentionConfig,
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    memory: Option<MemorySlots>,
}

impl MultiHeadAttention {
    /// Standard attention (no memory slots).
    pub fn init(
        store: &mut ParameterStore,
        prefix: &str,
        cfg: AttentionConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Self::init_inner(store, prefix, cfg, rng, false)
    }

    /// Memory-augmented attention; with `cfg.memory_slots == 0` this creates
    /// no slot parameters and is the standard form.
    pub fn init_with_memory(
        store: &mut ParameterStore,
        prefix: &str,
        cfg: AttentionConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Self::init_inner(store, prefix, cfg, rng, true)
    }

    fn init_inner(
        store: &mut ParameterStore,
        prefix: &str,
        cfg: AttentionConfig,
        rng: &mut ChaCha8Rng,
        with_memory: bool,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let wq = Linear::init(store, &format!("{prefix}.wq"), d, d, rng)?;
        let wk = Linear::init(store, &format!("{prefix}.wk"), d, d, rng)?;
        let wv = Linear::init(store, &format!("{prefix}.wv"), d, d, rng)?;
        let wo = Linear::init(store, &format!("{prefix}.wo"), d, d, rng)?;
        let memory = if with_memory && cfg.memory_slots > 0 {
            Some(MemorySlots::init(store, prefix, cfg.memory_slots, d, rng)?)
        } else {
            None
        };
        Ok(Self {
            cfg,
            wq,
            wk,
            wv,
            wo,
            memory,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        queries: &Tensor,
        keys_values: &Tensor,
        mask: &Mask,
    ) -> Result<Tensor> {
        Ok(self.forward_impl(g, p, queries, keys_values, mask)?.0)
    }

    /// Like [`Self::forward`] but also returns the per-head attention weight
    /// matrices (after masking, before dropout).
    pub fn forward_with_weights(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        queries: &Tensor,
        keys_values: &Tensor,
        mask: &Mask,
    ) -> Result<(Tensor, Vec<Tensor>)> {
        self.forward_impl(g, p, queries, keys_values, mask)
    }

    fn forward_impl(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        queries: &Tensor,
        keys_values: &Tensor,
        mask: &Mask,
    ) -> Result<(Tensor, Vec<Tensor>)> {
        let q = self.wq.forward(g, p, queries)?;
        let mut k = self.wk.forward(g, p, keys_values)?;
        let mut v = self.wv.forward(g, p, keys_values)?;
        let mut mask = mask.clone();
        if let Some(mem) = &self.memory {
            // slots are concatenated after projection and are never masked
            k = g.concat(0, &[&k, p.tensor(mem.keys)])?;
            v = g.concat(0, &[&v, p.tensor(mem.values)])?;
            mask = mask.extend_keys(mem.m);
        }
        if mask.n_queries != q.rows() || mask.n_keys != k.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "attention_mask",
                lhs: vec![q.rows(), k.rows()],
                rhs: vec![mask.n_queries, mask.n_keys],
            });
        }
        let dh = self.cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut head_outputs = Vec::with_capacity(self.cfg.n_heads);
        let mut head_weights = Vec::with_capacity(self.cfg.n_heads);
        for h in 0..self.cfg.n_heads {
            let qh = g.slice_cols(&q, h * dh, dh)?;
            let kh = g.slice_cols(&k, h * dh, dh)?;
            let vh = g.slice_cols(&v, h * dh, dh)?;
            let kt = g.transpose(&kh)?;
            let scores = g.matmul(&qh, &kt)?;
            let scores = g.mul_scalar(&scores, scale)?;
            let weights = g.masked_softmax_rows(&scores, mask.allowed())?;
            head_weights.push(weights.clone());
            let weights = g.dropout(&weights, self.cfg.dropout)?;
            head_outputs.push(g.matmul(&weights, &vh)?);
        }
        let refs: Vec<&Tensor> = head_outputs.iter().collect();
        let merged = g.concat(1, &refs)?;
        Ok((self.wo.forward(g, p, &merged)?, head_weights))
    }
}
