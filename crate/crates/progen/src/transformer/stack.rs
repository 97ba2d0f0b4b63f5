//! Encoder and decoder stacks (post-norm residual blocks).

use rand_chacha::ChaCha8Rng;

use crate::tensor::{
    BoundParams, Graph, ParamGroup, ParamId, ParameterStore, Tensor, TensorError,
};

use super::attention::{Mask, MultiHeadAttention};
use super::{positional_encoding, StackConfig};

type Result<T> = std::result::Result<T, TensorError>;

const LN_EPS: f64 = 1e-5;

/// Affine map `x W + b` with Xavier-uniform weights and zero bias.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn init(
        store: &mut ParameterStore,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Self::init_grouped(store, prefix, d_in, d_out, rng, ParamGroup::Other)
    }

    pub fn init_grouped(
        store: &mut ParameterStore,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut ChaCha8Rng,
        group: ParamGroup,
    ) -> Result<Self> {
        let w = store.register_xavier(&format!("{prefix}.w"), d_in, d_out, rng, group)?;
        let b = store.register_zeros(&format!("{prefix}.b"), vec![d_out], group)?;
        Ok(Self { w, b })
    }

    pub fn forward(&self, g: &mut Graph, p: &BoundParams, x: &Tensor) -> Result<Tensor> {
        let xw = g.matmul(x, p.tensor(self.w))?;
        g.add_row(&xw, p.tensor(self.b))
    }
}

/// Layer normalization parameters (gain starts at one, bias at zero).
#[derive(Debug, Clone)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    pub fn init(store: &mut ParameterStore, prefix: &str, d: usize) -> Result<Self> {
        let gain = store.register_const(&format!("{prefix}.gain"), vec![d], 1.0, ParamGroup::Other)?;
        let bias = store.register_zeros(&format!("{prefix}.bias"), vec![d], ParamGroup::Other)?;
        Ok(Self { gain, bias })
    }

    pub fn forward(&self, g: &mut Graph, p: &BoundParams, x: &Tensor) -> Result<Tensor> {
        g.layer_norm(x, p.tensor(self.gain), p.tensor(self.bias), LN_EPS)
    }
}

/// Two-layer position-wise feed-forward block with ReLU.
#[derive(Debug, Clone)]
pub struct FeedForward {
    lin1: Linear,
    lin2: Linear,
    dropout: f64,
}

impl FeedForward {
    pub fn init(
        store: &mut ParameterStore,
        prefix: &str,
        d_model: usize,
        d_ff: usize,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Self {
            lin1: Linear::init(store, &format!("{prefix}.lin1"), d_model, d_ff, rng)?,
            lin2: Linear::init(store, &format!("{prefix}.lin2"), d_ff, d_model, rng)?,
            dropout,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &BoundParams, x: &Tensor) -> Result<Tensor> {
        let h = self.lin1.forward(g, p, x)?;
        let h = g.relu(&h)?;
        let h = g.dropout(&h, self.dropout)?;
        self.lin2.forward(g, p, &h)
    }
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    attn: MultiHeadAttention,
    norm1: LayerNormParams,
    ffn: FeedForward,
    norm2: LayerNormParams,
    dropout: f64,
}

impl EncoderLayer {
    fn forward(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        x: &Tensor,
        mask: &Mask,
    ) -> Result<Tensor> {
        let a = self.attn.forward(g, p, x, x, mask)?;
        let a = g.dropout(&a, self.dropout)?;
        let x = g.add(x, &a)?;
        let x = self.norm1.forward(g, p, &x)?;
        let f = self.ffn.forward(g, p, &x)?;
        let f = g.dropout(&f, self.dropout)?;
        let x = g.add(&x, &f)?;
        self.norm2.forward(g, p, &x)
    }
}

/// Encoder stack over pre-embedded inputs (`[len, d_model]`). Adds sinusoidal
/// positions, then applies memory-augmented self-attention blocks, returning
/// every layer's output (the meshed decoder needs all of them).
#[derive(Debug, Clone)]
pub struct Encoder {
    layers: Vec<EncoderLayer>,
    positions: Tensor,
    dropout: f64,
    max_len: usize,
}

impl Encoder {
    pub fn init(
        store: &mut ParameterStore,
        prefix: &str,
        cfg: &StackConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut layers = Vec::with_capacity(cfg.n_enc_layers);
        for l in 0..cfg.n_enc_layers {
            layers.push(EncoderLayer {
                attn: MultiHeadAttention::init_with_memory(
                    store,
                    &format!("{prefix}.l{l}.attn"),
                    cfg.attention(),
                    rng,
                )?,
                norm1: LayerNormParams::init(store, &format!("{prefix}.l{l}.norm1"), cfg.d_model)?,
                ffn: FeedForward::init(
                    store,
                    &format!("{prefix}.l{l}.ffn"),
                    cfg.d_model,
                    cfg.d_ff,
                    cfg.dropout,
                    rng,
                )?,
                norm2: LayerNormParams::init(store, &format!("{prefix}.l{l}.norm2"), cfg.d_model)?,
                dropout: cfg.dropout,
            });
        }
        Ok(Self {
            layers,
            positions: positional_encoding(cfg.max_len, cfg.d_model)?,
            dropout: cfg.dropout,
            max_len: cfg.max_len,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Runs the stack; `key_valid[j] == false` marks position `j` as padding,
    /// invisible to every attention query.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        x: &Tensor,
        key_valid: Option<&[bool]>,
    ) -> Result<Vec<Tensor>> {
        let len = x.rows();
        if len > self.max_len {
            return Err(TensorError::InvalidShape {
                op: "encoder",
                shape: x.shape().to_vec(),
                reason: format!("sequence length {len} exceeds max_len {}", self.max_len),
            });
        }
        let pos = positions_for(g, &self.positions, len)?;
        let mut h = g.add(x, &pos)?;
        h = g.dropout(&h, self.dropout)?;
        let mask = match key_valid {
            Some(valid) => Mask::key_padding(len, valid),
            None => Mask::full(len, len),
        };
        let mut outputs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            h = layer.forward(g, p, &h, &mask)?;
            outputs.push(h.clone());
        }
        Ok(outputs)
    }
}

/// Decoder cross-attention. In meshed mode every encoder layer's output is
/// attended with shared weights, and the per-layer contributions are blended
/// by elementwise sigmoid gates computed from `[state; contribution]`, then
/// scaled by `1/sqrt(L)`. In plain mode only the last encoder output is used.
#[derive(Debug, Clone)]
pub struct MeshedCross {
    attn: MultiHeadAttention,
    gates: Vec<Linear>,
    /// Test hook: force every gate to a constant instead of the learned
    /// sigmoid (None in normal operation).
    gate_override: Option<f64>,
}

impl MeshedCross {
    pub fn init(
        store: &mut ParameterStore,
        prefix: &str,
        cfg: &StackConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut attn_cfg = cfg.attention();
        attn_cfg.memory_slots = 0; // memory lives in the encoder only
        let attn = MultiHeadAttention::init(store, &format!("{prefix}.attn"), attn_cfg, rng)?;
        let mut gates = Vec::new();
        if cfg.mesh {
            for l in 0..cfg.n_enc_layers {
                gates.push(Linear::init(
                    store,
                    &format!("{prefix}.gate{l}"),
                    2 * cfg.d_model,
                    cfg.d_model,
                    rng,
                )?);
            }
        }
        Ok(Self {
            attn,
            gates,
            gate_override: None,
        })
    }

    pub fn set_gate_override(&mut self, value: Option<f64>) {
        self.gate_override = value;
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        state: &Tensor,
        enc_outputs: &[Tensor],
        mask: &Mask,
    ) -> Result<Tensor> {
        if enc_outputs.is_empty() {
            return Err(TensorError::InvalidShape {
                op: "meshed_cross",
                shape: vec![],
                reason: "no encoder outputs".into(),
            });
        }
        if self.gates.is_empty() && self.gate_override.is_none() {
            // plain mode: last encoder layer only
            let last = enc_outputs.last().expect("non-empty");
            return self.attn.forward(g, p, state, last, mask);
        }
        let n_layers = enc_outputs.len();
        if !self.gates.is_empty() && self.gates.len() != n_layers {
            return Err(TensorError::ShapeMismatch {
                op: "meshed_cross",
                lhs: vec![self.gates.len()],
                rhs: vec![n_layers],
            });
        }
        let mut total: Option<Tensor> = None;
        for (l, enc) in enc_outputs.iter().enumerate() {
            let contrib = self.attn.forward(g, p, state, enc, mask)?;
            let gated = match self.gate_override {
                Some(value) => {
                    let alpha = Tensor::new(
                        contrib.shape().to_vec(),
                        vec![value; contrib.numel()],
                    )?;
                    g.mul(&contrib, &alpha)?
                }
                None => {
                    let both = g.concat(1, &[state, &contrib])?;
                    let logits = self.gates[l].forward(g, p, &both)?;
                    let alpha = g.sigmoid(&logits)?;
                    g.mul(&alpha, &contrib)?
                }
            };
            total = Some(match total {
                Some(t) => g.add(&t, &gated)?,
                None => gated,
            });
        }
        let total = total.expect("non-empty enc_outputs");
        g.mul_scalar(&total, 1.0 / (n_layers as f64).sqrt())
    }
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    self_attn: MultiHeadAttention,
    norm1: LayerNormParams,
    cross: MeshedCross,
    norm2: LayerNormParams,
    ffn: FeedForward,
    norm3: LayerNormParams,
    dropout: f64,
}

impl DecoderLayer {
    fn forward(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        x: &Tensor,
        enc_outputs: &[Tensor],
        cross_mask: &Mask,
    ) -> Result<Tensor> {
        let len = x.rows();
        let causal = Mask::causal(len);
        let s = self.self_attn.forward(g, p, x, x, &causal)?;
        let s = g.dropout(&s, self.dropout)?;
        let x = g.add(x, &s)?;
        let x = self.norm1.forward(g, p, &x)?;
        let c = self.cross.forward(g, p, &x, enc_outputs, cross_mask)?;
        let c = g.dropout(&c, self.dropout)?;
        let x = g.add(&x, &c)?;
        let x = self.norm2.forward(g, p, &x)?;
        let f = self.ffn.forward(g, p, &x)?;
        let f = g.dropout(&f, self.dropout)?;
        let x = g.add(&x, &f)?;
        self.norm3.forward(g, p, &x)
    }
}

/// Autoregressive decoder: token embedding, causal self-attention, (meshed)
/// cross-attention, and the final vocabulary projection.
#[derive(Debug, Clone)]
pub struct Decoder {
    embedding: ParamId,
    layers: Vec<DecoderLayer>,
    out_proj: Linear,
    positions: Tensor,
    d_model: usize,
    dropout: f64,
    max_len: usize,
    vocab_size: usize,
}

impl Decoder {
    pub fn init(
        store: &mut ParameterStore,
        prefix: &str,
        cfg: &StackConfig,
        vocab_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let embedding = store.register_xavier(
            &format!("{prefix}.embed"),
            vocab_size,
            cfg.d_model,
            rng,
            ParamGroup::Other,
        )?;
        let mut layers = Vec::with_capacity(cfg.n_dec_layers);
        for l in 0..cfg.n_dec_layers {
            let mut attn_cfg = cfg.attention();
            attn_cfg.memory_slots = 0;
            layers.push(DecoderLayer {
                self_attn: MultiHeadAttention::init(
                    store,
                    &format!("{prefix}.l{l}.self_attn"),
                    attn_cfg,
                    rng,
                )?,
                norm1: LayerNormParams::init(store, &format!("{prefix}.l{l}.norm1"), cfg.d_model)?,
                cross: MeshedCross::init(store, &format!("{prefix}.l{l}.cross"), cfg, rng)?,
                norm2: LayerNormParams::init(store, &format!("{prefix}.l{l}.norm2"), cfg.d_model)?,
                ffn: FeedForward::init(
                    store,
                    &format!("{prefix}.l{l}.ffn"),
                    cfg.d_model,
                    cfg.d_ff,
                    cfg.dropout,
                    rng,
                )?,
                norm3: LayerNormParams::init(store, &format!("{prefix}.l{l}.norm3"), cfg.d_model)?,
                dropout: cfg.dropout,
            });
        }
        let out_proj = Linear::init(
            store,
            &format!("{prefix}.out"),
            cfg.d_model,
            vocab_size,
            rng,
        )?;
        Ok(Self {
            embedding,
            layers,
            out_proj,
            positions: positional_encoding(cfg.max_len, cfg.d_model)?,
            d_model: cfg.d_model,
            dropout: cfg.dropout,
            max_len: cfg.max_len,
            vocab_size,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Test hook: force all mesh gates to a constant.
    pub fn set_gate_override(&mut self, value: Option<f64>) {
        for layer in &mut self.layers {
            layer.cross.set_gate_override(value);
        }
    }

    /// Teacher-forced forward pass: logits `[len(target_ids), vocab_size]`.
    /// `src_valid` marks non-padding encoder positions.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        target_ids: &[usize],
        enc_outputs: &[Tensor],
        src_valid: Option<&[bool]>,
    ) -> Result<Tensor> {
        let len = target_ids.len();
        if len > self.max_len {
            return Err(TensorError::InvalidShape {
                op: "decoder",
                shape: vec![len],
                reason: format!("sequence length {len} exceeds max_len {}", self.max_len),
            });
        }
        let embedded = g.embed(p.tensor(self.embedding), target_ids)?;
        let embedded = g.mul_scalar(&embedded, (self.d_model as f64).sqrt())?;
        let pos = positions_for(g, &self.positions, len)?;
        let mut h = g.add(&embedded, &pos)?;
        h = g.dropout(&h, self.dropout)?;
        let src_len = enc_outputs
            .first()
            .map(|t| t.rows())
            .ok_or_else(|| TensorError::InvalidShape {
                op: "decoder",
                shape: vec![],
                reason: "no encoder outputs".into(),
            })?;
        let cross_mask = match src_valid {
            Some(valid) => Mask::key_padding(len, valid),
            None => Mask::full(len, src_len),
        };
        for layer in &self.layers {
            h = layer.forward(g, p, &h, enc_outputs, &cross_mask)?;
        }
        self.out_proj.forward(g, p, &h)
    }
}

fn positions_for(g: &mut Graph, table: &Tensor, len: usize) -> Result<Tensor> {
    let d = table.cols();
    let map = (0..len * d).map(Some).collect();
    g.gather(table, map, vec![len, d])
}
