//! The two pipeline stages assembled from the lower layers.
//!
//! Both stages are the same encoder-decoder shape over different source
//! kinds: the visual stage encodes patch features from images and decodes the
//! concept skeleton; the text stage encodes concept tokens and decodes the
//! report. A third use of the same shape, fed images and trained on reports
//! directly, is the single-stage baseline.

mod pipeline;

pub use pipeline::{generate_progressive, generate_single_stage, ProgressiveOutput, StageOutput};

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneConfig, BackboneError, ConvBackbone, Image};
use crate::data::{self, DataError, Vocab, BOS_ID, EOS_ID, PAD_ID};
use crate::decode::{self, DecodeConfig, Decoded};
use crate::tensor::{
    BoundParams, Graph, ParamGroup, ParamId, ParameterStore, Tensor, TensorError,
};
use crate::transformer::{Decoder, Encoder, StackConfig};

use thiserror::Error;

type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("decoder prefix must start with BOS")]
    PrefixMustStartWithBos,
    #[error("token source must be non-empty")]
    EmptySource,
    #[error("model expects a {expected} source")]
    SourceKind { expected: &'static str },
    #[error("token id {id} out of range for vocab size {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("numeric failure: {context}")]
    NumericFailure { context: String },
    #[error("checkpoint: {detail}")]
    Checkpoint { detail: String },
}

impl ModelError {
    /// True for failures of arithmetic itself (NaN/overflow) rather than of
    /// inputs or contracts; these get their own process exit code.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            ModelError::NumericFailure { .. }
                | ModelError::Tensor(TensorError::NonFinite { .. })
                | ModelError::Backbone(BackboneError::Tensor(TensorError::NonFinite { .. }))
        )
    }
}

/// Serializable description of a stage's architecture.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub source: SourceSpec,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub memory_slots: usize,
    pub mesh: bool,
    pub dropout: f64,
    /// Longest source sequence (patches or tokens) the encoder accepts.
    pub max_src_len: usize,
    /// Longest generated body; the decoder table adds one slot for BOS.
    pub max_out_len: usize,
    pub tgt_vocab_size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceSpec {
    Visual {
        patch_size: usize,
        feature_channels: [usize; 2],
    },
    Tokens { src_vocab_size: usize },
}

impl ModelSpec {
    fn encoder_stack(&self) -> StackConfig {
        StackConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            n_enc_layers: self.n_enc_layers,
            n_dec_layers: self.n_dec_layers,
            memory_slots: self.memory_slots,
            mesh: self.mesh,
            dropout: self.dropout,
            max_len: self.max_src_len,
        }
    }

    fn decoder_stack(&self) -> StackConfig {
        let mut cfg = self.encoder_stack();
        cfg.max_len = self.max_out_len + 1; // room for the BOS offset
        cfg
    }
}

/// Example: one (source, target) pair. Targets are raw body token ids; BOS,
/// EOS and padding are applied internally.
#[derive(Debug, Clone)]
pub struct Example {
    pub source: SourceData,
    pub target: Vec<usize>,
}

#[derive(Debug, Clone)]
pub enum SourceData {
    Images(Vec<Image>),
    Tokens(Vec<usize>),
}

impl SourceData {
    pub fn as_input(&self) -> SourceInput<'_> {
        match self {
            SourceData::Images(images) => SourceInput::Images(images),
            SourceData::Tokens(ids) => SourceInput::Tokens(ids),
        }
    }
}

/// Borrowed view of a source.
#[derive(Debug, Clone, Copy)]
pub enum SourceInput<'a> {
    Images(&'a [Image]),
    Tokens(&'a [usize]),
}

enum SourceModule {
    Visual(ConvBackbone),
    Tokens { embed: ParamId, vocab_size: usize },
}

/// One encoder-decoder stage with its parameter store.
pub struct Seq2Seq {
    pub spec: ModelSpec,
    store: ParameterStore,
    source: SourceModule,
    encoder: Encoder,
    decoder: Decoder,
}

impl Seq2Seq {
    /// Builds a freshly initialized stage; identical seeds give bitwise
    /// identical parameters.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let source = match &spec.source {
            SourceSpec::Visual {
                patch_size,
                feature_channels,
            } => {
                let mut cfg = BackboneConfig::new(*patch_size, spec.d_model);
                cfg.conv1_channels = feature_channels[0];
                cfg.conv2_channels = feature_channels[1];
                SourceModule::Visual(ConvBackbone::init(&mut store, "backbone", cfg, &mut rng)?)
            }
            SourceSpec::Tokens { src_vocab_size } => SourceModule::Tokens {
                embed: store.register_xavier(
                    "src_embed",
                    *src_vocab_size,
                    spec.d_model,
                    &mut rng,
                    ParamGroup::Other,
                )?,
                vocab_size: *src_vocab_size,
            },
        };
        let encoder = Encoder::init(&mut store, "enc", &spec.encoder_stack(), &mut rng)?;
        let decoder = Decoder::init(
            &mut store,
            "dec",
            &spec.decoder_stack(),
            spec.tgt_vocab_size,
            &mut rng,
        )?;
        Ok(Self {
            spec,
            store,
            source,
            encoder,
            decoder,
        })
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    /// Test hook, forwarded to every decoder layer's mesh gates.
    pub fn set_gate_override(&mut self, value: Option<f64>) {
        self.decoder.set_gate_override(value);
    }

    /// Encodes a source into the per-layer output list.
    pub fn encode(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        source: SourceInput<'_>,
    ) -> Result<Vec<Tensor>> {
        let embedded = match (&self.source, source) {
            (SourceModule::Visual(backbone), SourceInput::Images(images)) => {
                backbone.extract(g, p, images)?.features
            }
            (SourceModule::Tokens { embed, vocab_size }, SourceInput::Tokens(ids)) => {
                if ids.is_empty() {
                    return Err(ModelError::EmptySource);
                }
                if let Some(&bad) = ids.iter().find(|&&id| id >= *vocab_size) {
                    return Err(ModelError::TokenOutOfRange {
                        id: bad,
                        vocab: *vocab_size,
                    });
                }
                let e = g.embed(p.tensor(*embed), ids)?;
                g.mul_scalar(&e, (self.spec.d_model as f64).sqrt())?
            }
            (SourceModule::Visual(_), _) => {
                return Err(ModelError::SourceKind { expected: "visual" })
            }
            (SourceModule::Tokens { .. }, _) => {
                return Err(ModelError::SourceKind { expected: "token" })
            }
        };
        Ok(self.encoder.forward(g, p, &embedded, None)?)
    }

    /// Teacher-forced logits for a BOS-led prefix: `[len(prefix), |V|]`.
    pub fn logits(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        source: SourceInput<'_>,
        prefix: &[usize],
    ) -> Result<Tensor> {
        if prefix.first() != Some(&BOS_ID) {
            return Err(ModelError::PrefixMustStartWithBos);
        }
        let enc_outputs = self.encode(g, p, source)?;
        self.logits_with_encoded(g, p, &enc_outputs, prefix)
    }

    fn logits_with_encoded(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        enc_outputs: &[Tensor],
        prefix: &[usize],
    ) -> Result<Tensor> {
        Ok(self.decoder.forward(g, p, prefix, enc_outputs, None)?)
    }

    /// Mean token negative log-likelihood over a batch, weighted so the batch
    /// value equals the token-mean over all examples.
    pub fn loss(&self, g: &mut Graph, p: &BoundParams, batch: &[Example]) -> Result<Tensor> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let total_tokens: usize = batch.iter().map(|ex| ex.target.len() + 1).sum();
        let mut acc: Option<Tensor> = None;
        for ex in batch {
            let mut prefix = Vec::with_capacity(ex.target.len() + 1);
            prefix.push(BOS_ID);
            prefix.extend_from_slice(&ex.target);
            let mut targets = ex.target.clone();
            targets.push(EOS_ID);
            let logits = self.logits(g, p, ex.source.as_input(), &prefix)?;
            let ce = g.cross_entropy(&logits, &targets, PAD_ID)?;
            let weighted = g.mul_scalar(&ce, targets.len() as f64 / total_tokens as f64)?;
            acc = Some(match acc {
                Some(a) => g.add(&a, &weighted)?,
                None => weighted,
            });
        }
        Ok(acc.expect("non-empty batch"))
    }

    /// Loss value only (no tape), for validation.
    pub fn eval_loss(&self, batch: &[Example]) -> Result<f64> {
        let mut g = Graph::inference();
        let p = self.store.bind(&mut g);
        Ok(self.loss(&mut g, &p, batch)?.item())
    }

    /// Beam-search decode for one source. Deterministic given parameters,
    /// source and config.
    pub fn decode(&self, source: SourceInput<'_>, cfg: &DecodeConfig) -> Result<Decoded> {
        let mut g = Graph::inference();
        let p = self.store.bind(&mut g);
        let enc_outputs = self.encode(&mut g, &p, source)?;
        let step = |prefix: &[usize]| -> Result<Vec<f64>> {
            let logits = self.logits_with_encoded(&mut g, &p, &enc_outputs, prefix)?;
            let last = logits.row(logits.rows() - 1);
            Ok(decode::log_softmax(last))
        };
        let mut cfg = *cfg;
        cfg.max_len = cfg.max_len.min(self.spec.max_out_len);
        decode::beam_search(step, &cfg)
    }

    /// Greedy decode (beam of one).
    pub fn decode_greedy(&self, source: SourceInput<'_>, max_len: usize) -> Result<Decoded> {
        let cfg = DecodeConfig::new(1, max_len.min(self.spec.max_out_len));
        self.decode(source, &cfg)
    }
}

/// A stage bundled with the vocabularies it was trained over; the unit that
/// checkpoints store.
pub struct TrainedModel {
    pub model: Seq2Seq,
    /// Token vocabulary of the source side (absent for the visual stage).
    pub src_vocab: Option<Vocab>,
    pub tgt_vocab: Vocab,
}

impl TrainedModel {
    pub fn save(&self, path: &Path) -> std::result::Result<(), DataError> {
        let config = serde_json::json!({
            "model": self.model.spec,
            "src_vocab": self.src_vocab.as_ref().map(|v| v.token_list().to_vec()),
            "tgt_vocab": self.tgt_vocab.token_list().to_vec(),
        });
        let mut params: BTreeMap<String, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
        for p in self.model.store.iter() {
            params.insert(p.name.clone(), (p.shape.clone(), p.value.clone()));
        }
        data::save_checkpoint(path, &config, &params)
    }

    pub fn load(path: &Path) -> Result<TrainedModel> {
        let ckpt = data::load_checkpoint(path)?;
        let spec: ModelSpec = serde_json::from_value(ckpt.config["model"].clone())
            .map_err(|e| ModelError::Checkpoint {
                detail: format!("bad model spec: {e}"),
            })?;
        let src_vocab: Option<Vec<String>> =
            serde_json::from_value(ckpt.config["src_vocab"].clone()).map_err(|e| {
                ModelError::Checkpoint {
                    detail: format!("bad src vocab: {e}"),
                }
            })?;
        let tgt_vocab: Vec<String> = serde_json::from_value(ckpt.config["tgt_vocab"].clone())
            .map_err(|e| ModelError::Checkpoint {
                detail: format!("bad tgt vocab: {e}"),
            })?;
        let mut model = Seq2Seq::init(spec, 0)?;
        if ckpt.params.len() != model.store.len() {
            return Err(ModelError::Checkpoint {
                detail: format!(
                    "parameter count mismatch: file has {}, model needs {}",
                    ckpt.params.len(),
                    model.store.len()
                ),
            });
        }
        model.store.load_values(&ckpt.params)?;
        Ok(TrainedModel {
            model,
            src_vocab: src_vocab.map(Vocab::from_token_list),
            tgt_vocab: Vocab::from_token_list(tgt_vocab),
        })
    }
}

/// Convenience constructors for the three stage roles.
pub mod presets {
    use super::*;

    /// Visual-to-concepts stage (memory and meshing on by default).
    #[allow(clippy::too_many_arguments)]
    pub fn vilm_spec(
        d_model: usize,
        n_heads: usize,
        layers: usize,
        d_ff: usize,
        memory_slots: usize,
        patch_size: usize,
        max_patches: usize,
        max_concept_len: usize,
        concept_vocab: usize,
    ) -> ModelSpec {
        ModelSpec {
            source: SourceSpec::Visual {
                patch_size,
                feature_channels: [8, 16],
            },
            d_model,
            n_heads,
            d_ff,
            n_enc_layers: layers,
            n_dec_layers: layers,
            memory_slots,
            mesh: true,
            dropout: 0.1,
            max_src_len: max_patches,
            max_out_len: max_concept_len,
            tgt_vocab_size: concept_vocab,
        }
    }

    /// Concepts-to-report stage (plain transformer: no memory, no meshing).
    #[allow(clippy::too_many_arguments)]
    pub fn lm_spec(
        d_model: usize,
        n_heads: usize,
        layers: usize,
        d_ff: usize,
        max_concept_len: usize,
        max_report_len: usize,
        concept_vocab: usize,
        report_vocab: usize,
    ) -> ModelSpec {
        ModelSpec {
            source: SourceSpec::Tokens {
                src_vocab_size: concept_vocab,
            },
            d_model,
            n_heads,
            d_ff,
            n_enc_layers: layers,
            n_dec_layers: layers,
            memory_slots: 0,
            mesh: false,
            dropout: 0.1,
            max_src_len: max_concept_len,
            max_out_len: max_report_len,
            tgt_vocab_size: report_vocab,
        }
    }
}
