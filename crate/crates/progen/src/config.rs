//! Run configuration: a JSON file with optional sections layered over a
//! built-in preset. Unknown keys anywhere are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::tensor::LearningRates;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Invalid { path: PathBuf, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Tiny configuration every test suite uses; trains in minutes on a CPU.
    #[default]
    Desk,
    /// The full-scale configuration (not trainable at desk scale).
    Paper,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct RawConfig {
    preset: Preset,
    seed: Option<u64>,
    paths: RawPaths,
    model: RawModel,
    training: RawTraining,
    decode: RawDecode,
    vocab: RawVocab,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct RawPaths {
    annotations: Option<PathBuf>,
    lexicon: Option<PathBuf>,
    concepts: Option<PathBuf>,
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct RawModel {
    d_model: Option<usize>,
    n_heads: Option<usize>,
    n_enc_layers: Option<usize>,
    n_dec_layers: Option<usize>,
    d_ff: Option<usize>,
    memory_slots: Option<usize>,
    mesh: Option<bool>,
    dropout: Option<f64>,
    patch_size: Option<usize>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct RawTraining {
    batch_size: Option<usize>,
    lr_visual: Option<f64>,
    lr_other: Option<f64>,
    epochs: Option<usize>,
    patience: Option<usize>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct RawDecode {
    beam_size: Option<usize>,
    max_concept_len: Option<usize>,
    max_report_len: Option<usize>,
    length_norm_alpha: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct RawVocab {
    min_freq: Option<usize>,
}

/// Fully resolved configuration.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub annotations: PathBuf,
    /// Absent means the built-in clinical lexicon.
    pub lexicon: Option<PathBuf>,
    /// Absent means `<out_dir>/concepts.json`.
    pub concepts: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ff: usize,
    pub memory_slots: usize,
    pub mesh: bool,
    pub dropout: f64,
    pub patch_size: usize,
    pub batch_size: usize,
    pub lr_visual: f64,
    pub lr_other: f64,
    pub epochs: usize,
    pub patience: usize,
    pub beam_size: usize,
    pub max_concept_len: usize,
    pub max_report_len: usize,
    pub length_norm_alpha: f64,
    pub min_freq: usize,
}

impl RunConfig {
    pub fn learning_rates(&self) -> LearningRates {
        LearningRates {
            visual: self.lr_visual,
            other: self.lr_other,
        }
    }

    /// Loads and validates a config file; relative paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.into(),
            source: e,
        })?;
        let mut raw: RawConfig =
            serde_json::from_str(&text).map_err(|e| ConfigError::Invalid {
                path: path.into(),
                detail: e.to_string(),
            })?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        let annotations = raw
            .paths
            .annotations
            .take()
            .map(&resolve)
            .ok_or_else(|| ConfigError::Invalid {
                path: path.into(),
                detail: "paths.annotations is required".into(),
            })?;
        let out_dir = raw
            .paths
            .out_dir
            .take()
            .map(&resolve)
            .ok_or_else(|| ConfigError::Invalid {
                path: path.into(),
                detail: "paths.out_dir is required".into(),
            })?;
        let lexicon = raw.paths.lexicon.take().map(&resolve);
        let concepts = raw.paths.concepts.take().map(&resolve);
        let cfg = RunConfig::resolve(raw, annotations, out_dir, lexicon, concepts);
        cfg.validate().map_err(|detail| ConfigError::Invalid {
            path: path.into(),
            detail,
        })?;
        Ok(cfg)
    }

    fn resolve(
        raw: RawConfig,
        annotations: PathBuf,
        out_dir: PathBuf,
        lexicon: Option<PathBuf>,
        concepts: Option<PathBuf>,
    ) -> RunConfig {
        // preset model shapes; everything else shares defaults
        let (d_model, n_heads, layers, d_ff, memory) = match raw.preset {
            Preset::Desk => (64, 4, 2, 128, 8),
            Preset::Paper => (512, 8, 3, 2048, 40),
        };
        RunConfig {
            preset: raw.preset,
            seed: raw.seed.unwrap_or(0),
            lexicon,
            concepts,
            annotations,
            out_dir,
            d_model: raw.model.d_model.unwrap_or(d_model),
            n_heads: raw.model.n_heads.unwrap_or(n_heads),
            n_enc_layers: raw.model.n_enc_layers.unwrap_or(layers),
            n_dec_layers: raw.model.n_dec_layers.unwrap_or(layers),
            d_ff: raw.model.d_ff.unwrap_or(d_ff),
            memory_slots: raw.model.memory_slots.unwrap_or(memory),
            mesh: raw.model.mesh.unwrap_or(true),
            dropout: raw.model.dropout.unwrap_or(0.1),
            patch_size: raw.model.patch_size.unwrap_or(8),
            batch_size: raw.training.batch_size.unwrap_or(16),
            lr_visual: raw.training.lr_visual.unwrap_or(5e-5),
            lr_other: raw.training.lr_other.unwrap_or(1e-4),
            epochs: raw.training.epochs.unwrap_or(30),
            patience: raw.training.patience.unwrap_or(20),
            beam_size: raw.decode.beam_size.unwrap_or(3),
            max_concept_len: raw.decode.max_concept_len.unwrap_or(60),
            max_report_len: raw.decode.max_report_len.unwrap_or(100),
            length_norm_alpha: raw.decode.length_norm_alpha.unwrap_or(0.0),
            min_freq: raw.vocab.min_freq.unwrap_or(3),
        }
    }

    fn validate(&self) -> Result<(), String> {
        let positive = [
            ("model.d_model", self.d_model),
            ("model.n_heads", self.n_heads),
            ("model.n_enc_layers", self.n_enc_layers),
            ("model.n_dec_layers", self.n_dec_layers),
            ("model.d_ff", self.d_ff),
            ("model.patch_size", self.patch_size),
            ("training.batch_size", self.batch_size),
            ("training.epochs", self.epochs),
            ("training.patience", self.patience),
            ("decode.beam_size", self.beam_size),
            ("decode.max_concept_len", self.max_concept_len),
            ("decode.max_report_len", self.max_report_len),
            ("vocab.min_freq", self.min_freq),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(format!("{name} must be positive"));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err("model.d_model must be a multiple of model.n_heads".into());
        }
        if !self.d_model.is_multiple_of(2) {
            return Err("model.d_model must be even".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err("model.dropout must lie in [0, 1)".into());
        }
        if !(self.lr_visual > 0.0 && self.lr_other > 0.0) {
            return Err("learning rates must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.length_norm_alpha) {
            return Err("decode.length_norm_alpha must lie in [0, 1]".into());
        }
        Ok(())
    }
}
