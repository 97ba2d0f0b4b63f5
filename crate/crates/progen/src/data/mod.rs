//! Tokenization, vocabularies, corpus files, the synthetic corpus generator
//! and checkpoint serialization.

mod checkpoint;
mod corpus;
mod synth;
mod tokenize;
mod vocab;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use corpus::{load_annotations, AnnotatedCorpus, CorpusRecord, Split};
pub use synth::{synth_corpus, synth_records, SynthConfig, SynthRecord, GLYPH_KINDS, IMAGE_SIZE};
pub use tokenize::{join_tokens, tokenize};
pub use vocab::{TokenSequence, Vocab, BOS_ID, EOS_ID, PAD_ID, UNK_ID};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid JSON: {detail}")]
    Json { path: PathBuf, detail: String },
    #[error("{path}: record {index} in split '{split}': {detail}")]
    Record {
        path: PathBuf,
        split: String,
        index: usize,
        detail: String,
    },
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("{path}: not a checkpoint (bad magic)")]
    BadMagic { path: PathBuf },
    #[error("{path}: unsupported checkpoint version {found} (supported: {supported})")]
    UnsupportedVersion {
        path: PathBuf,
        found: u32,
        supported: u32,
    },
    #[error("{path}: checkpoint corrupted: {detail}")]
    Corrupt { path: PathBuf, detail: String },
    #[error("image {path}: {detail}")]
    Image { path: PathBuf, detail: String },
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.into(),
            source,
        }
    }
}
