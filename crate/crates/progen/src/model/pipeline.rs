//! Chained inference: images -> concept skeleton -> report.

use crate::backbone::Image;
use crate::data::TokenSequence;
use crate::decode::DecodeConfig;

use super::{ModelError, Result, SourceInput, TrainedModel};

/// What one stage produced, with its truncation flag (no EOS within budget).
#[derive(Debug, Clone, PartialEq)]
pub struct StageOutput {
    pub tokens: TokenSequence,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProgressiveOutput {
    /// Decoded concept skeleton (vocabulary of the first stage).
    pub concepts: StageOutput,
    /// Final report (vocabulary of the second stage).
    pub report: StageOutput,
}

impl ProgressiveOutput {
    pub fn concept_text(&self, vilm: &TrainedModel) -> String {
        self.concepts.tokens.to_text(&vilm.tgt_vocab)
    }

    pub fn report_text(&self, lm: &TrainedModel) -> String {
        self.report.tokens.to_text(&lm.tgt_vocab)
    }
}

/// Two-stage generation: decode the concept skeleton from the images, then
/// decode the report conditioned on those concept tokens. An empty first-stage
/// decode falls back to the "none" placeholder so the second stage always has
/// input. Both stages use the same decode configuration.
pub fn generate_progressive(
    vilm: &TrainedModel,
    lm: &TrainedModel,
    images: &[Image],
    cfg: &DecodeConfig,
) -> Result<ProgressiveOutput> {
    let stage1 = vilm.model.decode(SourceInput::Images(images), cfg)?;
    let lm_src_vocab = lm.src_vocab.as_ref().ok_or(ModelError::Checkpoint {
        detail: "second stage has no source vocabulary".into(),
    })?;
    let concept_ids = if stage1.tokens.is_empty() {
        vec![lm_src_vocab.id(crate::concepts::EMPTY_CONTEXT)]
    } else {
        stage1.tokens.clone()
    };
    let stage2 = lm.model.decode(SourceInput::Tokens(&concept_ids), cfg)?;
    Ok(ProgressiveOutput {
        concepts: StageOutput {
            tokens: TokenSequence::new(stage1.tokens),
            truncated: stage1.truncated,
        },
        report: StageOutput {
            tokens: TokenSequence::new(stage2.tokens),
            truncated: stage2.truncated,
        },
    })
}

/// Baseline: one stage straight from images to report tokens.
pub fn generate_single_stage(
    model: &TrainedModel,
    images: &[Image],
    cfg: &DecodeConfig,
) -> Result<StageOutput> {
    let out = model.model.decode(SourceInput::Images(images), cfg)?;
    Ok(StageOutput {
        tokens: TokenSequence::new(out.tokens),
        truncated: out.truncated,
    })
}
