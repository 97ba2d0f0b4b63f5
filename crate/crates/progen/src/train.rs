//! Mini-batch Adam training with BLEU-4 model selection and early stopping.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::metrics;
use crate::model::{Example, ModelError, Seq2Seq};
use crate::tensor::{Adam, Graph, LearningRates};

#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub lrs: LearningRates,
    pub epochs: usize,
    /// Epochs without a validation BLEU-4 improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub bleu4: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub best_bleu4: f64,
    pub epochs_run: usize,
}

/// Trains in place. After returning, the model holds the parameters of the
/// epoch with the best validation BLEU-4 (greedy decoding).
pub fn train(
    model: &mut Seq2Seq,
    train_set: &[Example],
    val_set: &[Example],
    opts: &TrainOptions,
    mut on_log: impl FnMut(&EpochLog),
) -> Result<TrainSummary, ModelError> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut adam = Adam::new(model.store(), opts.lrs);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best_bleu4 = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut best_params = model.store().values_snapshot();
    let mut stale = 0usize;
    let mut epochs_run = 0usize;
    let mut indices: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=opts.epochs {
        epochs_run = epoch;
        indices.shuffle(&mut rng);
        let mut loss_weighted = 0.0;
        let mut tokens_total = 0usize;
        for chunk in indices.chunks(opts.batch_size.max(1)) {
            let batch: Vec<Example> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let mut g = Graph::training(rng.random());
            let bound = model.store().bind(&mut g);
            let loss = model.loss(&mut g, &bound, &batch)?;
            let loss_value = loss.item();
            if !loss_value.is_finite() {
                return Err(ModelError::NumericFailure {
                    context: format!("training loss became {loss_value} at epoch {epoch}"),
                });
            }
            let grads = g.backward(&loss)?;
            model.store_mut().absorb_grads(&bound, &grads)?;
            adam.step(model.store_mut())?;
            let batch_tokens: usize = batch.iter().map(|ex| ex.target.len() + 1).sum();
            loss_weighted += loss_value * batch_tokens as f64;
            tokens_total += batch_tokens;
        }
        let train_loss = loss_weighted / tokens_total as f64;
        on_log(&EpochLog {
            epoch,
            split: "train".into(),
            loss: train_loss,
            bleu4: None,
        });

        let val_loss = model.eval_loss(val_set)?;
        let bleu4 = validation_bleu4(model, val_set)?;
        on_log(&EpochLog {
            epoch,
            split: "val".into(),
            loss: val_loss,
            bleu4: Some(bleu4),
        });

        if bleu4 > best_bleu4 {
            best_bleu4 = bleu4;
            best_epoch = epoch;
            best_params = model.store().values_snapshot();
            stale = 0;
        } else {
            stale += 1;
            if stale >= opts.patience {
                break;
            }
        }
    }
    model.store_mut().restore_snapshot(&best_params)?;
    Ok(TrainSummary {
        best_epoch,
        best_bleu4,
        epochs_run,
    })
}

/// Corpus BLEU-4 of greedy decodes against the gold targets.
pub fn validation_bleu4(model: &Seq2Seq, val_set: &[Example]) -> Result<f64, ModelError> {
    let mut decoded = Vec::with_capacity(val_set.len());
    let mut gold = Vec::with_capacity(val_set.len());
    for ex in val_set {
        let out = model.decode_greedy(ex.source.as_input(), model.spec.max_out_len)?;
        decoded.push(out.tokens);
        gold.push(ex.target.clone());
    }
    let scores = metrics::bleu(&decoded, &gold).map_err(|_| ModelError::EmptyBatch)?;
    Ok(scores[3])
}
