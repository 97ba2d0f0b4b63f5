//! Greedy and beam-search decoding over any autoregressive step function,
//! plus an exhaustive-search oracle for verification.
//!
//! A step function maps a prefix (starting with BOS) to next-token log
//! probabilities. Decoders are generic over the step function's error type so
//! both real models and scripted test models fit.

use std::cmp::Ordering;

use crate::data::{BOS_ID, EOS_ID};

/// Decoding parameters. `beam_size == 1` behaves exactly like greedy search.
#[derive(Debug, Clone, Copy)]
pub struct DecodeConfig {
    pub beam_size: usize,
    /// Maximum number of emitted tokens (the EOS emission counts as one).
    pub max_len: usize,
    /// Length-normalization exponent: hypotheses are ranked by
    /// `logprob / len^alpha`. Zero (the default) ranks by raw log-probability.
    pub length_norm_alpha: f64,
}

impl DecodeConfig {
    pub fn new(beam_size: usize, max_len: usize) -> Self {
        Self {
            beam_size: beam_size.max(1),
            max_len: max_len.max(1),
            length_norm_alpha: 0.0,
        }
    }
}

/// A finished or truncated hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    /// Body tokens: BOS and EOS are not included.
    pub tokens: Vec<usize>,
    /// Cumulative log-probability of every emitted token, including the EOS
    /// step when the hypothesis finished.
    pub log_prob: f64,
    /// True when no EOS was emitted within `max_len` steps.
    pub truncated: bool,
}

impl Decoded {
    /// Emitted-step count used for length normalization (at least 1).
    fn steps(&self) -> usize {
        (self.tokens.len() + usize::from(!self.truncated)).max(1)
    }

    fn score(&self, alpha: f64) -> f64 {
        self.log_prob / (self.steps() as f64).powf(alpha)
    }
}

/// Orders candidates best-first: score descending, ties broken by
/// lexicographically smaller token sequence.
fn better(a_score: f64, a_tokens: &[usize], b_score: f64, b_tokens: &[usize]) -> Ordering {
    b_score
        .partial_cmp(&a_score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a_tokens.cmp(b_tokens))
}

/// Argmax chain until EOS or `max_len` emissions; ties pick the smallest
/// token id.
pub fn greedy_decode<E>(
    mut step: impl FnMut(&[usize]) -> Result<Vec<f64>, E>,
    max_len: usize,
) -> Result<Decoded, E> {
    let mut prefix = vec![BOS_ID];
    let mut log_prob = 0.0;
    for _ in 0..max_len.max(1) {
        let lp = step(&prefix)?;
        let (tok, tok_lp) = argmax(&lp);
        log_prob += tok_lp;
        if tok == EOS_ID {
            return Ok(Decoded {
                tokens: prefix[1..].to_vec(),
                log_prob,
                truncated: false,
            });
        }
        prefix.push(tok);
    }
    Ok(Decoded {
        tokens: prefix[1..].to_vec(),
        log_prob,
        truncated: true,
    })
}

fn argmax(lp: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &v) in lp.iter().enumerate() {
        if v > lp[best] {
            best = i;
        }
    }
    (best, lp[best])
}

#[derive(Debug, Clone)]
struct Hypothesis {
    tokens: Vec<usize>,
    log_prob: f64,
}

/// Standard beam search. Finished hypotheses are held aside and compete at
/// finalization under the length-normalized score; if nothing finished, the
/// best truncated hypothesis is returned with `truncated` set.
pub fn beam_search<E>(
    mut step: impl FnMut(&[usize]) -> Result<Vec<f64>, E>,
    cfg: &DecodeConfig,
) -> Result<Decoded, E> {
    let mut active = vec![Hypothesis {
        tokens: vec![],
        log_prob: 0.0,
    }];
    let mut finished: Vec<Decoded> = Vec::new();
    for _ in 0..cfg.max_len {
        if active.is_empty() {
            break;
        }
        let mut candidates: Vec<Hypothesis> = Vec::new();
        for hyp in &active {
            let mut prefix = Vec::with_capacity(hyp.tokens.len() + 1);
            prefix.push(BOS_ID);
            prefix.extend_from_slice(&hyp.tokens);
            let lp = step(&prefix)?;
            for (tok, &tok_lp) in lp.iter().enumerate() {
                let mut tokens = hyp.tokens.clone();
                tokens.push(tok);
                candidates.push(Hypothesis {
                    tokens,
                    log_prob: hyp.log_prob + tok_lp,
                });
            }
        }
        candidates.sort_by(|a, b| better(a.log_prob, &a.tokens, b.log_prob, &b.tokens));
        active = Vec::with_capacity(cfg.beam_size);
        for cand in candidates.into_iter().take(cfg.beam_size) {
            if cand.tokens.last() == Some(&EOS_ID) {
                finished.push(Decoded {
                    tokens: cand.tokens[..cand.tokens.len() - 1].to_vec(),
                    log_prob: cand.log_prob,
                    truncated: false,
                });
            } else {
                active.push(cand);
            }
        }
    }
    if finished.is_empty() {
        for hyp in active {
            finished.push(Decoded {
                tokens: hyp.tokens,
                log_prob: hyp.log_prob,
                truncated: true,
            });
        }
    }
    finished.sort_by(|a, b| {
        better(
            a.score(cfg.length_norm_alpha),
            &a.tokens,
            b.score(cfg.length_norm_alpha),
            &b.tokens,
        )
    });
    Ok(finished.into_iter().next().expect("at least one hypothesis"))
}

/// True argmax over all complete sequences of at most `max_len` emissions.
///
/// Test oracle: enumerates every path, so the state space `vocab^max_len`
/// must stay at or below one million (asserted).
pub fn exhaustive_decode<E>(
    mut step: impl FnMut(&[usize]) -> Result<Vec<f64>, E>,
    max_len: usize,
) -> Result<Decoded, E> {
    let vocab = step(&[BOS_ID])?.len();
    let states = (vocab as f64).powi(max_len as i32);
    assert!(
        states <= 1e6,
        "exhaustive_decode guard: {vocab}^{max_len} = {states} exceeds 1e6 states"
    );
    let mut finished: Vec<Decoded> = Vec::new();
    let mut truncated: Vec<Decoded> = Vec::new();
    let mut stack = vec![(vec![BOS_ID], 0.0)];
    while let Some((prefix, log_prob)) = stack.pop() {
        let lp = step(&prefix)?;
        for (tok, &tok_lp) in lp.iter().enumerate() {
            let total = log_prob + tok_lp;
            if tok == EOS_ID {
                finished.push(Decoded {
                    tokens: prefix[1..].to_vec(),
                    log_prob: total,
                    truncated: false,
                });
            } else {
                let mut next = prefix.clone();
                next.push(tok);
                if next.len() - 1 == max_len {
                    truncated.push(Decoded {
                        tokens: next[1..].to_vec(),
                        log_prob: total,
                        truncated: true,
                    });
                } else {
                    stack.push((next, total));
                }
            }
        }
    }
    let mut pool = if finished.is_empty() { truncated } else { finished };
    pool.sort_by(|a, b| better(a.score(0.0), &a.tokens, b.score(0.0), &b.tokens));
    Ok(pool.into_iter().next().expect("vocab is non-empty"))
}

/// Re-scores a token sequence through the step function: the sum of the
/// per-step log-probabilities of `tokens`, plus the EOS step when
/// `include_eos` is set.
pub fn score_sequence<E>(
    mut step: impl FnMut(&[usize]) -> Result<Vec<f64>, E>,
    tokens: &[usize],
    include_eos: bool,
) -> Result<f64, E> {
    let mut prefix = vec![BOS_ID];
    let mut total = 0.0;
    for &tok in tokens {
        total += step(&prefix)?[tok];
        prefix.push(tok);
    }
    if include_eos {
        total += step(&prefix)?[EOS_ID];
    }
    Ok(total)
}

/// Numerically stable log-softmax over a logit slice.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + logits.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}
