//! Corpus-level text generation metrics and clinical-efficacy scoring.
//!
//! BLEU is the corpus statistic (clipped n-gram counts pooled over pairs,
//! geometric mean, brevity penalty, no smoothing). ROUGE-L and METEOR-lite
//! are per-pair scores averaged over the corpus. Clinical efficacy compares
//! the positive disease labels extracted from generated and reference
//! reports, micro-averaged.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use thiserror::Error;

use crate::concepts::{extract_mentions, Lexicon, Polarity};
use crate::data::tokenize;
use crate::par::parallel_map;

pub const ROUGE_BETA: f64 = 1.2;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("metric over an empty corpus")]
    EmptyCorpus,
    #[error("candidate and reference corpora differ in length: {candidates} vs {references}")]
    LengthMismatch {
        candidates: usize,
        references: usize,
    },
}

/// Scores for one generated-vs-reference corpus.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub bleu: [f64; 4],
    pub meteor: f64,
    pub rouge_l: f64,
    pub ce: CeScores,
    pub n_pairs: usize,
    pub runs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CeScores {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
}

impl EvalReport {
    /// Arithmetic mean of several runs' reports, field by field.
    pub fn average(reports: &[EvalReport]) -> Result<EvalReport, MetricsError> {
        if reports.is_empty() {
            return Err(MetricsError::EmptyCorpus);
        }
        let n = reports.len() as f64;
        let mut bleu = [0.0; 4];
        for r in reports {
            for (acc, v) in bleu.iter_mut().zip(&r.bleu) {
                *acc += v;
            }
        }
        bleu.iter_mut().for_each(|v| *v /= n);
        Ok(EvalReport {
            bleu,
            meteor: reports.iter().map(|r| r.meteor).sum::<f64>() / n,
            rouge_l: reports.iter().map(|r| r.rouge_l).sum::<f64>() / n,
            ce: CeScores {
                p: reports.iter().map(|r| r.ce.p).sum::<f64>() / n,
                r: reports.iter().map(|r| r.ce.r).sum::<f64>() / n,
                f1: reports.iter().map(|r| r.ce.f1).sum::<f64>() / n,
            },
            n_pairs: reports[0].n_pairs,
            runs: reports.len(),
        })
    }
}

// ---- BLEU -----------------------------------------------------------------

#[derive(Debug, Default, Clone, Copy)]
struct BleuCounts {
    clipped: [usize; 4],
    total: [usize; 4],
    cand_len: usize,
    ref_len: usize,
}

fn bleu_pair_counts<T: Eq + Hash + Clone>(cand: &[T], reference: &[T]) -> BleuCounts {
    let mut counts = BleuCounts {
        cand_len: cand.len(),
        ref_len: reference.len(),
        ..Default::default()
    };
    for n in 1..=4usize {
        if cand.len() < n {
            continue;
        }
        counts.total[n - 1] = cand.len() - n + 1;
        let mut ref_ngrams: HashMap<&[T], usize> = HashMap::new();
        if reference.len() >= n {
            for w in reference.windows(n) {
                *ref_ngrams.entry(w).or_insert(0) += 1;
            }
        }
        let mut cand_ngrams: HashMap<&[T], usize> = HashMap::new();
        for w in cand.windows(n) {
            *cand_ngrams.entry(w).or_insert(0) += 1;
        }
        counts.clipped[n - 1] = cand_ngrams
            .iter()
            .map(|(gram, c)| (*c).min(ref_ngrams.get(gram).copied().unwrap_or(0)))
            .sum();
    }
    counts
}

fn bleu_from_counts(pairs: &[BleuCounts]) -> [f64; 4] {
    let mut clipped = [0usize; 4];
    let mut total = [0usize; 4];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for c in pairs {
        for n in 0..4 {
            clipped[n] += c.clipped[n];
            total[n] += c.total[n];
        }
        cand_len += c.cand_len;
        ref_len += c.ref_len;
    }
    let bp = if cand_len == 0 {
        0.0
    } else if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    let mut scores = [0.0; 4];
    for (k, score) in scores.iter_mut().enumerate() {
        // geometric mean of p_1..p_{k+1}; any zero precision zeroes the score
        let mut log_sum = 0.0;
        let mut valid = true;
        for n in 0..=k {
            if clipped[n] == 0 || total[n] == 0 {
                valid = false;
                break;
            }
            log_sum += (clipped[n] as f64 / total[n] as f64).ln();
        }
        *score = if valid {
            bp * (log_sum / (k + 1) as f64).exp()
        } else {
            0.0
        };
    }
    scores
}

/// Corpus BLEU-1..4 over pre-tokenized corpora (modified n-gram precision
/// with brevity penalty, geometric mean, no smoothing).
pub fn bleu<T: Eq + Hash + Clone>(
    candidates: &[Vec<T>],
    references: &[Vec<T>],
) -> Result<[f64; 4], MetricsError> {
    check_corpora(candidates.len(), references.len())?;
    let counts: Vec<BleuCounts> = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| bleu_pair_counts(c, r))
        .collect();
    Ok(bleu_from_counts(&counts))
}

// ---- ROUGE-L ---------------------------------------------------------------

fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    // iterative DP, two rows
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn rouge_l_pair<T: Eq>(cand: &[T], reference: &[T]) -> f64 {
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(cand, reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let recall = lcs / reference.len() as f64;
    let precision = lcs / cand.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * recall * precision / (recall + b2 * precision)
}

/// Mean LCS F-measure (beta = 1.2) over pairs.
pub fn rouge_l<T: Eq + Sync>(
    candidates: &[Vec<T>],
    references: &[Vec<T>],
) -> Result<f64, MetricsError> {
    check_corpora(candidates.len(), references.len())?;
    let sum: f64 = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| rouge_l_pair(c, r))
        .sum();
    Ok(sum / candidates.len() as f64)
}

// ---- METEOR-lite ------------------------------------------------------------

/// Exact-match unigram alignment, greedy in candidate order. Each candidate
/// token takes the reference occurrence that continues the current chunk when
/// possible, otherwise the earliest unused one; the score is
/// `F_mean * (1 - 0.5 * (chunks/matches)^3)` with `F_mean = 10PR / (R + 9P)`.
fn meteor_pair<T: Eq>(cand: &[T], reference: &[T]) -> f64 {
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut used = vec![false; reference.len()];
    let mut matches = 0usize;
    let mut chunks = 0usize;
    let mut prev: Option<(usize, usize)> = None; // (cand idx, ref idx)
    for (i, tok) in cand.iter().enumerate() {
        let continuation = prev.and_then(|(pi, pj)| {
            (pi + 1 == i && pj + 1 < reference.len() && !used[pj + 1] && reference[pj + 1] == *tok)
                .then_some(pj + 1)
        });
        let pick = continuation
            .or_else(|| (0..reference.len()).find(|&j| !used[j] && reference[j] == *tok));
        match pick {
            Some(j) => {
                used[j] = true;
                matches += 1;
                // a chunk continues only when both sides advance by one
                if !matches!(prev, Some((pi, pj)) if pi + 1 == i && pj + 1 == j) {
                    chunks += 1;
                }
                prev = Some((i, j));
            }
            None => {
                prev = None;
            }
        }
    }
    if matches == 0 {
        return 0.0;
    }
    let p = matches as f64 / cand.len() as f64;
    let r = matches as f64 / reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / matches as f64).powi(3);
    f_mean * (1.0 - penalty)
}

/// Mean METEOR-lite (exact-match unigram METEOR, no stemming or synonyms).
pub fn meteor_lite<T: Eq + Sync>(
    candidates: &[Vec<T>],
    references: &[Vec<T>],
) -> Result<f64, MetricsError> {
    check_corpora(candidates.len(), references.len())?;
    let sum: f64 = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| meteor_pair(c, r))
        .sum();
    Ok(sum / candidates.len() as f64)
}

// ---- clinical efficacy -------------------------------------------------------

/// Per-report label set: label -> polarity, later mentions overriding earlier
/// ones.
pub fn label_set(report: &str, lexicon: &Lexicon) -> BTreeMap<String, Polarity> {
    let mut set = BTreeMap::new();
    for m in extract_mentions(report, lexicon) {
        set.insert(m.label, m.polarity);
    }
    set
}

fn positives(report: &str, lexicon: &Lexicon) -> BTreeSet<String> {
    label_set(report, lexicon)
        .into_iter()
        .filter(|(_, pol)| *pol == Polarity::Positive)
        .map(|(label, _)| label)
        .collect()
}

/// Micro-averaged precision/recall/F1 of positive extracted labels.
pub fn clinical_efficacy(
    generated: &[String],
    references: &[String],
    lexicon: &Lexicon,
) -> Result<CeScores, MetricsError> {
    check_corpora(generated.len(), references.len())?;
    let pairs: Vec<(BTreeSet<String>, BTreeSet<String>)> = generated
        .iter()
        .zip(references)
        .map(|(g, r)| (positives(g, lexicon), positives(r, lexicon)))
        .collect();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (gen, reference) in &pairs {
        tp += gen.intersection(reference).count();
        fp += gen.difference(reference).count();
        fn_ += reference.difference(gen).count();
    }
    Ok(ce_from_counts(tp, fp, fn_))
}

fn ce_from_counts(tp: usize, fp: usize, fn_: usize) -> CeScores {
    let p = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let r = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    CeScores { p, r, f1 }
}

// ---- full evaluation ----------------------------------------------------------

/// All metrics for one run over raw report texts. Per-pair work is spread
/// over `PROGEN_THREADS` workers and reduced in input order, so the result is
/// independent of the thread count.
pub fn evaluate_corpus(
    generated: &[String],
    references: &[String],
    lexicon: &Lexicon,
) -> Result<EvalReport, MetricsError> {
    check_corpora(generated.len(), references.len())?;
    struct PairStats {
        bleu: BleuCounts,
        rouge: f64,
        meteor: f64,
        gen_pos: BTreeSet<String>,
        ref_pos: BTreeSet<String>,
    }
    let pairs: Vec<(&String, &String)> = generated.iter().zip(references).collect();
    let stats = parallel_map(&pairs, |(gen, reference)| {
        let c = tokenize(gen);
        let r = tokenize(reference);
        PairStats {
            bleu: bleu_pair_counts(&c, &r),
            rouge: rouge_l_pair(&c, &r),
            meteor: meteor_pair(&c, &r),
            gen_pos: positives(gen, lexicon),
            ref_pos: positives(reference, lexicon),
        }
    });
    let n = stats.len() as f64;
    let bleu = bleu_from_counts(&stats.iter().map(|s| s.bleu).collect::<Vec<_>>());
    let rouge_l = stats.iter().map(|s| s.rouge).sum::<f64>() / n;
    let meteor = stats.iter().map(|s| s.meteor).sum::<f64>() / n;
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    for s in &stats {
        tp += s.gen_pos.intersection(&s.ref_pos).count();
        fp += s.gen_pos.difference(&s.ref_pos).count();
        fn_ += s.ref_pos.difference(&s.gen_pos).count();
    }
    Ok(EvalReport {
        bleu,
        meteor,
        rouge_l,
        ce: ce_from_counts(tp, fp, fn_),
        n_pairs: generated.len(),
        runs: 1,
    })
}

fn check_corpora(candidates: usize, references: usize) -> Result<(), MetricsError> {
    if candidates == 0 {
        return Err(MetricsError::EmptyCorpus);
    }
    if candidates != references {
        return Err(MetricsError::LengthMismatch {
            candidates,
            references,
        });
    }
    Ok(())
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)] // oracles favour explicit index loops
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    fn random_corpus(rng: &mut ChaCha8Rng, pairs: usize, vocab: usize) -> (Vec<Vec<u32>>, Vec<Vec<u32>>) {
        let mut gen = Vec::new();
        let mut refs = Vec::new();
        for _ in 0..pairs {
            let lc = rng.random_range(1..12);
            let lr = rng.random_range(1..12);
            gen.push((0..lc).map(|_| rng.random_range(0..vocab as u32)).collect());
            refs.push((0..lr).map(|_| rng.random_range(0..vocab as u32)).collect());
        }
        (gen, refs)
    }

    // Brute-force BLEU oracle: n-gram counting by quadratic window scans,
    // no hash maps.
    fn oracle_bleu(cands: &[Vec<u32>], refs: &[Vec<u32>]) -> [f64; 4] {
        let mut clipped = [0usize; 4];
        let mut total = [0usize; 4];
        let (mut clen, mut rlen) = (0usize, 0usize);
        for (c, r) in cands.iter().zip(refs) {
            clen += c.len();
            rlen += r.len();
            for n in 1..=4usize {
                if c.len() < n {
                    continue;
                }
                total[n - 1] += c.len() - n + 1;
                for i in 0..=c.len() - n {
                    // only count each distinct n-gram at its first occurrence
                    if (0..i).any(|j| c[j..j + n] == c[i..i + n]) {
                        continue;
                    }
                    let cand_count = (0..=c.len() - n)
                        .filter(|&j| c[j..j + n] == c[i..i + n])
                        .count();
                    let ref_count = if r.len() >= n {
                        (0..=r.len() - n).filter(|&j| r[j..j + n] == c[i..i + n]).count()
                    } else {
                        0
                    };
                    clipped[n - 1] += cand_count.min(ref_count);
                }
            }
        }
        let bp = if clen == 0 {
            0.0
        } else if clen > rlen {
            1.0
        } else {
            (1.0 - rlen as f64 / clen as f64).exp()
        };
        let mut out = [0.0; 4];
        for k in 0..4 {
            let mut log_sum = 0.0;
            let mut valid = true;
            for n in 0..=k {
                if clipped[n] == 0 || total[n] == 0 {
                    valid = false;
                    break;
                }
                log_sum += (clipped[n] as f64 / total[n] as f64).ln();
            }
            out[k] = if valid { bp * (log_sum / (k + 1) as f64).exp() } else { 0.0 };
        }
        out
    }

    #[test]
    fn identical_corpora_score_one() {
        let texts = vec![toks("no acute disease ."), toks("there is a small effusion .")];
        let scores = bleu(&texts, &texts).unwrap();
        for s in scores {
            assert_eq!(s, 1.0);
        }
        assert_eq!(rouge_l(&texts, &texts).unwrap(), 1.0);
    }

    #[test]
    fn clipped_unigram_precision_two_sevenths() {
        let cand = vec![toks("the the the the the the the")];
        let reference = vec![toks("the cat the mat")];
        let scores = bleu(&cand, &reference).unwrap();
        // candidate longer than reference, so no brevity penalty
        assert_eq!(scores[0], 2.0 / 7.0);
        assert_eq!(scores[1], 0.0); // "the the" never occurs in the reference
    }

    #[test]
    fn bleu_matches_brute_force_oracle_on_random_corpora() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..20 {
            let (gen, refs) = random_corpus(&mut rng, 6, 5);
            let fast = bleu(&gen, &refs).unwrap();
            let slow = oracle_bleu(&gen, &refs);
            for n in 0..4 {
                assert_eq!(fast[n].to_bits(), slow[n].to_bits(), "trial {trial}, n={}", n + 1);
            }
        }
    }

    #[test]
    fn bleu_is_pair_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut gen, mut refs) = random_corpus(&mut rng, 8, 4);
        let before = bleu(&gen, &refs).unwrap();
        gen.rotate_left(3);
        refs.rotate_left(3);
        let after = bleu(&gen, &refs).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn bleu_empty_corpus_is_contract_error() {
        let empty: Vec<Vec<u32>> = vec![];
        assert!(matches!(bleu(&empty, &empty), Err(MetricsError::EmptyCorpus)));
    }

    #[test]
    fn rouge_partial_overlap_follows_formula() {
        let cand = vec![toks("the cat sat")];
        let reference = vec![toks("the cat")];
        // LCS = 2, R = 1.0, P = 2/3
        let (r, p) = (1.0f64, 2.0 / 3.0f64);
        let b2 = ROUGE_BETA * ROUGE_BETA;
        let expected = (1.0 + b2) * r * p / (r + b2 * p);
        let got = rouge_l(&cand, &reference).unwrap();
        assert!((got - expected).abs() < 1e-15);
    }

    #[test]
    fn rouge_empty_candidate_scores_zero() {
        let cand: Vec<Vec<u32>> = vec![vec![]];
        let refs = vec![vec![1u32, 2]];
        assert_eq!(rouge_l(&cand, &refs).unwrap(), 0.0);
    }

    #[test]
    fn dp_lcs_matches_memoized_recursive_oracle() {
        fn lcs_memo(a: &[u32], b: &[u32], i: usize, j: usize, memo: &mut Vec<Vec<Option<usize>>>) -> usize {
            if i == 0 || j == 0 {
                return 0;
            }
            if let Some(v) = memo[i][j] {
                return v;
            }
            let v = if a[i - 1] == b[j - 1] {
                lcs_memo(a, b, i - 1, j - 1, memo) + 1
            } else {
                lcs_memo(a, b, i - 1, j, memo).max(lcs_memo(a, b, i, j - 1, memo))
            };
            memo[i][j] = Some(v);
            v
        }
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let la = rng.random_range(0..15);
            let lb = rng.random_range(0..15);
            let a: Vec<u32> = (0..la).map(|_| rng.random_range(0..4)).collect();
            let b: Vec<u32> = (0..lb).map(|_| rng.random_range(0..4)).collect();
            let mut memo = vec![vec![None; b.len() + 1]; a.len() + 1];
            assert_eq!(lcs_len(&a, &b), lcs_memo(&a, &b, a.len(), b.len(), &mut memo));
        }
    }

    #[test]
    fn meteor_identical_pair_formula() {
        let sent = toks("there is a small left effusion");
        let len = sent.len() as f64;
        let expected = 1.0 - 0.5 * (1.0 / len).powi(3);
        let got = meteor_lite(std::slice::from_ref(&sent), std::slice::from_ref(&sent)).unwrap();
        assert!((got - expected).abs() < 1e-15);
    }

    #[test]
    fn meteor_disjoint_vocab_is_zero() {
        let got = meteor_lite(&[toks("alpha beta")], &[toks("gamma delta")]).unwrap();
        assert_eq!(got, 0.0);
    }

    #[test]
    fn meteor_matches_independent_straight_line_oracle() {
        // Oracle: same alignment definition, written as a two-phase pass
        // (collect pairs, then count chunks by scanning the pair list).
        fn oracle(c: &[u32], r: &[u32]) -> f64 {
            if c.is_empty() || r.is_empty() {
                return 0.0;
            }
            let mut taken = vec![false; r.len()];
            let mut pairs: Vec<(usize, usize)> = Vec::new();
            for i in 0..c.len() {
                let prev = pairs.last().copied();
                let mut choice = None;
                if let Some((pi, pj)) = prev {
                    if pi + 1 == i && pj + 1 < r.len() && !taken[pj + 1] && r[pj + 1] == c[i] {
                        choice = Some(pj + 1);
                    }
                }
                if choice.is_none() {
                    for j in 0..r.len() {
                        if !taken[j] && r[j] == c[i] {
                            choice = Some(j);
                            break;
                        }
                    }
                }
                if let Some(j) = choice {
                    taken[j] = true;
                    pairs.push((i, j));
                }
            }
            if pairs.is_empty() {
                return 0.0;
            }
            let mut chunks = 1usize;
            for w in pairs.windows(2) {
                if !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1) {
                    chunks += 1;
                }
            }
            let m = pairs.len() as f64;
            let p = m / c.len() as f64;
            let rr = m / r.len() as f64;
            let f = 10.0 * p * rr / (rr + 9.0 * p);
            f * (1.0 - 0.5 * (chunks as f64 / m).powi(3))
        }
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let (gen, refs) = random_corpus(&mut rng, 1, 4);
            let fast = meteor_lite(&gen, &refs).unwrap();
            let slow = oracle(&gen[0], &refs[0]);
            assert!((fast - slow).abs() < 1e-12, "{:?} vs {:?}", gen, refs);
        }
    }

    #[test]
    fn ce_identical_reports_are_perfect() {
        let lexicon = Lexicon::default_clinical();
        let reports = vec![
            "there is a small pleural effusion .".to_string(),
            "no pneumothorax . mild pulmonary edema .".to_string(),
        ];
        let scores = clinical_efficacy(&reports, &reports, &lexicon).unwrap();
        assert_eq!((scores.p, scores.r, scores.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn ce_half_overlap() {
        let lexicon = Lexicon::default_clinical();
        // generated positives {pneumonia, pleural effusion}; reference
        // positives {pleural effusion, cardiomegaly}
        let gen = vec!["pneumonia and pleural effusion .".to_string()];
        let refs = vec!["pleural effusion and cardiomegaly .".to_string()];
        let scores = clinical_efficacy(&gen, &refs, &lexicon).unwrap();
        assert_eq!((scores.p, scores.r, scores.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn negated_mentions_do_not_inflate_ce_but_false_positives_lower_precision() {
        let lexicon = Lexicon::default_clinical();
        let gen = vec![
            "mild cardiomegaly .".to_string(),
            "stable appearance .".to_string(),
        ];
        let refs = vec![
            "mild cardiomegaly .".to_string(),
            "no acute process .".to_string(),
        ];
        let base = clinical_efficacy(&gen, &refs, &lexicon).unwrap();
        // appending a negated mention leaves positive-only scoring unchanged
        let gen_neg: Vec<String> = gen.iter().map(|g| format!("{g} no pneumonia .")).collect();
        let with_neg = clinical_efficacy(&gen_neg, &refs, &lexicon).unwrap();
        assert_eq!(base, with_neg);
        // appending an unsupported positive mention lowers precision
        let gen_fp: Vec<String> = gen.iter().map(|g| format!("{g} pneumonia .")).collect();
        let with_fp = clinical_efficacy(&gen_fp, &refs, &lexicon).unwrap();
        assert!(with_fp.p < base.p);
        assert_eq!(with_fp.r, base.r);
    }

    #[test]
    fn ce_last_mention_wins_within_a_report() {
        let lexicon = Lexicon::default_clinical();
        let report = "possible pneumonia . pneumonia is confirmed .".to_string();
        let set = label_set(&report, &lexicon);
        assert_eq!(set["pneumonia"], Polarity::Positive);
    }

    #[test]
    fn ce_f1_is_harmonic_mean() {
        let scores = ce_from_counts(3, 1, 2);
        let expected = 2.0 * scores.p * scores.r / (scores.p + scores.r);
        assert!((scores.f1 - expected).abs() < 1e-12);
        let zero = ce_from_counts(0, 0, 0);
        assert_eq!((zero.p, zero.r, zero.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn evaluate_corpus_composes_all_metrics_and_is_thread_invariant() {
        let lexicon = Lexicon::default_clinical();
        let gen: Vec<String> = (0..7)
            .map(|i| format!("case {i} shows mild cardiomegaly and a small pleural effusion ."))
            .collect();
        let refs: Vec<String> = (0..7)
            .map(|i| format!("case {i} with cardiomegaly . no pleural effusion seen ."))
            .collect();
        let sequential = evaluate_corpus(&gen, &refs, &lexicon).unwrap();
        assert!(sequential.bleu[0] > 0.0 && sequential.bleu[0] < 1.0);
        assert!((0.0..=1.0).contains(&sequential.rouge_l));
        assert!((0.0..=1.0).contains(&sequential.meteor));
        // same numbers bit for bit under a different worker count
        std::env::set_var(crate::par::THREADS_ENV, "3");
        let parallel = evaluate_corpus(&gen, &refs, &lexicon).unwrap();
        std::env::remove_var(crate::par::THREADS_ENV);
        assert_eq!(sequential, parallel);
    }

    #[test]
    fn averaging_is_exact_arithmetic_mean() {
        let mk = |b: f64| EvalReport {
            bleu: [b, b / 2.0, b / 3.0, b / 4.0],
            meteor: b / 5.0,
            rouge_l: b / 6.0,
            ce: CeScores { p: b / 7.0, r: b / 8.0, f1: b / 9.0 },
            n_pairs: 10,
            runs: 1,
        };
        let reports = vec![mk(0.3), mk(0.6), mk(0.9), mk(0.12), mk(0.45)];
        let avg = EvalReport::average(&reports).unwrap();
        let mean: f64 = reports.iter().map(|r| r.bleu[0]).sum::<f64>() / 5.0;
        assert!((avg.bleu[0] - mean).abs() < 1e-15);
        assert_eq!(avg.runs, 5);
        let mean_f1: f64 = reports.iter().map(|r| r.ce.f1).sum::<f64>() / 5.0;
        assert!((avg.ce.f1 - mean_f1).abs() < 1e-15);
    }
}
