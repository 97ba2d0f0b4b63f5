//! Token vocabularies with fixed reserved ids.

use std::collections::BTreeMap;

use super::DataError;

pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const UNK_ID: usize = 3;

pub const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Bijective token/id map over non-reserved tokens; ids 0..=3 are fixed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: BTreeMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary from training sequences. Tokens seen fewer than
    /// `min_freq` times are dropped (they encode to UNK). Ids are assigned by
    /// descending frequency, ties broken lexicographically, so the result is
    /// identical across runs and platforms.
    pub fn build<'a, I>(sequences: I, min_freq: usize) -> Result<Self, DataError>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
        let mut saw_any = false;
        for seq in sequences {
            saw_any = true;
            for tok in seq {
                *freq.entry(tok.as_str()).or_insert(0) += 1;
            }
        }
        if !saw_any {
            return Err(DataError::EmptyCorpus);
        }
        let mut kept: Vec<(&str, usize)> = freq
            .into_iter()
            .filter(|(tok, n)| *n >= min_freq && !RESERVED.contains(tok))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(kept.into_iter().map(|(tok, _)| tok.to_string()));
        Ok(Self::from_token_list(tokens))
    }

    /// Rebuilds a vocabulary from an ordered token list (index == id). The
    /// list must start with the four reserved tokens, as produced by
    /// [`Vocab::token_list`].
    pub fn from_token_list(tokens: Vec<String>) -> Self {
        debug_assert!(tokens.len() >= RESERVED.len());
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, ids }
    }

    pub fn token_list(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Id for a token; unknown tokens map to UNK.
    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.tokens[i].clone()).collect()
    }
}

/// A sequence of token ids over one vocabulary. BOS/EOS framing is applied at
/// model boundaries, never stored here.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
}

impl TokenSequence {
    pub fn new(ids: Vec<usize>) -> Self {
        Self { ids }
    }

    pub fn from_text(vocab: &Vocab, text: &str) -> Self {
        Self {
            ids: vocab.encode(&super::tokenize(text)),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn to_text(&self, vocab: &Vocab) -> String {
        vocab.decode(&self.ids).join(" ")
    }
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn encode_decode_round_trips_in_vocab_tokens(
            words in proptest::collection::vec("[a-z]{1,6}", 1..30)
        ) {
            let vocab = Vocab::build([words.as_slice()], 1).unwrap();
            let decoded = vocab.decode(&vocab.encode(&words));
            prop_assert_eq!(decoded, words);
        }

        #[test]
        fn unseen_tokens_hit_unk_only(
            train in proptest::collection::vec("[a-c]{1,3}", 1..10),
            query in "[x-z]{1,4}"
        ) {
            let vocab = Vocab::build([train.as_slice()], 1).unwrap();
            prop_assert_eq!(vocab.id(&query), UNK_ID);
        }
    }
}
