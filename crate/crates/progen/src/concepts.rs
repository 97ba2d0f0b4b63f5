//! Rule-based extraction of disease mentions from report text.
//!
//! A [`Lexicon`] pairs canonical labels with surface phrases and carries the
//! negation/uncertainty trigger phrases and the attribute word list. Matching
//! is longest-surface-first within a sentence; polarity is decided by trigger
//! phrases in a fixed window before the match, and attributes are collected
//! from a fixed window around it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{join_tokens, tokenize};

use thiserror::Error;

/// Trigger phrases must occur entirely within this many tokens before a
/// match to flip its polarity.
pub const TRIGGER_WINDOW: usize = 6;
/// Attribute words are collected within this many tokens on either side.
pub const ATTRIBUTE_WINDOW: usize = 3;

/// Serialized stand-in for an empty concept context.
pub const EMPTY_CONTEXT: &str = "none";
/// Separator token between serialized mentions.
pub const MENTION_SEP: &str = "<sep>";

#[derive(Debug, Error)]
pub enum ConceptError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid lexicon JSON: {detail}")]
    Json { path: PathBuf, detail: String },
    #[error("lexicon: surface phrase '{surface}' appears under both '{first}' and '{second}'")]
    DuplicateSurface {
        surface: String,
        first: String,
        second: String,
    },
    #[error("lexicon: {list} trigger list is empty")]
    EmptyTriggers { list: &'static str },
    #[error("lexicon: label '{label}' has no surface phrases")]
    NoSurfaces { label: String },
    #[error("context parse error at token {position}: {detail}")]
    Parse { position: usize, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
    Uncertain,
}

impl Polarity {
    pub fn token(self) -> &'static str {
        match self {
            Polarity::Positive => "pos",
            Polarity::Negative => "neg",
            Polarity::Uncertain => "unc",
        }
    }

    fn from_token(tok: &str) -> Option<Self> {
        match tok {
            "pos" => Some(Polarity::Positive),
            "neg" => Some(Polarity::Negative),
            "unc" => Some(Polarity::Uncertain),
            _ => None,
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// Where a mention was found: sentence index and token range within it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionSpan {
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
}

/// One extracted disease mention.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptMention {
    pub label: String,
    pub polarity: Polarity,
    pub attributes: Vec<String>,
    /// Present for mentions extracted from text; absent after parsing a
    /// serialized context (the serialization does not carry spans).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub span: Option<MentionSpan>,
}

impl ConceptMention {
    pub fn new(label: &str, polarity: Polarity, attributes: &[&str]) -> Self {
        Self {
            label: label.to_string(),
            polarity,
            attributes: attributes.iter().map(|a| a.to_string()).collect(),
            span: None,
        }
    }
}

/// On-disk lexicon shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LexiconFile {
    labels: BTreeMap<String, Vec<String>>,
    negation: Vec<String>,
    uncertainty: Vec<String>,
    attributes: Vec<String>,
}

/// Compiled lexicon: surfaces tokenized and indexed longest-first.
#[derive(Debug, Clone)]
pub struct Lexicon {
    labels: BTreeMap<String, Vec<String>>,
    /// (surface tokens, label), sorted by surface length descending then
    /// lexicographically — scan order implements longest match.
    surfaces: Vec<(Vec<String>, String)>,
    negation: Vec<Vec<String>>,
    uncertainty: Vec<Vec<String>>,
    attributes: BTreeSet<String>,
}

impl Lexicon {
    pub fn from_json(text: &str, path: &Path) -> Result<Self, ConceptError> {
        let file: LexiconFile = serde_json::from_str(text).map_err(|e| ConceptError::Json {
            path: path.into(),
            detail: e.to_string(),
        })?;
        Self::compile(file)
    }

    pub fn load(path: &Path) -> Result<Self, ConceptError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConceptError::Io {
            path: path.into(),
            source: e,
        })?;
        Self::from_json(&text, path)
    }

    /// The lexicon shipped with the crate: common chest observation labels
    /// plus the synthetic generator's glyph labels.
    pub fn default_clinical() -> Self {
        Self::from_json(
            include_str!("../assets/default_lexicon.json"),
            Path::new("<builtin>"),
        )
        .expect("builtin lexicon is valid")
    }

    fn compile(file: LexiconFile) -> Result<Self, ConceptError> {
        if file.negation.is_empty() {
            return Err(ConceptError::EmptyTriggers { list: "negation" });
        }
        if file.uncertainty.is_empty() {
            return Err(ConceptError::EmptyTriggers { list: "uncertainty" });
        }
        let mut surfaces = Vec::new();
        let mut seen: BTreeMap<Vec<String>, String> = BTreeMap::new();
        for (label, phrases) in &file.labels {
            if phrases.is_empty() {
                return Err(ConceptError::NoSurfaces { label: label.clone() });
            }
            for phrase in phrases {
                let toks = tokenize(phrase);
                if let Some(first) = seen.get(&toks) {
                    if first != label {
                        return Err(ConceptError::DuplicateSurface {
                            surface: phrase.clone(),
                            first: first.clone(),
                            second: label.clone(),
                        });
                    }
                    continue;
                }
                seen.insert(toks.clone(), label.clone());
                surfaces.push((toks, label.clone()));
            }
        }
        surfaces.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        Ok(Self {
            labels: file.labels,
            surfaces,
            negation: file.negation.iter().map(|p| tokenize(p)).collect(),
            uncertainty: file.uncertainty.iter().map(|p| tokenize(p)).collect(),
            attributes: file.attributes.iter().flat_map(|a| tokenize(a)).collect(),
        })
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.labels.keys().map(String::as_str)
    }

    pub fn contains_label(&self, label: &str) -> bool {
        self.labels.contains_key(label)
    }

    pub fn attribute_words(&self) -> impl Iterator<Item = &str> {
        self.attributes.iter().map(String::as_str)
    }

    pub fn to_json(&self) -> String {
        let file = LexiconFile {
            labels: self.labels.clone(),
            negation: self.negation.iter().map(|t| join_tokens(t)).collect(),
            uncertainty: self.uncertainty.iter().map(|t| join_tokens(t)).collect(),
            attributes: self.attributes.iter().cloned().collect(),
        };
        serde_json::to_string_pretty(&file).expect("lexicon serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), ConceptError> {
        std::fs::write(path, self.to_json()).map_err(|e| ConceptError::Io {
            path: path.into(),
            source: e,
        })
    }
}

/// Extracts all concept mentions from a report, in order of appearance.
pub fn extract_mentions(report: &str, lexicon: &Lexicon) -> Vec<ConceptMention> {
    let tokens = tokenize(report);
    let mut mentions = Vec::new();
    for (sentence_idx, sentence) in split_sentences(&tokens).into_iter().enumerate() {
        let mut i = 0;
        while i < sentence.len() {
            let Some((surface_len, label)) = longest_match_at(lexicon, sentence, i) else {
                i += 1;
                continue;
            };
            let end = i + surface_len;
            let polarity = decide_polarity(lexicon, sentence, i);
            let attributes = collect_attributes(lexicon, sentence, i, end);
            mentions.push(ConceptMention {
                label: label.to_string(),
                polarity,
                attributes,
                span: Some(MentionSpan {
                    sentence: sentence_idx,
                    start: i,
                    end,
                }),
            });
            i = end;
        }
    }
    mentions
}

/// Token index ranges of each sentence: periods end a sentence and belong to
/// none. The same partition underlies extraction spans, so callers can map a
/// [`MentionSpan`] back to absolute token positions.
pub fn sentence_ranges(tokens: &[String]) -> Vec<std::ops::Range<usize>> {
    let mut ranges = Vec::new();
    let mut start = 0;
    for (i, tok) in tokens.iter().enumerate() {
        if tok == "." {
            if i > start {
                ranges.push(start..i);
            }
            start = i + 1;
        }
    }
    if start < tokens.len() {
        ranges.push(start..tokens.len());
    }
    ranges
}

fn split_sentences(tokens: &[String]) -> Vec<&[String]> {
    sentence_ranges(tokens)
        .into_iter()
        .map(|r| &tokens[r])
        .collect()
}

fn longest_match_at<'l>(
    lexicon: &'l Lexicon,
    sentence: &[String],
    at: usize,
) -> Option<(usize, &'l str)> {
    // surfaces are sorted longest first, so the first hit wins
    for (surface, label) in &lexicon.surfaces {
        if sentence.len() - at >= surface.len()
            && sentence[at..at + surface.len()]
                .iter()
                .zip(surface)
                .all(|(a, b)| a == b)
        {
            return Some((surface.len(), label));
        }
    }
    None
}

fn decide_polarity(lexicon: &Lexicon, sentence: &[String], match_start: usize) -> Polarity {
    let window = &sentence[match_start.saturating_sub(TRIGGER_WINDOW)..match_start];
    // negation beats uncertainty when both are in scope
    if lexicon.negation.iter().any(|t| contains_phrase(window, t)) {
        Polarity::Negative
    } else if lexicon.uncertainty.iter().any(|t| contains_phrase(window, t)) {
        Polarity::Uncertain
    } else {
        Polarity::Positive
    }
}

fn contains_phrase(window: &[String], phrase: &[String]) -> bool {
    !phrase.is_empty()
        && window
            .windows(phrase.len())
            .any(|w| w.iter().zip(phrase).all(|(a, b)| a == b))
}

fn collect_attributes(
    lexicon: &Lexicon,
    sentence: &[String],
    match_start: usize,
    match_end: usize,
) -> Vec<String> {
    let before = match_start.saturating_sub(ATTRIBUTE_WINDOW)..match_start;
    let after = match_end..(match_end + ATTRIBUTE_WINDOW).min(sentence.len());
    before
        .chain(after)
        .filter(|&i| lexicon.attributes.contains(&sentence[i]))
        .map(|i| sentence[i].clone())
        .collect()
}

/// A mention list with its token serialization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptContext {
    pub mentions: Vec<ConceptMention>,
    pub tokens: Vec<String>,
}

impl ConceptContext {
    pub fn text(&self) -> String {
        join_tokens(&self.tokens)
    }
}

/// Serializes mentions as `label polarity attr.. <sep> label ..`; an empty
/// list becomes the single token `none`. Multi-word labels are underscored so
/// each serialized field is one token.
pub fn build_context(mentions: Vec<ConceptMention>) -> ConceptContext {
    let mut tokens = Vec::new();
    for (i, m) in mentions.iter().enumerate() {
        if i > 0 {
            tokens.push(MENTION_SEP.to_string());
        }
        tokens.push(m.label.replace(' ', "_"));
        tokens.push(m.polarity.token().to_string());
        tokens.extend(m.attributes.iter().cloned());
    }
    if tokens.is_empty() {
        tokens.push(EMPTY_CONTEXT.to_string());
    }
    ConceptContext { mentions, tokens }
}

/// Exact inverse of [`build_context`]'s serialization. Parsed mentions carry
/// no span.
pub fn parse_context(tokens: &[String]) -> Result<Vec<ConceptMention>, ConceptError> {
    if tokens.is_empty() {
        return Err(ConceptError::Parse {
            position: 0,
            detail: "empty context (expected at least 'none')".into(),
        });
    }
    if tokens.len() == 1 && tokens[0] == EMPTY_CONTEXT {
        return Ok(Vec::new());
    }
    let mut mentions = Vec::new();
    let mut pos = 0;
    while pos < tokens.len() {
        let label_tok = &tokens[pos];
        if label_tok == MENTION_SEP {
            return Err(ConceptError::Parse {
                position: pos,
                detail: "expected a label, found separator".into(),
            });
        }
        let polarity_pos = pos + 1;
        let polarity = tokens
            .get(polarity_pos)
            .and_then(|t| Polarity::from_token(t))
            .ok_or_else(|| ConceptError::Parse {
                position: polarity_pos,
                detail: format!(
                    "expected a polarity token after '{label_tok}', found '{}'",
                    tokens.get(polarity_pos).map_or("<end>", |t| t.as_str())
                ),
            })?;
        let mut attributes = Vec::new();
        let mut next = polarity_pos + 1;
        while next < tokens.len() && tokens[next] != MENTION_SEP {
            attributes.push(tokens[next].clone());
            next += 1;
        }
        mentions.push(ConceptMention {
            label: label_tok.replace('_', " "),
            polarity,
            attributes,
            span: None,
        });
        if next < tokens.len() {
            next += 1; // consume the separator
            if next == tokens.len() {
                return Err(ConceptError::Parse {
                    position: next - 1,
                    detail: "trailing separator".into(),
                });
            }
        }
        pos = next;
    }
    Ok(mentions)
}
