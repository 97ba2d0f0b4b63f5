//! Seeded synthetic corpus: glyph images paired with template reports whose
//! concepts are recoverable, by construction, with the shipped lexicon.
//!
//! Each record is a 32x32 grayscale image carrying up to three glyphs
//! (square, cross, blob) placed on grid cells. Present glyphs become positive
//! mentions attributed with their quadrant; when some glyph kind is absent,
//! the first absent kind is reported in negation. Glyph-free images get the
//! report "no findings ." and an empty concept context.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{write_pgm, Image};
use crate::concepts::{ConceptMention, Polarity};

use super::{DataError, Split};

pub const IMAGE_SIZE: usize = 32;
pub const GLYPH_KINDS: [&str; 3] = ["square", "cross", "blob"];

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub grid: usize,
}

impl SynthConfig {
    pub fn new(seed: u64, n_train: usize, n_val: usize, n_test: usize) -> Self {
        Self {
            seed,
            n_train,
            n_val,
            n_test,
            grid: 4,
        }
    }

    fn validate(&self) -> Result<(), DataError> {
        let ok = self.grid >= 2
            && self.grid.is_multiple_of(2)
            && IMAGE_SIZE.is_multiple_of(self.grid)
            && self.n_train >= 1
            && self.n_val >= 1
            && self.n_test >= 1;
        if ok {
            Ok(())
        } else {
            Err(DataError::Json {
                path: "<synth-config>".into(),
                detail: format!(
                    "sizes must be >= 1 and grid must be even and divide {IMAGE_SIZE}, got grid {}",
                    self.grid
                ),
            })
        }
    }
}

/// One generated example, before serialization to disk.
#[derive(Debug, Clone)]
pub struct SynthRecord {
    pub id: String,
    pub split: Split,
    pub image: Image,
    pub report: String,
    /// The mentions the report was written from; extraction must recover
    /// exactly these (without spans).
    pub mentions: Vec<ConceptMention>,
}

/// Generates the full record set in memory, deterministically from the seed.
pub fn synth_records(cfg: &SynthConfig) -> Result<Vec<SynthRecord>, DataError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::new();
    for (split, count) in [
        (Split::Train, cfg.n_train),
        (Split::Val, cfg.n_val),
        (Split::Test, cfg.n_test),
    ] {
        for i in 0..count {
            let id = format!("{}-{i:04}", split.key());
            records.push(generate_one(&mut rng, cfg.grid, id, split));
        }
    }
    Ok(records)
}

/// Generates the corpus and writes `images/`, `annotations.json` and
/// `lexicon.json` under `out_dir`.
pub fn synth_corpus(cfg: &SynthConfig, out_dir: &Path) -> Result<Vec<SynthRecord>, DataError> {
    let records = synth_records(cfg)?;
    let images_dir = out_dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| DataError::io(&images_dir, e))?;
    let mut splits = serde_json::Map::new();
    for split in Split::ALL {
        let list: Vec<serde_json::Value> = records
            .iter()
            .filter(|r| r.split == split)
            .map(|r| {
                serde_json::json!({
                    "id": r.id,
                    "image_path": [format!("images/{}.pgm", r.id)],
                    "report": r.report,
                })
            })
            .collect();
        splits.insert(split.key().to_string(), serde_json::Value::Array(list));
    }
    for r in &records {
        write_pgm(&images_dir.join(format!("{}.pgm", r.id)), &r.image)?;
    }
    let ann_path = out_dir.join("annotations.json");
    let json = serde_json::to_string_pretty(&serde_json::Value::Object(splits))
        .expect("annotation json serializes");
    std::fs::write(&ann_path, json).map_err(|e| DataError::io(&ann_path, e))?;
    let lex_path = out_dir.join("lexicon.json");
    crate::concepts::Lexicon::default_clinical()
        .save(&lex_path)
        .map_err(|e| DataError::Json {
            path: lex_path,
            detail: e.to_string(),
        })?;
    Ok(records)
}

fn generate_one(rng: &mut ChaCha8Rng, grid: usize, id: String, split: Split) -> SynthRecord {
    let n_glyphs = rng.random_range(0..=3usize);
    // distinct kinds, then reported in canonical kind order
    let mut kinds: Vec<usize> = (0..GLYPH_KINDS.len()).collect();
    kinds.shuffle(rng);
    let mut present: Vec<usize> = kinds.into_iter().take(n_glyphs).collect();
    present.sort_unstable();
    // distinct cells
    let mut cells: Vec<usize> = (0..grid * grid).collect();
    cells.shuffle(rng);
    let cells: Vec<usize> = cells.into_iter().take(n_glyphs).collect();

    let mut image = Image::zeros(IMAGE_SIZE, IMAGE_SIZE);
    let mut sentences = Vec::new();
    let mut mentions = Vec::new();
    for (&kind, &cell) in present.iter().zip(&cells) {
        let (row, col) = (cell / grid, cell % grid);
        draw_glyph(&mut image, grid, row, col, kind);
        let vq = if row < grid / 2 { "upper" } else { "lower" };
        let hq = if col < grid / 2 { "left" } else { "right" };
        let label = GLYPH_KINDS[kind];
        sentences.push(format!("there is a {label} in {vq} {hq} ."));
        mentions.push(ConceptMention::new(label, Polarity::Positive, &[vq, hq]));
    }
    if n_glyphs == 0 {
        return SynthRecord {
            id,
            split,
            image,
            report: "no findings .".to_string(),
            mentions: Vec::new(),
        };
    }
    if let Some(absent) = (0..GLYPH_KINDS.len()).find(|k| !present.contains(k)) {
        let label = GLYPH_KINDS[absent];
        sentences.push(format!("there is no {label} ."));
        mentions.push(ConceptMention::new(label, Polarity::Negative, &[]));
    }
    SynthRecord {
        id,
        split,
        image,
        report: sentences.join(" "),
        mentions,
    }
}

fn draw_glyph(image: &mut Image, grid: usize, cell_row: usize, cell_col: usize, kind: usize) {
    let s = IMAGE_SIZE / grid;
    let r0 = cell_row * s;
    let c0 = cell_col * s;
    match kind {
        // square: filled block with a one-pixel margin
        0 => {
            for r in 1..s - 1 {
                for c in 1..s - 1 {
                    image.set(r0 + r, c0 + c, 1.0);
                }
            }
        }
        // cross: centered plus sign
        1 => {
            let mid = s / 2;
            for t in 1..s - 1 {
                image.set(r0 + t, c0 + mid, 1.0);
                image.set(r0 + t, c0 + mid - 1, 1.0);
                image.set(r0 + mid, c0 + t, 1.0);
                image.set(r0 + mid - 1, c0 + t, 1.0);
            }
        }
        // blob: radial falloff disc
        _ => {
            let center = (s as f64 - 1.0) / 2.0;
            let radius = s as f64 / 2.0 - 0.5;
            for r in 0..s {
                for c in 0..s {
                    let d2 = ((r as f64 - center).powi(2) + (c as f64 - center).powi(2)).sqrt();
                    let v = (1.0 - (d2 / radius).powi(2)).max(0.0);
                    image.set(r0 + r, c0 + c, v);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concepts::{build_context, extract_mentions, Lexicon};

    #[test]
    fn generation_is_seed_deterministic() {
        let cfg = SynthConfig::new(9, 5, 2, 2);
        let a = synth_records(&cfg).unwrap();
        let b = synth_records(&cfg).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.id, y.id);
            assert_eq!(x.report, y.report);
            assert_eq!(x.image, y.image);
            assert_eq!(x.mentions, y.mentions);
        }
        let c = synth_records(&SynthConfig::new(10, 5, 2, 2)).unwrap();
        assert!(a.iter().zip(&c).any(|(x, y)| x.report != y.report));
    }

    #[test]
    fn extraction_recovers_generating_concepts() {
        let cfg = SynthConfig::new(33, 60, 5, 5);
        let lexicon = Lexicon::default_clinical();
        for record in synth_records(&cfg).unwrap() {
            let extracted: Vec<_> = extract_mentions(&record.report, &lexicon)
                .into_iter()
                .map(|m| (m.label, m.polarity, m.attributes))
                .collect();
            let expected: Vec<_> = record
                .mentions
                .iter()
                .map(|m| (m.label.clone(), m.polarity, m.attributes.clone()))
                .collect();
            assert_eq!(extracted, expected, "report: {}", record.report);
        }
    }

    #[test]
    fn empty_image_has_empty_context() {
        let cfg = SynthConfig::new(0, 200, 1, 1);
        let lexicon = Lexicon::default_clinical();
        let records = synth_records(&cfg).unwrap();
        let empty: Vec<_> = records.iter().filter(|r| r.mentions.is_empty()).collect();
        assert!(!empty.is_empty(), "seed produced no glyph-free images");
        for r in empty {
            assert_eq!(r.report, "no findings .");
            assert!(r.image.pixels.iter().all(|&p| p == 0.0));
            let mentions = extract_mentions(&r.report, &lexicon);
            assert!(mentions.is_empty());
            assert_eq!(build_context(mentions).tokens, vec!["none"]);
        }
    }

    #[test]
    fn corpus_writes_loadable_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig::new(4, 3, 1, 2);
        synth_corpus(&cfg, dir.path()).unwrap();
        let corpus = crate::data::load_annotations(&dir.path().join("annotations.json")).unwrap();
        assert_eq!(corpus.split_len(Split::Train), 3);
        assert_eq!(corpus.split_len(Split::Test), 2);
        for r in &corpus.records {
            let img = crate::backbone::load_image(&r.image_paths[0]).unwrap();
            assert_eq!(img.height, IMAGE_SIZE);
        }
        assert!(Lexicon::load(&dir.path().join("lexicon.json")).is_ok());
    }

    #[test]
    fn invalid_grid_rejected() {
        let mut cfg = SynthConfig::new(1, 1, 1, 1);
        cfg.grid = 3;
        assert!(synth_records(&cfg).is_err());
    }
}
