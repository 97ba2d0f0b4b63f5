//! Command-line entry points: `synth`, `extract-concepts`, `train`,
//! `generate`, `evaluate`.
//!
//! Exit codes: 0 success, 1 usage, 2 data errors, 3 numeric failure.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::backbone::{load_image, Image};
use crate::concepts::{
    build_context, extract_mentions, ConceptError, ConceptMention, Lexicon, Polarity,
};
use crate::config::{ConfigError, RunConfig};
use crate::data::{
    load_annotations, synth_corpus, tokenize, AnnotatedCorpus, CorpusRecord, DataError, Split,
    SynthConfig, Vocab,
};
use crate::decode::DecodeConfig;
use crate::metrics::{evaluate_corpus, EvalReport, MetricsError};
use crate::model::{
    generate_progressive, generate_single_stage, presets, Example, ModelError, Seq2Seq,
    SourceData, TrainedModel,
};
use crate::train::{train, EpochLog, TrainOptions};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Concept(#[from] ConceptError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Model(e) if e.is_numeric() => 3,
            _ => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "progen",
    version,
    about = "Progressive image-to-concepts-to-report generation"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded synthetic corpus (images, annotations, lexicon).
    Synth(SynthArgs),
    /// Extract concept contexts from an annotation file's reports.
    ExtractConcepts(ExtractArgs),
    /// Train the two stages (or the single-stage baseline) per a config file.
    Train(TrainArgs),
    /// Generate reports for a split using trained checkpoints.
    Generate(GenerateArgs),
    /// Score generated reports against references.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 800)]
    train: usize,
    #[arg(long, default_value_t = 100)]
    val: usize,
    #[arg(long, default_value_t = 100)]
    test: usize,
    /// Glyph grid resolution (cells per side).
    #[arg(long, default_value_t = 4)]
    grid: usize,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[arg(long)]
    annotations: PathBuf,
    /// Lexicon JSON; defaults to the built-in clinical lexicon.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Train the image-to-report baseline instead of the two-stage pipeline.
    #[arg(long)]
    single_stage: bool,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// First-stage (visual) checkpoint.
    #[arg(long)]
    vilm: PathBuf,
    /// Second-stage (text) checkpoint; unused with --single-stage.
    #[arg(long, required_unless_present = "single_stage")]
    lm: Option<PathBuf>,
    #[arg(long)]
    annotations: PathBuf,
    /// Which split to generate for.
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 3)]
    beam: usize,
    /// Cap on generated tokens (defaults to each checkpoint's bound).
    #[arg(long)]
    max_len: Option<usize>,
    /// Length-normalization exponent.
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    /// Decode straight from images with the --vilm checkpoint.
    #[arg(long)]
    single_stage: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Generated-report file(s); several files are averaged as runs.
    #[arg(long, required = true)]
    generated: Vec<PathBuf>,
    /// References: an annotation file (test split) or a generated-style file.
    #[arg(long)]
    references: PathBuf,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write a side-by-side mention alignment for each pair.
    #[arg(long)]
    diff: Option<PathBuf>,
}

/// Parses arguments and runs; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::ExtractConcepts(args) => cmd_extract_concepts(args),
        Command::Train(args) => cmd_train(args),
        Command::Generate(args) => cmd_generate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
    }
}

// ---- synth -----------------------------------------------------------------

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        seed: args.seed,
        n_train: args.train,
        n_val: args.val,
        n_test: args.test,
        grid: args.grid,
    };
    let records = synth_corpus(&cfg, &args.out)?;
    println!(
        "wrote {} records ({} train / {} val / {} test) under {}",
        records.len(),
        args.train,
        args.val,
        args.test,
        args.out.display()
    );
    Ok(())
}

// ---- extract-concepts --------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct ConceptRecord {
    id: String,
    context_tokens: Vec<String>,
    mentions: Vec<ConceptMention>,
}

fn load_lexicon(path: &Option<PathBuf>) -> Result<Lexicon> {
    Ok(match path {
        Some(p) => Lexicon::load(p)?,
        None => Lexicon::default_clinical(),
    })
}

fn extract_all(corpus: &AnnotatedCorpus, lexicon: &Lexicon) -> Vec<ConceptRecord> {
    let refs: Vec<&CorpusRecord> = corpus.records.iter().collect();
    crate::par::parallel_map(&refs, |record| {
        let mentions = extract_mentions(&record.report, lexicon);
        let ctx = build_context(mentions);
        ConceptRecord {
            id: record.id.clone(),
            context_tokens: ctx.tokens.clone(),
            mentions: ctx.mentions,
        }
    })
}

fn write_concepts(path: &Path, records: &[ConceptRecord]) -> Result<()> {
    let json = serde_json::to_string_pretty(records).expect("concept records serialize");
    std::fs::write(path, json).map_err(|e| DataError::io(path, e))?;
    Ok(())
}

fn read_concepts(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let records: Vec<ConceptRecord> =
        serde_json::from_str(&text).map_err(|e| DataError::Json {
            path: path.into(),
            detail: e.to_string(),
        })?;
    Ok(records
        .into_iter()
        .map(|r| (r.id, r.context_tokens))
        .collect())
}

fn cmd_extract_concepts(args: ExtractArgs) -> Result<()> {
    let corpus = load_annotations(&args.annotations)?;
    let lexicon = load_lexicon(&args.lexicon)?;
    let records = extract_all(&corpus, &lexicon);
    write_concepts(&args.out, &records)?;
    println!("extracted concepts for {} reports -> {}", records.len(), args.out.display());
    Ok(())
}

// ---- train -----------------------------------------------------------------

struct Dataset {
    train: Vec<PreparedRecord>,
    val: Vec<PreparedRecord>,
    max_patches: usize,
}

struct PreparedRecord {
    images: Vec<Image>,
    context_tokens: Vec<String>,
    report_tokens: Vec<String>,
}

fn prepare_dataset(
    corpus: &AnnotatedCorpus,
    concepts: &BTreeMap<String, Vec<String>>,
    patch_size: usize,
) -> Result<Dataset> {
    let mut out = Dataset {
        train: Vec::new(),
        val: Vec::new(),
        max_patches: 1,
    };
    for record in &corpus.records {
        if record.split == Split::Test {
            continue;
        }
        let mut images = Vec::with_capacity(record.image_paths.len());
        for p in &record.image_paths {
            images.push(load_image(p)?);
        }
        let patches: usize = images
            .iter()
            .map(|im| (im.height / patch_size) * (im.width / patch_size))
            .sum();
        out.max_patches = out.max_patches.max(patches);
        let context_tokens = concepts
            .get(&record.id)
            .ok_or_else(|| CliError::Invalid(format!("no extracted concepts for id {}", record.id)))?
            .clone();
        let prepared = PreparedRecord {
            images,
            context_tokens,
            report_tokens: tokenize(&record.report),
        };
        match record.split {
            Split::Train => out.train.push(prepared),
            Split::Val => out.val.push(prepared),
            Split::Test => unreachable!(),
        }
    }
    Ok(out)
}

fn truncated(ids: Vec<usize>, max: usize) -> Vec<usize> {
    let mut ids = ids;
    ids.truncate(max);
    ids
}

fn jsonl_logger(path: &Path) -> Result<impl FnMut(&EpochLog)> {
    let file = std::fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut writer = std::io::BufWriter::new(file);
    Ok(move |log: &EpochLog| {
        let line = serde_json::to_string(log).expect("epoch log serializes");
        let _ = writeln!(writer, "{line}");
        let _ = writer.flush();
    })
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| DataError::io(&cfg.out_dir, e))?;
    let corpus = load_annotations(&cfg.annotations)?;
    let lexicon = load_lexicon(&cfg.lexicon)?;

    // Stage 0: concept contexts (reused if already extracted).
    let concepts_path = cfg
        .concepts
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("concepts.json"));
    let concept_map = if concepts_path.exists() {
        read_concepts(&concepts_path)?
    } else {
        let records = extract_all(&corpus, &lexicon);
        write_concepts(&concepts_path, &records)?;
        records
            .into_iter()
            .map(|r| (r.id, r.context_tokens))
            .collect()
    };

    let dataset = prepare_dataset(&corpus, &concept_map, cfg.patch_size)?;
    if dataset.train.is_empty() || dataset.val.is_empty() {
        return Err(CliError::Invalid(
            "training requires non-empty train and val splits".into(),
        ));
    }
    let report_vocab = Vocab::build(
        dataset.train.iter().map(|r| r.report_tokens.as_slice()),
        cfg.min_freq,
    )?;
    let opts = TrainOptions {
        batch_size: cfg.batch_size,
        lrs: cfg.learning_rates(),
        epochs: cfg.epochs,
        patience: cfg.patience,
        seed: cfg.seed,
    };

    if args.single_stage {
        // Baseline: images -> report tokens, same architecture as stage one.
        let spec = visual_spec(&cfg, dataset.max_patches, cfg.max_report_len, report_vocab.len());
        let examples = |records: &[PreparedRecord]| -> Vec<Example> {
            records
                .iter()
                .map(|r| Example {
                    source: SourceData::Images(r.images.clone()),
                    target: truncated(report_vocab.encode(&r.report_tokens), cfg.max_report_len),
                })
                .collect()
        };
        let mut model = Seq2Seq::init(spec, cfg.seed)?;
        let mut log = jsonl_logger(&cfg.out_dir.join("single_log.jsonl"))?;
        let summary = train(&mut model, &examples(&dataset.train), &examples(&dataset.val), &opts, &mut log)?;
        let trained = TrainedModel {
            model,
            src_vocab: None,
            tgt_vocab: report_vocab,
        };
        let path = cfg.out_dir.join("single.ckpt");
        trained.save(&path)?;
        println!(
            "[single] best epoch {} (val BLEU-4 {:.4}), {} epochs -> {}",
            summary.best_epoch,
            summary.best_bleu4,
            summary.epochs_run,
            path.display()
        );
        return Ok(());
    }

    let concept_vocab = Vocab::build(
        dataset.train.iter().map(|r| r.context_tokens.as_slice()),
        cfg.min_freq,
    )?;

    // Stage 1: images -> concepts, memory and meshing on.
    let vilm_spec = visual_spec(&cfg, dataset.max_patches, cfg.max_concept_len, concept_vocab.len());
    let vilm_examples = |records: &[PreparedRecord]| -> Vec<Example> {
        records
            .iter()
            .map(|r| Example {
                source: SourceData::Images(r.images.clone()),
                target: truncated(concept_vocab.encode(&r.context_tokens), cfg.max_concept_len),
            })
            .collect()
    };
    let mut vilm = Seq2Seq::init(vilm_spec, cfg.seed)?;
    let mut log = jsonl_logger(&cfg.out_dir.join("vilm_log.jsonl"))?;
    let summary = train(
        &mut vilm,
        &vilm_examples(&dataset.train),
        &vilm_examples(&dataset.val),
        &opts,
        &mut log,
    )?;
    let vilm_path = cfg.out_dir.join("vilm.ckpt");
    TrainedModel {
        model: vilm,
        src_vocab: None,
        tgt_vocab: concept_vocab.clone(),
    }
    .save(&vilm_path)?;
    println!(
        "[vilm] best epoch {} (val BLEU-4 {:.4}), {} epochs -> {}",
        summary.best_epoch,
        summary.best_bleu4,
        summary.epochs_run,
        vilm_path.display()
    );

    // Stage 2: concepts -> report, plain transformer, trained independently.
    let mut lm_spec = presets::lm_spec(
        cfg.d_model,
        cfg.n_heads,
        cfg.n_enc_layers,
        cfg.d_ff,
        cfg.max_concept_len,
        cfg.max_report_len,
        concept_vocab.len(),
        report_vocab.len(),
    );
    lm_spec.n_dec_layers = cfg.n_dec_layers;
    lm_spec.dropout = cfg.dropout;
    let lm_examples = |records: &[PreparedRecord]| -> Vec<Example> {
        records
            .iter()
            .map(|r| Example {
                source: SourceData::Tokens(truncated(
                    concept_vocab.encode(&r.context_tokens),
                    cfg.max_concept_len,
                )),
                target: truncated(report_vocab.encode(&r.report_tokens), cfg.max_report_len),
            })
            .collect()
    };
    let mut lm = Seq2Seq::init(lm_spec, cfg.seed.wrapping_add(1))?;
    let mut log = jsonl_logger(&cfg.out_dir.join("lm_log.jsonl"))?;
    let summary = train(
        &mut lm,
        &lm_examples(&dataset.train),
        &lm_examples(&dataset.val),
        &opts,
        &mut log,
    )?;
    let lm_path = cfg.out_dir.join("lm.ckpt");
    TrainedModel {
        model: lm,
        src_vocab: Some(concept_vocab),
        tgt_vocab: report_vocab,
    }
    .save(&lm_path)?;
    println!(
        "[lm] best epoch {} (val BLEU-4 {:.4}), {} epochs -> {}",
        summary.best_epoch,
        summary.best_bleu4,
        summary.epochs_run,
        lm_path.display()
    );
    Ok(())
}

fn visual_spec(
    cfg: &RunConfig,
    max_patches: usize,
    max_out_len: usize,
    tgt_vocab: usize,
) -> crate::model::ModelSpec {
    let mut spec = presets::vilm_spec(
        cfg.d_model,
        cfg.n_heads,
        cfg.n_enc_layers,
        cfg.d_ff,
        cfg.memory_slots,
        cfg.patch_size,
        max_patches,
        max_out_len,
        tgt_vocab,
    );
    spec.n_dec_layers = cfg.n_dec_layers;
    spec.mesh = cfg.mesh;
    spec.dropout = cfg.dropout;
    spec
}

// ---- generate -----------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct GeneratedRecord {
    id: String,
    concepts: Option<String>,
    report: String,
    truncated: bool,
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let split = match args.split.as_str() {
        "train" => Split::Train,
        "val" => Split::Val,
        "test" => Split::Test,
        other => {
            return Err(CliError::Invalid(format!(
                "unknown split '{other}' (expected train, val or test)"
            )))
        }
    };
    let corpus = load_annotations(&args.annotations)?;
    let vilm = TrainedModel::load(&args.vilm)?;
    let lm = match (&args.lm, args.single_stage) {
        (_, true) => None,
        (Some(path), false) => Some(TrainedModel::load(path)?),
        (None, false) => {
            return Err(CliError::Invalid(
                "--lm is required unless --single-stage is set".into(),
            ))
        }
    };
    let max_len = args.max_len.unwrap_or(usize::MAX);
    let mut cfg = DecodeConfig::new(args.beam, max_len);
    cfg.length_norm_alpha = args.alpha;
    let mut out = Vec::new();
    for record in corpus.split(split) {
        let mut images = Vec::with_capacity(record.image_paths.len());
        for p in &record.image_paths {
            images.push(load_image(p)?);
        }
        let generated = match &lm {
            Some(lm) => {
                let g = generate_progressive(&vilm, lm, &images, &cfg)?;
                GeneratedRecord {
                    id: record.id.clone(),
                    concepts: Some(g.concept_text(&vilm)),
                    report: g.report_text(lm),
                    truncated: g.concepts.truncated || g.report.truncated,
                }
            }
            None => {
                let g = generate_single_stage(&vilm, &images, &cfg)?;
                GeneratedRecord {
                    id: record.id.clone(),
                    concepts: None,
                    report: g.tokens.to_text(&vilm.tgt_vocab),
                    truncated: g.truncated,
                }
            }
        };
        out.push(generated);
    }
    let json = serde_json::to_string_pretty(&out).expect("generated records serialize");
    std::fs::write(&args.out, json).map_err(|e| DataError::io(&args.out, e))?;
    println!("generated {} reports -> {}", out.len(), args.out.display());
    Ok(())
}

// ---- evaluate -----------------------------------------------------------------

fn read_reference_reports(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| DataError::Json {
        path: path.into(),
        detail: e.to_string(),
    })?;
    if value.is_object() {
        // annotation layout: use the test split
        let corpus = load_annotations(path)?;
        Ok(corpus
            .split(Split::Test)
            .map(|r| (r.id.clone(), r.report.clone()))
            .collect())
    } else {
        let records: Vec<GeneratedRecord> =
            serde_json::from_value(value).map_err(|e| DataError::Json {
                path: path.into(),
                detail: e.to_string(),
            })?;
        Ok(records.into_iter().map(|r| (r.id, r.report)).collect())
    }
}

fn read_generated(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let records: Vec<GeneratedRecord> =
        serde_json::from_str(&text).map_err(|e| DataError::Json {
            path: path.into(),
            detail: e.to_string(),
        })?;
    Ok(records.into_iter().map(|r| (r.id, r.report)).collect())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let lexicon = load_lexicon(&args.lexicon)?;
    let references = read_reference_reports(&args.references)?;
    let ref_ids: BTreeSet<&String> = references.keys().collect();
    let mut runs = Vec::new();
    let mut first_generated: Option<BTreeMap<String, String>> = None;
    for path in &args.generated {
        let generated = read_generated(path)?;
        let gen_ids: BTreeSet<&String> = generated.keys().collect();
        if gen_ids != ref_ids {
            let missing: Vec<&str> = ref_ids
                .difference(&gen_ids)
                .map(|s| s.as_str())
                .chain(gen_ids.difference(&ref_ids).map(|s| s.as_str()))
                .collect();
            return Err(CliError::Invalid(format!(
                "{}: ids do not match references; mismatched ids: {}",
                path.display(),
                missing.join(", ")
            )));
        }
        let gen_texts: Vec<String> = generated.values().cloned().collect();
        let ref_texts: Vec<String> = references.values().cloned().collect();
        runs.push(evaluate_corpus(&gen_texts, &ref_texts, &lexicon)?);
        first_generated.get_or_insert(generated);
    }
    let report = EvalReport::average(&runs)?;
    let json = serde_json::to_string_pretty(&report).expect("metrics serialize");
    std::fs::write(&args.out, &json).map_err(|e| DataError::io(&args.out, e))?;
    println!("{json}");
    if let Some(diff_path) = &args.diff {
        let generated = first_generated.expect("at least one run");
        let mut text = String::new();
        for (id, gen_report) in &generated {
            text.push_str(&render_diff(id, gen_report, &references[id], &lexicon));
            text.push('\n');
        }
        std::fs::write(diff_path, text).map_err(|e| DataError::io(diff_path, e))?;
        println!("wrote alignment diff -> {}", diff_path.display());
    }
    Ok(())
}

// ---- diff rendering ---------------------------------------------------------

/// Side-by-side view of one pair with extracted mentions marked inline.
/// Mentions shared by both sides (same label and polarity) get matching
/// `#k` tags on both texts.
fn render_diff(id: &str, generated: &str, reference: &str, lexicon: &Lexicon) -> String {
    let gen_mentions = extract_mentions(generated, lexicon);
    let ref_mentions = extract_mentions(reference, lexicon);
    let keys = |ms: &[ConceptMention]| -> BTreeSet<(String, Polarity)> {
        ms.iter().map(|m| (m.label.clone(), m.polarity)).collect()
    };
    let gen_keys = keys(&gen_mentions);
    let ref_keys = keys(&ref_mentions);
    let shared: Vec<(String, Polarity)> = gen_keys.intersection(&ref_keys).cloned().collect();
    let tag_of = |label: &str, polarity: Polarity| -> Option<usize> {
        shared
            .iter()
            .position(|(l, p)| l == label && *p == polarity)
            .map(|i| i + 1)
    };
    let mut out = format!("== {id}\n");
    out.push_str(&format!(" ref| {}\n", mark_text(reference, &ref_mentions, lexicon, &tag_of)));
    out.push_str(&format!(" gen| {}\n", mark_text(generated, &gen_mentions, lexicon, &tag_of)));
    let fmt_set = |set: &BTreeSet<(String, Polarity)>, other: &BTreeSet<(String, Polarity)>| {
        let only: Vec<String> = set
            .difference(other)
            .map(|(l, p)| format!("{l}({p})"))
            .collect();
        if only.is_empty() {
            "(none)".to_string()
        } else {
            only.join(", ")
        }
    };
    let shared_text = if shared.is_empty() {
        "(none)".to_string()
    } else {
        shared
            .iter()
            .enumerate()
            .map(|(i, (l, p))| format!("#{} {l}({p})", i + 1))
            .collect::<Vec<_>>()
            .join(", ")
    };
    out.push_str(&format!(" shared: {shared_text}\n"));
    out.push_str(&format!(" gen-only: {}\n", fmt_set(&gen_keys, &ref_keys)));
    out.push_str(&format!(" ref-only: {}\n", fmt_set(&ref_keys, &gen_keys)));
    out
}

fn mark_text(
    text: &str,
    mentions: &[ConceptMention],
    _lexicon: &Lexicon,
    tag_of: &dyn Fn(&str, Polarity) -> Option<usize>,
) -> String {
    let tokens = tokenize(text);
    let ranges = crate::concepts::sentence_ranges(&tokens);
    let mut open: BTreeMap<usize, String> = BTreeMap::new();
    let mut close: BTreeMap<usize, String> = BTreeMap::new();
    for m in mentions {
        let Some(span) = &m.span else { continue };
        let base = ranges[span.sentence].start;
        let tag = match tag_of(&m.label, m.polarity) {
            Some(k) => format!("|{} #{k}]", m.polarity),
            None => format!("|{}]", m.polarity),
        };
        open.insert(base + span.start, "[".to_string());
        close.insert(base + span.end - 1, tag);
    }
    let mut parts = Vec::with_capacity(tokens.len());
    for (i, tok) in tokens.iter().enumerate() {
        let mut piece = String::new();
        if let Some(o) = open.get(&i) {
            piece.push_str(o);
        }
        piece.push_str(tok);
        if let Some(c) = close.get(&i) {
            piece.push_str(c);
        }
        parts.push(piece);
    }
    parts.join(" ")
}
