use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use rayon::prelude::*;
use serde::Serialize;
use synthmention::augment::{compose, overlap_report, Strategy};
use synthmention::corpus::{self, ConceptTable, CorpusSplit, SplitName};
use synthmention::der::{self, TagSequence};
use synthmention::metrics;
use synthmention::normalize::{normalize_knn, CandidateList, Mode, NormalizerConfig, StringIndex, VectorIndex};
use synthmention::synth::{self, Extraction, GenerationConfig};
use synthmention::vectors::{embed_corpus_ingest, EmbeddingSpace};

use crate::UsageError;

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))
}

pub fn read_candidate_lists(path: &Path) -> Result<Vec<CandidateList>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| synthmention::Error::Parse {
                    origin: path.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })?,
        );
    }
    Ok(out)
}

fn print_json(value: &impl Serialize, quiet: bool) -> Result<()> {
    if !quiet {
        println!("{}", serde_json::to_string_pretty(value)?);
    }
    Ok(())
}

pub fn gold_pairs(split: &CorpusSplit) -> Vec<(String, String)> {
    split.mentions.iter().map(|m| (m.query_id(), m.cui.clone())).collect()
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Concept table TSV.
    #[arg(long)]
    pub concepts: Option<PathBuf>,
    /// Keep only concepts of this semantic group.
    #[arg(long)]
    pub group: Option<String>,
    /// Corpus JSONL to validate.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value = "train")]
    pub split: SplitName,
    /// Crosswalk TSV applied to the corpus.
    #[arg(long)]
    pub crosswalk: Option<PathBuf>,
    /// Where to write the (crosswalked) corpus.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct IngestReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    concepts: Option<corpus::ConceptStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    concept_warnings: Option<corpus::ConceptWarnings>,
    #[serde(skip_serializing_if = "Option::is_none")]
    documents: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mentions: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cuis: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    discontiguous_dropped: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    unmapped: Vec<String>,
}

pub fn ingest(a: IngestArgs, quiet: bool) -> Result<()> {
    if a.concepts.is_none() && a.corpus.is_none() {
        return Err(UsageError("ingest needs --concepts and/or --corpus".into()).into());
    }
    if a.crosswalk.is_some() && a.corpus.is_none() {
        return Err(UsageError("--crosswalk needs --corpus".into()).into());
    }
    let mut report = IngestReport {
        concepts: None,
        concept_warnings: None,
        documents: None,
        mentions: None,
        cuis: None,
        discontiguous_dropped: None,
        unmapped: Vec::new(),
    };
    if let Some(p) = &a.concepts {
        let t = corpus::load_concept_table(p, a.group.as_deref())?;
        report.concepts = Some(t.stats());
        report.concept_warnings = Some(t.warnings.clone());
    }
    if let Some(p) = &a.corpus {
        let (mut split, w) = corpus::load_corpus_with_warnings(p, a.split)?;
        if let Some(x) = &a.crosswalk {
            let xw = corpus::load_crosswalk(x)?;
            let (mapped, unmapped) = corpus::apply_crosswalk(&split, &xw);
            let ids: BTreeSet<String> = unmapped.into_iter().map(|m| m.cui).collect();
            report.unmapped = ids.into_iter().collect();
            split = mapped;
        }
        report.documents = Some(split.documents.len());
        report.mentions = Some(split.mentions.len());
        report.cuis = Some(corpus::cui_set(&split).len());
        report.discontiguous_dropped = Some(w.discontiguous_dropped);
        if let Some(out) = &a.out {
            split.save(out)?;
        }
    }
    print_json(&report, quiet)
}

#[derive(Args, Debug)]
pub struct PromptsArgs {
    #[arg(long)]
    pub concepts: PathBuf,
    #[arg(long)]
    pub group: Option<String>,
    /// Prompts per concept.
    #[arg(long, default_value_t = 5)]
    pub generations: usize,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn prompts(a: PromptsArgs, quiet: bool) -> Result<()> {
    let table = corpus::load_concept_table(&a.concepts, a.group.as_deref())?;
    let cfg = GenerationConfig {
        generations_per_cui: a.generations,
        ..GenerationConfig::default()
    };
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    let records = synth::export_prompts(&table, &cfg)?;
    write_jsonl(&a.out, &records)?;
    if !quiet {
        eprintln!("{} prompts for {} concepts", records.len(), table.len());
    }
    Ok(())
}

/// Reads raw generations and runs extraction.
pub fn extract_file(path: &Path, table: &ConceptTable, cfg: &GenerationConfig) -> Result<(Extraction, usize)> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let raw = synth::read_raw_generations(BufReader::new(f), &path.display().to_string())?;
    let n = raw.len();
    Ok((synth::validate_and_extract(&raw, table, cfg)?, n))
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    #[arg(long)]
    pub concepts: PathBuf,
    #[arg(long)]
    pub group: Option<String>,
    /// Raw generations JSONL.
    #[arg(long)]
    pub generations: PathBuf,
    /// Edit budget for fuzzy matching.
    #[arg(long, default_value_t = 4)]
    pub budget: usize,
    /// Spans predicted by an external tagger, merged into accepted records.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Synthetic corpus JSONL of usable records.
    #[arg(long)]
    pub out: PathBuf,
    /// Every record with its diagnostics.
    #[arg(long)]
    pub records: Option<PathBuf>,
}

pub fn extract(a: ExtractArgs, quiet: bool) -> Result<()> {
    let table = corpus::load_concept_table(&a.concepts, a.group.as_deref())?;
    let cfg = GenerationConfig {
        budget: a.budget,
        ..GenerationConfig::default()
    };
    let (ex, _) = extract_file(&a.generations, &table, &cfg)?;
    let summary = ex.summary();
    let mut records = ex.records;
    let mut merge = None;
    if let Some(p) = &a.labels {
        let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
        let preds = synth::read_predicted_spans(BufReader::new(f), &p.display().to_string())?;
        let (merged, w) = synth::merge_external_labels(records, &preds);
        records = merged;
        merge = Some(w);
    }
    if let Some(p) = &a.records {
        write_jsonl(p, &records)?;
    }
    let usable: Vec<_> = records.iter().filter(|r| r.status.is_usable()).cloned().collect();
    let split = synth::to_corpus(&usable)?;
    split.save(&a.out)?;
    for e in &ex.errors {
        eprintln!("record {}: {}", e.index, e.message);
    }
    #[derive(Serialize)]
    struct Out {
        summary: synth::ExtractionSummary,
        #[serde(skip_serializing_if = "Option::is_none")]
        merge: Option<synth::MergeWarnings>,
        mean_unique_surfaces_per_cui: f64,
    }
    print_json(
        &Out {
            summary,
            merge,
            mean_unique_surfaces_per_cui: synth::mean_unique_surfaces_per_cui(&split),
        },
        quiet,
    )
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    #[arg(long)]
    pub strategy: Strategy,
    #[arg(long)]
    pub synth: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Combined training corpus.
    #[arg(long)]
    pub out: PathBuf,
    /// Overlap table covering every strategy.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value = "dataset")]
    pub dataset: String,
}

pub fn augment(a: AugmentArgs, quiet: bool) -> Result<()> {
    let synth = corpus::load_corpus(&a.synth, SplitName::Train)?;
    let train = corpus::load_corpus(&a.train, SplitName::Train)?;
    let test = corpus::load_corpus(&a.test, SplitName::Test)?;
    let plan = compose(a.strategy, &synth, &train, &test);
    plan.combined_train.save(&a.out)?;
    if let Some(p) = &a.report {
        let mut w = create(p)?;
        overlap_report(&synth, &train, &test).write_tsv(&a.dataset, &mut w)?;
        w.flush()?;
    }
    print_json(&plan.stats, quiet)
}

#[derive(Args, Debug)]
pub struct NormalizeArgs {
    #[arg(long)]
    pub mode: Mode,
    /// Concept TSV for string modes, vector file for knn modes.
    #[arg(long)]
    pub index: PathBuf,
    /// Corpus JSONL for string modes, vector file for knn modes.
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Read vector files in the TSV text format.
    #[arg(long)]
    pub text_vectors: bool,
    #[arg(long, default_value_t = 5)]
    pub vote_k: usize,
    /// Jaccard threshold of the token engine.
    #[arg(long, default_value_t = 0.7)]
    pub threshold: f64,
    #[arg(long)]
    pub group: Option<String>,
    /// Corpus whose mention surfaces are added to the string index.
    #[arg(long)]
    pub extra_names: Option<PathBuf>,
}

/// How candidate lists are cut, recorded next to every set of predictions.
pub const CANDIDATE_DEDUP: &str = "one candidate per cui at its best score, deduplicated before truncation to k_max";

pub fn normalize_strings(index: &StringIndex, queries: &CorpusSplit, cfg: &NormalizerConfig) -> Result<Vec<CandidateList>> {
    queries
        .mentions
        .par_iter()
        .map(|m| index.normalize(&m.query_id(), &m.surface, cfg).map_err(Into::into))
        .collect()
}

pub fn normalize_vectors(index: &VectorIndex, queries: &[(&str, &[f32])], cfg: &NormalizerConfig) -> Result<Vec<CandidateList>> {
    queries
        .par_iter()
        .map(|(id, v)| normalize_knn(id, v, index, cfg).map_err(Into::into))
        .collect()
}

pub fn normalize(a: NormalizeArgs, quiet: bool) -> Result<()> {
    let cfg = NormalizerConfig {
        mode: a.mode,
        jaccard_threshold: a.threshold,
        vote_k: a.vote_k,
        k_max: a.k,
    };
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    let lists = if a.mode.is_vector() {
        let space = embed_corpus_ingest(&a.index, a.text_vectors)?;
        let queries = embed_corpus_ingest(&a.queries, a.text_vectors)?;
        if queries.dim() != space.dim() {
            bail!(synthmention::Error::invalid(format!(
                "query vectors {} have dim {}, index {} has dim {}",
                a.queries.display(),
                queries.dim(),
                a.index.display(),
                space.dim()
            )));
        }
        let index = VectorIndex::build(&space)?;
        let q: Vec<(&str, &[f32])> = queries.entries().iter().map(|e| (e.entry_id.as_str(), e.vector.as_slice())).collect();
        normalize_vectors(&index, &q, &cfg)?
    } else {
        let table = corpus::load_concept_table(&a.index, a.group.as_deref())?;
        let extra = a.extra_names.as_ref().map(|p| corpus::load_corpus(p, SplitName::Train)).transpose()?;
        let index = StringIndex::build(&table, extra.as_ref())?;
        let queries = corpus::load_corpus(&a.queries, SplitName::Test)?;
        normalize_strings(&index, &queries, &cfg)?
    };
    write_jsonl(&a.out, &lists)?;
    let meta = a.out.with_extension("meta.json");
    let meta_json = serde_json::json!({ "config": cfg, "candidate_dedup": CANDIDATE_DEDUP });
    fs::write(&meta, serde_json::to_string_pretty(&meta_json)? + "\n").with_context(|| format!("writing {}", meta.display()))?;
    if !quiet {
        eprintln!("{} candidate lists written to {}", lists.len(), a.out.display());
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct TagArgs {
    /// Corpus JSONL to tokenize.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: SplitName,
    #[arg(long)]
    pub tokens_out: PathBuf,
    #[arg(long)]
    pub labels_out: PathBuf,
    /// Tag with a dictionary built from this concept table instead of
    /// exporting gold labels.
    #[arg(long)]
    pub gazetteer: Option<PathBuf>,
    #[arg(long)]
    pub group: Option<String>,
    /// Corpus whose mention surfaces extend the dictionary.
    #[arg(long)]
    pub extra_names: Option<PathBuf>,
}

pub fn tag(a: TagArgs, quiet: bool) -> Result<()> {
    let split = corpus::load_corpus(&a.corpus, a.split)?;
    let gold = der::tokenize_and_tag(&split);
    let labels = match &a.gazetteer {
        Some(p) => {
            let table = corpus::load_concept_table(p, a.group.as_deref())?;
            let extra = a.extra_names.as_ref().map(|p| corpus::load_corpus(p, SplitName::Train)).transpose()?;
            der::gazetteer_tag(&split, &StringIndex::build(&table, extra.as_ref())?)
        }
        None => gold.clone(),
    };
    let mut w = create(&a.tokens_out)?;
    der::write_tokens(&gold, &mut w)?;
    let mut w = create(&a.labels_out)?;
    der::write_labels(&labels, &mut w)?;
    if !quiet {
        eprintln!("{} documents tagged", gold.len());
    }
    Ok(())
}

#[derive(Serialize)]
pub struct DerScores {
    pub overall: metrics::EntityPRF,
    pub token_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ood: Option<metrics::EntityPRF>,
}

pub fn score_der(gold_split: &CorpusSplit, gold: &[TagSequence], pred: &[TagSequence], train: Option<&CorpusSplit>) -> Result<DerScores> {
    let overall = metrics::entity_prf(gold, pred)?;
    let token_accuracy = metrics::token_accuracy(gold, pred)?;
    let ood = match train {
        Some(t) => {
            let (g, p) = der::restrict_to_ood(gold, pred, gold_split, &der::ood_filter(t))?;
            Some(metrics::prf_from_entities(&g, &p))
        }
        None => None,
    };
    Ok(DerScores {
        overall,
        token_accuracy,
        ood,
    })
}

#[derive(Args, Debug)]
pub struct EvalDerArgs {
    /// Gold corpus JSONL.
    #[arg(long)]
    pub gold: PathBuf,
    /// Predicted labels JSONL aligned to the exported tokenization.
    #[arg(long)]
    pub pred: PathBuf,
    /// Training corpus; enables out-of-distribution scores.
    #[arg(long)]
    pub train: Option<PathBuf>,
}

pub fn eval_der(a: EvalDerArgs, quiet: bool) -> Result<()> {
    let split = corpus::load_corpus(&a.gold, SplitName::Test)?;
    let gold = der::tokenize_and_tag(&split);
    let pred = der::ingest_predictions(&a.pred, &gold)?;
    let train = a.train.as_ref().map(|p| corpus::load_corpus(p, SplitName::Train)).transpose()?;
    print_json(&score_der(&split, &gold, &pred, train.as_ref())?, quiet)
}

#[derive(Args, Debug)]
pub struct EvalDenArgs {
    /// Gold corpus JSONL; queries are its mentions.
    #[arg(long)]
    pub gold: PathBuf,
    /// Candidate lists JSONL.
    #[arg(long)]
    pub pred: PathBuf,
    /// Training corpus; enables out-of-distribution accuracy.
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,5,50")]
    pub ks: Vec<usize>,
}

pub fn eval_den(a: EvalDenArgs, quiet: bool) -> Result<()> {
    let split = corpus::load_corpus(&a.gold, SplitName::Test)?;
    let preds = read_candidate_lists(&a.pred)?;
    let gold = gold_pairs(&split);
    #[derive(Serialize)]
    struct Out {
        accuracy: Vec<metrics::AccuracyAtK>,
        #[serde(skip_serializing_if = "Option::is_none")]
        ood_accuracy: Option<Vec<metrics::AccuracyAtK>>,
    }
    let accuracy = metrics::accuracy_at_k(&gold, &preds, &a.ks)?;
    let ood_accuracy = match &a.train {
        Some(p) => {
            let train = corpus::load_corpus(p, SplitName::Train)?;
            Some(metrics::ood_accuracy_at_k(&gold, &preds, &corpus::cui_set(&train), &a.ks)?)
        }
        None => None,
    };
    print_json(&Out { accuracy, ood_accuracy }, quiet)
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    /// Per-run metric TSV (with header) of the first arm, usually the baseline.
    #[arg(long)]
    pub a: PathBuf,
    /// Per-run metric TSV of the second arm.
    #[arg(long)]
    pub b: PathBuf,
    /// Column holding the statistic to compare.
    #[arg(long)]
    pub column: String,
    #[arg(long, default_value_t = metrics::ALPHA)]
    pub alpha: f64,
}

fn read_column(path: &Path, column: &str) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().map(|h| h.split('\t').collect()).unwrap_or_default();
    let Some(col) = header.iter().position(|h| h.trim() == column) else {
        bail!(synthmention::Error::invalid(format!("{} has no column `{column}`", path.display())));
    };
    lines
        .enumerate()
        .map(|(i, l)| {
            let field = l.split('\t').nth(col).unwrap_or("").trim();
            field.parse::<f64>().map_err(|e| {
                synthmention::Error::Parse {
                    origin: path.display().to_string(),
                    line: i + 2,
                    message: format!("column `{column}`: {e}"),
                }
                .into()
            })
        })
        .collect()
}

pub fn stats(a: StatsArgs, quiet: bool) -> Result<()> {
    let xa = read_column(&a.a, &a.column)?;
    let xb = read_column(&a.b, &a.column)?;
    let r = metrics::mann_whitney_u(&xa, &xb, a.alpha)?;
    print_json(&r, quiet)
}

/// Vectors looked up by entry id.
pub fn vectors_by_id(space: &EmbeddingSpace) -> std::collections::HashMap<&str, &[f32]> {
    space.entries().iter().map(|e| (e.entry_id.as_str(), e.vector.as_slice())).collect()
}
