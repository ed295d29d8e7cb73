//! From concept records to generation prompts, and from raw generations back
//! to validated synthetic mentions.
//!
//! A generation is accepted when a delimited span (or, failing that, a fuzzy
//! window over the tag-stripped text) lies within the edit budget of one of
//! the concept's names.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::BufRead;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ConceptTable, CorpusSplit, Document, Mention, Source, SplitName, Concept};
use crate::error::{Error, Result};
use crate::text::{char_slice, fold_chars, levenshtein};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    /// Maximum Levenshtein distance between an extracted span and a concept name.
    pub budget: usize,
    pub generations_per_cui: usize,
    pub open_tag: String,
    pub close_tag: String,
    /// Also close a span on a second opening tag (`<1CUI>x<1CUI>`), the form
    /// shown in the prompt example.
    pub open_tag_closes: bool,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            budget: 4,
            generations_per_cui: 5,
            open_tag: "<1CUI>".to_string(),
            close_tag: "</1CUI>".to_string(),
            open_tag_closes: true,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.open_tag.is_empty() || self.close_tag.is_empty() {
            return Err(Error::invalid("delimiter tags must be non-empty"));
        }
        if self.open_tag == self.close_tag {
            return Err(Error::invalid("open and close tags must differ"));
        }
        if self.generations_per_cui == 0 {
            return Err(Error::invalid("generations_per_cui must be at least 1"));
        }
        Ok(())
    }
}

/// Slot values for one prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptSpec {
    pub cui: String,
    pub mention_name: String,
    pub synonym_list: Vec<String>,
    pub definition: Option<String>,
    pub variant_index: usize,
}

impl PromptSpec {
    pub fn new(concept: &Concept, variant_index: usize, cfg: &GenerationConfig) -> Result<Self> {
        if concept.preferred_name.is_empty() {
            return Err(Error::invalid(format!("concept `{}` has no preferred name", concept.cui)));
        }
        if variant_index >= cfg.generations_per_cui {
            return Err(Error::invalid(format!(
                "variant {variant_index} out of range for {} generations per cui",
                cfg.generations_per_cui
            )));
        }
        Ok(PromptSpec {
            cui: concept.cui.clone(),
            mention_name: concept.preferred_name.clone(),
            synonym_list: concept.synonyms.clone(),
            definition: concept.definitions.first().cloned(),
            variant_index,
        })
    }

    /// The variant index does not change the text; diversity across variants
    /// comes from sampling in the external generator.
    pub fn render(&self, cfg: &GenerationConfig) -> String {
        let mention = &self.mention_name;
        let names = std::iter::once(mention.as_str())
            .chain(self.synonym_list.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(", ");
        let tag = &cfg.open_tag;
        let mut out = format!(
            "Pretend you are a physician: Write a clinical note for a patient that mentions the condition \
             {mention} either explicitly or as a synonym or abbreviation to this condition. \
             It is also known as {names}."
        );
        if let Some(def) = &self.definition {
            out.push_str(&format!(
                " It is defined as {def}. Place tokens {tag} before and after the mention of this condition."
            ));
        }
        out.push_str(&format!(" For example {tag} {mention} {tag}."));
        out
    }
}

pub fn render_prompt(concept: &Concept, variant_index: usize, cfg: &GenerationConfig) -> Result<String> {
    Ok(PromptSpec::new(concept, variant_index, cfg)?.render(cfg))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub cui: String,
    pub variant: usize,
    pub prompt: String,
}

/// Every prompt for every concept, `generations_per_cui` variants each, in
/// cui order.
pub fn export_prompts(table: &ConceptTable, cfg: &GenerationConfig) -> Result<Vec<PromptRecord>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(table.len() * cfg.generations_per_cui);
    for concept in table.iter() {
        for variant in 0..cfg.generations_per_cui {
            out.push(PromptRecord {
                cui: concept.cui.clone(),
                variant,
                prompt: render_prompt(concept, variant, cfg)?,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tag {
    Open,
    Close,
}

/// Removes tags, returning the clean text plus each tag's position in it.
fn scan_tags(raw: &str, cfg: &GenerationConfig) -> (String, Vec<(Tag, usize)>) {
    let mut clean = String::with_capacity(raw.len());
    let mut events = Vec::new();
    let mut chars = 0usize;
    let mut rest = raw;
    // Longer tag first so that neither can shadow the other.
    let (first, second) = if cfg.close_tag.len() >= cfg.open_tag.len() {
        ((cfg.close_tag.as_str(), Tag::Close), (cfg.open_tag.as_str(), Tag::Open))
    } else {
        ((cfg.open_tag.as_str(), Tag::Open), (cfg.close_tag.as_str(), Tag::Close))
    };
    while !rest.is_empty() {
        if rest.starts_with(first.0) {
            events.push((first.1, chars));
            rest = &rest[first.0.len()..];
        } else if rest.starts_with(second.0) {
            events.push((second.1, chars));
            rest = &rest[second.0.len()..];
        } else {
            let c = rest.chars().next().expect("non-empty");
            clean.push(c);
            chars += 1;
            rest = &rest[c.len_utf8()..];
        }
    }
    (clean, events)
}

/// The generation text with every delimiter removed.
pub fn strip_tags(raw: &str, cfg: &GenerationConfig) -> String {
    scan_tags(raw, cfg).0
}

/// A delimited span, offsets over the tag-stripped text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSpan {
    pub start: usize,
    pub end: usize,
    pub surface: String,
    /// Number of well-formed tag pairs found; only the first is used.
    pub pairs: usize,
}

pub fn parse_tagged_output(raw: &str, cfg: &GenerationConfig) -> Option<TaggedSpan> {
    let (clean, events) = scan_tags(raw, cfg);
    let mut open: Option<usize> = None;
    let mut pairs = Vec::new();
    for (tag, pos) in events {
        match (tag, open) {
            (Tag::Open, None) => open = Some(pos),
            (Tag::Open, Some(s)) if cfg.open_tag_closes => {
                pairs.push((s, pos));
                open = None;
            }
            (Tag::Close, Some(s)) => {
                pairs.push((s, pos));
                open = None;
            }
            _ => return None,
        }
    }
    if open.is_some() {
        return None;
    }
    let &(mut start, mut end) = pairs.first()?;
    let chars: Vec<char> = clean.chars().collect();
    while start < end && chars[start].is_whitespace() {
        start += 1;
    }
    while end > start && chars[end - 1].is_whitespace() {
        end -= 1;
    }
    if start == end {
        return None;
    }
    Some(TaggedSpan {
        start,
        end,
        surface: chars[start..end].iter().collect(),
        pairs: pairs.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzyMatch {
    pub start: usize,
    pub end: usize,
    pub distance: usize,
}

/// The non-empty window of `haystack` closest to `needle` in edit distance,
/// ties broken by smaller start and then shorter window. Inputs should
/// already be case-folded.
pub fn best_window(haystack: &[char], needle: &[char]) -> Option<FuzzyMatch> {
    if needle.is_empty() || haystack.is_empty() {
        return None;
    }
    let m = needle.len();
    // Each cell holds (cost, window start); lexicographic minimum over paths.
    let mut col: Vec<(usize, usize)> = (0..=m).map(|i| (i, 0)).collect();
    let mut next = col.clone();
    let mut best: Option<(usize, usize, usize)> = None;
    for (j, &h) in haystack.iter().enumerate() {
        let end = j + 1;
        next[0] = (0, end);
        for i in 1..=m {
            let (dc, ds) = col[i - 1];
            let diag = (dc + usize::from(needle[i - 1] != h), ds);
            let (lc, ls) = col[i];
            let left = (lc + 1, ls);
            let (uc, us) = next[i - 1];
            let up = (uc + 1, us);
            next[i] = diag.min(left).min(up);
        }
        let (cost, start) = next[m];
        let key = (cost, start, end - start);
        if best.is_none_or(|b| key < b) {
            best = Some(key);
        }
        std::mem::swap(&mut col, &mut next);
    }
    best.map(|(distance, start, len)| FuzzyMatch {
        start,
        end: start + len,
        distance,
    })
}

/// Case-insensitive approximate substring search within an edit budget.
/// Offsets are character positions in `haystack`.
pub fn fuzzy_locate(haystack: &str, needle: &str, budget: usize) -> Option<FuzzyMatch> {
    let hay = fold_chars(haystack);
    let pat = fold_chars(needle);
    best_window(&hay, &pat).filter(|m| m.distance <= budget)
}

/// One raw LLM output line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawGeneration {
    pub cui: String,
    #[serde(default)]
    pub variant: usize,
    pub text: String,
}

pub fn read_raw_generations(reader: impl BufRead, origin: &str) -> Result<Vec<RawGeneration>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(origin, idx + 1, e.to_string()))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Accepted,
    RejectedNoMatch,
    RejectedDuplicate,
    Relabelled,
}

impl RecordStatus {
    pub fn is_usable(self) -> bool {
        matches!(self, RecordStatus::Accepted | RecordStatus::Relabelled)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedSpan {
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSpan {
    pub start: usize,
    pub end: usize,
    pub surface: String,
    pub cui: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionRoute {
    Tagged,
    Fuzzy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticRecord {
    pub doc_id: String,
    pub cui: String,
    pub variant: usize,
    pub raw_text: String,
    /// `raw_text` with delimiters removed; all offsets index into it.
    pub text: String,
    pub extracted: Option<ExtractedSpan>,
    pub edit_distance: Option<usize>,
    pub route: Option<ExtractionRoute>,
    pub tag_pairs: usize,
    pub status: RecordStatus,
    /// Span set carried into the corpus: the extracted span, plus any merged
    /// external predictions.
    pub spans: Vec<LabeledSpan>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecordError {
    pub index: usize,
    pub cui: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Extraction {
    pub records: Vec<SyntheticRecord>,
    pub errors: Vec<RecordError>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ExtractionSummary {
    pub accepted: usize,
    pub rejected_no_match: usize,
    pub rejected_duplicate: usize,
    pub relabelled: usize,
    pub errors: usize,
    pub accepted_cuis: usize,
}

impl Extraction {
    pub fn summary(&self) -> ExtractionSummary {
        let mut s = ExtractionSummary {
            errors: self.errors.len(),
            ..Default::default()
        };
        let mut cuis = HashSet::new();
        for r in &self.records {
            match r.status {
                RecordStatus::Accepted => s.accepted += 1,
                RecordStatus::RejectedNoMatch => s.rejected_no_match += 1,
                RecordStatus::RejectedDuplicate => s.rejected_duplicate += 1,
                RecordStatus::Relabelled => s.relabelled += 1,
            }
            if r.status.is_usable() {
                cuis.insert(r.cui.as_str());
            }
        }
        s.accepted_cuis = cuis.len();
        s
    }
}

fn extract_one(doc_id: String, raw: &RawGeneration, concept: &Concept, cfg: &GenerationConfig) -> SyntheticRecord {
    let text = strip_tags(&raw.text, cfg);
    let mut record = SyntheticRecord {
        doc_id,
        cui: raw.cui.clone(),
        variant: raw.variant,
        raw_text: raw.text.clone(),
        text,
        extracted: None,
        edit_distance: None,
        route: None,
        tag_pairs: 0,
        status: RecordStatus::RejectedNoMatch,
        spans: Vec::new(),
    };

    let names: Vec<Vec<char>> = concept.names().map(fold_chars).collect();
    let mut found: Option<(usize, usize, usize, ExtractionRoute)> = None;

    if let Some(tagged) = parse_tagged_output(&raw.text, cfg) {
        record.tag_pairs = tagged.pairs;
        let surface = fold_chars(&tagged.surface);
        let distance = names.iter().map(|n| levenshtein(&surface, n)).min().unwrap_or(usize::MAX);
        if distance <= cfg.budget {
            found = Some((tagged.start, tagged.end, distance, ExtractionRoute::Tagged));
        }
    }
    if found.is_none() {
        let hay = fold_chars(&record.text);
        found = names.iter().find_map(|n| {
            best_window(&hay, n)
                .filter(|m| m.distance <= cfg.budget)
                .map(|m| (m.start, m.end, m.distance, ExtractionRoute::Fuzzy))
        });
    }

    if let Some((start, end, distance, route)) = found {
        let surface = char_slice(&record.text, start, end).expect("span within text").to_string();
        record.extracted = Some(ExtractedSpan {
            start,
            end,
            surface: surface.clone(),
        });
        record.spans = vec![LabeledSpan {
            start,
            end,
            surface,
            cui: record.cui.clone(),
        }];
        record.edit_distance = Some(distance);
        record.route = Some(route);
        record.status = RecordStatus::Accepted;
    }
    record
}

/// Validates raw generations against the concept table. Output order follows
/// input order; records with an unknown cui become error entries instead.
pub fn validate_and_extract(raw: &[RawGeneration], table: &ConceptTable, cfg: &GenerationConfig) -> Result<Extraction> {
    cfg.validate()?;

    enum Plan<'a> {
        Unknown,
        Duplicate(String),
        Extract(String, &'a Concept),
    }

    let mut ordinals: HashMap<&str, usize> = HashMap::new();
    let mut seen: HashSet<(&str, &str)> = HashSet::new();
    let plans: Vec<Plan> = raw
        .iter()
        .map(|r| {
            let ordinal = ordinals.entry(r.cui.as_str()).or_insert(0);
            let doc_id = format!("synth:{}:{}", r.cui, ordinal);
            *ordinal += 1;
            match table.get(&r.cui) {
                None => Plan::Unknown,
                Some(_) if !seen.insert((r.cui.as_str(), r.text.as_str())) => Plan::Duplicate(doc_id),
                Some(c) => Plan::Extract(doc_id, c),
            }
        })
        .collect();

    let outcomes: Vec<Option<SyntheticRecord>> = plans
        .into_par_iter()
        .zip(raw.par_iter())
        .map(|(plan, r)| match plan {
            Plan::Unknown => None,
            Plan::Duplicate(doc_id) => Some(SyntheticRecord {
                doc_id,
                cui: r.cui.clone(),
                variant: r.variant,
                raw_text: r.text.clone(),
                text: strip_tags(&r.text, cfg),
                extracted: None,
                edit_distance: None,
                route: None,
                tag_pairs: 0,
                status: RecordStatus::RejectedDuplicate,
                spans: Vec::new(),
            }),
            Plan::Extract(doc_id, concept) => Some(extract_one(doc_id, r, concept, cfg)),
        })
        .collect();

    let mut out = Extraction::default();
    for (index, (outcome, r)) in outcomes.into_iter().zip(raw).enumerate() {
        match outcome {
            Some(rec) => out.records.push(rec),
            None => out.errors.push(RecordError {
                index,
                cui: r.cui.clone(),
                message: format!("unknown cui `{}`", r.cui),
            }),
        }
    }
    Ok(out)
}

/// A span predicted by an external tagger over a synthetic record's text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictedSpan {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    #[serde(default)]
    pub cui: Option<String>,
}

/// Reads predicted spans from JSON lines; document records are skipped.
pub fn read_predicted_spans(reader: impl BufRead, origin: &str) -> Result<Vec<PredictedSpan>> {
    #[derive(Deserialize)]
    struct Line {
        doc_id: String,
        start: Option<usize>,
        end: Option<usize>,
        #[serde(default)]
        cui: Option<String>,
        #[serde(default)]
        text: Option<serde_json::Value>,
    }
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Line = serde_json::from_str(&line).map_err(|e| Error::parse(origin, idx + 1, e.to_string()))?;
        if rec.text.is_some() {
            continue;
        }
        let (Some(start), Some(end)) = (rec.start, rec.end) else {
            return Err(Error::parse(origin, idx + 1, "predicted span needs `start` and `end`"));
        };
        out.push(PredictedSpan {
            doc_id: rec.doc_id,
            start,
            end,
            cui: rec.cui.filter(|c| !c.is_empty()),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MergeWarnings {
    /// Predictions whose doc_id matched no usable record.
    pub unmatched: usize,
    /// Predictions whose span fell outside the record text.
    pub out_of_range: usize,
}

/// Adds externally predicted spans to each usable record's span set. A record
/// whose span set grows becomes `relabelled`; spans without a cui inherit the
/// record's.
pub fn merge_external_labels(
    records: Vec<SyntheticRecord>,
    predictions: &[PredictedSpan],
) -> (Vec<SyntheticRecord>, MergeWarnings) {
    let mut by_doc: BTreeMap<&str, Vec<&PredictedSpan>> = BTreeMap::new();
    for p in predictions {
        by_doc.entry(p.doc_id.as_str()).or_default().push(p);
    }
    let mut warnings = MergeWarnings::default();
    let mut out = Vec::with_capacity(records.len());
    for mut rec in records {
        let preds = if rec.status.is_usable() {
            by_doc.remove(rec.doc_id.as_str())
        } else {
            None
        };
        if let Some(mut preds) = preds {
            preds.sort_by_key(|p| (p.start, p.end));
            let mut changed = false;
            for p in preds {
                let Some(surface) = char_slice(&rec.text, p.start, p.end).filter(|_| p.start < p.end) else {
                    warnings.out_of_range += 1;
                    continue;
                };
                if rec.spans.iter().any(|s| s.start == p.start && s.end == p.end) {
                    continue;
                }
                rec.spans.push(LabeledSpan {
                    start: p.start,
                    end: p.end,
                    surface: surface.to_string(),
                    cui: p.cui.clone().unwrap_or_else(|| rec.cui.clone()),
                });
                changed = true;
            }
            if changed {
                rec.status = RecordStatus::Relabelled;
            }
        }
        out.push(rec);
    }
    warnings.unmatched = by_doc.values().map(Vec::len).sum();
    (out, warnings)
}

/// One synthetic document per usable record, mentions from its span set.
pub fn to_corpus(records: &[SyntheticRecord]) -> Result<CorpusSplit> {
    let mut split = CorpusSplit::empty(SplitName::Train);
    for rec in records {
        if !rec.status.is_usable() {
            return Err(Error::invalid(format!(
                "record `{}` has status {:?} and cannot enter a corpus",
                rec.doc_id, rec.status
            )));
        }
        split.documents.push(Document {
            doc_id: rec.doc_id.clone(),
            text: rec.text.clone(),
            source: Source::Synthetic,
        });
        let mut spans: Vec<&LabeledSpan> = rec.spans.iter().collect();
        spans.sort_by_key(|s| (s.start, s.end));
        split.mentions.extend(spans.into_iter().map(|s| Mention {
            doc_id: rec.doc_id.clone(),
            start: s.start,
            end: s.end,
            surface: s.surface.clone(),
            cui: s.cui.clone(),
        }));
    }
    split.validate()?;
    Ok(split)
}

/// Mean number of distinct (case-folded) surfaces per cui.
pub fn mean_unique_surfaces_per_cui(split: &CorpusSplit) -> f64 {
    let mut per_cui: HashMap<&str, HashSet<String>> = HashMap::new();
    for m in &split.mentions {
        per_cui.entry(m.cui.as_str()).or_default().insert(m.surface.to_lowercase());
    }
    if per_cui.is_empty() {
        return 0.0;
    }
    per_cui.values().map(HashSet::len).sum::<usize>() as f64 / per_cui.len() as f64
}
