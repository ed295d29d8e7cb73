//! Concept dictionaries, annotated corpora and identifier crosswalks.
//!
//! Three on-disk formats are handled here:
//!
//! * concept table: TSV `cui, term, term_type, semantic_group, definition`
//!   where the last two columns are optional and `term_type` is one of
//!   `PREF`, `SYN` or `DEF` (a definition-only row, whose term may be empty);
//! * corpus: JSON lines, one record per document or mention;
//! * crosswalk: TSV `source_vocab, source_id, cui`.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{char_len, char_slice};

/// One vocabulary entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub cui: String,
    pub preferred_name: String,
    pub synonyms: Vec<String>,
    pub definitions: Vec<String>,
    pub semantic_group: String,
}

impl Concept {
    /// Preferred name followed by synonyms.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.preferred_name.as_str()).chain(self.synonyms.iter().map(String::as_str))
    }
}

/// Non-fatal irregularities seen while loading a concept table.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ConceptWarnings {
    /// A second `PREF` row for a cui that already had one.
    pub duplicate_preferred: usize,
    /// A row naming a different semantic group than the cui's first row.
    pub group_conflicts: usize,
    /// Cuis that only carried definition rows and were dropped.
    pub nameless_dropped: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConceptTable {
    pub concepts: BTreeMap<String, Concept>,
    pub group_filter: Option<String>,
    pub warnings: ConceptWarnings,
}

/// Synonym and definition coverage of a concept table.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConceptStats {
    pub concepts: usize,
    pub with_synonyms: usize,
    pub without_synonyms: usize,
    pub total_synonyms: usize,
    pub with_definitions: usize,
    pub without_definitions: usize,
    pub total_definitions: usize,
    pub with_neither: usize,
}

impl ConceptTable {
    pub fn from_concepts(concepts: impl IntoIterator<Item = Concept>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for c in concepts {
            if c.cui.is_empty() || c.preferred_name.is_empty() {
                return Err(Error::invalid(format!("concept `{}` has an empty cui or preferred name", c.cui)));
            }
            let cui = c.cui.clone();
            if map.insert(cui.clone(), c).is_some() {
                return Err(Error::invalid(format!("duplicate concept `{cui}`")));
            }
        }
        Ok(ConceptTable {
            concepts: map,
            ..Default::default()
        })
    }

    pub fn get(&self, cui: &str) -> Option<&Concept> {
        self.concepts.get(cui)
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Concept> {
        self.concepts.values()
    }

    pub fn stats(&self) -> ConceptStats {
        let mut s = ConceptStats {
            concepts: self.concepts.len(),
            ..Default::default()
        };
        for c in self.concepts.values() {
            let has_syn = !c.synonyms.is_empty();
            let has_def = !c.definitions.is_empty();
            if has_syn {
                s.with_synonyms += 1;
            } else {
                s.without_synonyms += 1;
            }
            if has_def {
                s.with_definitions += 1;
            } else {
                s.without_definitions += 1;
            }
            if !has_syn && !has_def {
                s.with_neither += 1;
            }
            s.total_synonyms += c.synonyms.len();
            s.total_definitions += c.definitions.len();
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TermType {
    Preferred,
    Synonym,
    Definition,
}

impl FromStr for TermType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "PREF" | "PT" => Ok(TermType::Preferred),
            "SYN" | "SY" => Ok(TermType::Synonym),
            "DEF" => Ok(TermType::Definition),
            other => Err(format!("unknown term type `{other}` (expected PREF, SYN or DEF)")),
        }
    }
}

#[derive(Default)]
struct PendingConcept {
    preferred: Option<String>,
    terms: Vec<String>,
    definitions: Vec<String>,
    group: Option<String>,
}

pub fn load_concept_table(path: impl AsRef<Path>, group_filter: Option<&str>) -> Result<ConceptTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_concept_table(BufReader::new(file), &path.display().to_string(), group_filter)
}

pub fn read_concept_table(reader: impl BufRead, origin: &str, group_filter: Option<&str>) -> Result<ConceptTable> {
    let mut pending: BTreeMap<String, PendingConcept> = BTreeMap::new();
    let mut warnings = ConceptWarnings::default();

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(Error::parse(
                origin,
                lineno,
                format!("expected at least 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let cui = fields[0].trim();
        if cui.is_empty() {
            return Err(Error::parse(origin, lineno, "empty cui"));
        }
        let term = fields[1].trim();
        let term_type: TermType = fields[2].parse().map_err(|m: String| Error::parse(origin, lineno, m))?;
        let group = fields.get(3).map(|g| g.trim()).filter(|g| !g.is_empty());
        let definition = fields.get(4).map(|d| d.trim()).filter(|d| !d.is_empty());

        if term_type != TermType::Definition && term.is_empty() {
            return Err(Error::parse(origin, lineno, "empty term"));
        }
        if term_type == TermType::Definition && definition.is_none() {
            return Err(Error::parse(origin, lineno, "DEF row without a definition"));
        }

        let entry = pending.entry(cui.to_string()).or_default();
        if let Some(g) = group {
            match &entry.group {
                None => entry.group = Some(g.to_string()),
                Some(existing) if existing != g => warnings.group_conflicts += 1,
                Some(_) => {}
            }
        }
        match term_type {
            TermType::Preferred => {
                if entry.preferred.is_none() {
                    entry.preferred = Some(term.to_string());
                } else {
                    warnings.duplicate_preferred += 1;
                }
                entry.terms.push(term.to_string());
            }
            TermType::Synonym => entry.terms.push(term.to_string()),
            TermType::Definition => {}
        }
        if let Some(d) = definition {
            entry.definitions.push(d.to_string());
        }
    }

    let mut concepts = BTreeMap::new();
    for (cui, p) in pending {
        let semantic_group = p.group.unwrap_or_default();
        if let Some(filter) = group_filter {
            if semantic_group != filter {
                continue;
            }
        }
        // No PREF row: the first listed term wins.
        let Some(preferred_name) = p.preferred.or_else(|| p.terms.first().cloned()) else {
            warnings.nameless_dropped += 1;
            continue;
        };
        let mut seen = HashSet::new();
        seen.insert(preferred_name.clone());
        let synonyms = p.terms.into_iter().filter(|t| seen.insert(t.clone())).collect();
        concepts.insert(
            cui.clone(),
            Concept {
                cui,
                preferred_name,
                synonyms,
                definitions: p.definitions,
                semantic_group,
            },
        );
    }

    Ok(ConceptTable {
        concepts,
        group_filter: group_filter.map(str::to_string),
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Gold,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    pub source: Source,
}

/// A contiguous character span of a document bound to a concept.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mention {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    pub surface: String,
    pub cui: String,
}

impl Mention {
    /// Stable identifier used to key queries, predictions and vector entries.
    pub fn query_id(&self) -> String {
        format!("{}:{}-{}", self.doc_id, self.start, self.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        })
    }
}

impl FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "dev" => Ok(SplitName::Dev),
            "test" => Ok(SplitName::Test),
            other => Err(Error::invalid(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSplit {
    pub name: SplitName,
    pub documents: Vec<Document>,
    pub mentions: Vec<Mention>,
}

/// Records skipped while loading a corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CorpusWarnings {
    pub discontiguous_dropped: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MentionRecord {
    doc_id: String,
    #[serde(default)]
    start: Option<usize>,
    #[serde(default)]
    end: Option<usize>,
    #[serde(default)]
    spans: Option<Vec<[usize; 2]>>,
    surface: String,
    cui: String,
}

impl CorpusSplit {
    pub fn empty(name: SplitName) -> Self {
        CorpusSplit {
            name,
            documents: Vec::new(),
            mentions: Vec::new(),
        }
    }

    pub fn document_index(&self) -> HashMap<&str, usize> {
        self.documents
            .iter()
            .enumerate()
            .map(|(i, d)| (d.doc_id.as_str(), i))
            .collect()
    }

    /// Checks every document and mention invariant.
    pub fn validate(&self) -> Result<()> {
        let mut lengths: HashMap<&str, (usize, &str)> = HashMap::with_capacity(self.documents.len());
        for d in &self.documents {
            if d.doc_id.is_empty() {
                return Err(Error::invalid("document with empty doc_id"));
            }
            if d.text.is_empty() {
                return Err(Error::invalid(format!("document `{}` has empty text", d.doc_id)));
            }
            if lengths.insert(&d.doc_id, (char_len(&d.text), &d.text)).is_some() {
                return Err(Error::invalid(format!("duplicate doc_id `{}`", d.doc_id)));
            }
        }
        for m in &self.mentions {
            let Some(&(len, text)) = lengths.get(m.doc_id.as_str()) else {
                return Err(Error::invalid(format!("mention refers to unknown document `{}`", m.doc_id)));
            };
            if m.start >= m.end || m.end > len {
                return Err(Error::SpanOutOfRange {
                    doc_id: m.doc_id.clone(),
                    start: m.start,
                    end: m.end,
                    len,
                });
            }
            let actual = char_slice(text, m.start, m.end).unwrap_or_default();
            if actual != m.surface {
                return Err(Error::SurfaceMismatch {
                    doc_id: m.doc_id.clone(),
                    start: m.start,
                    end: m.end,
                    surface: m.surface.clone(),
                    actual: actual.to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        let io = |e: std::io::Error| Error::io("<output>", e);
        for d in &self.documents {
            let line = serde_json::to_string(d).expect("documents serialize");
            writeln!(w, "{line}").map_err(io)?;
        }
        for m in &self.mentions {
            let line = serde_json::to_string(m).expect("mentions serialize");
            writeln!(w, "{line}").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_jsonl(BufWriter::new(file)).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }
}

pub fn load_corpus(path: impl AsRef<Path>, name: SplitName) -> Result<CorpusSplit> {
    load_corpus_with_warnings(path, name).map(|(split, _)| split)
}

pub fn load_corpus_with_warnings(path: impl AsRef<Path>, name: SplitName) -> Result<(CorpusSplit, CorpusWarnings)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file), &path.display().to_string(), name)
}

pub fn read_corpus(reader: impl BufRead, origin: &str, name: SplitName) -> Result<(CorpusSplit, CorpusWarnings)> {
    let mut split = CorpusSplit::empty(name);
    let mut warnings = CorpusWarnings::default();

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| Error::parse(origin, lineno, e.to_string()))?;
        if value.get("text").is_some() {
            let doc: Document =
                serde_json::from_value(value).map_err(|e| Error::parse(origin, lineno, e.to_string()))?;
            split.documents.push(doc);
            continue;
        }
        let rec: MentionRecord =
            serde_json::from_value(value).map_err(|e| Error::parse(origin, lineno, e.to_string()))?;
        let (start, end) = match (rec.start, rec.end, rec.spans) {
            (Some(s), Some(e), None) => (s, e),
            (None, None, Some(spans)) if spans.len() == 1 => (spans[0][0], spans[0][1]),
            (None, None, Some(spans)) if spans.len() > 1 => {
                warnings.discontiguous_dropped += 1;
                continue;
            }
            _ => {
                return Err(Error::parse(
                    origin,
                    lineno,
                    "mention needs either `start`/`end` or a non-empty `spans` list",
                ))
            }
        };
        split.mentions.push(Mention {
            doc_id: rec.doc_id,
            start,
            end,
            surface: rec.surface,
            cui: rec.cui,
        });
    }

    split.validate().map_err(|e| match e {
        Error::Invalid(msg) => Error::invalid(format!("{origin}: {msg}")),
        other => other,
    })?;
    Ok((split, warnings))
}

/// Distinct cuis over the split's mentions.
pub fn cui_set(split: &CorpusSplit) -> BTreeSet<String> {
    split.mentions.iter().map(|m| m.cui.clone()).collect()
}

/// Mapping from source-vocabulary identifiers (MeSH, OMIM, ...) to cuis.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Crosswalk {
    entries: BTreeMap<(String, String), String>,
}

impl Crosswalk {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, vocab: &str, source_id: &str, cui: &str) -> Result<()> {
        if cui.is_empty() {
            return Err(Error::invalid(format!("crosswalk entry {vocab}:{source_id} maps to an empty cui")));
        }
        let key = (vocab.to_ascii_uppercase(), source_id.to_string());
        match self.entries.get(&key) {
            Some(existing) if existing != cui => Err(Error::invalid(format!(
                "crosswalk entry {vocab}:{source_id} maps to both {existing} and {cui}"
            ))),
            _ => {
                self.entries.insert(key, cui.to_string());
                Ok(())
            }
        }
    }

    pub fn lookup(&self, vocab: &str, source_id: &str) -> Option<&str> {
        self.entries
            .get(&(vocab.to_ascii_uppercase(), source_id.to_string()))
            .map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn load_crosswalk(path: impl AsRef<Path>) -> Result<Crosswalk> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_crosswalk(BufReader::new(file), &path.display().to_string())
}

pub fn read_crosswalk(reader: impl BufRead, origin: &str) -> Result<Crosswalk> {
    let mut xwalk = Crosswalk::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::parse(origin, lineno, "expected `source_vocab<TAB>source_id<TAB>cui`"));
        }
        xwalk
            .insert(fields[0], fields[1], fields[2])
            .map_err(|e| Error::parse(origin, lineno, e.to_string()))?;
    }
    Ok(xwalk)
}

/// Rewrites `VOCAB:ID` identifiers to cuis. Mentions without a vocabulary
/// prefix pass through; prefixed mentions with no entry are returned
/// separately and left out of the output split.
pub fn apply_crosswalk(split: &CorpusSplit, xwalk: &Crosswalk) -> (CorpusSplit, Vec<Mention>) {
    let mut out = CorpusSplit {
        name: split.name,
        documents: split.documents.clone(),
        mentions: Vec::with_capacity(split.mentions.len()),
    };
    let mut unmapped = Vec::new();
    for m in &split.mentions {
        match m.cui.split_once(':') {
            None => out.mentions.push(m.clone()),
            Some((vocab, id)) => match xwalk.lookup(vocab, id) {
                Some(cui) => out.mentions.push(Mention {
                    cui: cui.to_string(),
                    ..m.clone()
                }),
                None => unmapped.push(m.clone()),
            },
        }
    }
    (out, unmapped)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(src: &str, filter: Option<&str>) -> Result<ConceptTable> {
        read_concept_table(src.as_bytes(), "test.tsv", filter)
    }

    fn corpus(src: &str) -> Result<CorpusSplit> {
        read_corpus(src.as_bytes(), "test.jsonl", SplitName::Test).map(|(s, _)| s)
    }

    #[test]
    fn minimal_concept_table() {
        let t = table("C1\tberyllium disease\tPREF\tDISO\nC1\tberylliosis\tSYN\tDISO\n", None).unwrap();
        assert_eq!(t.len(), 1);
        let c = t.get("C1").unwrap();
        assert_eq!(c.preferred_name, "beryllium disease");
        assert_eq!(c.synonyms, vec!["berylliosis"]);
    }

    #[test]
    fn group_filter_excludes() {
        let src = "C1\tberyllium disease\tPREF\tCHEM\nC1\tberylliosis\tSYN\tCHEM\n";
        assert!(table(src, Some("DISO")).unwrap().is_empty());
        assert_eq!(table(src, Some("CHEM")).unwrap().len(), 1);
    }

    #[test]
    fn first_row_wins_without_pref() {
        let t = table("C2\tmi\tSYN\tDISO\nC2\tmyocardial infarction\tSYN\tDISO\nC2\tmi\tSYN\tDISO\n", None).unwrap();
        let c = t.get("C2").unwrap();
        assert_eq!(c.preferred_name, "mi");
        assert_eq!(c.synonyms, vec!["myocardial infarction"]);
    }

    #[test]
    fn duplicate_pref_keeps_first_and_warns() {
        let t = table("C3\tfirst\tPREF\tDISO\nC3\tsecond\tPREF\tDISO\n", None).unwrap();
        let c = t.get("C3").unwrap();
        assert_eq!(c.preferred_name, "first");
        assert_eq!(c.synonyms, vec!["second"]);
        assert_eq!(t.warnings.duplicate_preferred, 1);
    }

    #[test]
    fn definitions_in_file_order() {
        let src = "C4\tgout\tPREF\tDISO\tfirst def\nC4\t\tDEF\tDISO\tsecond def\n";
        let c = table(src, None).unwrap().concepts.remove("C4").unwrap();
        assert_eq!(c.definitions, vec!["first def", "second def"]);
        assert!(c.synonyms.is_empty());
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = table("C1\tok\tPREF\n\nC2\tbroken\n", None).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(table("C1\tx\tWAT\n", None), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn definition_only_cui_dropped() {
        let t = table("C5\t\tDEF\tDISO\tsome definition\n", None).unwrap();
        assert!(t.is_empty());
        assert_eq!(t.warnings.nameless_dropped, 1);
    }

    #[test]
    fn loads_minimal_corpus() {
        let src = r#"{"doc_id":"d1","text":"chest pain noted","source":"gold"}
{"doc_id":"d1","start":0,"end":10,"surface":"chest pain","cui":"C0008031"}
"#;
        let s = corpus(src).unwrap();
        assert_eq!(s.documents.len(), 1);
        assert_eq!(s.mentions.len(), 1);
        assert_eq!(s.mentions[0].query_id(), "d1:0-10");
    }

    #[test]
    fn span_out_of_range_names_record() {
        let src = r#"{"doc_id":"d1","text":"chest pain","source":"gold"}
{"doc_id":"d1","start":6,"end":12,"surface":"pain","cui":"C1"}
"#;
        match corpus(src).unwrap_err() {
            Error::SpanOutOfRange { doc_id, start, end, len } => {
                assert_eq!((doc_id.as_str(), start, end, len), ("d1", 6, 12, 10));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn surface_mismatch_quotes_both() {
        let src = r#"{"doc_id":"d1","text":"chest pain","source":"gold"}
{"doc_id":"d1","start":0,"end":5,"surface":"chess","cui":"C1"}
"#;
        let msg = corpus(src).unwrap_err().to_string();
        assert!(msg.contains("\"chess\"") && msg.contains("\"chest\""), "{msg}");
    }

    #[test]
    fn unicode_offsets_are_characters() {
        let src = r#"{"doc_id":"d1","text":"hépatite sévère","source":"gold"}
{"doc_id":"d1","start":9,"end":15,"surface":"sévère","cui":"C1"}
"#;
        assert_eq!(corpus(src).unwrap().mentions[0].surface, "sévère");
    }

    #[test]
    fn discontiguous_mentions_dropped_with_warning() {
        let src = r#"{"doc_id":"d1","text":"left and right ventricle enlarged","source":"gold"}
{"doc_id":"d1","spans":[[0,4],[15,24]],"surface":"left ventricle","cui":"C1"}
{"doc_id":"d1","spans":[[9,24]],"surface":"right ventricle","cui":"C2"}
"#;
        let (s, w) = read_corpus(src.as_bytes(), "t", SplitName::Train).unwrap();
        assert_eq!(w.discontiguous_dropped, 1);
        assert_eq!(s.mentions.len(), 1);
        assert_eq!(s.mentions[0].cui, "C2");
    }

    #[test]
    fn unknown_document_rejected() {
        let src = r#"{"doc_id":"d1","text":"x","source":"gold"}
{"doc_id":"d2","start":0,"end":1,"surface":"x","cui":"C1"}
"#;
        assert!(corpus(src).is_err());
    }

    #[test]
    fn crosswalk_maps_and_reports() {
        let xwalk = read_crosswalk(
            "MESH\tD001607\tC0005716\nMESH\tD003924\tC0011860\nOMIM\t222100\tC0011854\n".as_bytes(),
            "x.tsv",
        )
        .unwrap();
        let text = "a b c d e";
        let mk = |start: usize, cui: &str| Mention {
            doc_id: "d".into(),
            start,
            end: start + 1,
            surface: text.chars().nth(start).unwrap().to_string(),
            cui: cui.into(),
        };
        let split = CorpusSplit {
            name: SplitName::Test,
            documents: vec![Document {
                doc_id: "d".into(),
                text: text.into(),
                source: Source::Gold,
            }],
            mentions: vec![
                mk(0, "MESH:D001607"),
                mk(2, "C0027051"),
                mk(4, "OMIM:222100"),
                mk(6, "MESH:D999999"),
            ],
        };
        let (out, unmapped) = apply_crosswalk(&split, &xwalk);
        let cuis: Vec<&str> = out.mentions.iter().map(|m| m.cui.as_str()).collect();
        assert_eq!(cuis, vec!["C0005716", "C0027051", "C0011854"]);
        assert_eq!(unmapped.len(), 1);
        assert_eq!(unmapped[0].cui, "MESH:D999999");

        let (out, unmapped) = apply_crosswalk(&split, &Crosswalk::new());
        assert_eq!(out.mentions.len(), 1);
        assert_eq!(unmapped.len(), 3);
    }

    #[test]
    fn crosswalk_rejects_conflicts_and_empty_cui() {
        assert!(read_crosswalk("MESH\tD1\tC1\nMESH\tD1\tC2\n".as_bytes(), "x").is_err());
        assert!(read_crosswalk("MESH\tD1\t\n".as_bytes(), "x").is_err());
        assert!(read_crosswalk("MESH\tD1\tC1\nMESH\tD1\tC1\n".as_bytes(), "x").is_ok());
    }

    #[test]
    fn cui_set_dedups() {
        let text = "x y z";
        let mk = |start: usize, cui: &str| Mention {
            doc_id: "d".into(),
            start,
            end: start + 1,
            surface: text.chars().nth(start).unwrap().to_string(),
            cui: cui.into(),
        };
        let mut split = CorpusSplit::empty(SplitName::Train);
        assert!(cui_set(&split).is_empty());
        split.documents.push(Document {
            doc_id: "d".into(),
            text: text.into(),
            source: Source::Gold,
        });
        split.mentions = vec![mk(0, "C1"), mk(2, "C1"), mk(4, "C2")];
        assert_eq!(cui_set(&split).into_iter().collect::<Vec<_>>(), vec!["C1", "C2"]);
    }
}
