//! Binary token tagging for disease entity recognition.
//!
//! Every token is either inside a disease mention (`D`) or not (`O`).
//! Entities are maximal runs of `D` tokens.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusSplit, Mention};
use crate::error::{Error, Result};
use crate::normalize::StringIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    O,
    D,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::O => "O",
            Label::D => "D",
        })
    }
}

/// A token with character offsets into its document.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    pub surface: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSequence {
    pub doc_id: String,
    pub tokens: Vec<Token>,
    pub labels: Vec<Label>,
}

/// Token range `[start, end)` of one entity.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntitySpan {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
}

/// Splits on whitespace, then peels leading and trailing punctuation off each
/// chunk as single-character tokens.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        let end = i;
        let is_punct = |c: char| !c.is_alphanumeric();
        let mut lo = start;
        while lo < end && is_punct(chars[lo]) {
            lo += 1;
        }
        let mut hi = end;
        while hi > lo && is_punct(chars[hi - 1]) {
            hi -= 1;
        }
        let push = |tokens: &mut Vec<Token>, s: usize, e: usize| {
            tokens.push(Token {
                surface: chars[s..e].iter().collect(),
                start: s,
                end: e,
            })
        };
        for p in start..lo {
            push(&mut tokens, p, p + 1);
        }
        if lo < hi {
            push(&mut tokens, lo, hi);
        }
        for p in hi..end {
            push(&mut tokens, p, p + 1);
        }
    }
    tokens
}

fn mentions_by_doc(split: &CorpusSplit) -> HashMap<&str, Vec<&Mention>> {
    let mut map: HashMap<&str, Vec<&Mention>> = HashMap::new();
    for m in &split.mentions {
        map.entry(m.doc_id.as_str()).or_default().push(m);
    }
    map
}

/// Gold tagging: a token is `D` iff its character span overlaps a mention.
pub fn tokenize_and_tag(split: &CorpusSplit) -> Vec<TagSequence> {
    let by_doc = mentions_by_doc(split);
    split
        .documents
        .par_iter()
        .map(|doc| {
            let tokens = tokenize(&doc.text);
            let mentions = by_doc.get(doc.doc_id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
            let labels = tokens
                .iter()
                .map(|t| {
                    if mentions.iter().any(|m| t.start < m.end && m.start < t.end) {
                        Label::D
                    } else {
                        Label::O
                    }
                })
                .collect();
            TagSequence {
                doc_id: doc.doc_id.clone(),
                tokens,
                labels,
            }
        })
        .collect()
}

/// Maximal runs of `D` labels.
pub fn entities(seq: &TagSequence) -> Vec<EntitySpan> {
    let mut out = Vec::new();
    let mut open: Option<usize> = None;
    for (i, l) in seq.labels.iter().enumerate() {
        match (l, open) {
            (Label::D, None) => open = Some(i),
            (Label::O, Some(s)) => {
                out.push(EntitySpan {
                    doc_id: seq.doc_id.clone(),
                    start: s,
                    end: i,
                });
                open = None;
            }
            _ => {}
        }
    }
    if let Some(s) = open {
        out.push(EntitySpan {
            doc_id: seq.doc_id.clone(),
            start: s,
            end: seq.labels.len(),
        });
    }
    out
}

#[derive(Default)]
struct TrieNode {
    children: HashMap<String, usize>,
    terminal: bool,
}

/// Token trie over every name in a string index.
pub struct Gazetteer {
    nodes: Vec<TrieNode>,
}

impl Gazetteer {
    pub fn new(index: &StringIndex) -> Self {
        let mut nodes = vec![TrieNode::default()];
        for (name, _) in index.entries() {
            let toks = tokenize(name);
            if toks.is_empty() {
                continue;
            }
            let mut at = 0;
            for t in toks {
                let key = t.surface.to_lowercase();
                at = match nodes[at].children.get(&key) {
                    Some(&n) => n,
                    None => {
                        nodes.push(TrieNode::default());
                        let n = nodes.len() - 1;
                        nodes[at].children.insert(key, n);
                        n
                    }
                };
            }
            nodes[at].terminal = true;
        }
        Gazetteer { nodes }
    }

    /// Longest dictionary match starting at each token.
    fn matches(&self, lowered: &[String]) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..lowered.len() {
            let mut at = 0;
            let mut longest = None;
            for (j, tok) in lowered.iter().enumerate().skip(i) {
                match self.nodes[at].children.get(tok) {
                    Some(&n) => at = n,
                    None => break,
                }
                if self.nodes[at].terminal {
                    longest = Some(j + 1);
                }
            }
            if let Some(end) = longest {
                out.push((i, end));
            }
        }
        out
    }

    /// Labels a token sequence: longer matches win, then leftmost.
    pub fn tag(&self, doc_id: &str, tokens: Vec<Token>) -> TagSequence {
        let lowered: Vec<String> = tokens.iter().map(|t| t.surface.to_lowercase()).collect();
        let mut found = self.matches(&lowered);
        found.sort_by_key(|&(s, e)| (std::cmp::Reverse(e - s), s));
        let mut labels = vec![Label::O; tokens.len()];
        for (s, e) in found {
            if labels[s..e].iter().all(|&l| l == Label::O) {
                labels[s..e].fill(Label::D);
            }
        }
        TagSequence {
            doc_id: doc_id.to_string(),
            tokens,
            labels,
        }
    }
}

/// Dictionary tagging over every document of a split.
pub fn gazetteer_tag(split: &CorpusSplit, index: &StringIndex) -> Vec<TagSequence> {
    let gaz = Gazetteer::new(index);
    split
        .documents
        .par_iter()
        .map(|d| gaz.tag(&d.doc_id, tokenize(&d.text)))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct TokenLine {
    doc_id: String,
    tokens: Vec<(String, usize, usize)>,
}

#[derive(Serialize, Deserialize)]
struct LabelLine {
    doc_id: String,
    labels: Vec<String>,
}

pub fn write_tokens(seqs: &[TagSequence], mut w: impl Write) -> Result<()> {
    for s in seqs {
        let line = TokenLine {
            doc_id: s.doc_id.clone(),
            tokens: s.tokens.iter().map(|t| (t.surface.clone(), t.start, t.end)).collect(),
        };
        writeln!(w, "{}", serde_json::to_string(&line).expect("serializable")).map_err(|e| Error::io("<output>", e))?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))
}

pub fn write_labels(seqs: &[TagSequence], mut w: impl Write) -> Result<()> {
    for s in seqs {
        let line = LabelLine {
            doc_id: s.doc_id.clone(),
            labels: s.labels.iter().map(Label::to_string).collect(),
        };
        writeln!(w, "{}", serde_json::to_string(&line).expect("serializable")).map_err(|e| Error::io("<output>", e))?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))
}

/// Parses a label file and attaches each label sequence to the matching gold
/// tokenization. The output follows gold order. Every offending record is
/// listed in the error.
pub fn read_predictions(reader: impl BufRead, origin: &str, gold: &[TagSequence]) -> Result<Vec<TagSequence>> {
    let gold_index: HashMap<&str, usize> = gold.iter().enumerate().map(|(i, g)| (g.doc_id.as_str(), i)).collect();
    let mut labels: Vec<Option<Vec<Label>>> = vec![None; gold.len()];
    let mut problems = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabelLine = serde_json::from_str(&line).map_err(|e| Error::parse(origin, lineno, e.to_string()))?;
        let Some(&gi) = gold_index.get(rec.doc_id.as_str()) else {
            problems.push(format!("line {lineno}: unknown doc_id `{}`", rec.doc_id));
            continue;
        };
        let mut parsed = Vec::with_capacity(rec.labels.len());
        let mut bad = BTreeSet::new();
        for l in &rec.labels {
            match l.as_str() {
                "O" => parsed.push(Label::O),
                "D" => parsed.push(Label::D),
                other => {
                    bad.insert(other.to_string());
                }
            }
        }
        if !bad.is_empty() {
            problems.push(format!("line {lineno}: `{}` has labels outside {{O, D}}: {bad:?}", rec.doc_id));
            continue;
        }
        let expected = gold[gi].tokens.len();
        if parsed.len() != expected {
            problems.push(format!(
                "line {lineno}: `{}` has {} labels for {expected} tokens",
                rec.doc_id,
                parsed.len()
            ));
            continue;
        }
        if labels[gi].replace(parsed).is_some() {
            problems.push(format!("line {lineno}: duplicate predictions for `{}`", rec.doc_id));
        }
    }
    for (g, l) in gold.iter().zip(&labels) {
        if l.is_none() && !problems.iter().any(|p| p.contains(&format!("`{}`", g.doc_id))) {
            problems.push(format!("missing predictions for `{}`", g.doc_id));
        }
    }
    if !problems.is_empty() {
        return Err(Error::Alignment(format!("{origin}: {}", problems.join("; "))));
    }
    Ok(gold
        .iter()
        .zip(labels)
        .map(|(g, l)| TagSequence {
            doc_id: g.doc_id.clone(),
            tokens: g.tokens.clone(),
            labels: l.expect("checked above"),
        })
        .collect())
}

pub fn ingest_predictions(path: impl AsRef<Path>, gold: &[TagSequence]) -> Result<Vec<TagSequence>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_predictions(BufReader::new(file), &path.display().to_string(), gold)
}

/// Out-of-distribution predicate: a mention is OOD when its cui never occurs
/// in the training split.
#[derive(Debug, Clone)]
pub struct OodFilter {
    train_cuis: BTreeSet<String>,
}

impl OodFilter {
    pub fn new(train: &CorpusSplit) -> Self {
        OodFilter {
            train_cuis: crate::corpus::cui_set(train),
        }
    }

    pub fn from_cuis(train_cuis: BTreeSet<String>) -> Self {
        OodFilter { train_cuis }
    }

    pub fn is_ood(&self, m: &Mention) -> bool {
        !self.train_cuis.contains(&m.cui)
    }

    pub fn train_cuis(&self) -> &BTreeSet<String> {
        &self.train_cuis
    }
}

pub fn ood_filter(train: &CorpusSplit) -> OodFilter {
    OodFilter::new(train)
}

/// Gold and predicted entity sets restricted to out-of-distribution mentions.
///
/// A gold entity is kept when every mention it overlaps is OOD. Predicted
/// entities that overlap a dropped gold entity are dropped as well, so they
/// count neither for nor against precision.
pub fn restrict_to_ood(
    gold: &[TagSequence],
    pred: &[TagSequence],
    gold_split: &CorpusSplit,
    filter: &OodFilter,
) -> Result<(Vec<EntitySpan>, Vec<EntitySpan>)> {
    crate::metrics::check_alignment(gold, pred)?;
    let by_doc = mentions_by_doc(gold_split);
    let mut gold_kept = Vec::new();
    let mut pred_kept = Vec::new();
    for (g, p) in gold.iter().zip(pred) {
        let mentions = by_doc.get(g.doc_id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        let mut dropped: HashSet<usize> = HashSet::new();
        for e in entities(g) {
            let (cs, ce) = (g.tokens[e.start].start, g.tokens[e.end - 1].end);
            let mut overlapping = mentions.iter().filter(|m| m.start < ce && cs < m.end).peekable();
            let ood = overlapping.peek().is_some() && overlapping.all(|m| filter.is_ood(m));
            if ood {
                gold_kept.push(e);
            } else {
                dropped.extend(e.start..e.end);
            }
        }
        pred_kept.extend(entities(p).into_iter().filter(|e| !(e.start..e.end).any(|t| dropped.contains(&t))));
    }
    Ok((gold_kept, pred_kept))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Concept, ConceptTable, Document, Source, SplitName};

    fn split_with(text: &str, spans: &[(usize, usize, &str)]) -> CorpusSplit {
        let mut s = CorpusSplit::empty(SplitName::Test);
        s.documents.push(Document {
            doc_id: "d".into(),
            text: text.into(),
            source: Source::Gold,
        });
        for &(a, b, cui) in spans {
            s.mentions.push(Mention {
                doc_id: "d".into(),
                start: a,
                end: b,
                surface: crate::text::char_slice(text, a, b).unwrap().into(),
                cui: cui.into(),
            });
        }
        s.validate().unwrap();
        s
    }

    #[test]
    fn tokenizer_splits_punctuation() {
        let toks: Vec<_> = tokenize("(chest pain), h/o MI.").into_iter().map(|t| t.surface).collect();
        assert_eq!(toks, vec!["(", "chest", "pain", ")", ",", "h/o", "MI", "."]);
        let t = tokenize("  a  ");
        assert_eq!((t[0].start, t[0].end), (2, 3));
    }

    #[test]
    fn tags_overlapping_tokens() {
        let seqs = tokenize_and_tag(&split_with("chest pain noted", &[(0, 10, "C1")]));
        assert_eq!(seqs[0].labels, vec![Label::D, Label::D, Label::O]);
    }

    #[test]
    fn mid_token_mention_tags_enclosing_token() {
        let seqs = tokenize_and_tag(&split_with("hyperglycemia noted", &[(5, 9, "C1")]));
        assert_eq!(seqs[0].labels, vec![Label::D, Label::O]);
    }

    #[test]
    fn no_mentions_all_outside() {
        let seqs = tokenize_and_tag(&split_with("nothing to see", &[]));
        assert!(seqs[0].labels.iter().all(|&l| l == Label::O));
    }

    #[test]
    fn entity_runs() {
        let seq = TagSequence {
            doc_id: "d".into(),
            tokens: tokenize("a b c d e"),
            labels: vec![Label::D, Label::D, Label::O, Label::D, Label::D],
        };
        let e = entities(&seq);
        assert_eq!(e.iter().map(|e| (e.start, e.end)).collect::<Vec<_>>(), vec![(0, 2), (3, 5)]);
    }

    fn gaz_index(names: &[(&str, &str)]) -> StringIndex {
        ConceptTable::from_concepts(names.iter().map(|(cui, n)| Concept {
            cui: cui.to_string(),
            preferred_name: n.to_string(),
            synonyms: vec![],
            definitions: vec![],
            semantic_group: "DISO".into(),
        }))
        .and_then(|t| StringIndex::build(&t, None))
        .unwrap()
    }

    #[test]
    fn gazetteer_longest_then_leftmost() {
        let idx = gaz_index(&[("C1", "heart attack"), ("C2", "attack rate high"), ("C3", "heart")]);
        let split = split_with("heart attack rate high today", &[]);
        let seqs = gazetteer_tag(&split, &idx);
        use Label::*;
        assert_eq!(seqs[0].labels, vec![O, D, D, D, O]);

        let split = split_with("Heart attack, then heart", &[]);
        let seqs = gazetteer_tag(&split, &idx);
        assert_eq!(seqs[0].labels, vec![D, D, O, O, D]);

        let split = split_with("nothing here", &[]);
        assert!(gazetteer_tag(&split, &idx)[0].labels.iter().all(|&l| l == O));
    }

    #[test]
    fn prediction_ingest_errors() {
        let gold = tokenize_and_tag(&split_with("chest pain noted", &[(0, 10, "C1")]));
        let ok = read_predictions(r#"{"doc_id":"d","labels":["D","D","O"]}"#.as_bytes(), "p", &gold).unwrap();
        assert_eq!(ok, gold);
        let short = read_predictions(r#"{"doc_id":"d","labels":["D","D"]}"#.as_bytes(), "p", &gold);
        assert!(matches!(short, Err(Error::Alignment(ref m)) if m.contains("2 labels for 3 tokens")));
        let bad = read_predictions(r#"{"doc_id":"d","labels":["B","I","O"]}"#.as_bytes(), "p", &gold);
        assert!(matches!(bad, Err(Error::Alignment(_))));
        let unknown = read_predictions(
            "{\"doc_id\":\"d\",\"labels\":[\"D\",\"D\",\"O\"]}\n{\"doc_id\":\"zz\",\"labels\":[]}".as_bytes(),
            "p",
            &gold,
        );
        assert!(matches!(unknown, Err(Error::Alignment(ref m)) if m.contains("zz")));
        assert!(read_predictions("".as_bytes(), "p", &gold).is_err());
    }

    #[test]
    fn ood_predicate() {
        let train = split_with("a b", &[(0, 1, "A")]);
        let f = ood_filter(&train);
        let mk = |cui: &str| Mention {
            doc_id: "t".into(),
            start: 0,
            end: 1,
            surface: "x".into(),
            cui: cui.into(),
        };
        assert!(f.is_ood(&mk("B")));
        assert!(!f.is_ood(&mk("A")));
        let empty = ood_filter(&CorpusSplit::empty(SplitName::Train));
        assert!(empty.is_ood(&mk("A")));
    }

    #[test]
    fn ood_restriction_drops_in_distribution_entities() {
        // "gout" is in-distribution (A), "lupus" OOD (B).
        let test = split_with("gout and lupus today", &[(0, 4, "A"), (9, 14, "B")]);
        let train = split_with("gout", &[(0, 4, "A")]);
        let gold = tokenize_and_tag(&test);
        let mut pred = gold.clone();
        // predict "gout and" (overlaps dropped gold) and "lupus"
        pred[0].labels = vec![Label::D, Label::D, Label::D, Label::O];
        let (g, p) = restrict_to_ood(&gold, &pred, &test, &ood_filter(&train)).unwrap();
        assert_eq!(g.iter().map(|e| (e.start, e.end)).collect::<Vec<_>>(), vec![(2, 3)]);
        assert!(p.is_empty(), "prediction overlapping dropped gold entity is excluded");
    }
}
