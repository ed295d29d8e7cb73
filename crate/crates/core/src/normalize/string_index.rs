use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use crate::corpus::{ConceptTable, CorpusSplit};
use crate::error::{Error, Result};

use super::{rank_scores, CandidateList, Mode, NormalizerConfig};

/// Lowercased, whitespace-collapsed form used for exact lookup.
pub fn name_key(s: &str) -> String {
    s.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

/// Lowercased alphanumeric runs.
pub fn name_tokens(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Character trigrams of the lookup key. Keys shorter than three characters
/// are wrapped in `#` first so that abbreviations still produce grams.
pub fn char_trigrams(s: &str) -> Vec<String> {
    let key = name_key(s);
    let mut chars: Vec<char> = key.chars().collect();
    if chars.is_empty() {
        return Vec::new();
    }
    if chars.len() < 3 {
        chars.insert(0, '#');
        chars.push('#');
    }
    chars.windows(3).map(|w| w.iter().collect()).collect()
}

struct IndexedName {
    text: String,
    cui: String,
}

/// Name dictionary supporting exact, token-set and character-trigram lookup.
pub struct StringIndex {
    names: Vec<IndexedName>,
    exact: HashMap<String, BTreeSet<String>>,
    token_sets: Vec<Vec<u32>>,
    token_ids: HashMap<String, u32>,
    token_postings: Vec<Vec<u32>>,
    gram_ids: HashMap<String, u32>,
    gram_df: Vec<u32>,
    gram_postings: Vec<Vec<(u32, f64)>>,
}

impl StringIndex {
    /// Indexes every preferred name and synonym, plus the surfaces of
    /// `synth` mentions when given.
    pub fn build(table: &ConceptTable, synth: Option<&CorpusSplit>) -> Result<Self> {
        if table.is_empty() {
            return Err(Error::invalid("cannot build a string index from an empty concept table"));
        }
        let mut pairs: Vec<(&str, &str)> = Vec::new();
        for c in table.iter() {
            pairs.extend(c.names().map(|n| (n, c.cui.as_str())));
        }
        if let Some(s) = synth {
            pairs.extend(s.mentions.iter().map(|m| (m.surface.as_str(), m.cui.as_str())));
        }
        Ok(Self::from_pairs(pairs))
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut seen = HashSet::new();
        let mut names = Vec::new();
        let mut exact: HashMap<String, BTreeSet<String>> = HashMap::new();
        for (text, cui) in pairs {
            let key = name_key(text);
            if key.is_empty() || !seen.insert((key.clone(), cui.to_string())) {
                continue;
            }
            exact.entry(key).or_default().insert(cui.to_string());
            names.push(IndexedName {
                text: text.to_string(),
                cui: cui.to_string(),
            });
        }

        let mut token_ids: HashMap<String, u32> = HashMap::new();
        let mut token_postings: Vec<Vec<u32>> = Vec::new();
        let mut token_sets = Vec::with_capacity(names.len());
        for (id, n) in names.iter().enumerate() {
            let mut set: Vec<u32> = name_tokens(&n.text)
                .into_iter()
                .map(|t| {
                    let next = token_ids.len() as u32;
                    *token_ids.entry(t).or_insert(next)
                })
                .collect();
            set.sort_unstable();
            set.dedup();
            for &t in &set {
                if t as usize == token_postings.len() {
                    token_postings.push(Vec::new());
                }
                token_postings[t as usize].push(id as u32);
            }
            token_sets.push(set);
        }

        let mut gram_ids: HashMap<String, u32> = HashMap::new();
        let mut gram_df: Vec<u32> = Vec::new();
        let mut name_tf: Vec<BTreeMap<u32, u32>> = Vec::with_capacity(names.len());
        for n in &names {
            let mut tf: BTreeMap<u32, u32> = BTreeMap::new();
            for g in char_trigrams(&n.text) {
                let next = gram_ids.len() as u32;
                let id = *gram_ids.entry(g).or_insert(next);
                if id as usize == gram_df.len() {
                    gram_df.push(0);
                }
                *tf.entry(id).or_insert(0) += 1;
            }
            for &g in tf.keys() {
                gram_df[g as usize] += 1;
            }
            name_tf.push(tf);
        }

        let total = names.len();
        let mut gram_postings: Vec<Vec<(u32, f64)>> = vec![Vec::new(); gram_df.len()];
        for (id, tf) in name_tf.iter().enumerate() {
            let weights: Vec<(u32, f64)> = tf
                .iter()
                .map(|(&g, &count)| (g, count as f64 * idf(total, gram_df[g as usize] as usize)))
                .collect();
            let norm = weights.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
            if norm > 0.0 {
                for (g, w) in weights {
                    gram_postings[g as usize].push((id as u32, w / norm));
                }
            }
        }

        StringIndex {
            names,
            exact,
            token_sets,
            token_ids,
            token_postings,
            gram_ids,
            gram_df,
            gram_postings,
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Indexed `(name, cui)` pairs in insertion order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.names.iter().map(|n| (n.text.as_str(), n.cui.as_str()))
    }

    pub fn normalize(&self, query_id: &str, query: &str, cfg: &NormalizerConfig) -> Result<CandidateList> {
        match cfg.mode {
            Mode::Exact => Ok(self.normalize_exact(query_id, query, cfg)),
            Mode::TokenOverlap => Ok(self.normalize_token_overlap(query_id, query, cfg)),
            Mode::Char3gram => Ok(self.normalize_char3gram(query_id, query, cfg)),
            m => Err(Error::invalid(format!("mode {m} needs a vector index"))),
        }
    }

    pub fn normalize_exact(&self, query_id: &str, query: &str, cfg: &NormalizerConfig) -> CandidateList {
        let ranked = self
            .exact
            .get(&name_key(query))
            .map(|cuis| rank_scores(cuis.iter().map(|c| (c.clone(), 1.0)).collect(), cfg.k_max))
            .unwrap_or_default();
        CandidateList {
            query_id: query_id.to_string(),
            ranked,
        }
    }

    /// Jaccard similarity between token sets; names scoring below the
    /// threshold are dropped.
    pub fn normalize_token_overlap(&self, query_id: &str, query: &str, cfg: &NormalizerConfig) -> CandidateList {
        let mut out = CandidateList::empty(query_id);
        let q_tokens: HashSet<String> = name_tokens(query).into_iter().collect();
        if q_tokens.is_empty() {
            return out;
        }
        // Unknown query tokens never intersect but still count in the union.
        let mut q_ids: Vec<u32> = q_tokens.iter().filter_map(|t| self.token_ids.get(t).copied()).collect();
        q_ids.sort_unstable();
        let unknown = q_tokens.len() - q_ids.len();

        let candidates: Vec<u32> = if cfg.jaccard_threshold <= 0.0 {
            (0..self.names.len() as u32).collect()
        } else {
            let mut c: Vec<u32> = q_ids
                .iter()
                .flat_map(|&t| self.token_postings[t as usize].iter().copied())
                .collect();
            c.sort_unstable();
            c.dedup();
            c
        };

        let mut best: HashMap<&str, f64> = HashMap::new();
        for id in candidates {
            let set = &self.token_sets[id as usize];
            let inter = sorted_intersection(&q_ids, set);
            let union = q_ids.len() + unknown + set.len() - inter;
            let score = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
            if score >= cfg.jaccard_threshold {
                let cui = self.names[id as usize].cui.as_str();
                let e = best.entry(cui).or_insert(score);
                if score > *e {
                    *e = score;
                }
            }
        }
        out.ranked = rank_scores(best.into_iter().map(|(c, s)| (c.to_string(), s)).collect(), cfg.k_max);
        out
    }

    /// Cosine similarity between TF-IDF vectors of character trigrams.
    pub fn normalize_char3gram(&self, query_id: &str, query: &str, cfg: &NormalizerConfig) -> CandidateList {
        let mut out = CandidateList::empty(query_id);
        let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
        let grams = char_trigrams(query);
        for g in &grams {
            *tf.entry(g.as_str()).or_insert(0) += 1;
        }
        let total = self.names.len();
        let weights: Vec<(Option<u32>, f64)> = tf
            .iter()
            .map(|(g, &count)| {
                let id = self.gram_ids.get(*g).copied();
                let df = id.map_or(0, |i| self.gram_df[i as usize] as usize);
                (id, count as f64 * idf(total, df))
            })
            .collect();
        let norm = weights.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm == 0.0 {
            return out;
        }

        let mut dots: HashMap<u32, f64> = HashMap::new();
        for (id, w) in &weights {
            let Some(id) = id else { continue };
            let qw = w / norm;
            for &(name, nw) in &self.gram_postings[*id as usize] {
                *dots.entry(name).or_insert(0.0) += qw * nw;
            }
        }
        let mut best: HashMap<&str, f64> = HashMap::new();
        for (name, dot) in dots {
            let score = dot.clamp(0.0, 1.0);
            if score <= 0.0 {
                continue;
            }
            let cui = self.names[name as usize].cui.as_str();
            let e = best.entry(cui).or_insert(score);
            if score > *e {
                *e = score;
            }
        }
        out.ranked = rank_scores(best.into_iter().map(|(c, s)| (c.to_string(), s)).collect(), cfg.k_max);
        out
    }
}

/// Smoothed inverse document frequency, `ln((1 + n) / (1 + df)) + 1`.
fn idf(total: usize, df: usize) -> f64 {
    ((1.0 + total as f64) / (1.0 + df as f64)).ln() + 1.0
}

fn sorted_intersection(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Concept, Document, Mention, Source, SplitName};

    fn table(entries: &[(&str, &str, &[&str])]) -> ConceptTable {
        ConceptTable::from_concepts(entries.iter().map(|(cui, pref, syn)| Concept {
            cui: cui.to_string(),
            preferred_name: pref.to_string(),
            synonyms: syn.iter().map(|s| s.to_string()).collect(),
            definitions: vec![],
            semantic_group: "DISO".into(),
        }))
        .unwrap()
    }

    fn cfg(mode: Mode) -> NormalizerConfig {
        NormalizerConfig::with_mode(mode)
    }

    #[test]
    fn exact_lookup() {
        let idx = StringIndex::build(&table(&[("C1", "heart attack", &[])]), None).unwrap();
        let r = idx.normalize_exact("q", "Heart  Attack", &cfg(Mode::Exact));
        assert_eq!(r.ranked.len(), 1);
        assert_eq!(r.ranked[0].cui, "C1");
        assert!(idx.normalize_exact("q", "heart", &cfg(Mode::Exact)).ranked.is_empty());
    }

    #[test]
    fn synthetic_surfaces_become_retrievable() {
        let t = table(&[("C1", "heart attack", &[])]);
        let mut synth = CorpusSplit::empty(SplitName::Train);
        synth.documents.push(Document {
            doc_id: "s".into(),
            text: "myocardial inf".into(),
            source: Source::Synthetic,
        });
        synth.mentions.push(Mention {
            doc_id: "s".into(),
            start: 0,
            end: 14,
            surface: "myocardial inf".into(),
            cui: "C1".into(),
        });
        let without = StringIndex::build(&t, None).unwrap();
        assert!(without.normalize_exact("q", "myocardial inf", &cfg(Mode::Exact)).ranked.is_empty());
        let with = StringIndex::build(&t, Some(&synth)).unwrap();
        assert_eq!(with.normalize_exact("q", "myocardial inf", &cfg(Mode::Exact)).ranked[0].cui, "C1");
    }

    #[test]
    fn empty_table_is_an_error() {
        assert!(StringIndex::build(&ConceptTable::default(), None).is_err());
    }

    #[test]
    fn token_overlap_threshold() {
        let idx = StringIndex::build(&table(&[("C1", "heart attack", &[])]), None).unwrap();
        let r = idx.normalize_token_overlap("q", "heart attack", &cfg(Mode::TokenOverlap));
        assert_eq!(r.ranked[0].score, 1.0);
        // {acute, heart, attack} vs {heart, attack}: 2/3 < 0.7
        assert!(idx
            .normalize_token_overlap("q", "acute heart attack", &cfg(Mode::TokenOverlap))
            .ranked
            .is_empty());
        let loose = NormalizerConfig {
            jaccard_threshold: 0.6,
            ..cfg(Mode::TokenOverlap)
        };
        let r = idx.normalize_token_overlap("q", "acute heart attack", &loose);
        assert!((r.ranked[0].score - 2.0 / 3.0).abs() < 1e-12);
        assert!(idx.normalize_token_overlap("q", "", &cfg(Mode::TokenOverlap)).ranked.is_empty());
    }

    #[test]
    fn token_overlap_zero_threshold_keeps_disjoint_names() {
        let idx = StringIndex::build(&table(&[("C1", "heart attack", &[]), ("C2", "gout", &[])]), None).unwrap();
        let zero = NormalizerConfig {
            jaccard_threshold: 0.0,
            ..cfg(Mode::TokenOverlap)
        };
        let r = idx.normalize_token_overlap("q", "heart", &zero);
        assert_eq!(r.ranked.len(), 2);
        assert_eq!(r.ranked[1].cui, "C2");
        assert_eq!(r.ranked[1].score, 0.0);
        let tiny = NormalizerConfig {
            jaccard_threshold: 1e-9,
            ..cfg(Mode::TokenOverlap)
        };
        assert_eq!(idx.normalize_token_overlap("q", "heart", &tiny).ranked.len(), 1);
    }

    #[test]
    fn trigram_self_similarity_and_disjoint() {
        let idx = StringIndex::build(
            &table(&[("C1", "diabetes mellitus", &[]), ("C2", "gout", &["podagra"])]),
            None,
        )
        .unwrap();
        let r = idx.normalize_char3gram("q", "diabetes mellitus", &cfg(Mode::Char3gram));
        assert_eq!(r.ranked[0].cui, "C1");
        assert!((r.ranked[0].score - 1.0).abs() < 1e-12);
        assert!(idx.normalize_char3gram("q", "xyzzy", &cfg(Mode::Char3gram)).ranked.is_empty());
    }

    #[test]
    fn short_queries_are_padded() {
        assert_eq!(char_trigrams("MI"), vec!["#mi", "mi#"]);
        assert_eq!(char_trigrams("a"), vec!["#a#"]);
        assert!(char_trigrams("  ").is_empty());
        let idx = StringIndex::build(&table(&[("C1", "MI", &[]), ("C2", "gout", &[])]), None).unwrap();
        let r = idx.normalize_char3gram("q", "mi", &cfg(Mode::Char3gram));
        assert_eq!(r.ranked[0].cui, "C1");
    }

    #[test]
    fn dedups_to_best_score_per_cui() {
        let idx = StringIndex::build(&table(&[("C1", "heart attack", &["heart attack acute"])]), None).unwrap();
        let r = idx.normalize_char3gram("q", "heart attack", &cfg(Mode::Char3gram));
        assert_eq!(r.ranked.len(), 1);
        assert!((r.ranked[0].score - 1.0).abs() < 1e-12);
    }
}
