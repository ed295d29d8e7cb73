//! Deterministic fixture generators shared by tests, benchmarks and the
//! bundled end-to-end example.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Concept, ConceptTable, CorpusSplit, Document, Mention, Source, SplitName};
use crate::error::{Error, Result};
use crate::normalize::{char_trigrams, name_key};
use crate::synth::{validate_and_extract, GenerationConfig, RawGeneration};
use crate::vectors::{EmbeddingEntry, EmbeddingSpace};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Target counts for a synthetic concept dictionary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DictionaryShape {
    pub concepts: usize,
    pub with_synonyms: usize,
    pub total_synonyms: usize,
    pub with_definitions: usize,
    pub total_definitions: usize,
    pub with_both: usize,
}

/// Counts of the UMLS 2019AB Disorders group.
pub const UMLS_DISORDERS: DictionaryShape = DictionaryShape {
    concepts: 319_381,
    with_synonyms: 217_252,
    total_synonyms: 909_967,
    with_definitions: 53_432,
    total_definitions: 69_417,
    // 319381 - 93448 without either = 225933 with at least one.
    with_both: 217_252 + 53_432 - (319_381 - 93_448),
};

/// Spreads `total` over `slots` as evenly as possible, larger shares first.
fn spread(total: usize, slots: usize, i: usize) -> usize {
    total / slots + usize::from(i < total % slots)
}

/// Concept TSV (`cui, term, type, group, definition`) with exactly `shape`'s counts.
///
/// Concepts `[0, with_both)` have both synonyms and definitions, the next
/// `with_synonyms - with_both` only synonyms, then definition-only ones, then
/// bare concepts.
pub fn dictionary_tsv(shape: &DictionaryShape) -> String {
    let syn_only = shape.with_synonyms - shape.with_both;
    let def_only = shape.with_definitions - shape.with_both;
    let mut out = String::with_capacity(shape.concepts * 40 + shape.total_synonyms * 36);
    for i in 0..shape.concepts {
        let cui = format!("C{i:07}");
        writeln!(out, "{cui}\tdisorder {i}\tPREF\tDISO").unwrap();
        let syn_slot = (i < shape.with_synonyms).then_some(i);
        let def_slot = if i < shape.with_both {
            Some(i)
        } else if i >= shape.with_synonyms && i < shape.with_synonyms + def_only {
            Some(i - syn_only)
        } else {
            None
        };
        if let Some(s) = syn_slot {
            for j in 0..spread(shape.total_synonyms, shape.with_synonyms, s) {
                writeln!(out, "{cui}\tdisorder {i} variant {j}\tSYN\tDISO").unwrap();
            }
        }
        if let Some(s) = def_slot {
            for j in 0..spread(shape.total_definitions, shape.with_definitions, s) {
                writeln!(out, "{cui}\t\tDEF\tDISO\tdefinition {j} of disorder {i}").unwrap();
            }
        }
    }
    out
}

fn one_mention_doc(split: &mut CorpusSplit, doc_id: String, surface: &str, cui: &str, source: Source) {
    let text = format!("{surface} noted");
    split.mentions.push(Mention {
        doc_id: doc_id.clone(),
        start: 0,
        end: surface.chars().count(),
        surface: surface.to_string(),
        cui: cui.to_string(),
    });
    split.documents.push(Document { doc_id, text, source });
}

/// Adds `mentions` one-mention documents spread round-robin over `cuis`.
fn fill(split: &mut CorpusSplit, prefix: &str, cuis: &[String], mentions: usize, source: Source) {
    for i in 0..mentions {
        let cui = &cuis[i % cuis.len()];
        one_mention_doc(split, format!("{prefix}{i}"), "dz", cui, source);
    }
}

/// Synthetic, train and test splits shaped like the published SemEval
/// augmentation counts: train 1689 cuis / 16220 mentions, test 383 / 1523,
/// 920 synthetic cuis shared with train and 250 with test.
pub fn semeval_overlap_fixture() -> (CorpusSplit, CorpusSplit, CorpusSplit) {
    let ids = |tag: &str, n: usize| -> Vec<String> { (0..n).map(|i| format!("{tag}{i:05}")).collect() };
    // Synthetic cui groups by membership: both splits, test only, train only, neither.
    let both = ids("CB", 212);
    let test_only = ids("CT", 38);
    let train_only = ids("CR", 708);
    let neither = ids("CN", 46_696);
    let train_rest = ids("GR", 1689 - 212 - 708);
    let test_rest = ids("GT", 383 - 212 - 38);

    let mut synth = CorpusSplit::empty(SplitName::Train);
    fill(&mut synth, "s-b-", &both, 649, Source::Synthetic);
    fill(&mut synth, "s-t-", &test_only, 100, Source::Synthetic);
    fill(&mut synth, "s-r-", &train_only, 2_022, Source::Synthetic);
    fill(&mut synth, "s-n-", &neither, 126_143, Source::Synthetic);

    let mut train = CorpusSplit::empty(SplitName::Train);
    let train_cuis: Vec<String> = [both.clone(), train_only, train_rest].concat();
    fill(&mut train, "tr-", &train_cuis, 16_220, Source::Gold);

    let mut test = CorpusSplit::empty(SplitName::Test);
    let test_cuis: Vec<String> = [both, test_only, test_rest].concat();
    fill(&mut test, "te-", &test_cuis, 1_523, Source::Gold);
    (synth, train, test)
}

/// Random corpus triple for property checks. Cuis are drawn from a shared
/// pool so the three splits overlap in arbitrary ways.
pub fn random_triple(rng: &mut impl Rng, pool: usize, max_mentions: usize) -> (CorpusSplit, CorpusSplit, CorpusSplit) {
    let pool: Vec<String> = (0..pool.max(1)).map(|i| format!("C{i:03}")).collect();
    let mut make = |name: SplitName, prefix: &str, source: Source| {
        let mut s = CorpusSplit::empty(name);
        let n = rng.random_range(0..=max_mentions);
        for i in 0..n {
            let cui = pool.choose(rng).expect("non-empty pool");
            one_mention_doc(&mut s, format!("{prefix}{i}"), "dz", cui, source);
        }
        s
    };
    let synth = make(SplitName::Train, "s", Source::Synthetic);
    let train = make(SplitName::Train, "r", Source::Gold);
    let test = make(SplitName::Test, "t", Source::Gold);
    (synth, train, test)
}

/// `n` random vectors in `dim` dimensions assigned to `cuis` distinct cuis.
pub fn random_space(rng: &mut impl Rng, n: usize, dim: usize, cuis: usize) -> EmbeddingSpace {
    let entries = (0..n)
        .map(|i| EmbeddingEntry {
            entry_id: format!("e{i:05}"),
            cui: format!("C{:04}", rng.random_range(0..cuis.max(1))),
            vector: (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
        })
        .collect();
    EmbeddingSpace::new(dim, entries).expect("generated space is valid")
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Signed feature hashing of character trigrams, L2-normalized. Similar
/// strings land close together, which is all the fixtures need.
pub fn hash_embedding(text: &str, dim: usize) -> Vec<f32> {
    let mut v = vec![0f64; dim];
    for g in char_trigrams(&name_key(text)) {
        let h = fnv1a(g.as_bytes());
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[(h % dim as u64) as usize] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v.into_iter().map(|x| x as f32).collect()
}

/// Vectors for every mention of `splits`, keyed by query id.
pub fn embed_mentions(splits: &[&CorpusSplit], dim: usize) -> Result<EmbeddingSpace> {
    let entries = splits
        .iter()
        .flat_map(|s| s.mentions.iter())
        .map(|m| EmbeddingEntry {
            entry_id: m.query_id(),
            cui: m.cui.clone(),
            vector: hash_embedding(&m.surface, dim),
        })
        .collect();
    EmbeddingSpace::new(dim, entries)
}

/// A planted mention inside filler text, corrupted by a fixed number of edits.
#[derive(Debug, Clone)]
pub struct PlantedMention {
    pub haystack: String,
    pub needle: String,
    pub corrupted: String,
    pub start: usize,
    pub end: usize,
}

const DISEASE_WORDS: &[&str] = &[
    "berylliosis",
    "pneumothorax",
    "cholecystitis",
    "endocarditis",
    "hypothyroidism",
    "osteomyelitis",
    "pancreatitis",
    "glomerulonephritis",
    "thrombocytopenia",
    "hydronephrosis",
];

const FILLER_WORDS: &[&str] = &[
    "patient", "was", "seen", "today", "with", "a", "history", "of", "and", "mild", "symptoms", "noted", "on", "exam",
    "the", "follow", "up", "in", "two", "weeks",
];

/// Applies exactly `edits` random single-character operations to `s`.
pub fn corrupt(rng: &mut impl Rng, s: &str, edits: usize) -> String {
    let mut chars: Vec<char> = s.chars().collect();
    let alphabet: Vec<char> = ('a'..='z').collect();
    for _ in 0..edits {
        match rng.random_range(0..3) {
            0 if chars.len() > 1 => {
                chars.remove(rng.random_range(0..chars.len()));
            }
            1 => {
                let at = rng.random_range(0..=chars.len());
                chars.insert(at, *alphabet.choose(rng).unwrap());
            }
            _ => {
                let at = rng.random_range(0..chars.len());
                let old = chars[at];
                let new = *alphabet.iter().filter(|&&c| c != old).collect::<Vec<_>>().choose(rng).unwrap();
                chars[at] = *new;
            }
        }
    }
    chars.into_iter().collect()
}

/// A disease name corrupted by `edits` random edits, placed between filler words.
pub fn planted_mention(rng: &mut impl Rng, edits: usize) -> PlantedMention {
    let needle = DISEASE_WORDS.choose(rng).unwrap().to_string();
    let corrupted = corrupt(rng, &needle, edits);
    let words = |rng: &mut dyn rand::RngCore, n: usize| -> Vec<&str> {
        (0..n).map(|_| FILLER_WORDS[rng.random_range(0..FILLER_WORDS.len())]).collect()
    };
    let (nb, na) = (rng.random_range(1..6), rng.random_range(1..6));
    let before = words(rng, nb).join(" ");
    let after = words(rng, na).join(" ");
    let start = before.chars().count() + 1;
    let end = start + corrupted.chars().count();
    PlantedMention {
        haystack: format!("{before} {corrupted} {after}"),
        needle,
        corrupted,
        start,
        end,
    }
}

/// A name with `edits` (at least 8) positions replaced by digits, inside
/// digit-only filler, so nothing in the text resembles the name.
pub fn dissimilar_mention(rng: &mut impl Rng, edits: usize) -> PlantedMention {
    let needle = DISEASE_WORDS.choose(rng).unwrap().to_string();
    let mut chars: Vec<char> = needle.chars().collect();
    let mut positions: Vec<usize> = (0..chars.len()).collect();
    for i in (1..positions.len()).rev() {
        positions.swap(i, rng.random_range(0..=i));
    }
    for &p in positions.iter().take(edits.min(chars.len())) {
        chars[p] = char::from(b'0' + rng.random_range(0..10u8));
    }
    let corrupted: String = chars.into_iter().collect();
    let digits = |rng: &mut dyn rand::RngCore| -> String {
        (0..rng.random_range(3..9)).map(|_| char::from(b'0' + rng.random_range(0..10u8))).collect()
    };
    let before = digits(rng);
    let after = digits(rng);
    let start = before.chars().count() + 1;
    let end = start + corrupted.chars().count();
    PlantedMention {
        haystack: format!("{before} {corrupted} {after}"),
        needle,
        corrupted,
        start,
        end,
    }
}

/// Inputs of the bundled end-to-end example.
#[derive(Debug, Clone)]
pub struct TinyWorld {
    pub concepts_tsv: String,
    pub table: ConceptTable,
    pub train: CorpusSplit,
    pub test: CorpusSplit,
    pub generations: Vec<RawGeneration>,
    pub synth: CorpusSplit,
    pub vectors: EmbeddingSpace,
}

const TINY_CONCEPTS: &[(&str, &[&str], Option<&str>)] = &[
    ("asthma", &["bronchial asthma"], Some("a chronic disease of the airways")),
    ("gout", &["gouty arthritis"], Some("arthritis caused by urate crystals")),
    ("lupus", &["systemic lupus erythematosus"], None),
    ("psoriasis", &[], Some("a chronic skin disease with scaly plaques")),
    ("anemia", &["anaemia", "low blood count"], None),
    ("migraine", &["migraine headache"], Some("a recurrent throbbing headache")),
    ("epilepsy", &["seizure disorder"], None),
    ("glaucoma", &[], None),
    ("hepatitis", &["liver inflammation"], Some("inflammation of the liver")),
    ("sepsis", &["blood poisoning"], None),
    ("scurvy", &["vitamin c deficiency"], Some("a disease caused by lack of vitamin c")),
    ("rickets", &[], None),
    ("tetanus", &["lockjaw"], None),
    ("measles", &["rubeola"], Some("a contagious viral disease with rash")),
    ("cholera", &[], None),
    ("malaria", &["paludism"], Some("a mosquito borne parasitic disease")),
    ("pellagra", &["niacin deficiency"], None),
    ("bronchitis", &["chest cold"], None),
    ("pneumonia", &["lung infection"], Some("infection that inflames the air sacs")),
    ("dermatitis", &["eczema"], None),
    ("cystitis", &["bladder infection"], None),
    ("sinusitis", &["sinus infection"], None),
    ("tonsillitis", &[], None),
    ("appendicitis", &[], Some("inflammation of the appendix")),
];

const SENTENCES: &[&str] = &[
    "Patient presents with {} and mild fever.",
    "History of {} noted on admission.",
    "Follow up for {} in two weeks.",
    "No evidence of {} on exam today.",
];

fn tiny_cui(i: usize) -> String {
    format!("C{:07}", 1000 + i)
}

fn gold_split(name: SplitName, prefix: &str, cuis: std::ops::Range<usize>, per_cui: usize) -> CorpusSplit {
    let mut s = CorpusSplit::empty(name);
    let mut n = 0;
    for i in cuis {
        let (pref, syns, _) = TINY_CONCEPTS[i];
        let names: Vec<&str> = std::iter::once(pref).chain(syns.iter().copied()).collect();
        for r in 0..per_cui {
            let surface = names[(r + i) % names.len()];
            let template = SENTENCES[(r + 2 * i) % SENTENCES.len()];
            let (head, _) = template.split_once("{}").unwrap();
            let start = head.chars().count();
            let doc_id = format!("{prefix}{n:03}");
            s.documents.push(Document {
                doc_id: doc_id.clone(),
                text: template.replace("{}", surface),
                source: Source::Gold,
            });
            s.mentions.push(Mention {
                doc_id,
                start,
                end: start + surface.chars().count(),
                surface: surface.to_string(),
                cui: tiny_cui(i),
            });
            n += 1;
        }
    }
    s
}

/// A small world: 24 concepts, train covers the first 12, test concepts
/// 7..18 (so 6 test concepts are out of distribution), and three generated
/// notes per concept of which some need fuzzy extraction and one is rejected.
pub fn tiny_world() -> Result<TinyWorld> {
    let mut tsv = String::new();
    for (i, (pref, syns, def)) in TINY_CONCEPTS.iter().enumerate() {
        let cui = tiny_cui(i);
        writeln!(tsv, "{cui}\t{pref}\tPREF\tDISO").unwrap();
        for s in *syns {
            writeln!(tsv, "{cui}\t{s}\tSYN\tDISO").unwrap();
        }
        if let Some(d) = def {
            writeln!(tsv, "{cui}\t\tDEF\tDISO\t{d}").unwrap();
        }
    }
    let table = crate::corpus::read_concept_table(tsv.as_bytes(), "tiny", Some("DISO"))?;
    let train = gold_split(SplitName::Train, "train-", 0..12, 3);
    let test = gold_split(SplitName::Test, "test-", 6..18, 2);

    let mut generations = Vec::new();
    for (i, (pref, syns, _)) in TINY_CONCEPTS.iter().enumerate() {
        let cui = tiny_cui(i);
        let alt = syns.first().copied().unwrap_or(pref);
        let texts = [
            format!("Pt admitted with <1CUI>{pref}</1CUI> last night."),
            match i % 3 {
                0 => format!("Long standing {alt} managed by primary care."),
                1 => format!("Known {}s, stable on therapy.", pref),
                _ => format!("Assessment: <1CUI>{alt}<1CUI> improving."),
            },
            if i % 8 == 5 {
                "Routine visit, nothing to report.".to_string()
            } else {
                format!("Family history significant for {alt}.")
            },
        ];
        for (variant, text) in texts.into_iter().enumerate() {
            generations.push(RawGeneration {
                cui: cui.clone(),
                variant,
                text,
            });
        }
    }
    let extraction = validate_and_extract(&generations, &table, &GenerationConfig::default())?;
    if !extraction.errors.is_empty() {
        return Err(Error::invalid(format!("tiny world extraction errors: {:?}", extraction.errors)));
    }
    let usable: Vec<_> = extraction.records.into_iter().filter(|r| r.status.is_usable()).collect();
    let synth = crate::synth::to_corpus(&usable)?;
    let vectors = embed_mentions(&[&train, &test, &synth], 64)?;
    Ok(TinyWorld {
        concepts_tsv: tsv,
        table,
        train,
        test,
        generations,
        synth,
        vectors,
    })
}

pub const TINY_CONFIG: &str = r#"# Bundled end-to-end example. Paths are relative to this file.
[data]
dataset = "tiny"
concepts = "concepts.tsv"
train = "train.jsonl"
test = "test.jsonl"
synth = "synth.jsonl"
vectors = "vectors.mfv"

[experiment]
strategies = ["baseline", "naive", "ideal", "supplemental", "ablation"]
engines = ["exact", "token", "char3", "knn-nearest", "knn-vote"]
ks = [1, 5, 50]
vote_k = 5
budget = 4
seed = 13
output = "out"
"#;

/// Writes the tiny world and its experiment config into `dir`.
pub fn write_tiny_world(dir: &Path) -> Result<()> {
    let world = tiny_world()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let put = |name: &str, bytes: &[u8]| {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(p, e))
    };
    put("concepts.tsv", world.concepts_tsv.as_bytes())?;
    let mut buf = Vec::new();
    for g in &world.generations {
        buf.extend(serde_json::to_string(g).expect("serializable").bytes());
        buf.push(b'\n');
    }
    put("generations.jsonl", &buf)?;
    world.train.save(dir.join("train.jsonl"))?;
    world.test.save(dir.join("test.jsonl"))?;
    world.synth.save(dir.join("synth.jsonl"))?;
    world.vectors.save(dir.join("vectors.mfv"), false)?;
    put("config.toml", TINY_CONFIG.as_bytes())
}

/// Concept used by prompt snapshots.
pub fn sample_concept() -> Concept {
    Concept {
        cui: "C0005716".into(),
        preferred_name: "beryllium disease".into(),
        synonyms: vec!["berylliosis".into(), "chronic beryllium disease".into()],
        definitions: vec!["a lung disease caused by inhaling beryllium".into()],
        semantic_group: "DISO".into(),
    }
}
