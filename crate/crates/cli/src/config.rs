//! Experiment configuration. Relative paths resolve against the directory of
//! the config file.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use synthmention::augment::Strategy;
use synthmention::corpus::{self, SplitName};
use synthmention::normalize::{Mode, NormalizerConfig};
use synthmention::synth::GenerationConfig;
use synthmention::vectors::embed_corpus_ingest;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default = "default_dataset")]
    pub dataset: String,
    pub concepts: PathBuf,
    /// Semantic group kept when loading concepts.
    #[serde(default)]
    pub group: Option<String>,
    pub train: PathBuf,
    #[serde(default)]
    pub dev: Option<PathBuf>,
    pub test: PathBuf,
    /// Extracted synthetic corpus.
    #[serde(default)]
    pub synth: Option<PathBuf>,
    /// Raw generations, extracted at run time when `synth` is not given.
    #[serde(default)]
    pub generations: Option<PathBuf>,
    #[serde(default)]
    pub crosswalk: Option<PathBuf>,
    #[serde(default)]
    pub vectors: Option<PathBuf>,
    /// Query vectors; defaults to `vectors`.
    #[serde(default)]
    pub query_vectors: Option<PathBuf>,
    #[serde(default)]
    pub text_vectors: bool,
}

fn default_dataset() -> String {
    "dataset".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub strategies: Vec<String>,
    pub engines: Vec<String>,
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
    #[serde(default = "default_vote_k")]
    pub vote_k: usize,
    #[serde(default)]
    pub k_max: Option<usize>,
    #[serde(default = "default_threshold")]
    pub jaccard_threshold: f64,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Dictionary tagging of the test split per arm.
    #[serde(default = "default_true")]
    pub der: bool,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_ks() -> Vec<usize> {
    vec![1, 5, 50]
}
fn default_vote_k() -> usize {
    5
}
fn default_threshold() -> f64 {
    0.7
}
fn default_budget() -> usize {
    4
}
fn default_alpha() -> f64 {
    synthmention::metrics::ALPHA
}
fn default_true() -> bool {
    true
}
fn default_output() -> PathBuf {
    "out".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub experiment: ExperimentSection,
}

/// A parsed config together with the directory its paths are relative to.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base: PathBuf,
    pub source: PathBuf,
    pub arms: Vec<Arm>,
    pub engines: Vec<Mode>,
}

/// A training condition: gold data alone, or gold plus a strategy's selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    Baseline,
    Augmented(Strategy),
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::Baseline => "baseline",
            Arm::Augmented(s) => s.as_str(),
        }
    }
}

impl std::str::FromStr for Arm {
    type Err = synthmention::Error;

    fn from_str(s: &str) -> synthmention::Result<Self> {
        if s == "baseline" {
            Ok(Arm::Baseline)
        } else {
            s.parse().map(Arm::Augmented)
        }
    }
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let config: ExperimentConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let arms = config
            .experiment
            .strategies
            .iter()
            .map(|s| s.parse::<Arm>())
            .collect::<synthmention::Result<Vec<_>>>()
            .with_context(|| format!("config {}", path.display()))?;
        let engines = config
            .experiment
            .engines
            .iter()
            .map(|s| s.parse::<Mode>())
            .collect::<synthmention::Result<Vec<_>>>()
            .with_context(|| format!("config {}", path.display()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(LoadedConfig {
            config,
            base,
            source: path.to_path_buf(),
            arms,
            engines,
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn normalizer(&self, mode: Mode) -> NormalizerConfig {
        let e = &self.config.experiment;
        NormalizerConfig {
            mode,
            jaccard_threshold: e.jaccard_threshold,
            vote_k: e.vote_k,
            k_max: self.k_max(),
        }
    }

    pub fn k_max(&self) -> usize {
        let e = &self.config.experiment;
        e.k_max.unwrap_or_else(|| e.ks.iter().copied().max().unwrap_or(50).max(e.vote_k))
    }

    pub fn generation(&self) -> GenerationConfig {
        GenerationConfig {
            budget: self.config.experiment.budget,
            ..GenerationConfig::default()
        }
    }

    /// Every input file with its role, in a fixed order.
    pub fn inputs(&self) -> Vec<(&'static str, PathBuf)> {
        let d = &self.config.data;
        let mut out = vec![("concepts", d.concepts.clone()), ("train", d.train.clone())];
        let optional = [
            ("dev", &d.dev),
            ("synth", &d.synth),
            ("generations", &d.generations),
            ("crosswalk", &d.crosswalk),
            ("vectors", &d.vectors),
            ("query_vectors", &d.query_vectors),
        ];
        out.push(("test", d.test.clone()));
        for (role, p) in optional {
            if let Some(p) = p {
                out.push((role, p.clone()));
            }
        }
        out
    }

    /// Structural checks that do not need the data files.
    pub fn check_shape(&self) -> Result<()> {
        let e = &self.config.experiment;
        let d = &self.config.data;
        if e.ks.is_empty() || e.ks.windows(2).any(|w| w[0] >= w[1]) || e.ks[0] == 0 {
            bail!("experiment.ks must be positive and strictly ascending, got {:?}", e.ks);
        }
        if self.arms.is_empty() {
            bail!("experiment.strategies is empty; list \"baseline\" and/or strategies");
        }
        if self.arms.iter().enumerate().any(|(i, a)| self.arms[..i].contains(a)) {
            bail!("experiment.strategies lists an arm twice");
        }
        let augmented = self.arms.iter().any(|a| *a != Arm::Baseline);
        if d.synth.is_none() && d.generations.is_none() && augmented {
            bail!("data.synth or data.generations is required when strategies are listed");
        }
        if self.engines.iter().any(|m| m.is_vector()) && d.vectors.is_none() {
            bail!("data.vectors is required by the knn engines");
        }
        if !(0.0..1.0).contains(&e.alpha) {
            bail!("experiment.alpha {} outside (0, 1)", e.alpha);
        }
        for m in &self.engines {
            self.normalizer(*m).validate()?;
        }
        self.generation().validate()?;
        Ok(())
    }
}

/// Problems found by `validate`. Warnings also make the run unclean.
#[derive(Debug, Default)]
pub struct Diagnostics {
    pub lines: Vec<String>,
}

impl Diagnostics {
    fn error(&mut self, msg: String) {
        self.lines.push(format!("error: {msg}"));
    }
    fn warn(&mut self, msg: String) {
        self.lines.push(format!("warning: {msg}"));
    }
    pub fn has_errors(&self) -> bool {
        self.lines.iter().any(|l| l.starts_with("error:"))
    }
}

pub fn validate(cfg: &LoadedConfig) -> Diagnostics {
    let mut diag = Diagnostics::default();
    if let Err(e) = cfg.check_shape() {
        diag.error(format!("{e:#}"));
    }
    let mut missing = BTreeSet::new();
    for (role, p) in cfg.inputs() {
        let path = cfg.resolve(&p);
        if !path.is_file() {
            diag.error(format!("{role} file {} does not exist", path.display()));
            missing.insert(role);
        }
    }
    let d = &cfg.config.data;
    let load_split = |role: &str, p: &Path, name: SplitName, diag: &mut Diagnostics| {
        if missing.contains(role) {
            return None;
        }
        match corpus::load_corpus_with_warnings(cfg.resolve(p), name) {
            Ok((s, w)) => {
                if w.discontiguous_dropped > 0 {
                    diag.warn(format!("{role}: {} discontiguous mentions dropped", w.discontiguous_dropped));
                }
                Some(s)
            }
            Err(e) => {
                diag.error(format!("{role}: {e}"));
                None
            }
        }
    };
    let train = load_split("train", &d.train, SplitName::Train, &mut diag);
    let test = load_split("test", &d.test, SplitName::Test, &mut diag);
    let synth = d
        .synth
        .as_ref()
        .and_then(|p| load_split("synth", p, SplitName::Train, &mut diag));
    if let Some(s) = &synth {
        if s.mentions.is_empty() {
            diag.warn(format!("synth file {} has no accepted records", cfg.resolve(d.synth.as_ref().unwrap()).display()));
        }
    }
    let table = if missing.contains("concepts") {
        None
    } else {
        match corpus::load_concept_table(cfg.resolve(&d.concepts), d.group.as_deref()) {
            Ok(t) => {
                if t.is_empty() {
                    diag.error("concept table is empty after the group filter".into());
                }
                Some(t)
            }
            Err(e) => {
                diag.error(format!("concepts: {e}"));
                None
            }
        }
    };
    if let (Some(p), Some(table)) = (&d.generations, &table) {
        if !missing.contains("generations") && d.synth.is_none() {
            match crate::commands::extract_file(&cfg.resolve(p), table, &cfg.generation()) {
                Ok((ex, _)) if ex.summary().accepted == 0 => {
                    diag.warn(format!("generations file {} yields no accepted records", cfg.resolve(p).display()))
                }
                Ok((ex, _)) if !ex.errors.is_empty() => {
                    diag.warn(format!("generations: {} records reference unknown cuis", ex.errors.len()))
                }
                Ok(_) => {}
                Err(e) => diag.error(format!("generations: {e:#}")),
            }
        }
    }

    if let Some(p) = &d.crosswalk {
        if !missing.contains("crosswalk") {
            match corpus::load_crosswalk(cfg.resolve(p)) {
                Ok(x) => {
                    for (role, split) in [("train", &train), ("test", &test)] {
                        if let Some(s) = split {
                            let (_, unmapped) = corpus::apply_crosswalk(s, &x);
                            if !unmapped.is_empty() {
                                let ids: BTreeSet<&str> = unmapped.iter().map(|m| m.cui.as_str()).collect();
                                diag.warn(format!(
                                    "crosswalk leaves {} {role} mentions unmapped ({} ids, e.g. {})",
                                    unmapped.len(),
                                    ids.len(),
                                    ids.iter().take(5).copied().collect::<Vec<_>>().join(", ")
                                ));
                            }
                        }
                    }
                }
                Err(e) => diag.error(format!("crosswalk: {e}")),
            }
        }
    }

    if let Some(vp) = &d.vectors {
        if !missing.contains("vectors") {
            let vpath = cfg.resolve(vp);
            match embed_corpus_ingest(&vpath, d.text_vectors) {
                Ok(space) => {
                    let ids: BTreeSet<&str> = space.entries().iter().map(|e| e.entry_id.as_str()).collect();
                    let queries = match &d.query_vectors {
                        Some(qp) if !missing.contains("query_vectors") => {
                            let qpath = cfg.resolve(qp);
                            match embed_corpus_ingest(&qpath, d.text_vectors) {
                                Ok(q) => {
                                    if q.dim() != space.dim() {
                                        diag.error(format!(
                                            "vector dimension mismatch: {} has dim {}, {} has dim {}",
                                            vpath.display(),
                                            space.dim(),
                                            qpath.display(),
                                            q.dim()
                                        ));
                                    }
                                    Some(q)
                                }
                                Err(e) => {
                                    diag.error(format!("query_vectors: {e}"));
                                    None
                                }
                            }
                        }
                        _ => None,
                    };
                    let qids: BTreeSet<&str> = match &queries {
                        Some(q) => q.entries().iter().map(|e| e.entry_id.as_str()).collect(),
                        None => ids.clone(),
                    };
                    if let Some(t) = &test {
                        let absent = t.mentions.iter().filter(|m| !qids.contains(m.query_id().as_str())).count();
                        if absent > 0 {
                            diag.error(format!("{absent} test mentions have no query vector"));
                        }
                    }
                    for (role, split) in [("train", &train), ("synth", &synth)] {
                        if let Some(s) = split {
                            let absent = s.mentions.iter().filter(|m| !ids.contains(m.query_id().as_str())).count();
                            if absent > 0 {
                                diag.warn(format!("{absent} {role} mentions have no vector and cannot be indexed"));
                            }
                        }
                    }
                }
                Err(e) => diag.error(format!("vectors: {e}")),
            }
        }
    }
    diag
}
