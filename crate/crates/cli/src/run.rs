//! The strategy x engine experiment grid.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use rayon::prelude::*;
use serde_json::json;
use sha2::{Digest, Sha256};
use synthmention::augment::compose;
use synthmention::corpus::{self, ConceptTable, CorpusSplit, SplitName};
use synthmention::der::{self, TagSequence};
use synthmention::metrics::{self, AccuracyAtK, ReportRow};
use synthmention::normalize::{Mode, StringIndex, VectorIndex};
use synthmention::synth;
use synthmention::vectors::{embed_corpus_ingest, EmbeddingSpace};

use crate::commands::{gold_pairs, normalize_strings, normalize_vectors, score_der, vectors_by_id, CANDIDATE_DEDUP};
use crate::config::{Arm, LoadedConfig};

pub const OOD_DER_RULE: &str = "ood DER keeps gold entities whose overlapping mentions all have cuis absent from training; \
predicted entities overlapping a dropped gold entity are ignored";

pub const OOD_DEN_RULE: &str = "ood accuracy counts only test mentions whose cui is absent from the gold training split";

/// Label for engines that do not learn from training data.
pub const NO_ARM: &str = "n/a";

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Inputs {
    table: ConceptTable,
    train: CorpusSplit,
    test: CorpusSplit,
    synth: Option<CorpusSplit>,
    index_space: Option<EmbeddingSpace>,
    query_space: Option<EmbeddingSpace>,
    counts: BTreeMap<&'static str, serde_json::Value>,
}

fn stage<T>(name: &str, path: &Path, r: synthmention::Result<T>) -> Result<T> {
    r.with_context(|| format!("stage {name}: {}", path.display()))
}

fn load_inputs(cfg: &LoadedConfig) -> Result<Inputs> {
    let d = &cfg.config.data;
    let mut counts = BTreeMap::new();
    let concepts_path = cfg.resolve(&d.concepts);
    let table = stage("load", &concepts_path, corpus::load_concept_table(&concepts_path, d.group.as_deref()))?;
    let train_path = cfg.resolve(&d.train);
    let mut train = stage("load", &train_path, corpus::load_corpus(&train_path, SplitName::Train))?;
    let test_path = cfg.resolve(&d.test);
    let mut test = stage("load", &test_path, corpus::load_corpus(&test_path, SplitName::Test))?;

    if let Some(p) = &d.crosswalk {
        let path = cfg.resolve(p);
        let xw = stage("crosswalk", &path, corpus::load_crosswalk(&path))?;
        let (t, un_train) = corpus::apply_crosswalk(&train, &xw);
        let (s, un_test) = corpus::apply_crosswalk(&test, &xw);
        counts.insert("crosswalk_unmapped_train", json!(un_train.len()));
        counts.insert("crosswalk_unmapped_test", json!(un_test.len()));
        train = t;
        test = s;
    }

    let needs_synth = cfg.arms.iter().any(|a| *a != Arm::Baseline);
    let synth = if !needs_synth {
        None
    } else if let Some(p) = &d.synth {
        let path = cfg.resolve(p);
        Some(stage("load", &path, corpus::load_corpus(&path, SplitName::Train))?)
    } else {
        let p = d.generations.as_ref().ok_or_else(|| anyhow!("no synthetic data configured"))?;
        let path = cfg.resolve(p);
        let (ex, _) = crate::commands::extract_file(&path, &table, &cfg.generation())
            .with_context(|| format!("stage extract: {}", path.display()))?;
        counts.insert("extraction", serde_json::to_value(ex.summary())?);
        let usable: Vec<_> = ex.records.into_iter().filter(|r| r.status.is_usable()).collect();
        Some(stage("extract", &path, synth::to_corpus(&usable))?)
    };

    let (index_space, query_space) = if cfg.engines.iter().any(|m| m.is_vector()) {
        let vp = cfg.resolve(d.vectors.as_ref().expect("checked by check_shape"));
        let space = stage("vectors", &vp, embed_corpus_ingest(&vp, d.text_vectors))?;
        let queries = match &d.query_vectors {
            Some(q) => {
                let qp = cfg.resolve(q);
                let qs = stage("vectors", &qp, embed_corpus_ingest(&qp, d.text_vectors))?;
                if qs.dim() != space.dim() {
                    return Err(anyhow!(synthmention::Error::invalid(format!(
                        "stage vectors: {} has dim {}, {} has dim {}",
                        vp.display(),
                        space.dim(),
                        qp.display(),
                        qs.dim()
                    ))));
                }
                Some(qs)
            }
            None => None,
        };
        (Some(space), queries)
    } else {
        (None, None)
    };

    counts.insert("train_mentions", json!(train.mentions.len()));
    counts.insert("train_cuis", json!(corpus::cui_set(&train).len()));
    counts.insert("test_mentions", json!(test.mentions.len()));
    counts.insert("test_cuis", json!(corpus::cui_set(&test).len()));
    if let Some(s) = &synth {
        counts.insert("synth_mentions", json!(s.mentions.len()));
        counts.insert("synth_cuis", json!(corpus::cui_set(s).len()));
    }
    counts.insert("concepts", json!(table.len()));
    Ok(Inputs {
        table,
        train,
        test,
        synth,
        index_space,
        query_space,
        counts,
    })
}

enum CellKind {
    Strings(Mode),
    Vectors(Mode, usize),
    Gazetteer(usize),
}

struct Cell {
    arm: String,
    engine: String,
    kind: CellKind,
}

struct CellOutput {
    dir: String,
    files: Vec<(String, Vec<u8>)>,
    rows: Vec<ReportRow>,
}

fn jsonl<T: serde::Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for i in items {
        serde_json::to_writer(&mut buf, i)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

struct Grid<'a> {
    cfg: &'a LoadedConfig,
    inputs: &'a Inputs,
    arms: Vec<(String, CorpusSplit)>,
    gold: Vec<(String, String)>,
    train_cuis: BTreeSet<String>,
    test_tags: Vec<TagSequence>,
}

impl Grid<'_> {
    fn row(&self, arm: &str, engine: &str, metric: &str, k: Option<usize>, value: Option<f64>, n: usize) -> ReportRow {
        ReportRow {
            dataset: self.cfg.config.data.dataset.clone(),
            strategy: arm.to_string(),
            engine: engine.to_string(),
            metric: metric.to_string(),
            k,
            value,
            evaluated_count: n,
            significant: None,
        }
    }

    fn accuracy_rows(&self, cell: &Cell, metric: &str, acc: &[AccuracyAtK]) -> Vec<ReportRow> {
        acc.iter()
            .map(|a| self.row(&cell.arm, &cell.engine, metric, Some(a.k), a.value, a.evaluated_count))
            .collect()
    }

    fn run_cell(&self, cell: &Cell) -> Result<CellOutput> {
        let ks = &self.cfg.config.experiment.ks;
        let dir = format!("cells/{}__{}", cell.arm.replace('/', "_"), cell.engine);
        let lists = match cell.kind {
            CellKind::Strings(mode) => {
                let index = StringIndex::build(&self.inputs.table, None)?;
                normalize_strings(&index, &self.inputs.test, &self.cfg.normalizer(mode))?
            }
            CellKind::Vectors(mode, arm) => {
                let space = self.inputs.index_space.as_ref().expect("loaded for vector engines");
                let ids: HashSet<String> = self.arms[arm].1.mentions.iter().map(|m| m.query_id()).collect();
                let index = VectorIndex::build(&space.filtered(|e| ids.contains(&e.entry_id)))?;
                let qspace = self.inputs.query_space.as_ref().unwrap_or(space);
                let by_id = vectors_by_id(qspace);
                let queries = self
                    .gold
                    .iter()
                    .map(|(qid, _)| {
                        by_id
                            .get(qid.as_str())
                            .map(|v| (qid.as_str(), *v))
                            .ok_or_else(|| anyhow!(synthmention::Error::invalid(format!("stage normalize: test mention `{qid}` has no query vector"))))
                    })
                    .collect::<Result<Vec<_>>>()?;
                normalize_vectors(&index, &queries, &self.cfg.normalizer(mode))?
            }
            CellKind::Gazetteer(arm) => {
                let index = StringIndex::build(&self.inputs.table, Some(&self.arms[arm].1))?;
                let pred = der::gazetteer_tag(&self.inputs.test, &index);
                let scores = score_der(&self.inputs.test, &self.test_tags, &pred, Some(&self.inputs.train))?;
                let mut labels = Vec::new();
                der::write_labels(&pred, &mut labels)?;
                let o = &scores.overall;
                let mut rows = vec![
                    self.row(&cell.arm, &cell.engine, "precision", None, Some(o.precision), o.tp + o.fp),
                    self.row(&cell.arm, &cell.engine, "recall", None, Some(o.recall), o.tp + o.fn_),
                    self.row(&cell.arm, &cell.engine, "f1", None, Some(o.f1), o.tp + o.fn_),
                    self.row(
                        &cell.arm,
                        &cell.engine,
                        "token_accuracy",
                        None,
                        Some(scores.token_accuracy),
                        self.test_tags.iter().map(|t| t.labels.len()).sum(),
                    ),
                ];
                if let Some(ood) = &scores.ood {
                    rows.push(self.row(&cell.arm, &cell.engine, "ood_precision", None, Some(ood.precision), ood.tp + ood.fp));
                    rows.push(self.row(&cell.arm, &cell.engine, "ood_recall", None, Some(ood.recall), ood.tp + ood.fn_));
                    rows.push(self.row(&cell.arm, &cell.engine, "ood_f1", None, Some(ood.f1), ood.tp + ood.fn_));
                }
                return Ok(CellOutput {
                    dir: dir.clone(),
                    files: vec![(format!("{dir}/labels.jsonl"), labels)],
                    rows,
                });
            }
        };
        let acc = metrics::accuracy_at_k(&self.gold, &lists, ks)?;
        let ood = metrics::ood_accuracy_at_k(&self.gold, &lists, &self.train_cuis, ks)?;
        let mut rows = self.accuracy_rows(cell, "accuracy", &acc);
        rows.extend(self.accuracy_rows(cell, "ood_accuracy", &ood));
        Ok(CellOutput {
            dir: dir.clone(),
            files: vec![(format!("{dir}/predictions.jsonl"), jsonl(&lists)?)],
            rows,
        })
    }
}

fn write_file(root: &Path, rel: &str, bytes: &[u8], outputs: &mut BTreeMap<String, String>) -> Result<()> {
    let path = root.join(rel);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    outputs.insert(rel.to_string(), sha256_hex(bytes));
    Ok(())
}

/// Runs the configured grid and writes predictions, `report.tsv`,
/// `summary.txt` and `manifest.json` under the output directory.
pub fn run_experiment(cfg: &LoadedConfig, out_override: Option<&Path>, seed: Option<u64>) -> Result<PathBuf> {
    cfg.check_shape().context("stage config")?;
    let inputs = load_inputs(cfg)?;
    let out_dir = out_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.resolve(&cfg.config.experiment.output));

    let arms: Vec<(String, CorpusSplit)> = cfg
        .arms
        .iter()
        .map(|a| {
            let split = match a {
                Arm::Baseline => inputs.train.clone(),
                Arm::Augmented(s) => {
                    compose(*s, inputs.synth.as_ref().expect("loaded when augmenting"), &inputs.train, &inputs.test)
                        .combined_train
                }
            };
            (a.name().to_string(), split)
        })
        .collect();

    let mut cells = Vec::new();
    for &mode in &cfg.engines {
        if mode.is_vector() {
            for (i, (name, _)) in arms.iter().enumerate() {
                cells.push(Cell {
                    arm: name.clone(),
                    engine: mode.to_string(),
                    kind: CellKind::Vectors(mode, i),
                });
            }
        } else {
            cells.push(Cell {
                arm: NO_ARM.into(),
                engine: mode.to_string(),
                kind: CellKind::Strings(mode),
            });
        }
    }
    if cfg.config.experiment.der {
        for (i, (name, _)) in arms.iter().enumerate() {
            cells.push(Cell {
                arm: name.clone(),
                engine: "gazetteer".into(),
                kind: CellKind::Gazetteer(i),
            });
        }
    }

    let grid = Grid {
        cfg,
        inputs: &inputs,
        gold: gold_pairs(&inputs.test),
        train_cuis: corpus::cui_set(&inputs.train),
        test_tags: der::tokenize_and_tag(&inputs.test),
        arms,
    };
    let results: Vec<CellOutput> = cells
        .par_iter()
        .map(|c| grid.run_cell(c).with_context(|| format!("cell {}/{}", c.arm, c.engine)))
        .collect::<Result<_>>()?;

    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut outputs = BTreeMap::new();
    let mut rows = Vec::new();
    let mut cell_dirs = Vec::new();
    for r in results {
        for (rel, bytes) in &r.files {
            write_file(&out_dir, rel, bytes, &mut outputs)?;
        }
        cell_dirs.push(r.dir);
        rows.extend(r.rows);
    }
    if cfg.config.experiment.der {
        let mut tokens = Vec::new();
        der::write_tokens(&grid.test_tags, &mut tokens)?;
        write_file(&out_dir, "test_tokens.jsonl", &tokens, &mut outputs)?;
    }

    let mut report = Vec::new();
    metrics::write_report_tsv(&rows, &mut report)?;
    write_file(&out_dir, "report.tsv", &report, &mut outputs)?;

    let mut summary = Vec::new();
    metrics::write_summary(&rows, "baseline", &mut summary)?;
    summary.extend_from_slice(
        format!(
            "\nnotes:\n- {OOD_DEN_RULE}\n- {OOD_DER_RULE}\n- significance is NA for single deterministic runs; compare per-run metric files with `stats`\n- string engines do not use training data and are reported once under strategy {NO_ARM}\n"
        )
        .as_bytes(),
    );
    write_file(&out_dir, "summary.txt", &summary, &mut outputs)?;

    let mut input_hashes = Vec::new();
    let config_bytes = fs::read(&cfg.source).with_context(|| format!("reading {}", cfg.source.display()))?;
    input_hashes.push(json!({"role": "config", "path": cfg.source.file_name().map(|f| f.to_string_lossy().into_owned()), "sha256": sha256_hex(&config_bytes), "bytes": config_bytes.len()}));
    for (role, p) in cfg.inputs() {
        let path = cfg.resolve(&p);
        let bytes = fs::read(&path).with_context(|| format!("stage manifest: {}", path.display()))?;
        input_hashes.push(json!({"role": role, "path": p, "sha256": sha256_hex(&bytes), "bytes": bytes.len()}));
    }
    let e = &cfg.config.experiment;
    let manifest = json!({
        "tool": "synthmention",
        "version": env!("CARGO_PKG_VERSION"),
        "dataset": cfg.config.data.dataset,
        "seed": seed.unwrap_or(e.seed),
        "parameters": {
            "strategies": cfg.arms.iter().map(|a| a.name()).collect::<Vec<_>>(),
            "engines": cfg.engines.iter().map(|m| m.as_str()).collect::<Vec<_>>(),
            "ks": e.ks,
            "k_max": cfg.k_max(),
            "vote_k": e.vote_k,
            "jaccard_threshold": e.jaccard_threshold,
            "budget": e.budget,
            "alpha": e.alpha,
            "der": e.der,
            "candidate_dedup": CANDIDATE_DEDUP,
        },
        "ood_rules": {"den": OOD_DEN_RULE, "der": OOD_DER_RULE},
        "counts": inputs.counts,
        "inputs": input_hashes,
        "cells": cell_dirs,
        "outputs": outputs,
    });
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    fs::write(out_dir.join("manifest.json"), &bytes).with_context(|| format!("writing manifest in {}", out_dir.display()))?;
    Ok(out_dir)
}
