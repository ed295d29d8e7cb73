//! Evaluation metrics: strict entity P/R/F1, token accuracy, Accuracy@k and
//! the Mann-Whitney U test.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::der::{entities, EntitySpan, TagSequence};
use crate::error::{Error, Result};
use crate::normalize::CandidateList;

pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityPRF {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// Set when precision or recall had a zero denominator and was reported as 0.
    pub zero_division: bool,
}

pub(crate) fn check_alignment(gold: &[TagSequence], pred: &[TagSequence]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::Alignment(format!(
            "{} gold documents vs {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let mut problems = Vec::new();
    for (g, p) in gold.iter().zip(pred) {
        if g.doc_id != p.doc_id {
            problems.push(format!("doc `{}` paired with `{}`", g.doc_id, p.doc_id));
        } else if g.labels.len() != p.labels.len() || g.tokens.len() != g.labels.len() {
            problems.push(format!(
                "doc `{}` has {} gold vs {} predicted labels",
                g.doc_id,
                g.labels.len(),
                p.labels.len()
            ));
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Alignment(problems.join("; ")))
    }
}

/// Counts from two entity sets under strict span equality.
pub fn prf_from_entities(gold: &[EntitySpan], pred: &[EntitySpan]) -> EntityPRF {
    let gold_set: HashSet<&EntitySpan> = gold.iter().collect();
    let pred_set: HashSet<&EntitySpan> = pred.iter().collect();
    let tp = pred_set.iter().filter(|e| gold_set.contains(*e)).count();
    let fp = pred_set.len() - tp;
    let fn_ = gold_set.len() - tp;
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    EntityPRF {
        precision,
        recall,
        f1,
        tp,
        fp,
        fn_,
        zero_division: tp + fp == 0 || tp + fn_ == 0,
    }
}

pub fn entity_prf(gold: &[TagSequence], pred: &[TagSequence]) -> Result<EntityPRF> {
    check_alignment(gold, pred)?;
    let g: Vec<EntitySpan> = gold.iter().flat_map(entities).collect();
    let p: Vec<EntitySpan> = pred.iter().flat_map(entities).collect();
    Ok(prf_from_entities(&g, &p))
}

/// Fraction of tokens with equal labels; 0 when there are no tokens.
pub fn token_accuracy(gold: &[TagSequence], pred: &[TagSequence]) -> Result<f64> {
    check_alignment(gold, pred)?;
    let (mut same, mut total) = (0usize, 0usize);
    for (g, p) in gold.iter().zip(pred) {
        total += g.labels.len();
        same += g.labels.iter().zip(&p.labels).filter(|(a, b)| a == b).count();
    }
    Ok(if total == 0 { 0.0 } else { same as f64 / total as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyAtK {
    pub k: usize,
    /// Absent when nothing was evaluated.
    pub value: Option<f64>,
    pub hits: usize,
    pub evaluated_count: usize,
}

pub fn accuracy_at_k(gold: &[(String, String)], preds: &[CandidateList], ks: &[usize]) -> Result<Vec<AccuracyAtK>> {
    let mut by_id: HashMap<&str, &CandidateList> = HashMap::with_capacity(preds.len());
    for p in preds {
        if by_id.insert(p.query_id.as_str(), p).is_some() {
            return Err(Error::invalid(format!("duplicate prediction for query `{}`", p.query_id)));
        }
    }
    let mut seen = HashSet::with_capacity(gold.len());
    let mut ranks = Vec::with_capacity(gold.len());
    let mut missing = Vec::new();
    for (qid, cui) in gold {
        if !seen.insert(qid.as_str()) {
            return Err(Error::invalid(format!("duplicate gold query `{qid}`")));
        }
        match by_id.get(qid.as_str()) {
            Some(list) => ranks.push(list.rank_of(cui)),
            None => missing.push(qid.as_str()),
        }
    }
    if !missing.is_empty() {
        let shown: Vec<_> = missing.iter().take(10).collect();
        return Err(Error::invalid(format!(
            "{} gold queries have no candidate list, e.g. {shown:?}",
            missing.len()
        )));
    }
    Ok(ks
        .iter()
        .map(|&k| {
            let hits = ranks.iter().filter(|r| r.is_some_and(|r| r <= k)).count();
            AccuracyAtK {
                k,
                value: (!ranks.is_empty()).then(|| hits as f64 / ranks.len() as f64),
                hits,
                evaluated_count: ranks.len(),
            }
        })
        .collect())
}

/// Accuracy@k over the gold queries whose cui is absent from training.
pub fn ood_accuracy_at_k(
    gold: &[(String, String)],
    preds: &[CandidateList],
    train_cuis: &BTreeSet<String>,
    ks: &[usize],
) -> Result<Vec<AccuracyAtK>> {
    let ood: Vec<(String, String)> = gold.iter().filter(|(_, c)| !train_cuis.contains(c)).cloned().collect();
    accuracy_at_k(&ood, preds, ks)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    Exact,
    NormalApprox,
}

impl fmt::Display for TestMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TestMethod::Exact => "exact",
            TestMethod::NormalApprox => "normal_approx",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MannWhitneyResult {
    pub u_statistic: f64,
    pub p_value: f64,
    pub method: TestMethod,
    pub significant: bool,
}

/// Largest sample size for which the exact null distribution is used.
pub const EXACT_MAX: usize = 8;

/// Number of arrangements of `n` and `m` items with each U value, indexed by U.
pub fn u_distribution(n: usize, m: usize) -> Vec<u64> {
    // f[i][j][u]: counts for sizes (i, j); the largest item either belongs to
    // the first sample (adds j to U) or the second.
    let max_u = n * m;
    let mut prev: Vec<Vec<u64>> = (0..=m)
        .map(|_| {
            let mut v = vec![0u64; max_u + 1];
            v[0] = 1;
            v
        })
        .collect();
    for _i in 1..=n {
        let mut cur: Vec<Vec<u64>> = Vec::with_capacity(m + 1);
        for j in 0..=m {
            let mut v = vec![0u64; max_u + 1];
            for u in 0..=max_u {
                let mut c = 0;
                if u >= j {
                    c += prev[j][u - j];
                }
                if j > 0 {
                    c += cur[j - 1][u];
                }
                v[u] = c;
            }
            cur.push(v);
        }
        prev = cur;
    }
    prev.swap_remove(m)
}

/// Average ranks (1-based) of the pooled sample and the tie term sum(t^3 - t).
fn ranks(pooled: &[f64]) -> (Vec<f64>, f64, bool) {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut tie_term = 0.0;
    let mut has_ties = false;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && pooled[order[j]] == pooled[order[i]] {
            j += 1;
        }
        let t = (j - i) as f64;
        if j - i > 1 {
            has_ties = true;
            tie_term += t * t * t - t;
        }
        let avg = (i + 1 + j) as f64 / 2.0;
        for &o in &order[i..j] {
            ranks[o] = avg;
        }
        i = j;
    }
    (ranks, tie_term, has_ties)
}

/// Two-sided Mann-Whitney U test.
pub fn mann_whitney_u(a: &[f64], b: &[f64], alpha: f64) -> Result<MannWhitneyResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("Mann-Whitney U needs two non-empty samples"));
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(Error::invalid("Mann-Whitney U sample contains NaN"));
    }
    let (n, m) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (r, tie_term, has_ties) = ranks(&pooled);
    let rank_sum_a: f64 = r[..n].iter().sum();
    let u_a = rank_sum_a - (n * (n + 1)) as f64 / 2.0;
    let u_b = (n * m) as f64 - u_a;
    let u = u_a.min(u_b);

    let (p, method) = if n <= EXACT_MAX && m <= EXACT_MAX && !has_ties {
        let dist = u_distribution(n, m);
        let total: u64 = dist.iter().sum();
        let lower: u64 = dist[..=(u as usize)].iter().sum();
        ((2.0 * lower as f64 / total as f64).min(1.0), TestMethod::Exact)
    } else {
        let (nf, mf) = (n as f64, m as f64);
        let big_n = nf + mf;
        let mean = nf * mf / 2.0;
        let var = nf * mf / 12.0 * ((big_n + 1.0) - tie_term / (big_n * (big_n - 1.0)));
        let p = if var <= 0.0 {
            1.0
        } else {
            let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
            erfc(z / std::f64::consts::SQRT_2).min(1.0)
        };
        (p, TestMethod::NormalApprox)
    };
    Ok(MannWhitneyResult {
        u_statistic: u,
        p_value: p,
        method,
        significant: p < alpha,
    })
}

/// One line of the evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub strategy: String,
    pub engine: String,
    pub metric: String,
    pub k: Option<usize>,
    pub value: Option<f64>,
    pub evaluated_count: usize,
    pub significant: Option<bool>,
}

pub const REPORT_HEADER: &str = "dataset\tstrategy\tengine\tmetric\tk\tvalue\tevaluated_count\tsignificant";

fn fmt_opt<T: fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

pub fn write_report_tsv(rows: &[ReportRow], mut w: impl Write) -> Result<()> {
    let io = |e| Error::io("<report>", e);
    writeln!(w, "{REPORT_HEADER}").map_err(io)?;
    for r in rows {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.dataset,
            r.strategy,
            r.engine,
            r.metric,
            fmt_opt(r.k),
            r.value.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}")),
            r.evaluated_count,
            fmt_opt(r.significant),
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Human-readable grid: one block per dataset and engine, one line per
/// strategy, one column per metric. `*` marks a value above the baseline
/// row of the same block, `+` a significant difference.
pub fn write_summary(rows: &[ReportRow], baseline: &str, mut w: impl Write) -> Result<()> {
    let io = |e| Error::io("<summary>", e);
    let label = |r: &ReportRow| match r.k {
        Some(k) => format!("{}@{k}", r.metric),
        None => r.metric.clone(),
    };
    let mut blocks: Vec<(&str, &str)> = Vec::new();
    for r in rows {
        let key = (r.dataset.as_str(), r.engine.as_str());
        if !blocks.contains(&key) {
            blocks.push(key);
        }
    }
    writeln!(w, "markers: * above baseline, + significant at alpha = {ALPHA}").map_err(io)?;
    for (dataset, engine) in blocks {
        let block: Vec<&ReportRow> = rows.iter().filter(|r| r.dataset == dataset && r.engine == engine).collect();
        let mut columns: Vec<String> = Vec::new();
        let mut strategies: Vec<&str> = Vec::new();
        for r in &block {
            let l = label(r);
            if !columns.contains(&l) {
                columns.push(l);
            }
            if !strategies.contains(&r.strategy.as_str()) {
                strategies.push(&r.strategy);
            }
        }
        let cell = |strategy: &str, col: &str| block.iter().find(|r| r.strategy == strategy && label(r) == col).copied();
        writeln!(w, "\n[{dataset} / {engine}]").map_err(io)?;
        write!(w, "{:<14}", "strategy").map_err(io)?;
        for c in &columns {
            write!(w, " {c:>14}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
        for s in &strategies {
            write!(w, "{s:<14}").map_err(io)?;
            for c in &columns {
                let text = match cell(s, c) {
                    Some(r) => {
                        let mut t = fmt_value(r.value);
                        let base = cell(baseline, c).and_then(|b| b.value);
                        if *s != baseline && matches!((r.value, base), (Some(v), Some(b)) if v > b) {
                            t.push('*');
                        }
                        if r.significant == Some(true) {
                            t.push('+');
                        }
                        t
                    }
                    None => "-".to_string(),
                };
                write!(w, " {text:>14}").map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::der::{tokenize, Label};
    use crate::normalize::Candidate;

    fn seq(id: &str, labels: &str) -> TagSequence {
        let text = vec!["t"; labels.len()].join(" ");
        TagSequence {
            doc_id: id.into(),
            tokens: tokenize(&text),
            labels: labels.chars().map(|c| if c == 'D' { Label::D } else { Label::O }).collect(),
        }
    }

    #[test]
    fn perfect_and_shifted() {
        let gold = vec![seq("a", "DDOODOD")];
        let p = entity_prf(&gold, &gold).unwrap();
        assert_eq!((p.precision, p.recall, p.f1, p.tp), (1.0, 1.0, 1.0, 3));
        let shifted = vec![seq("a", "ODDODOD")];
        let p = entity_prf(&gold, &shifted).unwrap();
        assert_eq!((p.tp, p.fp, p.fn_), (2, 1, 1));
    }

    #[test]
    fn zero_division_flag() {
        let gold = vec![seq("a", "OOO")];
        let p = entity_prf(&gold, &gold).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (0.0, 0.0, 0.0));
        assert!(p.zero_division);
    }

    #[test]
    fn misalignment_errors() {
        assert!(entity_prf(&[seq("a", "DO")], &[seq("a", "D")]).is_err());
        assert!(entity_prf(&[seq("a", "DO")], &[seq("b", "DO")]).is_err());
        assert!(token_accuracy(&[seq("a", "DO")], &[]).is_err());
    }

    #[test]
    fn token_accuracy_cases() {
        let g = vec![seq("a", &"D".repeat(100))];
        let mut p = g.clone();
        p[0].labels[3] = Label::O;
        assert!((token_accuracy(&g, &p).unwrap() - 0.99).abs() < 1e-12);
        let g = vec![seq("a", "DDDDDOOOOO")];
        let p = vec![seq("a", "OOOOODDDDD")];
        assert_eq!(token_accuracy(&g, &p).unwrap(), 0.0);
    }

    fn list(qid: &str, cuis: &[&str]) -> CandidateList {
        CandidateList {
            query_id: qid.into(),
            ranked: cuis
                .iter()
                .map(|c| Candidate {
                    cui: c.to_string(),
                    score: 1.0,
                })
                .collect(),
        }
    }

    #[test]
    fn accuracy_boundary() {
        let gold = vec![("q".to_string(), "G".to_string())];
        let preds = vec![list("q", &["a", "b", "c", "d", "e", "G"])];
        let acc = accuracy_at_k(&gold, &preds, &[1, 5, 50]).unwrap();
        let vals: Vec<_> = acc.iter().map(|a| a.value.unwrap()).collect();
        assert_eq!(vals, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn accuracy_errors_and_absent() {
        let gold = vec![("q".to_string(), "G".to_string())];
        let dup = vec![list("q", &[]), list("q", &[])];
        assert!(accuracy_at_k(&gold, &dup, &[1]).is_err());
        assert!(accuracy_at_k(&gold, &[], &[1]).is_err());
        let train: BTreeSet<String> = ["G".to_string()].into();
        let acc = ood_accuracy_at_k(&gold, &[list("q", &["G"])], &train, &[1, 5]).unwrap();
        assert!(acc.iter().all(|a| a.value.is_none() && a.evaluated_count == 0));
    }

    #[test]
    fn mann_whitney_known_cases() {
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], ALPHA).unwrap();
        assert_eq!(r.u_statistic, 0.0);
        assert_eq!(r.method, TestMethod::Exact);
        assert!((r.p_value - 0.1).abs() < 1e-12);
        assert!(!r.significant);

        let r = mann_whitney_u(&[1.0, 2.0, 3.0, 4.0, 5.0], &[6.0, 7.0, 8.0, 9.0, 10.0], ALPHA).unwrap();
        assert!((r.p_value - 2.0 / 252.0).abs() < 1e-12);
        assert!(r.significant);

        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], ALPHA).unwrap();
        assert_eq!(r.method, TestMethod::NormalApprox);
        assert!(r.p_value > 0.99);
        assert!(mann_whitney_u(&[], &[1.0], ALPHA).is_err());
    }

    #[test]
    fn distribution_totals_are_binomial() {
        let d = u_distribution(3, 3);
        assert_eq!(d.iter().sum::<u64>(), 20);
        assert_eq!(d, vec![1, 1, 2, 3, 3, 3, 3, 2, 1, 1]);
        assert_eq!(u_distribution(8, 8).iter().sum::<u64>(), 12870);
    }

    #[test]
    fn report_formats_absent_values() {
        let rows = vec![ReportRow {
            dataset: "d".into(),
            strategy: "baseline".into(),
            engine: "e".into(),
            metric: "acc".into(),
            k: Some(1),
            value: None,
            evaluated_count: 0,
            significant: None,
        }];
        let mut buf = Vec::new();
        write_report_tsv(&rows, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().nth(1).unwrap(), "d\tbaseline\te\tacc\t1\tNA\t0\tNA");
    }
}
