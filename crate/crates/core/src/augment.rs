//! Augmentation strategies as set algebra over cuis.
//!
//! | strategy     | synthetic mentions kept                 |
//! |--------------|-----------------------------------------|
//! | naive        | all                                     |
//! | ideal        | cui appears in the test split           |
//! | supplemental | cui does not appear in the train split  |
//! | ablation     | cui does not appear in the test split   |
//!
//! Gold training mentions are always retained.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::Serialize;

use crate::corpus::{cui_set, CorpusSplit, SplitName};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Naive,
    Ideal,
    Supplemental,
    Ablation,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Naive, Strategy::Ideal, Strategy::Supplemental, Strategy::Ablation];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Naive => "naive",
            Strategy::Ideal => "ideal",
            Strategy::Supplemental => "supplemental",
            Strategy::Ablation => "ablation",
        }
    }

    fn keeps(self, cui: &str, train: &BTreeSet<String>, test: &BTreeSet<String>) -> bool {
        match self {
            Strategy::Naive => true,
            Strategy::Ideal => test.contains(cui),
            Strategy::Supplemental => !train.contains(cui),
            Strategy::Ablation => !test.contains(cui),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "naive" => Ok(Strategy::Naive),
            "ideal" => Ok(Strategy::Ideal),
            "supplemental" | "supp" => Ok(Strategy::Supplemental),
            "ablation" => Ok(Strategy::Ablation),
            other => Err(Error::invalid(format!(
                "unknown strategy `{other}` (expected naive, ideal, supplemental or ablation)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct OverlapStats {
    /// Distinct selected synthetic cuis that also occur in the train split.
    pub synth_cuis_in_train: usize,
    /// Distinct selected synthetic cuis that also occur in the test split.
    pub synth_cuis_in_test: usize,
    pub selected_mentions: usize,
    pub selected_cuis: usize,
    pub gold_mentions: usize,
    pub combined_mentions: usize,
}

#[derive(Debug, Clone)]
pub struct AugmentationPlan {
    pub strategy: Strategy,
    pub synthetic_selected: CorpusSplit,
    pub combined_train: CorpusSplit,
    pub stats: OverlapStats,
}

/// Selects synthetic mentions for `strategy` and appends them to `train`.
/// A synthetic document is carried over when at least one of its mentions
/// is selected; only the selected mentions come with it.
pub fn compose(strategy: Strategy, synth: &CorpusSplit, train: &CorpusSplit, test: &CorpusSplit) -> AugmentationPlan {
    let train_cuis = cui_set(train);
    let test_cuis = cui_set(test);

    let mentions: Vec<_> = synth
        .mentions
        .iter()
        .filter(|m| strategy.keeps(&m.cui, &train_cuis, &test_cuis))
        .cloned()
        .collect();
    let used_docs: HashSet<&str> = mentions.iter().map(|m| m.doc_id.as_str()).collect();
    let documents: Vec<_> = synth
        .documents
        .iter()
        .filter(|d| used_docs.contains(d.doc_id.as_str()))
        .cloned()
        .collect();
    let synthetic_selected = CorpusSplit {
        name: SplitName::Train,
        documents,
        mentions,
    };

    let selected_cuis = cui_set(&synthetic_selected);
    let stats = OverlapStats {
        synth_cuis_in_train: selected_cuis.intersection(&train_cuis).count(),
        synth_cuis_in_test: selected_cuis.intersection(&test_cuis).count(),
        selected_mentions: synthetic_selected.mentions.len(),
        selected_cuis: selected_cuis.len(),
        gold_mentions: train.mentions.len(),
        combined_mentions: train.mentions.len() + synthetic_selected.mentions.len(),
    };

    let mut combined_train = train.clone();
    combined_train.name = SplitName::Train;
    combined_train.documents.extend(synthetic_selected.documents.iter().cloned());
    combined_train.mentions.extend(synthetic_selected.mentions.iter().cloned());

    AugmentationPlan {
        strategy,
        synthetic_selected,
        combined_train,
        stats,
    }
}

/// Per-strategy overlap counts for one dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OverlapReport {
    pub train_cuis: usize,
    pub train_mentions: usize,
    pub test_cuis: usize,
    pub test_mentions: usize,
    pub synth_cuis: usize,
    pub synth_mentions: usize,
    pub rows: Vec<(Strategy, OverlapStats)>,
}

pub fn overlap_report(synth: &CorpusSplit, train: &CorpusSplit, test: &CorpusSplit) -> OverlapReport {
    let rows = Strategy::ALL
        .iter()
        .map(|&s| (s, compose(s, synth, train, test).stats))
        .collect();
    OverlapReport {
        train_cuis: cui_set(train).len(),
        train_mentions: train.mentions.len(),
        test_cuis: cui_set(test).len(),
        test_mentions: test.mentions.len(),
        synth_cuis: cui_set(synth).len(),
        synth_mentions: synth.mentions.len(),
        rows,
    }
}

impl OverlapReport {
    pub fn stats(&self, strategy: Strategy) -> &OverlapStats {
        &self
            .rows
            .iter()
            .find(|(s, _)| *s == strategy)
            .expect("report covers every strategy")
            .1
    }

    /// TSV laid out like the dataset-overview table: one row per split, and
    /// for each strategy the overlapping cui count plus mention counts. The
    /// selected and combined mention counts are printed separately so either
    /// reading of a "mentions used" column can be checked.
    pub fn write_tsv(&self, dataset: &str, mut w: impl Write) -> std::io::Result<()> {
        write!(w, "dataset\tsplit\toriginal_cui\toriginal_mentions")?;
        for s in Strategy::ALL {
            write!(w, "\t{s}_cui\t{s}_selected_mentions\t{s}_combined_mentions")?;
        }
        writeln!(w)?;

        write!(w, "{dataset}\ttrain\t{}\t{}", self.train_cuis, self.train_mentions)?;
        for (_, st) in &self.rows {
            write!(
                w,
                "\t{}\t{}\t{}",
                st.synth_cuis_in_train, st.selected_mentions, st.combined_mentions
            )?;
        }
        writeln!(w)?;

        write!(w, "{dataset}\ttest\t{}\t{}", self.test_cuis, self.test_mentions)?;
        for (_, st) in &self.rows {
            write!(w, "\t{}\t{}\t{}", st.synth_cuis_in_test, self.test_mentions, self.test_mentions)?;
        }
        writeln!(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, Mention, Source};

    fn split(name: SplitName, cuis: &[&str]) -> CorpusSplit {
        let mut s = CorpusSplit::empty(name);
        for (i, cui) in cuis.iter().enumerate() {
            let doc_id = format!("{name}-{i}");
            s.documents.push(Document {
                doc_id: doc_id.clone(),
                text: "x".into(),
                source: Source::Gold,
            });
            s.mentions.push(Mention {
                doc_id,
                start: 0,
                end: 1,
                surface: "x".into(),
                cui: cui.to_string(),
            });
        }
        s
    }

    fn selected(plan: &AugmentationPlan) -> Vec<String> {
        plan.synthetic_selected.mentions.iter().map(|m| m.cui.clone()).collect()
    }

    #[test]
    fn strategies_on_small_sets() {
        let synth = split(SplitName::Train, &["A", "B", "C"]);
        let train = split(SplitName::Train, &["A"]);
        let test = split(SplitName::Test, &["B"]);
        let pick = |s| selected(&compose(s, &synth, &train, &test));
        assert_eq!(pick(Strategy::Ideal), vec!["B"]);
        assert_eq!(pick(Strategy::Supplemental), vec!["B", "C"]);
        assert_eq!(pick(Strategy::Ablation), vec!["A", "C"]);
        assert_eq!(pick(Strategy::Naive), vec!["A", "B", "C"]);

        let naive = compose(Strategy::Naive, &synth, &train, &test);
        assert_eq!(naive.combined_train.mentions.len(), 4);
        assert_eq!(naive.stats.synth_cuis_in_train, 1);
        assert_eq!(naive.stats.synth_cuis_in_test, 1);
        assert_eq!(naive.stats.combined_mentions, 4);
    }

    #[test]
    fn empty_synth_is_identity() {
        let synth = CorpusSplit::empty(SplitName::Train);
        let train = split(SplitName::Train, &["A", "B"]);
        let test = split(SplitName::Test, &["B"]);
        for s in Strategy::ALL {
            let plan = compose(s, &synth, &train, &test);
            assert_eq!(plan.combined_train, train);
            assert_eq!(plan.stats.selected_mentions, 0);
        }
    }

    #[test]
    fn disjoint_sets_have_no_overlap() {
        let synth = split(SplitName::Train, &["X", "Y"]);
        let train = split(SplitName::Train, &["A"]);
        let test = split(SplitName::Test, &["B"]);
        let r = overlap_report(&synth, &train, &test);
        let naive = r.stats(Strategy::Naive);
        assert_eq!((naive.synth_cuis_in_train, naive.synth_cuis_in_test), (0, 0));
    }

    #[test]
    fn synth_inside_test_ablates_everything() {
        let synth = split(SplitName::Train, &["B", "C"]);
        let train = split(SplitName::Train, &["A"]);
        let test = split(SplitName::Test, &["B", "C", "D"]);
        let r = overlap_report(&synth, &train, &test);
        assert_eq!(r.stats(Strategy::Ablation).selected_mentions, 0);
    }

    #[test]
    fn parses_strategy_names() {
        assert_eq!("Naive".parse::<Strategy>().unwrap(), Strategy::Naive);
        assert_eq!("supp".parse::<Strategy>().unwrap(), Strategy::Supplemental);
        assert!("baseline".parse::<Strategy>().is_err());
    }

    #[test]
    fn report_tsv_shape() {
        let synth = split(SplitName::Train, &["A", "B", "C"]);
        let train = split(SplitName::Train, &["A"]);
        let test = split(SplitName::Test, &["B"]);
        let mut buf = Vec::new();
        overlap_report(&synth, &train, &test).write_tsv("toy", &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines.iter().all(|l| l.split('\t').count() == 4 + 12));
        assert!(lines[1].starts_with("toy\ttrain\t1\t1\t1\t3\t4"));
    }
}
