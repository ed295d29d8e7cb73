//! Disease entity normalization engines.
//!
//! Every engine maps a query to a [`CandidateList`]: distinct cuis ranked by
//! descending score, at most `k_max` long. String engines work from a
//! [`StringIndex`] over concept names; vector engines from a [`VectorIndex`]
//! over precomputed mention embeddings.

mod knn;
mod string_index;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use knn::{normalize_knn, Neighbor, VectorIndex};
pub use string_index::{char_trigrams, name_key, name_tokens, StringIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "exact")]
    Exact,
    #[serde(rename = "token")]
    TokenOverlap,
    #[serde(rename = "char3")]
    Char3gram,
    #[serde(rename = "knn-nearest")]
    KnnNearest,
    #[serde(rename = "knn-vote")]
    KnnVote,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::Exact,
        Mode::TokenOverlap,
        Mode::Char3gram,
        Mode::KnnNearest,
        Mode::KnnVote,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Exact => "exact",
            Mode::TokenOverlap => "token",
            Mode::Char3gram => "char3",
            Mode::KnnNearest => "knn-nearest",
            Mode::KnnVote => "knn-vote",
        }
    }

    pub fn is_vector(self) -> bool {
        matches!(self, Mode::KnnNearest | Mode::KnnVote)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Mode::Exact),
            "token" | "token_overlap" => Ok(Mode::TokenOverlap),
            "char3" | "char3gram" => Ok(Mode::Char3gram),
            "knn-nearest" | "knn_nearest" => Ok(Mode::KnnNearest),
            "knn-vote" | "knn_vote" => Ok(Mode::KnnVote),
            other => Err(Error::invalid(format!(
                "unknown mode `{other}` (expected exact, token, char3, knn-nearest or knn-vote)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizerConfig {
    pub mode: Mode,
    pub jaccard_threshold: f64,
    /// Neighbours consulted by the majority vote.
    pub vote_k: usize,
    pub k_max: usize,
}

impl Default for NormalizerConfig {
    fn default() -> Self {
        NormalizerConfig {
            mode: Mode::KnnNearest,
            jaccard_threshold: 0.7,
            vote_k: 5,
            k_max: 50,
        }
    }
}

impl NormalizerConfig {
    pub fn with_mode(mode: Mode) -> Self {
        NormalizerConfig {
            mode,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.jaccard_threshold) {
            return Err(Error::invalid(format!(
                "jaccard_threshold {} outside [0, 1]",
                self.jaccard_threshold
            )));
        }
        if self.vote_k == 0 {
            return Err(Error::invalid("vote_k must be at least 1"));
        }
        if self.k_max == 0 {
            return Err(Error::invalid("k_max must be at least 1"));
        }
        if self.vote_k > self.k_max {
            return Err(Error::invalid(format!(
                "vote_k {} exceeds k_max {}",
                self.vote_k, self.k_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub cui: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateList {
    pub query_id: String,
    pub ranked: Vec<Candidate>,
}

impl CandidateList {
    pub fn empty(query_id: impl Into<String>) -> Self {
        CandidateList {
            query_id: query_id.into(),
            ranked: Vec::new(),
        }
    }

    /// 1-based rank of `cui`, if present.
    pub fn rank_of(&self, cui: &str) -> Option<usize> {
        self.ranked.iter().position(|c| c.cui == cui).map(|p| p + 1)
    }
}

/// Sorts `(cui, score)` pairs by descending score then ascending cui and
/// keeps the first `k`.
pub(crate) fn rank_scores(mut scored: Vec<(String, f64)>, k: usize) -> Vec<Candidate> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored.into_iter().map(|(cui, score)| Candidate { cui, score }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(NormalizerConfig::default().validate().is_ok());
        let bad = NormalizerConfig {
            vote_k: 60,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = NormalizerConfig {
            jaccard_threshold: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn mode_round_trips_through_names() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
        }
    }

    #[test]
    fn ranking_ties_by_cui() {
        let r = rank_scores(vec![("C3".into(), 0.5), ("C1".into(), 0.5), ("C2".into(), 0.9)], 2);
        let cuis: Vec<_> = r.iter().map(|c| c.cui.as_str()).collect();
        assert_eq!(cuis, vec!["C2", "C1"]);
    }
}
