use std::cmp::Ordering;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::vectors::EmbeddingSpace;

use super::{rank_scores, Candidate, CandidateList, Mode, NormalizerConfig};

/// Exact cosine nearest-neighbour index. Vectors are L2-normalized at build
/// time; a zero vector stays zero and scores 0 against everything.
pub struct VectorIndex {
    dim: usize,
    ids: Vec<String>,
    cui_of: Vec<u32>,
    cuis: Vec<String>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub entry_id: String,
    pub cui: String,
    pub similarity: f64,
}

/// `v / |v|` in f64, components accumulated in order.
pub(crate) fn l2_normalized(v: &[f32]) -> Vec<f64> {
    let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![0.0; v.len()];
    }
    v.iter().map(|&x| f64::from(x) / norm).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl VectorIndex {
    pub fn build(space: &EmbeddingSpace) -> Result<Self> {
        let dim = space.dim();
        let mut cui_ids: HashMap<&str, u32> = HashMap::new();
        let mut cuis = Vec::new();
        let mut data = Vec::with_capacity(space.len() * dim);
        let mut ids = Vec::with_capacity(space.len());
        let mut cui_of = Vec::with_capacity(space.len());
        for e in space.entries() {
            if e.vector.len() != dim {
                return Err(Error::Dimension {
                    entry_id: e.entry_id.clone(),
                    expected: dim,
                    found: e.vector.len(),
                });
            }
            let next = cuis.len() as u32;
            let cid = *cui_ids.entry(e.cui.as_str()).or_insert_with(|| {
                cuis.push(e.cui.clone());
                next
            });
            ids.push(e.entry_id.clone());
            cui_of.push(cid);
            data.extend(l2_normalized(&e.vector));
        }
        Ok(VectorIndex {
            dim,
            ids,
            cui_of,
            cuis,
            data,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn similarities(&self, query: &[f32]) -> Result<Vec<f64>> {
        if query.len() != self.dim {
            return Err(Error::Dimension {
                entry_id: "<query>".into(),
                expected: self.dim,
                found: query.len(),
            });
        }
        let q = l2_normalized(query);
        Ok(self.data.chunks_exact(self.dim.max(1)).map(|v| dot(v, &q)).collect())
    }

    fn order(&self, sims: &[f64], a: usize, b: usize) -> Ordering {
        sims[b].total_cmp(&sims[a]).then_with(|| self.ids[a].cmp(&self.ids[b]))
    }

    /// The `k` most similar entries, by descending similarity then ascending
    /// entry id.
    pub fn search(&self, query: &[f32], k: usize) -> Result<Vec<Neighbor>> {
        let sims = self.similarities(query)?;
        let mut idx: Vec<usize> = (0..sims.len()).collect();
        let k = k.min(idx.len());
        if k == 0 {
            return Ok(Vec::new());
        }
        if k < idx.len() {
            idx.select_nth_unstable_by(k - 1, |&a, &b| self.order(&sims, a, b));
            idx.truncate(k);
        }
        idx.sort_by(|&a, &b| self.order(&sims, a, b));
        Ok(idx
            .into_iter()
            .map(|i| Neighbor {
                entry_id: self.ids[i].clone(),
                cui: self.cuis[self.cui_of[i] as usize].clone(),
                similarity: sims[i],
            })
            .collect())
    }

    /// Best similarity per cui over every entry.
    fn best_per_cui(&self, sims: &[f64]) -> Vec<f64> {
        let mut best = vec![f64::NEG_INFINITY; self.cuis.len()];
        for (i, &s) in sims.iter().enumerate() {
            let c = self.cui_of[i] as usize;
            if s > best[c] {
                best[c] = s;
            }
        }
        best
    }
}

/// Nearest-neighbour normalization.
///
/// `knn-nearest` ranks cuis by their best similarity, deduplicating before
/// truncating to `k_max`. `knn-vote` takes the `vote_k` nearest entries and
/// ranks cuis by vote count, then best similarity, then cui; the remaining
/// positions are filled by similarity over un-voted cuis. Vote scores are the
/// vote fraction, fill-ins score 0.
pub fn normalize_knn(
    query_id: &str,
    query: &[f32],
    index: &VectorIndex,
    cfg: &NormalizerConfig,
) -> Result<CandidateList> {
    let sims = index.similarities(query)?;
    let best = index.best_per_cui(&sims);
    let by_similarity = |skip: &dyn Fn(usize) -> bool| -> Vec<(String, f64)> {
        best.iter()
            .enumerate()
            .filter(|&(c, &s)| s.is_finite() && !skip(c))
            .map(|(c, &s)| (index.cuis[c].clone(), s))
            .collect()
    };

    let ranked = match cfg.mode {
        Mode::KnnNearest => rank_scores(by_similarity(&|_| false), cfg.k_max),
        Mode::KnnVote => {
            let neighbors = index.search(query, cfg.vote_k)?;
            let mut votes: HashMap<&str, (usize, f64)> = HashMap::new();
            for n in &neighbors {
                let e = votes.entry(n.cui.as_str()).or_insert((0, f64::NEG_INFINITY));
                e.0 += 1;
                if n.similarity > e.1 {
                    e.1 = n.similarity;
                }
            }
            let mut voted: Vec<(&str, usize, f64)> = votes.iter().map(|(c, &(n, s))| (*c, n, s)).collect();
            voted.sort_by(|a, b| b.1.cmp(&a.1).then(b.2.total_cmp(&a.2)).then_with(|| a.0.cmp(b.0)));
            let mut ranked: Vec<Candidate> = voted
                .iter()
                .take(cfg.k_max)
                .map(|&(cui, n, _)| Candidate {
                    cui: cui.to_string(),
                    score: n as f64 / cfg.vote_k as f64,
                })
                .collect();
            let room = cfg.k_max.saturating_sub(ranked.len());
            if room > 0 {
                let fill = by_similarity(&|c| votes.contains_key(index.cuis[c].as_str()));
                ranked.extend(rank_scores(fill, room).into_iter().map(|c| Candidate { score: 0.0, ..c }));
            }
            ranked
        }
        m => return Err(Error::invalid(format!("mode {m} needs a string index"))),
    };
    Ok(CandidateList {
        query_id: query_id.to_string(),
        ranked,
    })
}
