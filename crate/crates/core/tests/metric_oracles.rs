use proptest::prelude::*;
use rand::Rng;
use synthmention::der::{tokenize, Label, TagSequence};
use synthmention::fixtures::rng;
use synthmention::metrics::{accuracy_at_k, entity_prf, mann_whitney_u, TestMethod, ALPHA};
use synthmention::normalize::{Candidate, CandidateList};

/// Quadratic reference matcher: collect D-runs by scanning, then compare
/// every predicted entity against every gold entity.
fn reference_prf(gold: &[TagSequence], pred: &[TagSequence]) -> (usize, usize, usize) {
    fn runs(s: &TagSequence) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < s.labels.len() {
            if s.labels[i] == Label::D {
                let start = i;
                while i < s.labels.len() && s.labels[i] == Label::D {
                    i += 1;
                }
                out.push((s.doc_id.clone(), start, i));
            } else {
                i += 1;
            }
        }
        out
    }
    let g: Vec<_> = gold.iter().flat_map(runs).collect();
    let p: Vec<_> = pred.iter().flat_map(runs).collect();
    let tp = p.iter().filter(|pe| g.iter().any(|ge| ge == *pe)).count();
    (tp, p.len() - tp, g.len() - tp)
}

fn random_seq(r: &mut impl Rng, id: &str, len: usize) -> TagSequence {
    TagSequence {
        doc_id: id.to_string(),
        tokens: tokenize(&vec!["w"; len].join(" ")),
        labels: (0..len).map(|_| if r.random_bool(0.4) { Label::D } else { Label::O }).collect(),
    }
}

#[test]
fn entity_prf_matches_reference_on_random_sequences() {
    let mut r = rng(2024);
    let gold: Vec<TagSequence> = (0..200)
        .map(|i| {
            let len = r.random_range(0..30);
            random_seq(&mut r, &format!("d{i}"), len)
        })
        .collect();
    let pred: Vec<TagSequence> = gold
        .iter()
        .map(|g| random_seq(&mut r, &g.doc_id, g.labels.len()))
        .collect();
    let got = entity_prf(&gold, &pred).unwrap();
    let (tp, fp, fn_) = reference_prf(&gold, &pred);
    assert_eq!((got.tp, got.fp, got.fn_), (tp, fp, fn_));
    assert_eq!(got.precision, tp as f64 / (tp + fp) as f64);
    assert_eq!(got.recall, tp as f64 / (tp + fn_) as f64);
}

/// Two-sided exact p by listing every way to assign ranks to the first
/// sample: twice the share of assignments with U_a at most `u`.
fn enumerated_p(n: usize, m: usize, u: f64) -> f64 {
    let total = n + m;
    let (mut lower, mut all) = (0u64, 0u64);
    for mask in 0u32..(1 << total) {
        if mask.count_ones() as usize != n {
            continue;
        }
        all += 1;
        let rank_sum: usize = (0..total).filter(|i| mask & (1 << i) != 0).map(|i| i + 1).sum();
        if rank_sum as f64 - (n * (n + 1)) as f64 / 2.0 <= u {
            lower += 1;
        }
    }
    (2.0 * lower as f64 / all as f64).min(1.0)
}

#[test]
fn exact_p_values_match_enumeration() {
    let mut r = rng(99);
    for n in 1..=6 {
        for m in 1..=6 {
            for _ in 0..5 {
                // Distinct values shuffled into two samples.
                let mut pool: Vec<f64> = (0..n + m).map(|i| i as f64 + r.random::<f64>() * 0.5).collect();
                for i in (1..pool.len()).rev() {
                    pool.swap(i, r.random_range(0..=i));
                }
                let (a, b) = pool.split_at(n);
                let res = mann_whitney_u(a, b, ALPHA).unwrap();
                assert_eq!(res.method, TestMethod::Exact);
                let want = enumerated_p(n, m, res.u_statistic);
                assert!((res.p_value - want).abs() < 1e-12, "n={n} m={m} u={} {} vs {want}", res.u_statistic, res.p_value);
            }
        }
    }
}

#[test]
fn published_small_cases() {
    let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], ALPHA).unwrap();
    assert!((r.p_value - 0.1).abs() < 1e-12);
    assert!((r.p_value - enumerated_p(3, 3, 0.0)).abs() < 1e-12);
    let r = mann_whitney_u(&[10.0, 11.0, 12.0, 13.0, 14.0], &[0.0, 1.0, 2.0, 3.0, 4.0], ALPHA).unwrap();
    assert!((r.p_value - 2.0 / 252.0).abs() < 1e-12);
    assert!(r.significant);
}

#[test]
fn exact_and_normal_agree_for_eight_by_eight() {
    let mut r = rng(5);
    for _ in 0..50 {
        let pool: Vec<f64> = (0..16).map(|_| r.random::<f64>()).collect();
        let shift: f64 = r.random_range(0.0..0.6);
        let a: Vec<f64> = pool[..8].to_vec();
        let b: Vec<f64> = pool[8..].iter().map(|x| x + shift).collect();
        let exact = mann_whitney_u(&a, &b, ALPHA).unwrap();
        assert_eq!(exact.method, TestMethod::Exact);
        // Tie-free normal approximation with continuity correction.
        let (n, m) = (8.0f64, 8.0f64);
        let mean = n * m / 2.0;
        let sd = (n * m * (n + m + 1.0) / 12.0).sqrt();
        let z = ((exact.u_statistic - mean).abs() - 0.5).max(0.0) / sd;
        let normal = statrs::function::erf::erfc(z / std::f64::consts::SQRT_2).min(1.0);
        assert!((exact.p_value - normal).abs() < 0.02, "{} vs {normal}", exact.p_value);
    }
}

fn candidate_list(qid: &str, cuis: &[String]) -> CandidateList {
    CandidateList {
        query_id: qid.to_string(),
        ranked: cuis.iter().map(|c| Candidate { cui: c.clone(), score: 0.5 }).collect(),
    }
}

proptest! {
    #[test]
    fn entity_prf_swap_symmetry(seed in any::<u64>()) {
        let mut r = rng(seed);
        let gold: Vec<_> = (0..5).map(|i| random_seq(&mut r, &format!("d{i}"), 12)).collect();
        let pred: Vec<_> = (0..5).map(|i| random_seq(&mut r, &format!("d{i}"), 12)).collect();
        let a = entity_prf(&gold, &pred).unwrap();
        let b = entity_prf(&pred, &gold).unwrap();
        prop_assert_eq!(a.precision, b.recall);
        prop_assert_eq!(a.recall, b.precision);
        prop_assert!((a.f1 - b.f1).abs() < 1e-15);
    }

    #[test]
    fn mann_whitney_symmetry(a in prop::collection::vec(-100i32..100, 1..12), b in prop::collection::vec(-100i32..100, 1..12)) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let x = mann_whitney_u(&a, &b, ALPHA).unwrap();
        let y = mann_whitney_u(&b, &a, ALPHA).unwrap();
        prop_assert_eq!(x.u_statistic, y.u_statistic);
        prop_assert!((x.p_value - y.p_value).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&x.p_value));
    }

    #[test]
    fn accuracy_monotone_and_saturates(lists in prop::collection::vec((0usize..6, prop::collection::vec(0usize..6, 0..8)), 1..20)) {
        let gold: Vec<(String, String)> = lists.iter().enumerate().map(|(i, (g, _))| (format!("q{i}"), format!("C{g}"))).collect();
        let preds: Vec<CandidateList> = lists
            .iter()
            .enumerate()
            .map(|(i, (_, cands))| {
                let mut seen = Vec::new();
                for c in cands {
                    let c = format!("C{c}");
                    if !seen.contains(&c) { seen.push(c); }
                }
                candidate_list(&format!("q{i}"), &seen)
            })
            .collect();
        let ks: Vec<usize> = (1..=10).collect();
        let acc = accuracy_at_k(&gold, &preds, &ks).unwrap();
        prop_assert!(acc.windows(2).all(|w| w[0].value <= w[1].value));
        let anywhere = gold.iter().zip(&preds).filter(|((_, c), p)| p.rank_of(c).is_some()).count();
        prop_assert_eq!(acc.last().unwrap().hits, anywhere);
    }
}
