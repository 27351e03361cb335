//! Similar-user retrieval by Euclidean distance, scored against
//! co-interaction ground truth with Recall@K and NDCG@K.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::EmbeddingTable;
use crate::encoder::EncodingMatrix;
use crate::error::{Error, Result};
use crate::graph::{build_ground_truth, GroundTruthRanking, InteractionGraph};
use crate::par::{self, Exec};

/// Cut-offs reported by default.
pub const DEFAULT_KS: [usize; 4] = [5, 20, 50, 100];

/// Anything that exposes one dense vector per user.
pub trait RowVectors: Sync {
    fn rows(&self) -> usize;
    fn row(&self, r: usize) -> &[f64];
}

impl RowVectors for EncodingMatrix {
    fn rows(&self) -> usize {
        EncodingMatrix::rows(self)
    }

    fn row(&self, r: usize) -> &[f64] {
        EncodingMatrix::row(self, r)
    }
}

impl RowVectors for EmbeddingTable {
    fn rows(&self) -> usize {
        EmbeddingTable::rows(self)
    }

    fn row(&self, r: usize) -> &[f64] {
        EmbeddingTable::row(self, r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub query: usize,
    /// `(user, distance)`, nearest first, ties by ascending user.
    pub ranked: Vec<(usize, f64)>,
}

impl RetrievalResult {
    pub fn users(&self) -> impl Iterator<Item = usize> + '_ {
        self.ranked.iter().map(|&(u, _)| u)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exact top-`k` neighbours of `query` among all other rows.
pub fn rank_by_distance<V: RowVectors + ?Sized>(
    vectors: &V,
    query: usize,
    k: usize,
) -> Result<RetrievalResult> {
    let n = vectors.rows();
    if query >= n {
        return Err(Error::OutOfRange {
            what: "query user",
            index: query,
            bound: n,
        });
    }
    if k == 0 {
        return Err(Error::Invalid("K must be at least 1".into()));
    }
    let q = vectors.row(query);
    let mut cand: Vec<(f64, usize)> = (0..n)
        .filter(|&v| v != query)
        .map(|v| (sq_dist(q, vectors.row(v)), v))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    let k = k.min(cand.len());
    if k < cand.len() {
        cand.select_nth_unstable_by(k, cmp);
        cand.truncate(k);
    }
    cand.sort_unstable_by(cmp);
    Ok(RetrievalResult {
        query,
        ranked: cand.into_iter().map(|(d, v)| (v, d.sqrt())).collect(),
    })
}

fn truth_top_k(truth: &GroundTruthRanking, k: usize) -> HashSet<usize> {
    truth.users().take(k).collect()
}

/// `|top-K(predicted) ∩ top-K(truth)| / min(K, |truth|)`; `None` when the
/// ground truth is empty.
pub fn recall_at_k(predicted: &RetrievalResult, truth: &GroundTruthRanking, k: usize) -> Option<f64> {
    if truth.is_empty() || k == 0 {
        return None;
    }
    let relevant = truth_top_k(truth, k);
    let hits = predicted.users().take(k).filter(|u| relevant.contains(u)).count();
    Some(hits as f64 / k.min(truth.len()) as f64)
}

/// Binary-relevance NDCG@K: a retrieved user is relevant iff it is in the
/// ground truth's top `K`. `None` when the ground truth is empty.
pub fn ndcg_at_k(predicted: &RetrievalResult, truth: &GroundTruthRanking, k: usize) -> Option<f64> {
    if truth.is_empty() || k == 0 {
        return None;
    }
    let relevant = truth_top_k(truth, k);
    let discount = |rank: usize| 1.0 / ((rank + 2) as f64).log2();
    let dcg: f64 = predicted
        .users()
        .take(k)
        .enumerate()
        .filter(|(_, u)| relevant.contains(u))
        .map(|(r, _)| discount(r))
        .sum();
    let idcg: f64 = (0..k.min(truth.len())).map(discount).sum();
    Some(dcg / idcg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricAtK {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub metrics: Vec<MetricAtK>,
    /// Queries with non-empty ground truth, i.e. the averaging population.
    pub num_queries: usize,
    /// Queries sampled, including those skipped for empty ground truth.
    pub num_sampled: usize,
}

impl EvalReport {
    pub fn at(&self, k: usize) -> Option<&MetricAtK> {
        self.metrics.iter().find(|m| m.k == k)
    }

    /// One `metric@K=value` line per metric, plus the query count.
    /// `prefix` namespaces the keys (e.g. `baseline.`).
    pub fn to_kv_lines(&self, prefix: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{prefix}queries={}", self.num_queries);
        for m in &self.metrics {
            let _ = writeln!(out, "{prefix}recall@{}={:.6}", m.k, m.recall);
            let _ = writeln!(out, "{prefix}ndcg@{}={:.6}", m.k, m.ndcg);
        }
        out
    }

    pub fn to_table(&self, title: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{title} ({} queries)", self.num_queries);
        let _ = writeln!(out, "{:>6}  {:>9}  {:>9}", "K", "Recall@K", "NDCG@K");
        for m in &self.metrics {
            let _ = writeln!(out, "{:>6}  {:>9.4}  {:>9.4}", m.k, m.recall, m.ndcg);
        }
        out
    }
}

/// `count` distinct users drawn uniformly with a seeded stream, ascending.
/// All users when `count >= num_users`.
pub fn sample_queries(num_users: usize, count: usize, seed: u64) -> Vec<usize> {
    if count >= num_users {
        return (0..num_users).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = rand::seq::index::sample(&mut rng, num_users, count).into_vec();
    q.sort_unstable();
    q
}

/// Averages Recall@K and NDCG@K over sampled query users whose ground
/// truth is non-empty. Ground truth depth is the largest K.
pub fn evaluate<V: RowVectors + ?Sized>(
    vectors: &V,
    graph: &InteractionGraph,
    ks: &[usize],
    num_queries: usize,
    seed: u64,
    exec: Exec,
) -> Result<EvalReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Invalid("K list must be non-empty with every K >= 1".into()));
    }
    if vectors.rows() != graph.num_users() {
        return Err(Error::Dimension(format!(
            "{} encoded rows for a graph with {} users",
            vectors.rows(),
            graph.num_users()
        )));
    }
    let depth = *ks.iter().max().expect("non-empty");
    let queries = sample_queries(graph.num_users(), num_queries, seed);
    let per_query = par::map_range(queries.len(), exec, |n| -> Result<Option<Vec<(f64, f64)>>> {
        let q = queries[n];
        let truth = build_ground_truth(graph, q, depth)?;
        if truth.is_empty() {
            return Ok(None);
        }
        let pred = rank_by_distance(vectors, q, depth)?;
        Ok(Some(
            ks.iter()
                .map(|&k| {
                    (
                        recall_at_k(&pred, &truth, k).expect("non-empty truth"),
                        ndcg_at_k(&pred, &truth, k).expect("non-empty truth"),
                    )
                })
                .collect(),
        ))
    });
    let mut sums = vec![(0.0, 0.0); ks.len()];
    let mut valid = 0usize;
    for row in per_query {
        if let Some(vals) = row? {
            valid += 1;
            for (s, v) in sums.iter_mut().zip(vals) {
                s.0 += v.0;
                s.1 += v.1;
            }
        }
    }
    if valid == 0 {
        return Err(Error::Invalid("no sampled query has a non-empty ground truth".into()));
    }
    let metrics = ks
        .iter()
        .zip(sums)
        .map(|(&k, (r, n))| MetricAtK {
            k,
            recall: r / valid as f64,
            ndcg: n / valid as f64,
        })
        .collect();
    Ok(EvalReport {
        metrics,
        num_queries: valid,
        num_sampled: queries.len(),
    })
}
