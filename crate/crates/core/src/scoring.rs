//! Passage scoring and personalized PageRank re-ranking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypergraph::{SparseMatrix, SparseVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringConfig {
    /// Weight of the entity evidence term.
    pub lambda1: f64,
    /// Weight of the topic reward term.
    pub lambda2: f64,
    /// Restart probability of the random walk.
    pub alpha: f64,
    pub ppr_tolerance: f64,
    pub ppr_max_iterations: usize,
    pub top_k: usize,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.5,
            lambda2: 0.5,
            alpha: 0.5,
            ppr_tolerance: 1e-8,
            ppr_max_iterations: 100,
            top_k: 5,
        }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.ppr_tolerance > 0.0) {
            return Err(Error::Config("ppr_tolerance must be positive".into()));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be >= 1".into()));
        }
        if !self.lambda1.is_finite() || !self.lambda2.is_finite() {
            return Err(Error::Config("lambda weights must be finite".into()));
        }
        Ok(())
    }
}

/// Sum of `ln(1 + w(v))` over the passage's distinct entities.
pub fn evidence_score(passage_entities: &[usize], weights: &SparseVector) -> f64 {
    passage_entities
        .iter()
        .fold(0.0, |acc, &v| acc + weights.get(v).ln_1p())
}

/// Per-cluster topic mass: the semantic activation summed over the
/// cluster's members.
pub fn topic_scores(semantic: &SparseVector, h_sem: &SparseMatrix) -> Vec<f64> {
    let mut scores = vec![0.0; h_sem.n_cols()];
    for (v, a) in semantic.iter() {
        for (k, _) in h_sem.row_iter(v) {
            scores[k] += a;
        }
    }
    scores
}

/// `ln(1 + sum of topic mass)` over every cluster touched by the passage.
pub fn semantic_reward(passage_entities: &[usize], h_sem: &SparseMatrix, topics: &[f64]) -> f64 {
    let mut touched: Vec<usize> = passage_entities
        .iter()
        .flat_map(|&v| h_sem.row_iter(v).map(|(k, _)| k))
        .collect();
    touched.sort_unstable();
    touched.dedup();
    touched.iter().fold(0.0, |acc, &k| acc + topics[k]).ln_1p()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassageScore {
    pub doc_id: usize,
    pub global: f64,
    pub evidence: f64,
    pub semantic_reward: f64,
    pub combined: f64,
    pub ppr: f64,
}

pub fn combine(global: f64, evidence: f64, reward: f64, cfg: &ScoringConfig) -> f64 {
    global + cfg.lambda1 * evidence + cfg.lambda2 * reward
}

/// Entity-entity links induced by shared clusters, kept in factored form:
/// the weight between `i != j` is `sum_k H[i,k] H[j,k]`.
#[derive(Debug, Clone, PartialEq)]
struct CliqueLinks {
    h: SparseMatrix,
    h_t: SparseMatrix,
    self_weight: Vec<f64>,
    /// Row sums of the implied off-diagonal weight matrix.
    strength: Vec<f64>,
}

impl CliqueLinks {
    fn new(h: &SparseMatrix) -> Self {
        let col_totals = h.col_sums();
        let mut self_weight = vec![0.0; h.n_rows()];
        let mut strength = vec![0.0; h.n_rows()];
        for i in 0..h.n_rows() {
            let mut sq = 0.0;
            let mut cross = 0.0;
            for (k, v) in h.row_iter(i) {
                sq += v * v;
                cross += v * col_totals[k];
            }
            self_weight[i] = sq;
            strength[i] = (cross - sq).max(0.0);
        }
        Self {
            h: h.clone(),
            h_t: h.transpose(),
            self_weight,
            strength,
        }
    }

    /// `W x` for the off-diagonal weight matrix `W`.
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let per_cluster = self
            .h_t
            .mul_dense(x)
            .expect("shape checked at construction");
        let mut out = self
            .h
            .mul_dense(&per_cluster)
            .expect("shape checked at construction");
        for (o, (s, xi)) in out.iter_mut().zip(self.self_weight.iter().zip(x)) {
            *o -= s * xi;
        }
        out
    }

    fn weight(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        let (ci, vi) = self.h.row(i);
        let (cj, vj) = self.h.row(j);
        let (mut a, mut b, mut total) = (0, 0, 0.0);
        while a < ci.len() && b < cj.len() {
            match ci[a].cmp(&cj[b]) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    total += vi[a] * vj[b];
                    a += 1;
                    b += 1;
                }
            }
        }
        total
    }
}

/// Undirected weighted graph over entities followed by passages, plus the
/// restart distribution used by the walk.
#[derive(Debug, Clone, PartialEq)]
pub struct PprGraph {
    n_nodes: usize,
    adjacency: SparseMatrix,
    clique: Option<(usize, CliqueLinks)>,
    degree: Vec<f64>,
    restart: Vec<f64>,
}

impl PprGraph {
    /// Entity nodes `0..n_entities`, passage nodes after them. Passages link
    /// to the entities they contain with weight 1; entities sharing a
    /// semantic cluster are linked through `h_sem`.
    pub fn for_passages(
        n_entities: usize,
        passage_entities: &[Vec<usize>],
        h_sem: &SparseMatrix,
        combined: &[f64],
    ) -> Result<Self> {
        if combined.len() != passage_entities.len() {
            return Err(Error::DimensionMismatch {
                expected: passage_entities.len(),
                actual: combined.len(),
            });
        }
        if h_sem.n_rows() != n_entities {
            return Err(Error::DimensionMismatch {
                expected: n_entities,
                actual: h_sem.n_rows(),
            });
        }
        let n = n_entities + passage_entities.len();
        let mut triplets = Vec::new();
        for (p, ents) in passage_entities.iter().enumerate() {
            for &e in ents {
                triplets.push((e, n_entities + p, 1.0));
                triplets.push((n_entities + p, e, 1.0));
            }
        }
        let adjacency = SparseMatrix::from_triplets(n, n, triplets)?;
        let clique = (h_sem.nnz() > 0).then(|| (n_entities, CliqueLinks::new(h_sem)));

        let positive: Vec<f64> = combined.iter().map(|c| c.max(0.0)).collect();
        let total: f64 = positive.iter().sum();
        let mut restart = vec![0.0; n];
        if passage_entities.is_empty() {
            // nothing to restart onto
        } else if total > 0.0 {
            for (p, c) in positive.iter().enumerate() {
                restart[n_entities + p] = c / total;
            }
        } else {
            let u = 1.0 / passage_entities.len() as f64;
            restart[n_entities..].iter_mut().for_each(|r| *r = u);
        }
        Self::assemble(n, adjacency, clique, restart)
    }

    /// Generic graph from an undirected edge list; every `(u, v, w)` adds
    /// weight `w` in both directions.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)], restart: Vec<f64>) -> Result<Self> {
        let mut dense = vec![vec![0.0; n]; n];
        for &(u, v, w) in edges {
            if u >= n || v >= n {
                return Err(Error::Config(format!("edge ({u}, {v}) outside {n} nodes")));
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Config(format!(
                    "edge weight {w} must be finite and >= 0"
                )));
            }
            dense[u][v] += w;
            if u != v {
                dense[v][u] += w;
            }
        }
        let adjacency = SparseMatrix::from_dense(&dense)?;
        Self::assemble(n, adjacency, None, restart)
    }

    fn assemble(
        n_nodes: usize,
        adjacency: SparseMatrix,
        clique: Option<(usize, CliqueLinks)>,
        restart: Vec<f64>,
    ) -> Result<Self> {
        if restart.len() != n_nodes {
            return Err(Error::DimensionMismatch {
                expected: n_nodes,
                actual: restart.len(),
            });
        }
        let mut degree = adjacency.col_sums();
        if let Some((_, links)) = &clique {
            for (d, s) in degree.iter_mut().zip(&links.strength) {
                *d += s;
            }
        }
        Ok(Self {
            n_nodes,
            adjacency,
            clique,
            degree,
            restart,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn restart(&self) -> &[f64] {
        &self.restart
    }

    pub fn has_edges(&self) -> bool {
        self.degree.iter().any(|&d| d > 0.0)
    }

    fn is_dangling(&self, j: usize) -> bool {
        self.degree[j] <= 0.0
    }

    fn weight(&self, i: usize, j: usize) -> f64 {
        let mut w = self.adjacency.get(i, j);
        if let Some((n_ent, links)) = &self.clique {
            if i < *n_ent && j < *n_ent {
                w += links.weight(i, j);
            }
        }
        w
    }

    /// `M r`: column-normalized transition, dangling mass sent to the
    /// restart distribution.
    pub fn apply(&self, r: &[f64]) -> Vec<f64> {
        let mut dangling = 0.0;
        let scaled: Vec<f64> = r
            .iter()
            .enumerate()
            .map(|(j, &x)| {
                if self.is_dangling(j) {
                    dangling += x;
                    0.0
                } else {
                    x / self.degree[j]
                }
            })
            .collect();
        let mut out = self.adjacency.mul_dense(&scaled).expect("square adjacency");
        if let Some((n_ent, links)) = &self.clique {
            let linked = links.apply(&scaled[..*n_ent]);
            for (o, l) in out.iter_mut().zip(linked) {
                *o += l;
            }
        }
        if dangling != 0.0 {
            for (o, s) in out.iter_mut().zip(&self.restart) {
                *o += dangling * s;
            }
        }
        out
    }

    /// Column sums of the transition matrix, computed entry by entry.
    pub fn column_sums(&self) -> Vec<f64> {
        let restart_total: f64 = self.restart.iter().sum();
        let mut sums = vec![0.0; self.n_nodes];
        for (_, j, w) in self.adjacency.triplets() {
            if !self.is_dangling(j) {
                sums[j] += w / self.degree[j];
            }
        }
        if let Some((n_ent, links)) = &self.clique {
            for j in 0..*n_ent {
                if !self.is_dangling(j) {
                    sums[j] += links.strength[j] / self.degree[j];
                }
            }
        }
        for (j, s) in sums.iter_mut().enumerate() {
            if self.is_dangling(j) {
                *s = restart_total;
            }
        }
        sums
    }

    /// Dense transition matrix, row-major. Intended for small graphs.
    pub fn dense_transition(&self) -> Vec<Vec<f64>> {
        let n = self.n_nodes;
        let mut m = vec![vec![0.0; n]; n];
        for j in 0..n {
            if self.is_dangling(j) {
                for i in 0..n {
                    m[i][j] = self.restart[i];
                }
                continue;
            }
            for (i, row) in m.iter_mut().enumerate() {
                row[j] = self.weight(i, j) / self.degree[j];
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PprSettings {
    pub alpha: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Keep every iterate in the outcome.
    pub keep_history: bool,
}

impl From<&ScoringConfig> for PprSettings {
    fn from(cfg: &ScoringConfig) -> Self {
        Self {
            alpha: cfg.alpha,
            tolerance: cfg.ppr_tolerance,
            max_iterations: cfg.ppr_max_iterations,
            keep_history: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PprOutcome {
    pub scores: Vec<f64>,
    pub iterations: usize,
    /// L1 distance between the last two iterates.
    pub last_change: f64,
    pub converged: bool,
    pub history: Vec<Vec<f64>>,
}

const STOCHASTIC_SLACK: f64 = 1e-9;

/// Power iteration `r <- (1 - alpha) M r + alpha r0` started from `r0`,
/// stopping once the L1 change drops below the tolerance.
pub fn personalized_pagerank(graph: &PprGraph, settings: &PprSettings) -> Result<PprOutcome> {
    if !(settings.alpha > 0.0 && settings.alpha <= 1.0) {
        return Err(Error::Config(format!(
            "alpha must lie in (0, 1], got {}",
            settings.alpha
        )));
    }
    let restart_total: f64 = graph.restart.iter().sum();
    if graph.n_nodes > 0 && (restart_total - 1.0).abs() > STOCHASTIC_SLACK {
        return Err(Error::Config(format!(
            "restart distribution sums to {restart_total}"
        )));
    }
    for (column, sum) in graph.column_sums().into_iter().enumerate() {
        if (sum - 1.0).abs() > STOCHASTIC_SLACK {
            return Err(Error::NotStochastic { column, sum });
        }
    }
    let mut r = graph.restart.clone();
    let mut history = Vec::new();
    if settings.keep_history {
        history.push(r.clone());
    }
    let mut iterations = 0;
    let mut last_change = f64::INFINITY;
    let mut converged = graph.n_nodes == 0;
    while !converged && iterations < settings.max_iterations {
        let walked = graph.apply(&r);
        let next: Vec<f64> = walked
            .iter()
            .zip(&graph.restart)
            .map(|(m, r0)| (1.0 - settings.alpha) * m + settings.alpha * r0)
            .collect();
        last_change = next.iter().zip(&r).map(|(a, b)| (a - b).abs()).sum();
        r = next;
        iterations += 1;
        if settings.keep_history {
            history.push(r.clone());
        }
        converged = last_change < settings.tolerance;
    }
    if !converged {
        log::warn!(
            "personalized pagerank stopped after {iterations} iterations with change {last_change:e}"
        );
    }
    Ok(PprOutcome {
        scores: r,
        iterations,
        last_change,
        converged,
        history,
    })
}

/// Orders passages by walk score, then combined score, then doc id, and
/// keeps the first `k`.
pub fn rank_top_k(scores: &[PassageScore], k: usize) -> Vec<PassageScore> {
    let mut ranked = scores.to_vec();
    ranked.sort_by(|a, b| {
        b.ppr
            .total_cmp(&a.ppr)
            .then(b.combined.total_cmp(&a.combined))
            .then(a.doc_id.cmp(&b.doc_id))
    });
    ranked.truncate(k);
    ranked
}
