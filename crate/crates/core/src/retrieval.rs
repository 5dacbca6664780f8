//! Query-time entity activation: anchor selection, one-off semantic
//! expansion through the cluster hyperedges, then query-gated structural
//! propagation through the sentence hyperedges.

use serde::{Deserialize, Serialize};

use crate::corpus::EntityExtractor;
use crate::embedding::{cosine, Embedder, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::hypergraph::{Hypergraph, Incidence, SparseVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionConfig {
    /// Decay applied to the semantic expansion.
    pub gamma: f64,
    /// Structural propagation rounds.
    pub max_iterations: usize,
    /// Activations at or below this value are pruned from the frontier.
    pub epsilon: f64,
    /// Number of query-similar sentences that let activation through.
    pub gated_sentences: usize,
    /// Anchor nodes selected per query entity.
    pub anchors_per_entity: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            gamma: 0.1,
            max_iterations: 3,
            epsilon: 0.5,
            gated_sentences: 1,
            anchors_per_entity: 1,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "gamma must lie in [0, 1], got {}",
                self.gamma
            )));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        if self.gated_sentences == 0 {
            return Err(Error::Config("gated_sentences must be >= 1".into()));
        }
        if self.anchors_per_entity == 0 {
            return Err(Error::Config("anchors_per_entity must be >= 1".into()));
        }
        Ok(())
    }
}

/// Everything the diffusion needs to know about one question.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryContext {
    pub query_text: String,
    pub query_entities: Vec<String>,
    /// Embedding of the full question.
    pub query_vector: Vec<f64>,
    /// One row per query entity.
    pub entity_vectors: EmbeddingMatrix,
    /// Dot product of every corpus sentence embedding with `query_vector`.
    pub sentence_similarities: Vec<f64>,
}

impl QueryContext {
    pub fn build(
        question: &str,
        extractor: &dyn EntityExtractor,
        embedder: &dyn Embedder,
        sentence_vectors: &EmbeddingMatrix,
    ) -> Result<Self> {
        let query_entities = extractor
            .extract(question)
            .map_err(Error::QueryExtraction)?;
        let mut texts: Vec<&str> = vec![question];
        texts.extend(query_entities.iter().map(String::as_str));
        let embedded = embedder.embed(&texts)?;
        let query_vector = embedded.row(0).to_vec();
        let mut entity_vectors = EmbeddingMatrix::new(embedded.dim());
        for i in 1..embedded.len() {
            entity_vectors.push(embedded.row(i))?;
        }
        let sentence_similarities = if sentence_vectors.is_empty() {
            Vec::new()
        } else {
            if sentence_vectors.dim() != query_vector.len() {
                return Err(Error::DimensionMismatch {
                    expected: sentence_vectors.dim(),
                    actual: query_vector.len(),
                });
            }
            sentence_vectors.dot_all(&query_vector)
        };
        Ok(Self {
            query_text: question.to_string(),
            query_entities,
            query_vector,
            entity_vectors,
            sentence_similarities,
        })
    }
}

/// Seed activation: for each query entity the `m` most cosine-similar graph
/// entities, valued at that cosine (negatives clamped to 0, repeated hits
/// merged by max). Without query entities the question embedding itself is
/// used as the probe.
pub fn init_anchors(
    query: &QueryContext,
    entity_vectors: &EmbeddingMatrix,
    anchors_per_entity: usize,
) -> Result<SparseVector> {
    let n = entity_vectors.len();
    if n == 0 {
        return Ok(SparseVector::new(0));
    }
    let probes: Vec<&[f64]> = if query.entity_vectors.is_empty() {
        vec![query.query_vector.as_slice()]
    } else {
        query.entity_vectors.rows().collect()
    };
    let mut seed = vec![0.0f64; n];
    for probe in probes {
        let mut sims: Vec<(usize, f64)> = entity_vectors
            .rows()
            .enumerate()
            .map(|(i, row)| cosine(probe, row).map(|c| (i, c)))
            .collect::<Result<_>>()?;
        let by_similarity =
            |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
        let m = anchors_per_entity.min(sims.len());
        if m < sims.len() {
            sims.select_nth_unstable_by(m - 1, by_similarity);
            sims.truncate(m);
        }
        for (i, c) in sims {
            seed[i] = seed[i].max(c.max(0.0));
        }
    }
    Ok(SparseVector::from_dense(&seed))
}

/// `a_sem = gamma * H_sem H_sem^T a0`, and the first frontier `a0 + a_sem`.
pub fn semantic_expand(
    seed: &SparseVector,
    semantic: &Incidence,
    gamma: f64,
) -> Result<(SparseVector, SparseVector)> {
    let topics = semantic.project_to_edges(seed)?;
    let expanded = semantic.project_to_nodes(&topics)?.scale(gamma);
    let frontier = seed.add(&expanded)?;
    Ok((expanded, frontier))
}

/// Diagonal of the sentence gate: the `L` sentences most similar to the
/// question keep their (non-negative) similarity, everything else is 0.
pub fn gate_matrix(sentence_similarities: &[f64], gated_sentences: usize) -> SparseVector {
    let mut order: Vec<(usize, f64)> = sentence_similarities.iter().copied().enumerate().collect();
    let by_similarity =
        |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    let keep = gated_sentences.min(order.len());
    if keep == 0 {
        return SparseVector::new(sentence_similarities.len());
    }
    if keep < order.len() {
        order.select_nth_unstable_by(keep - 1, by_similarity);
        order.truncate(keep);
    }
    let pairs = order.into_iter().map(|(j, s)| (j, s.max(0.0)));
    SparseVector::from_pairs(sentence_similarities.len(), pairs)
        .expect("gate indices come from the similarity vector")
}

/// One entity -> sentence -> entity hop through the gated sentences.
pub fn structural_step(
    frontier: &SparseVector,
    structural: &Incidence,
    gate: &SparseVector,
) -> Result<SparseVector> {
    let sentence_potential = structural.project_to_edges(frontier)?;
    let gated = SparseVector::from_pairs(
        sentence_potential.dim(),
        gate.iter().map(|(j, g)| (j, g * sentence_potential.get(j))),
    )?;
    structural.project_to_nodes(&gated)
}

/// Keeps entries strictly above `epsilon`.
pub fn threshold_prune(x: &SparseVector, epsilon: f64) -> SparseVector {
    x.prune_above(epsilon)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationState {
    pub frontier: SparseVector,
    pub weights: SparseVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diffusion {
    pub anchors: SparseVector,
    pub semantic: SparseVector,
    pub gate: SparseVector,
    /// Accumulated entity weights after the last round.
    pub weights: SparseVector,
    /// State after each structural round that ran.
    pub iterations: Vec<IterationState>,
}

impl Diffusion {
    pub fn frontier_sizes(&self) -> Vec<usize> {
        self.iterations.iter().map(|s| s.frontier.nnz()).collect()
    }

    /// Entities with non-zero accumulated weight.
    pub fn activated(&self) -> impl Iterator<Item = usize> + '_ {
        self.weights.indices()
    }
}

/// Full two-phase activation for one query.
pub fn diffuse(
    query: &QueryContext,
    graph: &Hypergraph,
    entity_vectors: &EmbeddingMatrix,
    cfg: &DiffusionConfig,
) -> Result<Diffusion> {
    cfg.validate()?;
    let n = graph.n_entities();
    if entity_vectors.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: entity_vectors.len(),
        });
    }
    if query.sentence_similarities.len() != graph.n_sentences() {
        return Err(Error::DimensionMismatch {
            expected: graph.n_sentences(),
            actual: query.sentence_similarities.len(),
        });
    }
    let anchors = if n == 0 {
        SparseVector::new(0)
    } else {
        init_anchors(query, entity_vectors, cfg.anchors_per_entity)?
    };
    let (semantic, mut frontier) = semantic_expand(&anchors, &graph.semantic, cfg.gamma)?;
    let mut weights = frontier.clone();
    let gate = gate_matrix(&query.sentence_similarities, cfg.gated_sentences);
    let mut iterations = Vec::new();
    for _ in 0..cfg.max_iterations {
        if frontier.is_empty() {
            break;
        }
        let delta = structural_step(&frontier, &graph.structural, &gate)?;
        frontier = threshold_prune(&delta, cfg.epsilon);
        weights = weights.add(&frontier)?;
        iterations.push(IterationState {
            frontier: frontier.clone(),
            weights: weights.clone(),
        });
    }
    Ok(Diffusion {
        anchors,
        semantic,
        gate,
        weights,
        iterations,
    })
}
