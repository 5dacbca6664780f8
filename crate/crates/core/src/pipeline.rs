//! Online query path: activation, passage scoring, random-walk re-ranking,
//! prompt assembly and the optional generator call.

use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{EngineConfig, GeneratorConfig};
use crate::corpus::{extractor_from_config, EntityExtractor};
use crate::embedding::{dot, embedder_from_config, Embedder};
use crate::error::{Error, Result};
use crate::http::JsonClient;
use crate::hypergraph::Hypergraph;
use crate::index::Index;
use crate::retrieval::{diffuse, Diffusion, DiffusionConfig, QueryContext};
use crate::scoring::{
    combine, evidence_score, personalized_pagerank, rank_top_k, semantic_reward, topic_scores,
    PassageScore, PprGraph, PprOutcome, PprSettings, ScoringConfig,
};

pub const PROMPT_TEMPLATE_VERSION: u32 = 1;

const PROMPT_PREAMBLE: &str =
    "Answer the question using the passages below. Reply with a short answer.\n\n";

/// Fills the fixed prompt template. Passages are numbered from 1 in rank
/// order; with no passages only the question block remains.
pub fn assemble_prompt(question: &str, passages: &[(Option<&str>, &str)]) -> String {
    let mut prompt = String::new();
    if !passages.is_empty() {
        prompt.push_str(PROMPT_PREAMBLE);
        for (i, (title, text)) in passages.iter().enumerate() {
            match title {
                Some(t) => prompt.push_str(&format!("Passage {}: {t}\n{text}\n\n", i + 1)),
                None => prompt.push_str(&format!("Passage {}:\n{text}\n\n", i + 1)),
            }
        }
    }
    prompt.push_str(&format!("Question: {question}\nAnswer:"));
    prompt
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct GenerateResponse {
    answer: String,
}

#[derive(Debug, Clone)]
pub struct GeneratorClient {
    endpoint: String,
    client: JsonClient,
}

impl GeneratorClient {
    pub fn from_config(cfg: &GeneratorConfig) -> Option<Self> {
        let endpoint = cfg.endpoint.clone()?;
        Some(Self {
            endpoint,
            client: JsonClient::new(Duration::from_secs(cfg.timeout_secs())),
        })
    }

    pub fn generate(&self, prompt: &str) -> Result<String> {
        self.client
            .post::<_, GenerateResponse>(&self.endpoint, &GenerateRequest { prompt })
            .map(|r| r.answer)
            .map_err(Error::Generator)
    }
}

/// Retrieval-time settings. Extraction and embedding always follow the
/// index's own build configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryOptions {
    pub diffusion: DiffusionConfig,
    pub scoring: ScoringConfig,
    pub semantic_hyperedges: bool,
    pub generator: GeneratorConfig,
}

impl From<&EngineConfig> for QueryOptions {
    fn from(cfg: &EngineConfig) -> Self {
        Self {
            diffusion: cfg.diffusion.clone(),
            scoring: cfg.scoring.clone(),
            semantic_hyperedges: cfg.semantic_hyperedges,
            generator: cfg.generator.clone(),
        }
    }
}

/// One passage of a query result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPassage {
    pub doc_id: String,
    pub title: Option<String>,
    pub global: f64,
    pub evidence: f64,
    pub semantic_reward: f64,
    pub combined: f64,
    pub ppr: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub question: String,
    pub passages: Vec<RankedPassage>,
    pub prompt: String,
    pub prompt_template_version: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator_error: Option<String>,
}

/// Intermediate products of one retrieval, for inspection and tests.
#[derive(Debug, Clone)]
pub struct Retrieval {
    pub query: QueryContext,
    pub diffusion: Diffusion,
    /// Every passage, indexed by internal doc id.
    pub scores: Vec<PassageScore>,
    /// `None` when the passage graph had no edges.
    pub ppr: Option<PprOutcome>,
    pub ranked: Vec<PassageScore>,
}

/// Query engine bound to one index. Holds no mutable state, so a single
/// instance can serve queries from several threads.
pub struct Retriever<'a> {
    index: &'a Index,
    options: QueryOptions,
    extractor: Box<dyn EntityExtractor>,
    embedder: Box<dyn Embedder>,
    stripped: Option<Hypergraph>,
    generator: Option<GeneratorClient>,
}

impl<'a> Retriever<'a> {
    pub fn new(index: &'a Index, options: QueryOptions) -> Result<Self> {
        options.diffusion.validate()?;
        options.scoring.validate()?;
        let extractor = extractor_from_config(&index.config.extractor)?;
        let embedder = embedder_from_config(&index.config.embedding)?;
        let stripped = (!options.semantic_hyperedges).then(|| index.graph.without_semantic());
        let generator = GeneratorClient::from_config(&options.generator);
        Ok(Self {
            index,
            options,
            extractor,
            embedder,
            stripped,
            generator,
        })
    }

    pub fn options(&self) -> &QueryOptions {
        &self.options
    }

    fn graph(&self) -> &Hypergraph {
        self.stripped.as_ref().unwrap_or(&self.index.graph)
    }

    pub fn retrieve(&self, question: &str) -> Result<Retrieval> {
        let index = self.index;
        let graph = self.graph();
        let query = QueryContext::build(
            question,
            self.extractor.as_ref(),
            self.embedder.as_ref(),
            &index.sentence_vectors,
        )?;
        let diffusion = diffuse(
            &query,
            graph,
            &index.entity_vectors,
            &self.options.diffusion,
        )?;
        let h_sem = &graph.semantic.matrix;
        let topics = topic_scores(&diffusion.semantic, h_sem);
        let cfg = &self.options.scoring;

        let mut scores: Vec<PassageScore> = (0..index.n_documents())
            .into_par_iter()
            .map(|d| {
                let entities = &index.passage_entities[d];
                let global = dot(&query.query_vector, index.passage_vectors.row(d));
                let evidence = evidence_score(entities, &diffusion.weights);
                let reward = semantic_reward(entities, h_sem, &topics);
                PassageScore {
                    doc_id: d,
                    global,
                    evidence,
                    semantic_reward: reward,
                    combined: combine(global, evidence, reward, cfg),
                    ppr: 0.0,
                }
            })
            .collect();

        let mut ppr = None;
        if !scores.is_empty() {
            let combined: Vec<f64> = scores.iter().map(|s| s.combined).collect();
            let walk_graph = PprGraph::for_passages(
                graph.n_entities(),
                &index.passage_entities,
                h_sem,
                &combined,
            )?;
            let offset = graph.n_entities();
            let stationary = if walk_graph.has_edges() {
                let outcome = personalized_pagerank(&walk_graph, &PprSettings::from(cfg))?;
                let v = outcome.scores[offset..].to_vec();
                ppr = Some(outcome);
                v
            } else {
                // without edges the walk's fixed point is the restart vector
                walk_graph.restart()[offset..].to_vec()
            };
            for (s, r) in scores.iter_mut().zip(stationary) {
                s.ppr = r;
            }
        }
        let ranked = rank_top_k(&scores, cfg.top_k);
        Ok(Retrieval {
            query,
            diffusion,
            scores,
            ppr,
            ranked,
        })
    }

    /// Retrieval plus prompt assembly and, when configured, generation.
    /// A failing generator leaves the retrieval payload intact and records
    /// the failure in `generator_error`.
    pub fn answer(&self, question: &str) -> Result<QueryResult> {
        let retrieval = self.retrieve(question)?;
        let docs = &self.index.corpus.documents;
        let passages: Vec<RankedPassage> = retrieval
            .ranked
            .iter()
            .enumerate()
            .map(|(i, s)| RankedPassage {
                doc_id: docs[s.doc_id].external_id.clone(),
                title: docs[s.doc_id].title.clone(),
                global: s.global,
                evidence: s.evidence,
                semantic_reward: s.semantic_reward,
                combined: s.combined,
                ppr: s.ppr,
                rank: i + 1,
            })
            .collect();
        let context: Vec<(Option<&str>, &str)> = retrieval
            .ranked
            .iter()
            .map(|s| {
                (
                    docs[s.doc_id].title.as_deref(),
                    docs[s.doc_id].text.as_str(),
                )
            })
            .collect();
        let prompt = assemble_prompt(question, &context);
        let (answer, generator_error) = match &self.generator {
            None => (None, None),
            Some(g) => match g.generate(&prompt) {
                Ok(a) => (Some(a), None),
                Err(e) => {
                    log::warn!("{e}");
                    (None, Some(e.to_string()))
                }
            },
        };
        Ok(QueryResult {
            question: question.to_string(),
            passages,
            prompt,
            prompt_template_version: PROMPT_TEMPLATE_VERSION,
            answer,
            generator_error,
        })
    }
}

/// One-shot convenience wrapper around [`Retriever::answer`].
pub fn answer_query(index: &Index, question: &str, options: &QueryOptions) -> Result<QueryResult> {
    Retriever::new(index, options.clone())?.answer(question)
}
