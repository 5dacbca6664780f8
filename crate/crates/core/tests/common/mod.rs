#![allow(dead_code)]

pub mod corpora;
pub mod mock;
pub mod oracle;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use hyperrag::embedding::EmbeddingMatrix;
use hyperrag::hypergraph::{Hypergraph, SparseMatrix};
use hyperrag::retrieval::{DiffusionConfig, QueryContext};

pub fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Random diffusion problem in dense form.
#[derive(Debug, Clone)]
pub struct DiffusionFixture {
    pub h_str: Vec<Vec<f64>>,
    pub h_sem: Vec<Vec<f64>>,
    pub entity_vectors: Vec<Vec<f64>>,
    pub query_entities: Vec<Vec<f64>>,
    pub query_vector: Vec<f64>,
    pub sentence_sims: Vec<f64>,
    pub cfg: DiffusionConfig,
}

impl DiffusionFixture {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let dim = 8;
        let v = rng.gen_range(1..=100);
        let s = rng.gen_range(1..=100);
        let k = rng.gen_range(0..=10);
        let mut h_str = vec![vec![0.0; s]; v];
        for j in 0..s {
            let size = rng.gen_range(1..=v.min(6));
            for _ in 0..size {
                h_str[rng.gen_range(0..v)][j] = 1.0;
            }
        }
        let density = rng.gen_range(0.05..0.5);
        let h_sem: Vec<Vec<f64>> = (0..v)
            .map(|_| {
                (0..k)
                    .map(|_| {
                        if rng.gen_bool(density) {
                            (-rng.gen_range(0.0..4.0f64)).exp()
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let entity_vectors = (0..v).map(|_| unit_vector(rng, dim)).collect();
        let n_query = rng.gen_range(0..=3);
        let query_entities = (0..n_query).map(|_| unit_vector(rng, dim)).collect();
        let query_vector = unit_vector(rng, dim);
        let sentence_sims = (0..s).map(|_| rng.gen_range(-0.3..1.0)).collect();
        let cfg = DiffusionConfig {
            gamma: if rng.gen_bool(0.5) {
                0.1
            } else {
                rng.gen_range(0.0..1.0)
            },
            max_iterations: rng.gen_range(0..=5),
            epsilon: rng.gen_range(0.0..1.2),
            gated_sentences: rng.gen_range(1..=6),
            anchors_per_entity: rng.gen_range(1..=3),
        };
        Self {
            h_str,
            h_sem,
            entity_vectors,
            query_entities,
            query_vector,
            sentence_sims,
            cfg,
        }
    }

    pub fn graph(&self) -> Hypergraph {
        let k = self.h_sem.first().map_or(0, Vec::len);
        let h_sem = if k == 0 {
            SparseMatrix::zeros(self.h_str.len(), 0)
        } else {
            SparseMatrix::from_dense(&self.h_sem).unwrap()
        };
        Hypergraph::new(SparseMatrix::from_dense(&self.h_str).unwrap(), h_sem).unwrap()
    }

    pub fn entity_matrix(&self) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(8, self.entity_vectors.clone()).unwrap()
    }

    pub fn query(&self) -> QueryContext {
        QueryContext {
            query_text: String::new(),
            query_entities: self.query_entities.iter().map(|_| String::new()).collect(),
            query_vector: self.query_vector.clone(),
            entity_vectors: EmbeddingMatrix::from_rows(8, self.query_entities.clone()).unwrap(),
            sentence_similarities: self.sentence_sims.clone(),
        }
    }
}

/// Hand-labelled (prediction, answers, expected) triples for the SubEM
/// metric.
pub const SUBEM_CASES: &[(&str, &[&str], bool)] = &[
    ("Phoolwari", &["Phoolwari (1946)"], true),
    ("Aas Ka Panchhi", &["Phoolwari (1946)"], false),
    ("1946", &["Phoolwari (1946)"], false),
    ("The answer is Paris.", &["Paris"], true),
    ("paris", &["PARIS"], true),
    ("London", &["Paris"], false),
    ("", &["Paris"], false),
    ("Marie  Curie", &["marie curie"], true),
    ("Curie", &["Marie Curie"], false),
    (
        "She was born in Harrowgate!",
        &["Harrogate", "Harrowgate"],
        true,
    ),
];
