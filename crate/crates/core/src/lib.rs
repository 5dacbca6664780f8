//! Retrieval engine over an entity hypergraph with two kinds of hyperedges:
//! sentences (entities mentioned together) and embedding-space clusters
//! (entities that are semantically close). Queries activate entities,
//! spread that activation through both edge types, score passages and
//! re-rank them with a personalized random walk.

pub mod cli;
pub mod clustering;
pub mod config;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod eval;
mod http;
pub mod hypergraph;
pub mod index;
pub mod pipeline;
pub mod retrieval;
pub mod scoring;

pub use config::EngineConfig;
pub use error::{Error, Result};
pub use index::{build_index, build_index_from_path, Index};
pub use pipeline::{answer_query, QueryOptions, QueryResult, Retriever};
