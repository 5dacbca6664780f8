//! Offline construction and the on-disk index directory.
//!
//! Layout: `manifest.json`, `config.json`, `vocab.jsonl`, `embeddings.bin`,
//! `h_str.bin`, `h_sem.bin`, `clusters.json`, `passages.jsonl`. The manifest
//! records the byte length and SHA-256 of every other file; loading refuses
//! any mismatch.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::{build_semantic_incidence, cluster_embeddings, LeafCluster};
use crate::config::{ClusteringConfig, EngineConfig};
use crate::corpus::{
    build_vocabulary, extractor_from_config, parse_corpus, Corpus, Document, Entity, Sentence,
};
use crate::embedding::{embedder_from_config, EmbeddingMatrix, EmbeddingProviderConfig};
use crate::error::{Error, Result};
use crate::hypergraph::{build_structural_incidence, ByteReader, Hypergraph, SparseMatrix};

pub const FORMAT_VERSION: u32 = 1;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";
pub const VOCAB_FILE: &str = "vocab.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const H_STR_FILE: &str = "h_str.bin";
pub const H_SEM_FILE: &str = "h_sem.bin";
pub const CLUSTERS_FILE: &str = "clusters.json";
pub const PASSAGES_FILE: &str = "passages.jsonl";

const DATA_FILES: [&str; 7] = [
    CONFIG_FILE,
    VOCAB_FILE,
    EMBEDDINGS_FILE,
    H_STR_FILE,
    H_SEM_FILE,
    CLUSTERS_FILE,
    PASSAGES_FILE,
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexCounts {
    pub entities: usize,
    pub sentences: usize,
    pub documents: usize,
    pub clusters: usize,
    pub h_str_nnz: usize,
    pub h_sem_nnz: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub format_version: u32,
    pub corpus_digest: String,
    pub embedder: EmbeddingProviderConfig,
    pub extractor: String,
    pub clustering: ClusteringConfig,
    pub counts: IndexCounts,
    pub files: BTreeMap<String, FileEntry>,
}

/// A built or loaded index. Read-only once constructed; safe to share
/// between query threads.
#[derive(Debug, Clone)]
pub struct Index {
    pub config: EngineConfig,
    pub corpus: Corpus,
    pub corpus_digest: String,
    pub entity_vectors: EmbeddingMatrix,
    pub sentence_vectors: EmbeddingMatrix,
    pub passage_vectors: EmbeddingMatrix,
    pub clusters: Vec<LeafCluster>,
    pub graph: Hypergraph,
    /// Distinct entities per document, ascending.
    pub passage_entities: Vec<Vec<usize>>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Runs the whole offline pipeline over corpus JSONL bytes.
pub fn build_index(corpus_bytes: &[u8], corpus_path: &Path, cfg: &EngineConfig) -> Result<Index> {
    cfg.validate()?;
    let started = Instant::now();
    let segmenter = cfg.segmenter()?;
    let records = parse_corpus(corpus_bytes, corpus_path)?;
    let mut corpus = Corpus::from_records(records, &segmenter);
    log::info!(
        "segmented {} documents into {} sentences",
        corpus.documents.len(),
        corpus.sentences.len()
    );

    let extractor = extractor_from_config(&cfg.extractor)?;
    build_vocabulary(&mut corpus, extractor.as_ref())?;
    log::info!("extracted {} entities", corpus.entities.len());

    let embedder = embedder_from_config(&cfg.embedding)?;
    let embed = |texts: Vec<&str>| embedder.embed(&texts);
    let entity_vectors = embed(corpus.entities.iter().map(|e| e.surface.as_str()).collect())?;
    let sentence_vectors = embed(corpus.sentences.iter().map(|s| s.text.as_str()).collect())?;
    let passage_vectors = embed(corpus.documents.iter().map(|d| d.text.as_str()).collect())?;
    log::info!("embedded corpus in {:.2?}", started.elapsed());

    let cl = &cfg.clustering;
    let clusters = cluster_embeddings(&entity_vectors, cl.threshold, cl.branching)?;
    let h_sem = build_semantic_incidence(&clusters, &entity_vectors, cl.top_d, cl.tau)?;
    log::info!("formed {} semantic hyperedges", clusters.len());

    let sentence_entities: Vec<Vec<usize>> = corpus
        .sentences
        .iter()
        .map(|s| s.entity_ids.clone())
        .collect();
    let h_str = build_structural_incidence(corpus.entities.len(), &sentence_entities)?;
    let graph = Hypergraph::new(h_str, h_sem)?;
    let passage_entities = (0..corpus.documents.len())
        .map(|d| corpus.document_entities(d))
        .collect();
    log::info!("index built in {:.2?}", started.elapsed());

    Ok(Index {
        config: cfg.clone(),
        corpus,
        corpus_digest: sha256_hex(corpus_bytes),
        entity_vectors,
        sentence_vectors,
        passage_vectors,
        clusters,
        graph,
        passage_entities,
    })
}

pub fn build_index_from_path(corpus_path: &Path, cfg: &EngineConfig) -> Result<Index> {
    let bytes = fs::read(corpus_path).map_err(|e| Error::io(corpus_path, e))?;
    build_index(&bytes, corpus_path, cfg)
}

#[derive(Serialize, Deserialize)]
struct SentenceRecord {
    sent_id: usize,
    text: String,
    entity_ids: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct PassageRecord {
    doc_id: usize,
    id: String,
    title: Option<String>,
    text: String,
    sentences: Vec<SentenceRecord>,
}

#[derive(Serialize, Deserialize)]
struct ClustersFile {
    clusters: Vec<LeafCluster>,
}

fn jsonl<T: Serialize>(items: impl Iterator<Item = T>) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, &item).expect("records serialize");
        out.push(b'\n');
    }
    out
}

fn embeddings_to_bytes(blocks: &[&EmbeddingMatrix]) -> Vec<u8> {
    let mut out = Vec::new();
    for m in blocks {
        out.extend_from_slice(&(m.len() as u64).to_le_bytes());
        out.extend_from_slice(&(m.dim() as u64).to_le_bytes());
        for v in m.flat() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn embeddings_from_bytes(bytes: &[u8]) -> std::result::Result<[EmbeddingMatrix; 3], String> {
    let mut reader = ByteReader::new(bytes);
    let mut read_block = || -> std::result::Result<EmbeddingMatrix, String> {
        let rows = reader.u64()? as usize;
        let dim = reader.u64()? as usize;
        let len = rows.checked_mul(dim).ok_or("embedding block too large")?;
        if len.checked_mul(8).is_none_or(|b| b > reader.remaining()) {
            return Err(format!("embedding block of {rows}x{dim} exceeds file size"));
        }
        let data = (0..len)
            .map(|_| reader.f64())
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err("non-finite embedding value".into());
        }
        Ok(EmbeddingMatrix::from_flat(dim, data))
    };
    let blocks = [read_block()?, read_block()?, read_block()?];
    if reader.remaining() != 0 {
        return Err(format!("{} trailing bytes", reader.remaining()));
    }
    Ok(blocks)
}

impl Index {
    pub fn n_documents(&self) -> usize {
        self.corpus.documents.len()
    }

    pub fn counts(&self) -> IndexCounts {
        IndexCounts {
            entities: self.graph.n_entities(),
            sentences: self.graph.n_sentences(),
            documents: self.corpus.documents.len(),
            clusters: self.graph.n_clusters(),
            h_str_nnz: self.graph.structural.matrix.nnz(),
            h_sem_nnz: self.graph.semantic.matrix.nnz(),
        }
    }

    fn data_files(&self) -> Vec<(&'static str, Vec<u8>)> {
        let passages = self.corpus.documents.iter().map(|d| PassageRecord {
            doc_id: d.doc_id,
            id: d.external_id.clone(),
            title: d.title.clone(),
            text: d.text.clone(),
            sentences: d
                .sentence_ids
                .iter()
                .map(|&s| {
                    let sentence = &self.corpus.sentences[s];
                    SentenceRecord {
                        sent_id: sentence.sent_id,
                        text: sentence.text.clone(),
                        entity_ids: sentence.entity_ids.clone(),
                    }
                })
                .collect(),
        });
        let clusters = ClustersFile {
            clusters: self.clusters.clone(),
        };
        vec![
            (CONFIG_FILE, self.config.to_json_pretty().into_bytes()),
            (VOCAB_FILE, jsonl(self.corpus.entities.iter())),
            (
                EMBEDDINGS_FILE,
                embeddings_to_bytes(&[
                    &self.entity_vectors,
                    &self.sentence_vectors,
                    &self.passage_vectors,
                ]),
            ),
            (H_STR_FILE, self.graph.structural.matrix.to_binary()),
            (H_SEM_FILE, self.graph.semantic.matrix.to_binary()),
            (
                CLUSTERS_FILE,
                serde_json::to_vec(&clusters).expect("clusters serialize"),
            ),
            (PASSAGES_FILE, jsonl(passages)),
        ]
    }

    pub fn manifest(&self) -> IndexManifest {
        self.manifest_for(&self.data_files())
    }

    fn manifest_for(&self, files: &[(&'static str, Vec<u8>)]) -> IndexManifest {
        IndexManifest {
            format_version: FORMAT_VERSION,
            corpus_digest: self.corpus_digest.clone(),
            embedder: self.config.embedding.clone(),
            extractor: self.config.extractor.name(),
            clustering: self.config.clustering.clone(),
            counts: self.counts(),
            files: files
                .iter()
                .map(|(name, bytes)| {
                    let entry = FileEntry {
                        bytes: bytes.len() as u64,
                        sha256: sha256_hex(bytes),
                    };
                    (name.to_string(), entry)
                })
                .collect(),
        }
    }

    /// Writes the index directory. Files go to a sibling staging directory
    /// first, which is renamed into place once complete.
    pub fn save(&self, dir: &Path) -> Result<IndexManifest> {
        let files = self.data_files();
        let manifest = self.manifest_for(&files);
        let manifest_bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");

        if dir.exists() {
            let is_index = dir.join(MANIFEST_FILE).is_file();
            let is_empty = fs::read_dir(dir)
                .map_err(|e| Error::io(dir, e))?
                .next()
                .is_none();
            if !is_index && !is_empty {
                return Err(Error::Config(format!(
                    "{} exists and is not an index directory; refusing to overwrite",
                    dir.display()
                )));
            }
        }
        let staging = staging_path(dir);
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        }
        let result = write_all(&staging, &files, &manifest_bytes).and_then(|()| {
            if dir.exists() {
                fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            fs::rename(&staging, dir).map_err(|e| Error::io(dir, e))
        });
        if result.is_err() {
            let _ = fs::remove_dir_all(&staging);
        }
        result.map(|()| manifest)
    }

    /// Reads and verifies an index directory.
    pub fn load(dir: &Path) -> Result<Index> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest_bytes = fs::read(&manifest_path)
            .map_err(|e| Error::index_file(MANIFEST_FILE, format!("cannot read: {e}")))?;
        let manifest = read_manifest(&manifest_bytes)?;

        let mut contents: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
        for name in DATA_FILES {
            let entry = manifest
                .files
                .get(name)
                .ok_or_else(|| Error::index_file(name, "missing from manifest"))?;
            let bytes = fs::read(dir.join(name))
                .map_err(|e| Error::index_file(name, format!("cannot read: {e}")))?;
            if bytes.len() as u64 != entry.bytes {
                return Err(Error::index_file(
                    name,
                    format!(
                        "size {} does not match manifest ({})",
                        bytes.len(),
                        entry.bytes
                    ),
                ));
            }
            if sha256_hex(&bytes) != entry.sha256 {
                return Err(Error::index_file(name, "digest does not match manifest"));
            }
            contents.insert(name, bytes);
        }

        let config_text = std::str::from_utf8(&contents[CONFIG_FILE])
            .map_err(|e| Error::index_file(CONFIG_FILE, e.to_string()))?;
        let config: EngineConfig = serde_json::from_str(config_text)
            .map_err(|e| Error::index_file(CONFIG_FILE, e.to_string()))?;

        let entities: Vec<Entity> = parse_jsonl(VOCAB_FILE, &contents[VOCAB_FILE])?;
        let passages: Vec<PassageRecord> = parse_jsonl(PASSAGES_FILE, &contents[PASSAGES_FILE])?;
        let [entity_vectors, sentence_vectors, passage_vectors] =
            embeddings_from_bytes(&contents[EMBEDDINGS_FILE])
                .map_err(|m| Error::index_file(EMBEDDINGS_FILE, m))?;
        let h_str = SparseMatrix::from_binary(&contents[H_STR_FILE])
            .map_err(|m| Error::index_file(H_STR_FILE, m))?;
        let h_sem = SparseMatrix::from_binary(&contents[H_SEM_FILE])
            .map_err(|m| Error::index_file(H_SEM_FILE, m))?;
        let clusters: ClustersFile = serde_json::from_slice(&contents[CLUSTERS_FILE])
            .map_err(|e| Error::index_file(CLUSTERS_FILE, e.to_string()))?;

        let mut corpus = Corpus {
            entities,
            ..Corpus::default()
        };
        for (position, p) in passages.into_iter().enumerate() {
            if p.doc_id != position {
                return Err(Error::index_file(
                    PASSAGES_FILE,
                    format!("doc_id {} out of order", p.doc_id),
                ));
            }
            let mut sentence_ids = Vec::with_capacity(p.sentences.len());
            for s in p.sentences {
                if s.sent_id != corpus.sentences.len() {
                    return Err(Error::index_file(
                        PASSAGES_FILE,
                        format!("sent_id {} out of order", s.sent_id),
                    ));
                }
                sentence_ids.push(s.sent_id);
                corpus.sentences.push(Sentence {
                    sent_id: s.sent_id,
                    doc_id: p.doc_id,
                    text: s.text,
                    entity_ids: s.entity_ids,
                });
            }
            corpus.documents.push(Document {
                doc_id: p.doc_id,
                external_id: p.id,
                title: p.title,
                text: p.text,
                sentence_ids,
            });
        }

        let n_entities = corpus.entities.len();
        let n_sentences = corpus.sentences.len();
        if corpus
            .sentences
            .iter()
            .any(|s| s.entity_ids.iter().any(|&e| e >= n_entities))
        {
            return Err(Error::index_file(
                PASSAGES_FILE,
                "entity id outside vocabulary",
            ));
        }
        if h_str.n_rows() != n_entities || h_str.n_cols() != n_sentences {
            return Err(Error::index_file(
                H_STR_FILE,
                format!(
                    "shape {}x{} does not match {n_entities} entities and {n_sentences} sentences",
                    h_str.n_rows(),
                    h_str.n_cols()
                ),
            ));
        }
        if h_sem.n_rows() != n_entities || h_sem.n_cols() != clusters.clusters.len() {
            return Err(Error::index_file(
                H_SEM_FILE,
                format!(
                    "shape {}x{} does not match vocabulary and clusters",
                    h_sem.n_rows(),
                    h_sem.n_cols()
                ),
            ));
        }
        let vector_counts = [
            (entity_vectors.len(), n_entities),
            (sentence_vectors.len(), n_sentences),
            (passage_vectors.len(), corpus.documents.len()),
        ];
        if vector_counts.iter().any(|(have, want)| have != want) {
            return Err(Error::index_file(
                EMBEDDINGS_FILE,
                "row counts do not match the corpus",
            ));
        }

        let graph = Hypergraph::new(h_str, h_sem)?;
        let passage_entities = (0..corpus.documents.len())
            .map(|d| corpus.document_entities(d))
            .collect();
        let index = Index {
            config,
            corpus,
            corpus_digest: manifest.corpus_digest.clone(),
            entity_vectors,
            sentence_vectors,
            passage_vectors,
            clusters: clusters.clusters,
            graph,
            passage_entities,
        };
        if index.counts() != manifest.counts {
            return Err(Error::index_file(
                MANIFEST_FILE,
                "counts do not match the stored structures",
            ));
        }
        Ok(index)
    }
}

/// Parses the manifest, refusing format versions newer than this build.
pub fn read_manifest(bytes: &[u8]) -> Result<IndexManifest> {
    let raw: serde_json::Value = serde_json::from_slice(bytes)
        .map_err(|e| Error::index_file(MANIFEST_FILE, e.to_string()))?;
    let version = raw
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::index_file(MANIFEST_FILE, "missing format_version"))?;
    let version = u32::try_from(version).unwrap_or(u32::MAX);
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    serde_json::from_value(raw).map_err(|e| Error::index_file(MANIFEST_FILE, e.to_string()))
}

pub fn load_manifest(dir: &Path) -> Result<IndexManifest> {
    let bytes = fs::read(dir.join(MANIFEST_FILE))
        .map_err(|e| Error::index_file(MANIFEST_FILE, format!("cannot read: {e}")))?;
    read_manifest(&bytes)
}

fn parse_jsonl<T: serde::de::DeserializeOwned>(file: &str, bytes: &[u8]) -> Result<Vec<T>> {
    bytes
        .split(|&b| b == b'\n')
        .enumerate()
        .filter(|(_, line)| !line.is_empty())
        .map(|(i, line)| {
            serde_json::from_slice(line)
                .map_err(|e| Error::index_file(file, format!("line {}: {e}", i + 1)))
        })
        .collect()
}

fn staging_path(dir: &Path) -> PathBuf {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "index".into());
    dir.with_file_name(format!(".{name}.staging-{}", std::process::id()))
}

fn write_all(staging: &Path, files: &[(&'static str, Vec<u8>)], manifest: &[u8]) -> Result<()> {
    fs::create_dir_all(staging).map_err(|e| Error::io(staging, e))?;
    let write = |name: &str, bytes: &[u8]| -> Result<()> {
        let path = staging.join(name);
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&path, e))?;
        f.sync_all().map_err(|e| Error::io(&path, e))
    };
    for (name, bytes) in files {
        write(name, bytes)?;
    }
    write(MANIFEST_FILE, manifest)
}
