//! Corpus loading, sentence segmentation and entity vocabulary construction.

use std::collections::{HashMap, HashSet};
use std::ops::Range;
use std::path::Path;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::http::JsonClient;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: usize,
    /// The `id` field from the source record.
    pub external_id: String,
    pub title: Option<String>,
    pub text: String,
    pub sentence_ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub sent_id: usize,
    pub doc_id: usize,
    pub text: String,
    /// Entities in order of first mention, without repeats.
    pub entity_ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub ent_id: usize,
    pub surface: String,
    pub mention_count: usize,
    pub mention_sent_ids: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub sentences: Vec<Sentence>,
    pub entities: Vec<Entity>,
}

impl Corpus {
    /// Segments raw records into documents and sentences. The vocabulary is
    /// left empty until [`build_vocabulary`] runs.
    pub fn from_records(records: Vec<RawDocument>, segmenter: &SentenceSegmenter) -> Self {
        let mut corpus = Corpus::default();
        for (doc_id, record) in records.into_iter().enumerate() {
            let mut sentence_ids = Vec::new();
            for span in segmenter.segment(&record.text) {
                let sent_id = corpus.sentences.len();
                sentence_ids.push(sent_id);
                corpus.sentences.push(Sentence {
                    sent_id,
                    doc_id,
                    text: record.text[span].to_string(),
                    entity_ids: Vec::new(),
                });
            }
            corpus.documents.push(Document {
                doc_id,
                external_id: record.id,
                title: record.title,
                text: record.text,
                sentence_ids,
            });
        }
        corpus
    }

    /// Distinct entities of a document, ascending.
    pub fn document_entities(&self, doc_id: usize) -> Vec<usize> {
        let mut ents: Vec<usize> = self.documents[doc_id]
            .sentence_ids
            .iter()
            .flat_map(|&s| self.sentences[s].entity_ids.iter().copied())
            .collect();
        ents.sort_unstable();
        ents.dedup();
        ents
    }

    pub fn total_mentions(&self) -> usize {
        self.sentences.iter().map(|s| s.entity_ids.len()).sum()
    }
}

/// One corpus record as it appears in the JSONL input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub title: Option<String>,
    pub text: String,
}

#[derive(Deserialize)]
struct RawLine {
    id: serde_json::Value,
    #[serde(default)]
    title: Option<String>,
    text: String,
}

/// Parses corpus JSONL. Blank lines are ignored; line numbers are 1-based.
pub fn parse_corpus(bytes: &[u8], path: &Path) -> Result<Vec<RawDocument>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: format!("not UTF-8: {e}"),
    })?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawLine = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        let id = match raw.id {
            serde_json::Value::String(s) => s,
            serde_json::Value::Number(n) => n.to_string(),
            other => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: format!("id must be a string or number, found {other}"),
                })
            }
        };
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateDocument { id, line: line_no });
        }
        out.push(RawDocument {
            id,
            title: raw.title,
            text: raw.text,
        });
    }
    Ok(out)
}

/// Reads and segments a corpus JSONL file.
pub fn load_corpus(path: &Path, segmenter: &SentenceSegmenter) -> Result<Corpus> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Corpus::from_records(parse_corpus(&bytes, path)?, segmenter))
}

pub const DEFAULT_ABBREVIATIONS: &[&str] = &[
    "dr.", "mr.", "mrs.", "ms.", "prof.", "st.", "jr.", "sr.", "vs.", "etc.", "e.g.", "i.e.",
    "inc.", "ltd.", "co.", "corp.", "mt.", "no.", "gen.", "col.", "lt.", "sgt.", "capt.", "rev.",
    "hon.", "gov.", "sen.", "rep.", "u.s.", "u.k.", "approx.", "dept.", "est.", "fig.", "jan.",
    "feb.", "mar.", "apr.", "jun.", "jul.", "aug.", "sep.", "sept.", "oct.", "nov.", "dec.",
];

/// Rule-based splitter: a sentence ends at `.`, `!` or `?` (plus any closing
/// quotes or brackets) followed by whitespace, unless the word ending in the
/// period is on the abbreviation guard list.
#[derive(Debug, Clone)]
pub struct SentenceSegmenter {
    abbreviations: HashSet<String>,
}

impl Default for SentenceSegmenter {
    fn default() -> Self {
        Self::new(DEFAULT_ABBREVIATIONS.iter().copied())
    }
}

impl SentenceSegmenter {
    pub fn new<S: AsRef<str>>(abbreviations: impl IntoIterator<Item = S>) -> Self {
        Self {
            abbreviations: abbreviations
                .into_iter()
                .map(|a| a.as_ref().trim().to_lowercase())
                .filter(|a| !a.is_empty())
                .collect(),
        }
    }

    /// Guard list file: one abbreviation per line, `#` starts a comment.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::new(
            text.lines()
                .map(|l| l.split('#').next().unwrap_or("").trim())
                .filter(|l| !l.is_empty()),
        ))
    }

    /// Byte spans of the sentences in `text`, trimmed of surrounding
    /// whitespace.
    pub fn segment(&self, text: &str) -> Vec<Range<usize>> {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let mut spans = Vec::new();
        let mut start: Option<usize> = None;
        let mut i = 0;
        while i < chars.len() {
            let (pos, c) = chars[i];
            if start.is_none() && !c.is_whitespace() {
                start = Some(pos);
            }
            if matches!(c, '.' | '!' | '?') {
                let mut j = i + 1;
                while j < chars.len() && is_closer(chars[j].1) {
                    j += 1;
                }
                let at_break = j == chars.len() || chars[j].1.is_whitespace();
                if at_break && !(c == '.' && self.is_abbreviation(text, start, pos)) {
                    let end = chars.get(j).map_or(text.len(), |&(p, _)| p);
                    if let Some(s) = start.take() {
                        spans.push(s..end);
                    }
                    i = j;
                    continue;
                }
            }
            i += 1;
        }
        if let Some(s) = start {
            let end = s + text[s..].trim_end().len();
            spans.push(s..end);
        }
        spans
    }

    fn is_abbreviation(&self, text: &str, start: Option<usize>, dot: usize) -> bool {
        let lo = start.unwrap_or(0);
        let word_start = text[lo..dot]
            .rfind(char::is_whitespace)
            .map_or(lo, |p| lo + p + 1);
        let word = text[word_start..=dot].trim_start_matches(|c: char| !c.is_alphanumeric());
        self.abbreviations.contains(&word.to_lowercase())
    }
}

fn is_closer(c: char) -> bool {
    matches!(
        c,
        '.' | '!' | '?' | '"' | '\'' | ')' | ']' | '}' | '”' | '’' | '»'
    )
}

/// Canonical surface form: per-character lowercase and single spaces.
pub fn normalize_surface(s: &str) -> String {
    let lowered: String = s.chars().flat_map(char::to_lowercase).collect();
    lowered.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub trait EntityExtractor: Send + Sync {
    fn name(&self) -> &str;

    /// Normalized, de-duplicated surface forms in order of first mention.
    fn extract(&self, text: &str) -> std::result::Result<Vec<String>, String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractorMode {
    BuiltinHeuristic,
    ExternalHttp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractorConfig {
    pub mode: ExtractorMode,
    pub endpoint: Option<String>,
    pub timeout_secs: u64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            mode: ExtractorMode::BuiltinHeuristic,
            endpoint: None,
            timeout_secs: 30,
        }
    }
}

impl ExtractorConfig {
    pub fn name(&self) -> String {
        match self.mode {
            ExtractorMode::BuiltinHeuristic => HeuristicExtractor::NAME.to_string(),
            ExtractorMode::ExternalHttp => {
                format!("http:{}", self.endpoint.as_deref().unwrap_or_default())
            }
        }
    }
}

pub fn extractor_from_config(cfg: &ExtractorConfig) -> Result<Box<dyn EntityExtractor>> {
    Ok(match cfg.mode {
        ExtractorMode::BuiltinHeuristic => Box::new(HeuristicExtractor),
        ExtractorMode::ExternalHttp => {
            let endpoint = cfg
                .endpoint
                .clone()
                .ok_or_else(|| Error::Config("external extractor needs an endpoint".into()))?;
            Box::new(HttpExtractor::new(
                endpoint,
                Duration::from_secs(cfg.timeout_secs),
            ))
        }
    })
}

const STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "an", "and", "are", "as", "at", "be", "been", "before",
    "both", "but", "by", "did", "do", "does", "during", "each", "either", "every", "for", "from",
    "had", "has", "have", "he", "her", "here", "his", "how", "however", "i", "if", "in", "is",
    "it", "its", "many", "most", "my", "neither", "no", "nor", "not", "of", "on", "or", "our",
    "she", "since", "so", "some", "than", "that", "the", "their", "then", "there", "these", "they",
    "this", "those", "to", "was", "we", "were", "what", "when", "where", "which", "while", "who",
    "whom", "whose", "why", "with", "yes", "you", "your",
];

/// Capitalization heuristic: maximal runs of capitalized (or digit-bearing)
/// tokens. Capitalized function words never qualify, punctuation attached to a
/// token closes the run, and an immediately repeated token starts a new run.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicExtractor;

impl HeuristicExtractor {
    pub const NAME: &'static str = "builtin-heuristic";

    pub fn extract_mentions(text: &str) -> Vec<String> {
        let mut found: Vec<String> = Vec::new();
        let mut run: Vec<&str> = Vec::new();
        let flush = |run: &mut Vec<&str>, found: &mut Vec<String>| {
            if !run.is_empty() {
                let surface = normalize_surface(&run.join(" "));
                if !found.contains(&surface) {
                    found.push(surface);
                }
                run.clear();
            }
        };
        for raw in text.split_whitespace() {
            let lead_trimmed = raw.trim_start_matches(|c: char| !c.is_alphanumeric());
            let mut core = lead_trimmed.trim_end_matches(|c: char| !c.is_alphanumeric());
            let mut closes = core.len() < lead_trimmed.len();
            for suffix in ["'s", "’s"] {
                if let Some(stem) = core.strip_suffix(suffix) {
                    core = stem.trim_end_matches(|c: char| !c.is_alphanumeric());
                    closes = true;
                }
            }
            if lead_trimmed.len() < raw.len() {
                flush(&mut run, &mut found);
            }
            if qualifies(core) {
                let repeated = run
                    .last()
                    .is_some_and(|prev| prev.to_lowercase() == core.to_lowercase());
                if repeated {
                    flush(&mut run, &mut found);
                }
                run.push(core);
            } else {
                flush(&mut run, &mut found);
            }
            if closes {
                flush(&mut run, &mut found);
            }
        }
        flush(&mut run, &mut found);
        found
    }
}

fn qualifies(token: &str) -> bool {
    let Some(first) = token.chars().next() else {
        return false;
    };
    let has_digit = token.chars().any(|c| c.is_ascii_digit());
    (first.is_uppercase() || has_digit) && !STOPWORDS.contains(&token.to_lowercase().as_str())
}

impl EntityExtractor for HeuristicExtractor {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn extract(&self, text: &str) -> std::result::Result<Vec<String>, String> {
        Ok(Self::extract_mentions(text))
    }
}

#[derive(Serialize)]
struct ExtractRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct ExtractResponse {
    entities: Vec<ExtractedEntity>,
}

#[derive(Deserialize)]
struct ExtractedEntity {
    surface: String,
}

/// Delegates mention detection to an NER service.
pub struct HttpExtractor {
    endpoint: String,
    name: String,
    client: JsonClient,
}

impl HttpExtractor {
    pub fn new(endpoint: String, timeout: Duration) -> Self {
        Self {
            name: format!("http:{endpoint}"),
            endpoint,
            client: JsonClient::new(timeout),
        }
    }
}

impl EntityExtractor for HttpExtractor {
    fn name(&self) -> &str {
        &self.name
    }

    fn extract(&self, text: &str) -> std::result::Result<Vec<String>, String> {
        let response: ExtractResponse =
            self.client.post(&self.endpoint, &ExtractRequest { text })?;
        let mut out: Vec<String> = Vec::new();
        for e in response.entities {
            let surface = normalize_surface(&e.surface);
            if !surface.is_empty() && !out.contains(&surface) {
                out.push(surface);
            }
        }
        Ok(out)
    }
}

/// Runs the extractor over every sentence and assigns entity ids in order of
/// first occurrence (document order, then sentence order, then mention order).
pub fn build_vocabulary(corpus: &mut Corpus, extractor: &dyn EntityExtractor) -> Result<()> {
    let extracted: Vec<Vec<String>> = corpus
        .sentences
        .par_iter()
        .map(|s| {
            extractor
                .extract(&s.text)
                .map_err(|message| Error::Extraction {
                    sent_id: s.sent_id,
                    message,
                })
        })
        .collect::<Result<_>>()?;

    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut entities: Vec<Entity> = Vec::new();
    for (sentence, surfaces) in corpus.sentences.iter_mut().zip(extracted) {
        sentence.entity_ids.clear();
        for surface in surfaces {
            let ent_id = *ids.entry(surface.clone()).or_insert_with(|| {
                entities.push(Entity {
                    ent_id: entities.len(),
                    surface,
                    mention_count: 0,
                    mention_sent_ids: Vec::new(),
                });
                entities.len() - 1
            });
            if sentence.entity_ids.contains(&ent_id) {
                continue;
            }
            sentence.entity_ids.push(ent_id);
            let entity = &mut entities[ent_id];
            entity.mention_count += 1;
            entity.mention_sent_ids.push(sentence.sent_id);
        }
    }
    corpus.entities = entities;
    Ok(())
}
