//! QA evaluation: substring exact match and retrieval recall@k.
//!
//! Normalization (applied to predictions and answers alike):
//! 1. lowercase every character;
//! 2. split on whitespace and rejoin with single spaces;
//! 3. strip leading and trailing punctuation.
//!
//! Each answer also contributes an alias with any trailing parenthetical
//! removed, so `"Phoolwari (1946)"` is matched by `"phoolwari"`. Answers that
//! normalize to the empty string never match.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::index::Index;
use crate::pipeline::{QueryOptions, Retriever};

pub const NORMALIZATION_VERSION: u32 = 1;

pub fn normalize_answer(text: &str) -> String {
    let lowered: String = text.chars().flat_map(char::to_lowercase).collect();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .to_string()
}

/// `"Name (1946)"` -> `"Name"`; `None` when there is no trailing group or
/// nothing precedes it.
fn strip_trailing_parenthetical(answer: &str) -> Option<&str> {
    let trimmed = answer.trim_end();
    if !trimmed.ends_with(')') {
        return None;
    }
    let open = trimmed.rfind('(')?;
    let head = trimmed[..open].trim_end();
    (!head.is_empty()).then_some(head)
}

/// Normalized forms an answer may take, without duplicates or empties.
pub fn answer_aliases(answer: &str) -> Vec<String> {
    let mut out = vec![normalize_answer(answer)];
    if let Some(head) = strip_trailing_parenthetical(answer) {
        out.push(normalize_answer(head));
    }
    out.retain(|a| !a.is_empty());
    out.dedup();
    out
}

/// True when some normalized answer alias occurs in the normalized
/// prediction.
pub fn subem<S: AsRef<str>>(prediction: &str, answers: &[S]) -> bool {
    let pred = normalize_answer(prediction);
    if pred.is_empty() {
        return false;
    }
    answers
        .iter()
        .flat_map(|a| answer_aliases(a.as_ref()))
        .any(|alias| pred.contains(&alias))
}

/// True when any gold id is among the first `k` ranked ids.
pub fn recall_at_k<S: AsRef<str>, G: AsRef<str>>(ranked: &[S], gold: &[G], k: usize) -> bool {
    ranked
        .iter()
        .take(k)
        .any(|id| gold.iter().any(|g| g.as_ref() == id.as_ref()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaExample {
    pub question: String,
    pub answers: Vec<String>,
    pub gold_doc_ids: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedExample {
    /// 1-based line in the dataset file.
    pub line: usize,
    pub reason: String,
}

fn id_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn parse_example(line: &str) -> std::result::Result<QaExample, String> {
    let v: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let question = v
        .get("question")
        .and_then(Value::as_str)
        .ok_or("missing string field \"question\"")?
        .to_string();
    let answers: Vec<String> = v
        .get("answers")
        .and_then(Value::as_array)
        .ok_or("missing array field \"answers\"")?
        .iter()
        .map(|a| {
            a.as_str()
                .map(str::to_string)
                .ok_or("answers must be strings")
        })
        .collect::<std::result::Result<_, _>>()?;
    if answers.is_empty() {
        return Err("\"answers\" is empty".into());
    }
    let gold_doc_ids = match v.get("gold_doc_ids") {
        None | Some(Value::Null) => None,
        Some(Value::Array(ids)) => Some(
            ids.iter()
                .map(|g| id_string(g).ok_or("gold ids must be strings or numbers"))
                .collect::<std::result::Result<Vec<_>, _>>()?,
        ),
        Some(_) => return Err("\"gold_doc_ids\" must be an array".into()),
    };
    Ok(QaExample {
        question,
        answers,
        gold_doc_ids,
    })
}

/// Parses dataset JSONL. Malformed lines are returned as skip records rather
/// than aborting the run.
pub fn parse_dataset(text: &str) -> (Vec<QaExample>, Vec<SkippedExample>) {
    let mut examples = Vec::new();
    let mut skipped = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_example(line) {
            Ok(e) => examples.push(e),
            Err(reason) => {
                log::warn!("dataset line {}: {reason}", i + 1);
                skipped.push(SkippedExample {
                    line: i + 1,
                    reason,
                });
            }
        }
    }
    (examples, skipped)
}

pub fn load_dataset(path: &Path) -> Result<(Vec<QaExample>, Vec<SkippedExample>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(PathBuf::from(path), e))?;
    Ok(parse_dataset(&text))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubemMode {
    /// Matched against the concatenated retrieved passages; an upper-bound
    /// proxy, not comparable with generated-answer scores.
    RetrievalOnly,
    /// Matched against the generator's answer.
    Generator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub index: usize,
    pub question: String,
    pub subem: bool,
    /// `None` when the example has no gold ids.
    pub recall: Option<bool>,
    pub retrieved: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: SubemMode,
    pub normalization_version: u32,
    pub k: usize,
    pub n: usize,
    pub subem_hits: usize,
    /// `subem_hits / n`, or 0 when `n == 0`.
    pub subem: f64,
    pub n_with_gold: usize,
    pub n_without_gold: usize,
    pub recall_hits: usize,
    /// `recall_hits / n_with_gold`, or 0 when no example has gold ids.
    pub recall_at_k: f64,
    /// Set when a fraction has an empty denominator and was reported as 0.
    pub undefined: bool,
    pub skipped: Vec<SkippedExample>,
    pub records: Vec<ExampleRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Subem,
    Recall,
}

fn fraction(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

impl EvalReport {
    pub fn from_records(
        mode: SubemMode,
        k: usize,
        records: Vec<ExampleRecord>,
        skipped: Vec<SkippedExample>,
    ) -> Self {
        let n = records.len();
        let subem_hits = records.iter().filter(|r| r.subem).count();
        let n_with_gold = records.iter().filter(|r| r.recall.is_some()).count();
        let recall_hits = records.iter().filter(|r| r.recall == Some(true)).count();
        Self {
            mode,
            normalization_version: NORMALIZATION_VERSION,
            k,
            n,
            subem_hits,
            subem: fraction(subem_hits, n),
            n_with_gold,
            n_without_gold: n - n_with_gold,
            recall_hits,
            recall_at_k: fraction(recall_hits, n_with_gold),
            undefined: n == 0 || n_with_gold == 0,
            skipped,
            records,
        }
    }

    pub fn summary(&self, metric: Metric) -> String {
        let mode = match self.mode {
            SubemMode::RetrievalOnly => "retrieval-only",
            SubemMode::Generator => "generator",
        };
        let mut line = match metric {
            Metric::Subem => format!(
                "SubEM ({mode}) = {:.4} ({}/{})",
                self.subem, self.subem_hits, self.n
            ),
            Metric::Recall => format!(
                "recall@{} = {:.4} ({}/{}, {} without gold ids)",
                self.k, self.recall_at_k, self.recall_hits, self.n_with_gold, self.n_without_gold
            ),
        };
        if self.undefined {
            line.push_str(" [empty denominator reported as 0]");
        }
        if !self.skipped.is_empty() {
            line.push_str(&format!(
                " [{} malformed examples skipped]",
                self.skipped.len()
            ));
        }
        line
    }
}

/// Runs every example through the query pipeline with `top_k = k`.
pub fn run_eval(
    index: &Index,
    examples: &[QaExample],
    skipped: Vec<SkippedExample>,
    options: &QueryOptions,
    k: usize,
) -> Result<EvalReport> {
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    let mut options = options.clone();
    options.scoring.top_k = k;
    let mode = if options.generator.endpoint.is_some() {
        SubemMode::Generator
    } else {
        SubemMode::RetrievalOnly
    };
    let retriever = Retriever::new(index, options)?;
    let docs = &index.corpus.documents;
    let records = examples
        .par_iter()
        .enumerate()
        .map(|(i, ex)| -> Result<ExampleRecord> {
            let result = retriever.answer(&ex.question)?;
            let retrieved: Vec<String> = result.passages.iter().map(|p| p.doc_id.clone()).collect();
            let prediction = match mode {
                SubemMode::Generator => result.answer.clone().unwrap_or_default(),
                SubemMode::RetrievalOnly => {
                    let by_id = |id: &str| docs.iter().find(|d| d.external_id == id);
                    retrieved
                        .iter()
                        .filter_map(|id| by_id(id))
                        .map(|d| match &d.title {
                            Some(t) => format!("{t}\n{}", d.text),
                            None => d.text.clone(),
                        })
                        .collect::<Vec<_>>()
                        .join("\n")
                }
            };
            Ok(ExampleRecord {
                index: i,
                question: ex.question.clone(),
                subem: subem(&prediction, &ex.answers),
                recall: ex
                    .gold_doc_ids
                    .as_ref()
                    .filter(|g| !g.is_empty())
                    .map(|g| recall_at_k(&retrieved, g, k)),
                retrieved,
                answer: result.answer,
                error: result.generator_error,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_records(mode, k, records, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_rules() {
        assert_eq!(
            normalize_answer("  The Queen\tConsort,  CAMILLA. "),
            "the queen consort, camilla"
        );
        assert_eq!(normalize_answer("\"Hello!\""), "hello");
        assert_eq!(normalize_answer("..."), "");
    }

    #[test]
    fn aliases_drop_parenthetical() {
        assert_eq!(
            answer_aliases("Phoolwari (1946)"),
            vec!["phoolwari (1946", "phoolwari"]
        );
        assert_eq!(answer_aliases("(1946)"), vec!["1946"]);
        assert_eq!(answer_aliases("Paris"), vec!["paris"]);
    }

    #[test]
    fn subem_examples() {
        assert!(subem("Phoolwari", &["Phoolwari (1946)"]));
        assert!(!subem("", &["x"]));
        assert!(subem("the queen consort, CAMILLA.", &["Camilla"]));
        assert!(!subem("nothing", &["..."]));
    }

    #[test]
    fn recall_examples() {
        assert!(recall_at_k(&["a", "b"], &["a"], 1));
        let ranked = ["a", "b", "c", "d", "e", "gold"];
        assert!(!recall_at_k(&ranked, &["gold"], 5));
        assert!(recall_at_k(&ranked, &["gold"], 6));
    }

    #[test]
    fn dataset_parsing_skips_malformed() {
        let text = concat!(
            r#"{"question": "q1", "answers": ["a"], "gold_doc_ids": ["d1", 2]}"#,
            "\n\n",
            r#"{"question": "q2", "answers": []}"#,
            "\n",
            "not json\n",
            r#"{"question": "q3", "answers": ["b"]}"#,
            "\n"
        );
        let (ex, skipped) = parse_dataset(text);
        assert_eq!(ex.len(), 2);
        assert_eq!(
            ex[0].gold_doc_ids,
            Some(vec!["d1".to_string(), "2".to_string()])
        );
        assert_eq!(ex[1].gold_doc_ids, None);
        assert_eq!(
            skipped.iter().map(|s| s.line).collect::<Vec<_>>(),
            vec![3, 4]
        );
    }

    #[test]
    fn empty_report_is_flagged() {
        let r = EvalReport::from_records(SubemMode::RetrievalOnly, 5, vec![], vec![]);
        assert_eq!(
            (r.n, r.subem, r.recall_at_k, r.undefined),
            (0, 0.0, 0.0, true)
        );
    }
}
