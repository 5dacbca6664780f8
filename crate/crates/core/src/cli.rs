//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::eval::{load_dataset, run_eval, Metric};
use crate::index::{build_index_from_path, Index};
use crate::pipeline::{QueryOptions, Retriever};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "hyperrag", version, about = "Hypergraph retrieval engine")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Index construction.
    Index {
        #[command(subcommand)]
        action: IndexAction,
    },
    /// Retrieve passages for one question.
    Query {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        question: String,
        #[arg(long)]
        top_k: Option<usize>,
        /// Print the full result as one JSON object.
        #[arg(long)]
        json: bool,
        /// Retrieval settings to use instead of the index's stored config.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score a QA dataset against an index.
    Eval {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        metric: MetricArg,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the full JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Print index counts and build parameters.
    Stats {
        #[arg(long)]
        index: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum IndexAction {
    Build {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Subem,
    Recall,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Subem => Metric::Subem,
            MetricArg::Recall => Metric::Recall,
        }
    }
}

fn load_config(path: Option<&PathBuf>) -> Result<Option<EngineConfig>> {
    path.map(|p| {
        let (cfg, provenance) = EngineConfig::from_file(p)?;
        EngineConfig::log_provenance(&provenance);
        Ok(cfg)
    })
    .transpose()
}

fn query_options(index: &Index, config: Option<&PathBuf>) -> Result<QueryOptions> {
    Ok(match load_config(config)? {
        Some(cfg) => QueryOptions::from(&cfg),
        None => QueryOptions::from(&index.config),
    })
}

fn json_line<T: serde::Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    let text = serde_json::to_string(value).expect("output serializes");
    writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let w =
        |out: &mut dyn Write, s: String| writeln!(out, "{s}").map_err(|e| Error::io("<stdout>", e));
    match cli.command {
        Command::Index {
            action:
                IndexAction::Build {
                    corpus,
                    out: dir,
                    config,
                },
        } => {
            let cfg = match load_config(config.as_ref())? {
                Some(cfg) => cfg,
                None => {
                    let cfg = EngineConfig::default();
                    EngineConfig::log_provenance(&cfg.provenance(None));
                    cfg
                }
            };
            let index = build_index_from_path(&corpus, &cfg)?;
            let manifest = index.save(&dir)?;
            let c = manifest.counts;
            w(
                out,
                format!(
                    "built {}: {} documents, {} sentences, {} entities, {} clusters",
                    dir.display(),
                    c.documents,
                    c.sentences,
                    c.entities,
                    c.clusters
                ),
            )
        }
        Command::Query {
            index,
            question,
            top_k,
            json,
            config,
        } => {
            let index = Index::load(&index)?;
            let mut options = query_options(&index, config.as_ref())?;
            if let Some(k) = top_k {
                options.scoring.top_k = k;
            }
            let result = Retriever::new(&index, options)?.answer(&question)?;
            if json {
                return json_line(out, &result);
            }
            for p in &result.passages {
                let title = p.title.as_deref().unwrap_or("");
                w(
                    out,
                    format!(
                        "{:>2}. {} {title} (ppr {:.6}, score {:.4})",
                        p.rank, p.doc_id, p.ppr, p.combined
                    ),
                )?;
            }
            if let Some(answer) = &result.answer {
                w(out, format!("answer: {answer}"))?;
            }
            if let Some(err) = &result.generator_error {
                w(out, format!("generator error: {err}"))?;
            }
            Ok(())
        }
        Command::Eval {
            index,
            dataset,
            metric,
            k,
            config,
            report,
        } => {
            let index = Index::load(&index)?;
            let options = query_options(&index, config.as_ref())?;
            let (examples, skipped) = load_dataset(&dataset)?;
            let result = run_eval(&index, &examples, skipped, &options, k)?;
            if let Some(path) = report {
                let text = serde_json::to_string_pretty(&result).expect("report serializes");
                std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            }
            w(out, result.summary(metric.into()))
        }
        Command::Stats { index } => {
            let index = Index::load(&index)?;
            let m = index.manifest();
            let c = &m.counts;
            let cl = &m.clustering;
            let lines = [
                format!("format_version: {}", m.format_version),
                format!("documents: {}", c.documents),
                format!("entities: {}", c.entities),
                format!("sentences: {}", c.sentences),
                format!("clusters: {}", c.clusters),
                format!("h_str nnz: {}", c.h_str_nnz),
                format!("h_sem nnz: {}", c.h_sem_nnz),
                format!(
                    "clustering: threshold={} branching={} tau={} top_d={}",
                    cl.threshold, cl.branching, cl.tau, cl.top_d
                ),
                format!(
                    "embedder: {:?} dim={}",
                    m.embedder.mode, m.embedder.dimension
                ),
                format!("extractor: {}", m.extractor),
                format!("corpus sha256: {}", m.corpus_digest),
            ];
            for line in lines {
                w(out, line)?;
            }
            Ok(())
        }
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    match run(cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_RUNTIME
        }
    }
}
