//! `ghlda` command-line front end.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration or input error.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

/// An error with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn input(e: impl fmt::Display) -> Self {
        Self { code: 2, error: anyhow::anyhow!("{e}") }
    }
    pub fn runtime(e: impl fmt::Display) -> Self {
        Self { code: 1, error: anyhow::anyhow!("{e}") }
    }
}

#[derive(Parser)]
#[command(name = "ghlda", version, about = "Gaussian hierarchical topic models")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any configuration key (value parsed as JSON when possible).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Corpus cache file (default: <output_dir>/corpus.json).
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize, build the vocabulary, align embeddings, split, write the cache.
    Ingest {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        test_corpus: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// glove, word2vec or fasttext (text formats).
        #[arg(long)]
        embedding_format: Option<String>,
        #[arg(long)]
        min_count: Option<usize>,
        /// Hold out this many training documents (ignored with --test-corpus).
        #[arg(long)]
        test_docs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the sampler, streaming per-epoch diagnostics and writing checkpoints.
    Train {
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        save_every: Option<usize>,
        /// Continue from a checkpoint up to the configured total epochs.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Diagnostics JSONL path, or `-` for stdout.
        #[arg(long)]
        diagnostics: Option<String>,
        /// Include wall-clock time in diagnostics (breaks byte-identity).
        #[arg(long)]
        wall_time: bool,
    },
    /// Held-out likelihood, PMI coherence and polysemy report.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        heldout: bool,
        #[arg(long)]
        particles: Option<usize>,
        #[arg(long)]
        pmi: bool,
        #[arg(long)]
        top_n: Option<usize>,
        /// Reference corpus for co-occurrence (default: the training documents).
        #[arg(long)]
        reference: Option<PathBuf>,
        /// `document` or `sliding:K`.
        #[arg(long)]
        window: Option<String>,
        #[arg(long)]
        polysemy: bool,
        #[arg(long)]
        min_count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the topic tree (or flat topics) as DOT or JSON.
    Export {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "json")]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print each topic's top words.
    Topics {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        top_n: Option<usize>,
        #[arg(long)]
        json: bool,
    },
    /// Print the per-word assignment audit.
    Polysemy {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        min_count: Option<usize>,
        /// Include words that are not flagged.
        #[arg(long)]
        all: bool,
        #[arg(long)]
        json: bool,
    },
}

fn path_value(p: &std::path::Path) -> Value {
    Value::String(p.to_string_lossy().into_owned())
}

fn overrides(common: &Common, flags: Vec<(&str, Option<Value>)>) -> Result<Vec<(String, Value)>, CliError> {
    let mut out = common
        .set
        .iter()
        .map(|s| config::parse_assignment(s))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(p) = &common.output_dir {
        out.push(("output_dir".into(), path_value(p)));
    }
    if let Some(p) = &common.cache {
        out.push(("cache".into(), path_value(p)));
    }
    out.extend(flags.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
    Ok(out)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = cli.common;
    let num = |x: Option<usize>| x.map(Value::from);
    let path = |x: &Option<PathBuf>| x.as_deref().map(path_value);
    match cli.command {
        Command::Ingest {
            corpus,
            test_corpus,
            embeddings,
            embedding_format,
            min_count,
            test_docs,
            seed,
        } => {
            let o = overrides(
                &common,
                vec![
                    ("corpus", path(&corpus)),
                    ("test_corpus", path(&test_corpus)),
                    ("embeddings", path(&embeddings)),
                    ("embedding_format", embedding_format.map(Value::String)),
                    ("min_count", num(min_count)),
                    ("test_docs", num(test_docs)),
                    ("seed", seed.map(Value::from)),
                ],
            )?;
            commands::ingest(&config::load(common.config.as_deref(), &o)?)
        }
        Command::Train {
            model,
            epochs,
            seed,
            save_every,
            resume,
            diagnostics,
            wall_time,
        } => {
            let o = overrides(
                &common,
                vec![
                    ("model", model.map(Value::String)),
                    ("epochs", num(epochs)),
                    ("seed", seed.map(Value::from)),
                    ("save_every", num(save_every)),
                ],
            )?;
            let cfg = config::load(common.config.as_deref(), &o)?;
            commands::train(&cfg, resume.as_deref(), diagnostics.as_deref(), wall_time)
        }
        Command::Eval {
            checkpoint,
            heldout,
            particles,
            pmi,
            top_n,
            reference,
            window,
            polysemy,
            min_count,
            seed,
            out,
        } => {
            let o = overrides(
                &common,
                vec![
                    ("particles", num(particles)),
                    ("top_n", num(top_n)),
                    ("reference", path(&reference)),
                    ("window", window.map(Value::String)),
                    ("polysemy_min_count", num(min_count)),
                    ("seed", seed.map(Value::from)),
                ],
            )?;
            let cfg = config::load(common.config.as_deref(), &o)?;
            let sections = commands::EvalSections { heldout, pmi, polysemy };
            commands::eval(&cfg, checkpoint.as_deref(), sections, out.as_deref())
        }
        Command::Export { checkpoint, format, out } => {
            let cfg = config::load(common.config.as_deref(), &overrides(&common, vec![])?)?;
            commands::export(&cfg, checkpoint.as_deref(), &format, out.as_deref())
        }
        Command::Topics { checkpoint, top_n, json } => {
            let cfg = config::load(common.config.as_deref(), &overrides(&common, vec![("top_n", num(top_n))])?)?;
            commands::topics(&cfg, checkpoint.as_deref(), json)
        }
        Command::Polysemy {
            checkpoint,
            min_count,
            all,
            json,
        } => {
            let o = overrides(&common, vec![("polysemy_min_count", num(min_count))])?;
            let cfg = config::load(common.config.as_deref(), &o)?;
            commands::polysemy(&cfg, checkpoint.as_deref(), all, json)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Some(n) = std::env::var("GHLDA_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code)
        }
    }
}
