use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use ghlda::corpus::{
    align, ingest_split, load_embeddings, read_corpus_file, split_documents, Corpus, CorpusCache, CorpusError,
    EmbeddingTable, SimpleTokenizer, WordId,
};
use ghlda::eval::{
    build_cooccurrence, left_to_right, pmi_coherence, polysemy_report, topic_reports, CooccurrenceStats, EvalError,
    EvalReport, GroupKey, HeldoutConfig, HeldoutModel, Window,
};
use ghlda::samplers::{Checkpoint, Model, SamplerError};
use ghlda::tree::{NodeLabel, TreeExport};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn corpus_err(e: CorpusError) -> CliError {
    CliError::input(e)
}

fn sampler_err(e: SamplerError) -> CliError {
    match e {
        SamplerError::Config(_) | SamplerError::Checkpoint(_) => CliError::input(e),
        other => CliError::runtime(other),
    }
}

fn eval_err(e: EvalError) -> CliError {
    match e {
        EvalError::Config(_) => CliError::input(e),
        EvalError::Sampler(s) => sampler_err(s),
    }
}

fn require_file(what: &str, path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::input(format!("{what} not found: {}", path.display())))
    }
}

fn read_text(what: &str, path: &Path) -> Result<String, CliError> {
    require_file(what, path)?;
    fs::read_to_string(path).map_err(|e| CliError::input(format!("cannot read {what} {}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

/// Writes to stdout; a closed pipe (e.g. `| head`) ends output quietly.
fn emit(text: &str) -> Result<(), CliError> {
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::runtime(e)),
        _ => Ok(()),
    }
}

pub fn ingest(cfg: &RunConfig) -> Result<(), CliError> {
    let corpus_path = cfg
        .corpus
        .clone()
        .ok_or_else(|| CliError::input("no corpus given (set \"corpus\" or pass --corpus)"))?;
    require_file("corpus file", &corpus_path)?;
    if let Some(p) = &cfg.test_corpus {
        require_file("test corpus file", p)?;
    }
    if let Some(p) = &cfg.embeddings {
        require_file("embedding file", p)?;
    } else if cfg.model.is_some_and(|m| m.is_gaussian()) {
        return Err(CliError::input(format!(
            "model {} requires an embedding path",
            cfg.model.unwrap().name()
        )));
    }
    let format = cfg.embedding_format()?;

    let raw = read_corpus_file(&corpus_path, &SimpleTokenizer).map_err(corpus_err)?;
    let (train_raw, test_raw) = match &cfg.test_corpus {
        Some(p) => (raw, read_corpus_file(p, &SimpleTokenizer).map_err(corpus_err)?),
        None => split_documents(raw, cfg.test_docs.unwrap_or(0), cfg.seed(), |d| d.doc_id).map_err(corpus_err)?,
    };
    let corpus = ingest_split(&train_raw, &test_raw, cfg.min_count.unwrap_or(1)).map_err(corpus_err)?;
    let (corpus, table) = match &cfg.embeddings {
        Some(p) => {
            let raw = load_embeddings::<f64>(p, format).map_err(corpus_err)?;
            let (c, t) = align(&corpus, &raw).map_err(corpus_err)?;
            (c, Some(t))
        }
        None => (corpus, None),
    };
    let cache = CorpusCache::new(&corpus, table.as_ref());
    let path = cfg.cache_path();
    write_file(&path, &cache.to_json())?;
    let dim = table.as_ref().map_or(String::new(), |t| format!(", M={}", t.dim()));
    println!(
        "V={}, D_train={}, D_test={}, tokens={}{dim}",
        corpus.vocab.len(),
        corpus.train.len(),
        corpus.test.len(),
        corpus.num_tokens()
    );
    log::info!("wrote {}", path.display());
    Ok(())
}

struct Loaded {
    corpus: Corpus,
    table: Option<Arc<EmbeddingTable<f64>>>,
    hash: String,
}

fn load_cache(cfg: &RunConfig) -> Result<Loaded, CliError> {
    let path = cfg.cache_path();
    let text = read_text("corpus cache", &path)?;
    let cache = CorpusCache::from_json(&text).map_err(corpus_err)?;
    Ok(Loaded {
        corpus: cache.corpus(),
        table: cache.embeddings().map_err(corpus_err)?.map(Arc::new),
        hash: sha256_hex(text.as_bytes()),
    })
}

fn load_checkpoint(path: &Path, data: &Loaded) -> Result<Checkpoint, CliError> {
    let ckpt = Checkpoint::from_json(&read_text("checkpoint", path)?).map_err(sampler_err)?;
    if ckpt.corpus_hash != data.hash {
        return Err(CliError::input(format!(
            "checkpoint {} was trained on a different corpus cache (vocabulary mismatch)",
            path.display()
        )));
    }
    Ok(ckpt)
}

fn load_model(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<(Model, Loaded), CliError> {
    let data = load_cache(cfg)?;
    let path = checkpoint.map_or_else(|| cfg.checkpoint_path(), Path::to_path_buf);
    let ckpt = load_checkpoint(&path, &data)?;
    let model = Model::from_checkpoint(&ckpt, &data.corpus.train, data.corpus.vocab.len(), data.table.clone())
        .map_err(sampler_err)?;
    Ok((model, data))
}

pub fn train(cfg: &RunConfig, resume: Option<&Path>, diagnostics: Option<&str>, wall_time: bool) -> Result<(), CliError> {
    let kind = cfg.model()?;
    let hyper = cfg.hyperparams()?;
    hyper.validate(kind).map_err(sampler_err)?;
    if let Some(p) = &cfg.embeddings {
        require_file("embedding file", p)?;
    }
    let data = load_cache(cfg)?;
    if kind.is_gaussian() && data.table.is_none() {
        return Err(CliError::input(format!(
            "model {} requires embeddings; ingest the corpus with an embedding file",
            kind.name()
        )));
    }
    let vocab_size = data.corpus.vocab.len();
    let mut model = match resume {
        Some(p) => {
            let ckpt = load_checkpoint(p, &data)?;
            if ckpt.model != kind {
                return Err(CliError::input(format!(
                    "checkpoint holds a {} model, configuration asks for {}",
                    ckpt.model.name(),
                    kind.name()
                )));
            }
            Model::from_checkpoint(&ckpt, &data.corpus.train, vocab_size, data.table.clone())
        }
        None => Model::new(kind, &hyper, &data.corpus.train, vocab_size, data.table.clone(), cfg.seed()),
    }
    .map_err(sampler_err)?;
    model.set_parallel(kind.is_gaussian() && rayon::current_num_threads() > 1);

    let out_dir = cfg.output_dir();
    fs::create_dir_all(&out_dir).map_err(|e| CliError::runtime(format!("cannot create {}: {e}", out_dir.display())))?;
    let mut sink: Box<dyn Write> = match diagnostics {
        Some("-") => Box::new(std::io::stdout()),
        other => {
            let path = other.map_or_else(|| out_dir.join("diagnostics.jsonl"), PathBuf::from);
            let file = fs::OpenOptions::new()
                .create(true)
                .write(true)
                .append(resume.is_some())
                .truncate(resume.is_none())
                .open(&path)
                .map_err(|e| CliError::runtime(format!("cannot open {}: {e}", path.display())))?;
            Box::new(std::io::BufWriter::new(file))
        }
    };

    let ckpt_path = cfg.checkpoint_path();
    let save = |model: &Model| -> Result<(), CliError> {
        let c = model.checkpoint(&data.hash).map_err(sampler_err)?;
        write_file(&ckpt_path, &c.to_json())
    };
    let epochs = cfg.epochs();
    let save_every = cfg.save_every.unwrap_or(0);
    while model.sampler().epoch() < epochs {
        let started = Instant::now();
        let mut d = model.sampler_mut().run_epoch().map_err(sampler_err)?;
        if wall_time {
            d.wall_time_ms = Some(started.elapsed().as_secs_f64() * 1e3);
        }
        let line = serde_json::to_string(&d).map_err(CliError::runtime)?;
        writeln!(sink, "{line}").map_err(CliError::runtime)?;
        log::info!(
            "epoch {} log-likelihood {:.3} topics {} paths {}",
            d.epoch,
            d.log_likelihood,
            d.topics,
            d.paths
        );
        if save_every > 0 && d.epoch % save_every == 0 {
            sink.flush().map_err(CliError::runtime)?;
            save(&model)?;
        }
    }
    sink.flush().map_err(CliError::runtime)?;
    save(&model)?;
    log::info!("wrote {}", ckpt_path.display());
    Ok(())
}

pub struct EvalSections {
    pub heldout: bool,
    pub pmi: bool,
    pub polysemy: bool,
}

fn parse_window(s: &str) -> Result<Window, CliError> {
    match s.split_once(':') {
        None if s == "document" => Ok(Window::Document),
        Some(("sliding", k)) => k
            .parse::<usize>()
            .ok()
            .filter(|&k| k >= 2)
            .map(Window::Sliding)
            .ok_or_else(|| CliError::input(format!("invalid sliding window size '{k}'"))),
        _ => Err(CliError::input(format!("unknown window '{s}' (use document or sliding:K)"))),
    }
}

fn cooccurrence(cfg: &RunConfig, data: &Loaded, window: Window) -> Result<CooccurrenceStats, CliError> {
    let (docs, source): (Vec<Vec<WordId>>, String) = match &cfg.reference {
        Some(p) => {
            let text = read_text("reference corpus", p)?;
            let raw = read_corpus_file(p, &SimpleTokenizer).map_err(corpus_err)?;
            let vocab = &data.corpus.vocab;
            let docs = raw
                .iter()
                .map(|d| d.tokens.iter().filter_map(|t| vocab.id(t)).collect())
                .collect();
            (docs, sha256_hex(text.as_bytes()))
        }
        None => (data.corpus.train.iter().map(|d| d.tokens.clone()).collect(), "train".into()),
    };
    let key = sha256_hex(format!("{}|{source}|{window:?}", data.hash).as_bytes());
    let path = cfg.output_dir().join(format!("cooc-{}.json", &key[..16]));
    if let Ok(text) = fs::read_to_string(&path) {
        match serde_json::from_str::<CooccurrenceStats>(&text) {
            Ok(c) if c.vocab_size() == data.corpus.vocab.len() => return Ok(c),
            _ => log::warn!("ignoring unreadable co-occurrence cache {}", path.display()),
        }
    }
    let stats = build_cooccurrence(&docs, data.corpus.vocab.len(), window);
    write_file(&path, &stats.to_json())?;
    Ok(stats)
}

pub fn eval(cfg: &RunConfig, checkpoint: Option<&Path>, sections: EvalSections, out: Option<&Path>) -> Result<(), CliError> {
    let window = parse_window(cfg.window.as_deref().unwrap_or("document"))?;
    let (model, data) = load_model(cfg, checkpoint)?;
    let all = !(sections.heldout || sections.pmi || sections.polysemy);
    let mut report = EvalReport {
        model: model.kind(),
        heldout: None,
        pmi: None,
        polysemy: None,
    };
    if sections.heldout || (all && !data.corpus.test.is_empty()) {
        if data.corpus.test.is_empty() {
            return Err(CliError::input("the corpus cache has no test documents"));
        }
        let hm = HeldoutModel::from_model(&model).map_err(eval_err)?;
        let config = HeldoutConfig {
            particles: cfg.particles.unwrap_or(20),
            seed: cfg.seed(),
            rejuvenate: true,
        };
        let r = left_to_right(&hm, &data.corpus.test, &config).map_err(eval_err)?;
        println!("heldout: mean log-likelihood {:.4} over {} documents", r.mean_log_likelihood, r.documents.len());
        report.heldout = Some(r);
    }
    if sections.pmi || all {
        let top_n = cfg.top_n.unwrap_or(10);
        if top_n < 2 {
            return Err(CliError::input("PMI needs top_n of at least 2"));
        }
        let cooc = cooccurrence(cfg, &data, window)?;
        let topics = topic_reports(&model, &data.corpus.vocab, top_n).map_err(eval_err)?;
        let r = pmi_coherence(&topics, &cooc, top_n, true);
        match r.mean {
            Some(m) => println!("pmi: mean {m:.4} over {} topics", r.topics.iter().filter(|t| t.pmi.is_some()).count()),
            None => println!("pmi: undefined (no topic has two resolvable words)"),
        }
        report.pmi = Some(r);
    }
    if sections.polysemy || all {
        let r = polysemy_report(&model, &data.corpus.vocab, cfg.polysemy_min_count.unwrap_or(10)).map_err(eval_err)?;
        println!("polysemy: {} of {} words flagged", r.iter().filter(|e| e.polysemous).count(), r.len());
        report.polysemy = Some(r);
    }
    let path = out.map_or_else(|| cfg.output_dir().join("report.json"), Path::to_path_buf);
    write_file(&path, &serde_json::to_string_pretty(&report).map_err(CliError::runtime)?)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

pub fn export(cfg: &RunConfig, checkpoint: Option<&Path>, format: &str, out: Option<&Path>) -> Result<(), CliError> {
    if !matches!(format, "dot" | "json") {
        return Err(CliError::input(format!("unknown export format '{format}' (use dot or json)")));
    }
    let (model, data) = load_model(cfg, checkpoint)?;
    let reports = topic_reports(&model, &data.corpus.vocab, 5).map_err(eval_err)?;
    let labels: BTreeMap<usize, Vec<NodeLabel>> = reports
        .into_iter()
        .map(|r| {
            let words = r
                .top_words
                .into_iter()
                .map(|w| NodeLabel {
                    word: w.word,
                    score: w.count as f64,
                })
                .collect();
            (r.topic, words)
        })
        .collect();
    let export = match &model {
        Model::Hlda(s) => s.tree().export(&labels),
        Model::Ghlda(s) => s.tree().export(&labels),
        Model::Lda(_) | Model::Glda(_) => TreeExport::flat(labels.into_iter().collect()),
    };
    let text = if format == "dot" {
        export.to_dot()
    } else {
        serde_json::to_string_pretty(&export).map_err(CliError::runtime)?
    };
    match out {
        Some(p) => write_file(p, &text),
        None => emit(&text),
    }
}

pub fn topics(cfg: &RunConfig, checkpoint: Option<&Path>, json: bool) -> Result<(), CliError> {
    let (model, data) = load_model(cfg, checkpoint)?;
    let reports = topic_reports(&model, &data.corpus.vocab, cfg.top_n.unwrap_or(10)).map_err(eval_err)?;
    if json {
        emit(&serde_json::to_string_pretty(&reports).map_err(CliError::runtime)?)?;
        return Ok(());
    }
    for r in reports.iter().filter(|r| r.assignment_count > 0) {
        let words: Vec<&str> = r.top_words.iter().map(|w| w.word.as_str()).collect();
        let level = r.level.map_or(String::new(), |l| format!(" level {l}"));
        emit(&format!("topic {}{level} ({} tokens): {}", r.topic, r.assignment_count, words.join(" ")))?;
    }
    Ok(())
}

fn group_label(k: &GroupKey) -> String {
    match k {
        GroupKey::Topic { topic } => format!("topic {topic}"),
        GroupKey::PathLevel { path, level } => {
            let p: Vec<String> = path.iter().map(ToString::to_string).collect();
            format!("path {} level {level}", p.join("/"))
        }
    }
}

pub fn polysemy(cfg: &RunConfig, checkpoint: Option<&Path>, all: bool, json: bool) -> Result<(), CliError> {
    let (model, data) = load_model(cfg, checkpoint)?;
    let entries: Vec<_> = polysemy_report(&model, &data.corpus.vocab, cfg.polysemy_min_count.unwrap_or(10))
        .map_err(eval_err)?
        .into_iter()
        .filter(|e| all || e.polysemous)
        .collect();
    if json {
        emit(&serde_json::to_string_pretty(&entries).map_err(CliError::runtime)?)?;
        return Ok(());
    }
    for e in &entries {
        let groups: Vec<String> = e
            .groups
            .iter()
            .map(|g| format!("{}={}", group_label(&g.key), g.count))
            .collect();
        let flag = if e.polysemous { " *" } else { "" };
        emit(&format!("{}{flag} ({} tokens): {}", e.word, e.total, groups.join(", ")))?;
    }
    Ok(())
}
