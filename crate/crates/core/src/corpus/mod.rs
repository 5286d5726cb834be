//! Corpus ingestion: tokenization, frequency-filtered vocabulary, embedding
//! alignment and train/test splitting.

mod cache;
mod embeddings;

use std::collections::HashMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

pub use cache::{CorpusCache, CACHE_FORMAT, CACHE_VERSION};
pub use embeddings::{load_embeddings, parse_embeddings, EmbeddingFormat, EmbeddingTable, RawEmbeddings};

pub type WordId = u32;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus is empty after filtering (min_count = {min_count})")]
    EmptyCorpus { min_count: usize },
    #[error("no vocabulary word has an embedding")]
    EmptyIntersection,
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot hold out {n_test} of {n_docs} documents")]
    SplitTooLarge { n_test: usize, n_docs: usize },
    #[error("corpus cache: {0}")]
    Cache(String),
    #[error("embedding table has {got} rows but the vocabulary has {expected} words")]
    TableMismatch { expected: usize, got: usize },
}

/// Splits a line of text into tokens.
pub trait Tokenizer {
    fn tokenize(&self, text: &str) -> Vec<String>;
}

/// Lowercases, splits on whitespace and strips surrounding punctuation.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimpleTokenizer;

impl Tokenizer for SimpleTokenizer {
    fn tokenize(&self, text: &str) -> Vec<String> {
        text.split_whitespace()
            .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
            .filter(|t| !t.is_empty())
            .collect()
    }
}

/// A tokenized document before vocabulary encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDocument {
    pub doc_id: usize,
    pub label: Option<String>,
    pub tokens: Vec<String>,
}

impl RawDocument {
    pub fn new(doc_id: usize, tokens: Vec<String>) -> Self {
        Self {
            doc_id,
            label: None,
            tokens,
        }
    }
}

/// Reads one document per line with an optional leading `label<TAB>` field.
pub fn read_documents<R: BufRead>(reader: R, tokenizer: &dyn Tokenizer) -> std::io::Result<Vec<RawDocument>> {
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let (label, text) = match line.split_once('\t') {
            Some((l, t)) => (Some(l.trim().to_string()), t),
            None => (None, line.as_str()),
        };
        docs.push(RawDocument {
            doc_id: i,
            label: label.filter(|l| !l.is_empty()),
            tokens: tokenizer.tokenize(text),
        });
    }
    Ok(docs)
}

pub fn read_corpus_file(path: &Path, tokenizer: &dyn Tokenizer) -> Result<Vec<RawDocument>, CorpusError> {
    let io = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let f = std::fs::File::open(path).map_err(io)?;
    read_documents(std::io::BufReader::new(f), tokenizer).map_err(io)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, WordId>,
}

impl Vocabulary {
    pub fn from_words(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as WordId))
            .collect();
        Self { words, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }
    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
    pub fn id(&self, word: &str) -> Option<WordId> {
        self.index.get(word).copied()
    }
    pub fn word(&self, id: WordId) -> &str {
        &self.words[id as usize]
    }
    pub fn words(&self) -> &[String] {
        &self.words
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub tokens: Vec<WordId>,
}

impl Document {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub train: Vec<Document>,
    pub test: Vec<Document>,
    pub vocab: Vocabulary,
}

impl Corpus {
    pub fn num_tokens(&self) -> usize {
        self.train.iter().map(Document::len).sum()
    }

    /// Corpus frequency of each word id over the training documents.
    pub fn word_frequencies(&self) -> Vec<usize> {
        let mut f = vec![0; self.vocab.len()];
        for d in &self.train {
            for &w in &d.tokens {
                f[w as usize] += 1;
            }
        }
        f
    }

    pub fn decode(&self, doc: &Document) -> Vec<&str> {
        doc.tokens.iter().map(|&w| self.vocab.word(w)).collect()
    }

    /// Moves `n_test` training documents, chosen by a seeded shuffle, into the
    /// test set.
    pub fn split(mut self, n_test: usize, seed: u64) -> Result<Self, CorpusError> {
        let docs = std::mem::take(&mut self.train);
        let (train, test) = split_documents(docs, n_test, seed, |d| d.doc_id)?;
        self.train = train;
        self.test.extend(test);
        Ok(self)
    }
}

/// Shuffle by `seed` and hold out the last `n_test` documents. Both parts are
/// returned in their original order.
pub fn split_documents<D>(
    docs: Vec<D>,
    n_test: usize,
    seed: u64,
    key: impl Fn(&D) -> usize,
) -> Result<(Vec<D>, Vec<D>), CorpusError> {
    if n_test >= docs.len() && n_test > 0 {
        return Err(CorpusError::SplitTooLarge {
            n_test,
            n_docs: docs.len(),
        });
    }
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_test = vec![false; docs.len()];
    for &i in &order[docs.len() - n_test..] {
        is_test[i] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (d, t) in docs.into_iter().zip(is_test) {
        if t {
            test.push(d);
        } else {
            train.push(d);
        }
    }
    train.sort_by_key(&key);
    test.sort_by_key(&key);
    Ok((train, test))
}

/// Build the vocabulary from `train` (words with frequency ≥ `min_count`) and
/// encode both sets through it, dropping sub-threshold tokens and empty
/// documents. Words are ordered by descending frequency, ties alphabetical.
pub fn ingest_split(
    train: &[RawDocument],
    test: &[RawDocument],
    min_count: usize,
) -> Result<Corpus, CorpusError> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for d in train {
        for t in &d.tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let vocab = Vocabulary::from_words(kept.into_iter().map(|(w, _)| w.to_string()).collect());
    let encode = |docs: &[RawDocument]| -> Vec<Document> {
        docs.iter()
            .map(|d| Document {
                doc_id: d.doc_id,
                label: d.label.clone(),
                tokens: d.tokens.iter().filter_map(|t| vocab.id(t)).collect(),
            })
            .filter(|d| !d.is_empty())
            .collect()
    };
    let train_docs = encode(train);
    if train_docs.is_empty() {
        return Err(CorpusError::EmptyCorpus { min_count });
    }
    let test_docs = encode(test);
    Ok(Corpus {
        train: train_docs,
        test: test_docs,
        vocab,
    })
}

/// [`ingest_split`] with no test documents.
pub fn ingest(raw: &[RawDocument], min_count: usize) -> Result<Corpus, CorpusError> {
    ingest_split(raw, &[], min_count)
}

/// Restrict the vocabulary to words with embeddings, re-encode documents and
/// build the embedding table in vocabulary order.
pub fn align<T: Scalar>(
    corpus: &Corpus,
    embeddings: &RawEmbeddings<T>,
) -> Result<(Corpus, EmbeddingTable<T>), CorpusError> {
    let kept: Vec<String> = corpus
        .vocab
        .words()
        .iter()
        .filter(|w| embeddings.get(w).is_some())
        .cloned()
        .collect();
    if kept.is_empty() {
        return Err(CorpusError::EmptyIntersection);
    }
    let vocab = Vocabulary::from_words(kept);
    let remap: Vec<Option<WordId>> = corpus
        .vocab
        .words()
        .iter()
        .map(|w| vocab.id(w))
        .collect();
    let reencode = |docs: &[Document]| -> Vec<Document> {
        docs.iter()
            .map(|d| Document {
                doc_id: d.doc_id,
                label: d.label.clone(),
                tokens: d.tokens.iter().filter_map(|&t| remap[t as usize]).collect(),
            })
            .filter(|d| !d.is_empty())
            .collect()
    };
    let train = reencode(&corpus.train);
    if train.is_empty() {
        return Err(CorpusError::EmptyIntersection);
    }
    let mut data = Vec::with_capacity(vocab.len() * embeddings.dim());
    for w in vocab.words() {
        data.extend_from_slice(embeddings.get(w).expect("filtered above"));
    }
    let table = EmbeddingTable::new(embeddings.dim(), data)?;
    Ok((
        Corpus {
            train,
            test: reencode(&corpus.test),
            vocab,
        },
        table,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(docs: &[&[&str]]) -> Vec<RawDocument> {
        docs.iter()
            .enumerate()
            .map(|(i, d)| RawDocument::new(i, d.iter().map(|s| s.to_string()).collect()))
            .collect()
    }

    #[test]
    fn ingest_keeps_words_at_threshold() {
        let c = ingest(&raw(&[&["a", "a", "b"], &["a", "c"]]), 2).unwrap();
        assert_eq!(c.vocab.words(), &["a".to_string()]);
        assert_eq!(c.train.len(), 2);
        assert_eq!(c.train[0].tokens, vec![0, 0]);
        assert_eq!(c.train[1].tokens, vec![0]);
    }

    #[test]
    fn ingest_empty_corpus_is_fatal() {
        assert!(matches!(
            ingest(&raw(&[&["x"]]), 2),
            Err(CorpusError::EmptyCorpus { min_count: 2 })
        ));
    }

    #[test]
    fn ingest_drops_empty_documents_and_keeps_stop_words() {
        let c = ingest(&raw(&[&["the", "the"], &["zzz"], &["the"]]), 2).unwrap();
        assert_eq!(c.train.len(), 2);
        assert_eq!(c.train[1].doc_id, 2);
        assert_eq!(c.vocab.id("the"), Some(0));
    }

    #[test]
    fn test_documents_use_training_vocabulary() {
        let train = raw(&[&["a", "a", "b", "b"]]);
        let test = vec![RawDocument::new(9, vec!["a".into(), "q".into()])];
        let c = ingest_split(&train, &test, 2).unwrap();
        assert_eq!(c.test.len(), 1);
        assert_eq!(c.decode(&c.test[0]), vec!["a"]);
    }

    #[test]
    fn tokenizer_lowercases_and_strips_punctuation() {
        let t = SimpleTokenizer.tokenize("The bank, (River) banks! -- x");
        assert_eq!(t, vec!["the", "bank", "river", "banks", "x"]);
    }

    #[test]
    fn read_documents_parses_labels() {
        let text = "finance\tThe Bank lends\nriver bank\n";
        let docs = read_documents(text.as_bytes(), &SimpleTokenizer).unwrap();
        assert_eq!(docs[0].label.as_deref(), Some("finance"));
        assert_eq!(docs[0].tokens, vec!["the", "bank", "lends"]);
        assert_eq!(docs[1].label, None);
        assert_eq!(docs[1].doc_id, 1);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let docs: Vec<usize> = (0..6000).collect();
        let (tr, te) = split_documents(docs.clone(), 1000, 11, |&d| d).unwrap();
        assert_eq!((tr.len(), te.len()), (5000, 1000));
        let (tr2, te2) = split_documents(docs.clone(), 1000, 11, |&d| d).unwrap();
        assert_eq!((tr, te), (tr2, te2));
        let (tr, te) = split_documents(docs.clone(), 0, 11, |&d| d).unwrap();
        assert_eq!((tr.len(), te.len()), (6000, 0));
        assert!(split_documents(docs, 6000, 1, |&d| d).is_err());
    }

    #[test]
    fn align_restricts_vocabulary() {
        let c = ingest(&raw(&[&["a", "b", "a"], &["b"]]), 1).unwrap();
        let emb = RawEmbeddings::from_pairs(1, vec![("a".to_string(), vec![0.5f64])]).unwrap();
        let (aligned, table) = align(&c, &emb).unwrap();
        assert_eq!(aligned.vocab.words(), &["a".to_string()]);
        assert_eq!(aligned.train.len(), 1);
        assert_eq!(aligned.train[0].tokens, vec![0, 0]);
        assert_eq!(table.row(0), &[0.5]);
        let none = RawEmbeddings::from_pairs(1, vec![("z".to_string(), vec![0.5f64])]).unwrap();
        assert!(matches!(align(&c, &none), Err(CorpusError::EmptyIntersection)));
    }

    #[test]
    fn align_identity_when_all_covered() {
        let c = ingest(&raw(&[&["a", "b", "a"], &["b"]]), 1).unwrap();
        let emb = RawEmbeddings::from_pairs(
            2,
            vec![("a".into(), vec![1.0f64, 0.0]), ("b".into(), vec![0.0, 1.0]), ("c".into(), vec![1.0, 1.0])],
        )
        .unwrap();
        let (aligned, table) = align(&c, &emb).unwrap();
        assert_eq!(aligned, c);
        assert_eq!(table.len(), 2);
    }
}
