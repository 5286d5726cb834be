use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, Document, EmbeddingTable, Vocabulary};

pub const CACHE_FORMAT: &str = "ghlda-corpus";
pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CachedEmbeddings {
    dim: usize,
    rows: Vec<Vec<f64>>,
}

/// Versioned, self-describing corpus container so training never
/// re-tokenizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusCache {
    format: String,
    version: u32,
    vocab: Vec<String>,
    train: Vec<Document>,
    test: Vec<Document>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embeddings: Option<CachedEmbeddings>,
}

impl CorpusCache {
    pub fn new(corpus: &Corpus, embeddings: Option<&EmbeddingTable<f64>>) -> Self {
        Self {
            format: CACHE_FORMAT.into(),
            version: CACHE_VERSION,
            vocab: corpus.vocab.words().to_vec(),
            train: corpus.train.clone(),
            test: corpus.test.clone(),
            embeddings: embeddings.map(|t| CachedEmbeddings {
                dim: t.dim(),
                rows: (0..t.len() as u32).map(|i| t.row(i).to_vec()).collect(),
            }),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("cache serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        let cache: Self = serde_json::from_str(text).map_err(|e| CorpusError::Cache(e.to_string()))?;
        if cache.format != CACHE_FORMAT {
            return Err(CorpusError::Cache(format!("unexpected format '{}'", cache.format)));
        }
        if cache.version > CACHE_VERSION {
            return Err(CorpusError::Cache(format!(
                "cache version {} is newer than supported version {CACHE_VERSION}",
                cache.version
            )));
        }
        let v = cache.vocab.len() as u32;
        if cache
            .train
            .iter()
            .chain(&cache.test)
            .any(|d| d.tokens.iter().any(|&t| t >= v))
        {
            return Err(CorpusError::Cache("token id outside the vocabulary".into()));
        }
        if let Some(e) = &cache.embeddings {
            if e.rows.len() != cache.vocab.len() {
                return Err(CorpusError::TableMismatch {
                    expected: cache.vocab.len(),
                    got: e.rows.len(),
                });
            }
        }
        Ok(cache)
    }

    pub fn corpus(&self) -> Corpus {
        Corpus {
            train: self.train.clone(),
            test: self.test.clone(),
            vocab: Vocabulary::from_words(self.vocab.clone()),
        }
    }

    pub fn embeddings(&self) -> Result<Option<EmbeddingTable<f64>>, CorpusError> {
        self.embeddings
            .as_ref()
            .map(|e| EmbeddingTable::new(e.dim, e.rows.concat()))
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ingest, RawDocument};

    #[test]
    fn cache_roundtrip_is_byte_stable() {
        let raw = vec![
            RawDocument::new(0, vec!["a".into(), "b".into()]),
            RawDocument::new(1, vec!["b".into()]),
        ];
        let c = ingest(&raw, 1).unwrap();
        let t = EmbeddingTable::from_rows(&[vec![0.1, 1.0 / 3.0], vec![-2.5, 1e-17]]).unwrap();
        let json = CorpusCache::new(&c, Some(&t)).to_json();
        let back = CorpusCache::from_json(&json).unwrap();
        assert_eq!(back.corpus(), c);
        assert_eq!(back.embeddings().unwrap().unwrap(), t);
        assert_eq!(back.to_json(), json);
    }

    #[test]
    fn rejects_newer_version() {
        let json = r#"{"format":"ghlda-corpus","version":99,"vocab":[],"train":[],"test":[]}"#;
        assert!(CorpusCache::from_json(json).is_err());
    }
}
