use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::CorpusError;
use crate::scalar::Scalar;

/// Text embedding formats. The word2vec and fastText text formats start with
/// a `count dim` header line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingFormat {
    GloveText,
    Word2vecText,
    FasttextText,
}

impl EmbeddingFormat {
    fn has_header(self) -> bool {
        !matches!(self, EmbeddingFormat::GloveText)
    }

    /// Isotropic NIW scale `Ψ = s·I` suited to the format's usual vectors.
    pub fn default_psi_scale(self) -> f64 {
        match self {
            EmbeddingFormat::GloveText => 50.0,
            EmbeddingFormat::Word2vecText => 40.0,
            EmbeddingFormat::FasttextText => 20.0,
        }
    }
}

impl FromStr for EmbeddingFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "glove" | "glove_text" => Ok(Self::GloveText),
            "word2vec" | "word2vec_text" => Ok(Self::Word2vecText),
            "fasttext" | "fasttext_text" => Ok(Self::FasttextText),
            other => Err(format!("unknown embedding format '{other}'")),
        }
    }
}

/// Word → vector map with a uniform dimension.
#[derive(Debug, Clone)]
pub struct RawEmbeddings<T> {
    dim: usize,
    vectors: HashMap<String, Vec<T>>,
}

impl<T: Scalar> RawEmbeddings<T> {
    pub fn from_pairs(dim: usize, pairs: Vec<(String, Vec<T>)>) -> Result<Self, CorpusError> {
        let mut vectors = HashMap::new();
        for (i, (w, v)) in pairs.into_iter().enumerate() {
            if v.len() != dim {
                return Err(CorpusError::Parse {
                    path: "<memory>".into(),
                    line: i + 1,
                    message: format!("expected {dim} components, found {}", v.len()),
                });
            }
            vectors.entry(w).or_insert(v);
        }
        Ok(Self { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn len(&self) -> usize {
        self.vectors.len()
    }
    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
    pub fn get(&self, word: &str) -> Option<&[T]> {
        self.vectors.get(word).map(Vec::as_slice)
    }
}

pub fn parse_embeddings<T: Scalar, R: BufRead>(
    reader: R,
    format: EmbeddingFormat,
    source: &str,
) -> Result<RawEmbeddings<T>, CorpusError> {
    let err = |line: usize, message: String| CorpusError::Parse {
        path: source.to_string(),
        line,
        message,
    };
    let mut dim: Option<usize> = None;
    let mut vectors: HashMap<String, Vec<T>> = HashMap::new();
    let mut header_pending = format.has_header();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| err(lineno, e.to_string()))?;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        if header_pending {
            header_pending = false;
            let d = fields
                .next()
                .and_then(|s| s.parse::<usize>().ok())
                .filter(|_| word.parse::<usize>().is_ok())
                .ok_or_else(|| err(lineno, "expected a 'count dim' header line".into()))?;
            dim = Some(d);
            continue;
        }
        let mut v = Vec::with_capacity(dim.unwrap_or(0));
        for f in fields {
            let x: f64 = f
                .parse()
                .map_err(|_| err(lineno, format!("non-numeric field '{f}'")))?;
            if !x.is_finite() {
                return Err(err(lineno, format!("non-finite field '{f}'")));
            }
            v.push(T::from_f64_lossy(x));
        }
        match dim {
            None => dim = Some(v.len()),
            Some(d) if d != v.len() => {
                return Err(err(
                    lineno,
                    format!("row for '{word}' has {} components, expected {d}", v.len()),
                ))
            }
            _ => {}
        }
        vectors.entry(word.to_string()).or_insert(v);
    }
    let dim = dim.unwrap_or(0);
    if dim == 0 {
        return Err(err(0, "no embedding rows".into()));
    }
    Ok(RawEmbeddings { dim, vectors })
}

pub fn load_embeddings<T: Scalar>(path: &Path, format: EmbeddingFormat) -> Result<RawEmbeddings<T>, CorpusError> {
    let f = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_embeddings(std::io::BufReader::new(f), format, &path.display().to_string())
}

/// `V × M` embedding matrix; row `i` belongs to vocabulary id `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<T> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> EmbeddingTable<T> {
    pub fn new(dim: usize, data: Vec<T>) -> Result<Self, CorpusError> {
        let bad = |m: String| CorpusError::Parse {
            path: "<table>".into(),
            line: 0,
            message: m,
        };
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(bad(format!("{} values do not form rows of {dim}", data.len())));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(bad("non-finite embedding entry".into()));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, CorpusError> {
        let dim = rows.first().map_or(0, Vec::len);
        Self::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    #[inline]
    pub fn row(&self, id: u32) -> &[T] {
        let i = id as usize * self.dim;
        &self.data[i..i + self.dim]
    }
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// Mean of the rows (unweighted by frequency).
    pub fn grand_mean(&self) -> Vec<T> {
        let mut m = vec![T::zero(); self.dim];
        for r in self.data.chunks(self.dim) {
            for (a, &b) in m.iter_mut().zip(r) {
                *a = *a + b;
            }
        }
        let n = T::from_usize(self.len()).unwrap();
        m.iter().map(|&a| a / n).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glove_line() {
        let e: RawEmbeddings<f64> = parse_embeddings("bank 0.1 0.2\n".as_bytes(), EmbeddingFormat::GloveText, "t").unwrap();
        assert_eq!(e.dim(), 2);
        assert_eq!(e.get("bank"), Some(&[0.1, 0.2][..]));
    }

    #[test]
    fn word2vec_header_is_skipped() {
        let mut text = String::from("3 300\n");
        for w in ["a", "b", "c"] {
            text.push_str(w);
            for i in 0..300 {
                text.push_str(&format!(" {}", i as f64 / 100.0));
            }
            text.push('\n');
        }
        let e: RawEmbeddings<f32> = parse_embeddings(text.as_bytes(), EmbeddingFormat::Word2vecText, "t").unwrap();
        assert_eq!((e.len(), e.dim()), (3, 300));
    }

    #[test]
    fn inconsistent_dimension_names_line() {
        let text = "a 1 2 3\nb 1 2 3\nc 1 2\n";
        let err = parse_embeddings::<f64, _>(text.as_bytes(), EmbeddingFormat::GloveText, "emb.txt").unwrap_err();
        match err {
            CorpusError::Parse { line, path, .. } => assert_eq!((line, path.as_str()), (3, "emb.txt")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_numeric_and_duplicates() {
        let bad = "a 1 x\n";
        assert!(parse_embeddings::<f64, _>(bad.as_bytes(), EmbeddingFormat::GloveText, "t").is_err());
        let dup = "a 1 2\na 3 4\n";
        let e: RawEmbeddings<f64> = parse_embeddings(dup.as_bytes(), EmbeddingFormat::GloveText, "t").unwrap();
        assert_eq!(e.get("a"), Some(&[1.0, 2.0][..]));
    }

    #[test]
    fn missing_header_is_error() {
        let text = "a 1 2\n";
        assert!(parse_embeddings::<f64, _>(text.as_bytes(), EmbeddingFormat::FasttextText, "t").is_err());
    }

    #[test]
    fn table_mean() {
        let t = EmbeddingTable::from_rows(&[vec![1.0, 2.0], vec![3.0, 6.0]]).unwrap();
        assert_eq!(t.grand_mean(), vec![2.0, 4.0]);
        assert!(EmbeddingTable::new(2, vec![1.0, f64::NAN]).is_err());
    }
}
