//! Topic emission models: Dirichlet-multinomial over word ids, or NIW
//! Gaussian over the words' embedding vectors.

use std::sync::Arc;

use crate::corpus::{EmbeddingTable, WordId};
use crate::gaussian::{GaussianTopicStats, NiwPrior};
use crate::math::{ln_gamma, log_sum_exp};
use crate::scalar::Scalar;
use crate::tree::TopicPayload;

use super::SamplerError;

/// Everything a sampler needs from a topic's word distribution.
pub trait Emission: Send + Sync {
    type Payload: TopicPayload + Clone + Send + Sync;

    fn vocab_size(&self) -> usize;
    /// Number of distinct per-level priors (1 for flat models).
    fn levels(&self) -> usize;
    fn empty_payload(&self, level: usize) -> Self::Payload;
    fn add(&self, p: &mut Self::Payload, word: WordId) -> Result<(), SamplerError>;
    fn remove(&self, p: &mut Self::Payload, word: WordId) -> Result<(), SamplerError>;
    /// `log p(word | topic data)`.
    fn log_predictive(&self, p: &Self::Payload, word: WordId) -> f64;
    /// `log p(words | topic data)` for a set of new observations.
    fn log_marginal_set(&self, p: &Self::Payload, words: &[WordId]) -> f64;
    /// `log p(topic data)` under the topic's prior.
    fn log_evidence(&self, p: &Self::Payload) -> f64;
    /// Rebuild a payload from scratch.
    fn rebuild(&self, level: usize, words: &[WordId]) -> Result<Self::Payload, SamplerError>;
    /// Exact agreement of the integer statistics of two payloads.
    fn counts_equal(&self, a: &Self::Payload, b: &Self::Payload) -> bool {
        a.token_count() == b.token_count()
    }
    /// Normalized `log θ̂_{topic, v}` over the whole vocabulary.
    fn topic_word_log_probs(&self, p: &Self::Payload) -> Vec<f64> {
        let raw: Vec<f64> = (0..self.vocab_size() as WordId)
            .map(|v| self.log_predictive(p, v))
            .collect();
        let z = log_sum_exp(&raw);
        raw.into_iter().map(|x| x - z).collect()
    }
}

/// Word-count table of one multinomial topic with its symmetric prior `η`.
#[derive(Debug, Clone, PartialEq)]
pub struct WordCounts {
    pub counts: Vec<u32>,
    pub total: usize,
    pub eta: f64,
}

impl TopicPayload for WordCounts {
    fn token_count(&self) -> usize {
        self.total
    }
}

/// Symmetric Dirichlet-multinomial topics with a per-level `η`.
#[derive(Debug, Clone)]
pub struct Multinomial {
    vocab_size: usize,
    eta: Vec<f64>,
}

impl Multinomial {
    pub fn new(vocab_size: usize, eta_per_level: Vec<f64>) -> Result<Self, SamplerError> {
        if vocab_size == 0 {
            return Err(SamplerError::Config("empty vocabulary".into()));
        }
        if eta_per_level.is_empty() || eta_per_level.iter().any(|&e| !(e > 0.0)) {
            return Err(SamplerError::Config(format!(
                "word prior must be positive, got {eta_per_level:?}"
            )));
        }
        Ok(Self {
            vocab_size,
            eta: eta_per_level,
        })
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }
}

impl Emission for Multinomial {
    type Payload = WordCounts;

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }
    fn levels(&self) -> usize {
        self.eta.len()
    }

    fn empty_payload(&self, level: usize) -> WordCounts {
        WordCounts {
            counts: vec![0; self.vocab_size],
            total: 0,
            eta: self.eta[level.min(self.eta.len() - 1)],
        }
    }

    fn add(&self, p: &mut WordCounts, word: WordId) -> Result<(), SamplerError> {
        p.counts[word as usize] += 1;
        p.total += 1;
        Ok(())
    }

    fn remove(&self, p: &mut WordCounts, word: WordId) -> Result<(), SamplerError> {
        let c = &mut p.counts[word as usize];
        if *c == 0 {
            return Err(SamplerError::Bookkeeping(format!("word {word} not present in topic")));
        }
        *c -= 1;
        p.total -= 1;
        Ok(())
    }

    fn log_predictive(&self, p: &WordCounts, word: WordId) -> f64 {
        let v = self.vocab_size as f64;
        ((p.eta + p.counts[word as usize] as f64) / (v * p.eta + p.total as f64)).ln()
    }

    fn log_marginal_set(&self, p: &WordCounts, words: &[WordId]) -> f64 {
        if words.is_empty() {
            return 0.0;
        }
        let mut sorted = words.to_vec();
        sorted.sort_unstable();
        let v = self.vocab_size as f64;
        let mut lp = ln_gamma(v * p.eta + p.total as f64) - ln_gamma(v * p.eta + (p.total + words.len()) as f64);
        for run in sorted.chunk_by(|a, b| a == b) {
            let n = p.counts[run[0] as usize] as f64;
            lp += ln_gamma(p.eta + n + run.len() as f64) - ln_gamma(p.eta + n);
        }
        lp
    }

    fn log_evidence(&self, p: &WordCounts) -> f64 {
        let v = self.vocab_size as f64;
        let mut lp = ln_gamma(v * p.eta) - ln_gamma(v * p.eta + p.total as f64);
        let lg_eta = ln_gamma(p.eta);
        for &c in p.counts.iter().filter(|&&c| c > 0) {
            lp += ln_gamma(p.eta + c as f64) - lg_eta;
        }
        lp
    }

    fn rebuild(&self, level: usize, words: &[WordId]) -> Result<WordCounts, SamplerError> {
        let mut p = self.empty_payload(level);
        for &w in words {
            p.counts[w as usize] += 1;
        }
        p.total = words.len();
        Ok(p)
    }

    fn counts_equal(&self, a: &WordCounts, b: &WordCounts) -> bool {
        a == b
    }

    fn topic_word_log_probs(&self, p: &WordCounts) -> Vec<f64> {
        (0..self.vocab_size as WordId)
            .map(|v| self.log_predictive(p, v))
            .collect()
    }
}

impl<T: Scalar> TopicPayload for GaussianTopicStats<T> {
    fn token_count(&self) -> usize {
        self.count()
    }
}

/// NIW Gaussian topics over embedding rows; level `l` uses `priors[l]`.
#[derive(Debug, Clone)]
pub struct GaussianEmission<T> {
    table: Arc<EmbeddingTable<T>>,
    priors: Vec<Arc<NiwPrior<T>>>,
}

impl<T: Scalar> GaussianEmission<T> {
    pub fn new(table: Arc<EmbeddingTable<T>>, priors: Vec<NiwPrior<T>>) -> Result<Self, SamplerError> {
        if priors.is_empty() {
            return Err(SamplerError::Config("at least one NIW prior is required".into()));
        }
        if let Some(p) = priors.iter().find(|p| p.dim() != table.dim()) {
            return Err(SamplerError::Config(format!(
                "prior dimension {} does not match embedding dimension {}",
                p.dim(),
                table.dim()
            )));
        }
        Ok(Self {
            table,
            priors: priors.into_iter().map(Arc::new).collect(),
        })
    }

    /// One base prior whose `Ψ` is scaled by `ratios[l]` at level `l`.
    pub fn with_level_ratios(
        table: Arc<EmbeddingTable<T>>,
        base: &NiwPrior<T>,
        ratios: &[f64],
    ) -> Result<Self, SamplerError> {
        let priors = ratios
            .iter()
            .map(|&r| base.with_scaled_psi(r))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(table, priors)
    }

    pub fn table(&self) -> &Arc<EmbeddingTable<T>> {
        &self.table
    }
    pub fn prior(&self, level: usize) -> &Arc<NiwPrior<T>> {
        &self.priors[level.min(self.priors.len() - 1)]
    }
}

impl<T: Scalar> Emission for GaussianEmission<T> {
    type Payload = GaussianTopicStats<T>;

    fn vocab_size(&self) -> usize {
        self.table.len()
    }
    fn levels(&self) -> usize {
        self.priors.len()
    }

    fn empty_payload(&self, level: usize) -> GaussianTopicStats<T> {
        GaussianTopicStats::new(self.prior(level).clone())
    }

    fn add(&self, p: &mut GaussianTopicStats<T>, word: WordId) -> Result<(), SamplerError> {
        Ok(p.add_point(self.table.row(word))?)
    }

    fn remove(&self, p: &mut GaussianTopicStats<T>, word: WordId) -> Result<(), SamplerError> {
        Ok(p.remove_point(self.table.row(word))?)
    }

    fn log_predictive(&self, p: &GaussianTopicStats<T>, word: WordId) -> f64 {
        p.log_predictive(self.table.row(word))
    }

    fn log_marginal_set(&self, p: &GaussianTopicStats<T>, words: &[WordId]) -> f64 {
        let pts: Vec<&[T]> = words.iter().map(|&w| self.table.row(w)).collect();
        p.log_marginal_set(&pts)
    }

    fn log_evidence(&self, p: &GaussianTopicStats<T>) -> f64 {
        p.log_evidence()
    }

    fn counts_equal(&self, a: &GaussianTopicStats<T>, b: &GaussianTopicStats<T>) -> bool {
        a.count() == b.count()
            && a.sum().iter().zip(b.sum()).all(|(x, y)| {
                let (x, y) = (x.as_f64(), y.as_f64());
                (x - y).abs() <= 1e-8 * (1.0 + x.abs().max(y.abs()))
            })
    }

    fn rebuild(&self, level: usize, words: &[WordId]) -> Result<GaussianTopicStats<T>, SamplerError> {
        Ok(GaussianTopicStats::from_points(
            self.prior(level).clone(),
            words.iter().map(|&w| self.table.row(w)),
        )?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dirichlet_multinomial_set_marginal_is_sequential_product() {
        let e = Multinomial::new(4, vec![0.5]).unwrap();
        let mut p = e.empty_payload(0);
        for w in [0, 0, 1, 3] {
            e.add(&mut p, w).unwrap();
        }
        let words = [1, 0, 1, 2, 1];
        let mut q = p.clone();
        let mut seq = 0.0;
        for &w in &words {
            seq += e.log_predictive(&q, w);
            e.add(&mut q, w).unwrap();
        }
        assert!((e.log_marginal_set(&p, &words) - seq).abs() < 1e-12);
        // evidence of q = evidence of p + marginal of the new words
        assert!((e.log_evidence(&q) - e.log_evidence(&p) - seq).abs() < 1e-12);
    }

    #[test]
    fn multinomial_predictive_normalizes() {
        let e = Multinomial::new(3, vec![0.1]).unwrap();
        let mut p = e.empty_payload(0);
        e.add(&mut p, 2).unwrap();
        let s: f64 = e.topic_word_log_probs(&p).iter().map(|x| x.exp()).sum();
        assert!((s - 1.0).abs() < 1e-14);
        assert!(e.remove(&mut p, 0).is_err());
    }

    #[test]
    fn per_level_eta() {
        let e = Multinomial::new(3, vec![2.0, 1.0, 0.5, 0.25]).unwrap();
        assert_eq!(e.empty_payload(3).eta, 0.25);
        assert_eq!(e.empty_payload(0).eta, 2.0);
    }
}
