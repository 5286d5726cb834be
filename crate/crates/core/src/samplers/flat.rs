//! Flat collapsed Gibbs sampler: LDA with [`Multinomial`](super::Multinomial)
//! topics, Gaussian LDA with [`GaussianEmission`](super::GaussianEmission).

use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::corpus::{Document, WordId};
use crate::math::{ln_gamma, sample_log_categorical};
use crate::tree::TopicPayload;

use super::{stream_rng, Emission, EpochDiagnostics, GibbsSampler, Hyperparams, SamplerError};

#[derive(Debug)]
pub struct FlatSampler<E: Emission> {
    emission: E,
    hyper: Hyperparams,
    seed: u64,
    epoch: usize,
    docs: Vec<Vec<WordId>>,
    z: Vec<Vec<u32>>,
    doc_topic: Vec<Vec<u32>>,
    topics: Vec<E::Payload>,
    evals: AtomicU64,
    parallel: bool,
}

impl<E: Emission> FlatSampler<E> {
    /// Uniform random initial topics drawn from the initialization stream.
    pub fn new(emission: E, docs: &[Document], hyper: &Hyperparams, seed: u64) -> Result<Self, SamplerError> {
        let k = hyper.num_topics;
        if k == 0 {
            return Err(SamplerError::Config("num_topics must be positive".into()));
        }
        let mut rng = stream_rng(seed, None);
        let z = docs
            .iter()
            .map(|d| d.tokens.iter().map(|_| rng.random_range(0..k as u32)).collect())
            .collect();
        Self::from_assignments(emission, docs, hyper, seed, 0, z)
    }

    /// Rebuild a sampler from stored topic assignments.
    pub fn from_assignments(
        emission: E,
        docs: &[Document],
        hyper: &Hyperparams,
        seed: u64,
        epoch: usize,
        z: Vec<Vec<u32>>,
    ) -> Result<Self, SamplerError> {
        let k = hyper.num_topics;
        if z.len() != docs.len() {
            return Err(SamplerError::Checkpoint(format!(
                "{} assignment rows for {} documents",
                z.len(),
                docs.len()
            )));
        }
        let v = emission.vocab_size() as WordId;
        for (d, (doc, zd)) in docs.iter().zip(&z).enumerate() {
            if zd.len() != doc.tokens.len() {
                return Err(SamplerError::Checkpoint(format!("document {d}: assignment length mismatch")));
            }
            if zd.iter().any(|&t| t as usize >= k) {
                return Err(SamplerError::Checkpoint(format!("document {d}: topic id out of range")));
            }
            if doc.tokens.iter().any(|&w| w >= v) {
                return Err(SamplerError::Config(format!("document {d}: word id outside the emission vocabulary")));
            }
        }
        let mut s = Self {
            topics: (0..k).map(|_| emission.empty_payload(0)).collect(),
            emission,
            hyper: hyper.clone(),
            seed,
            epoch,
            docs: docs.iter().map(|d| d.tokens.clone()).collect(),
            doc_topic: Vec::new(),
            z,
            evals: AtomicU64::new(0),
            parallel: false,
        };
        s.refresh()?;
        Ok(s)
    }

    /// Score topics concurrently inside each conditional.
    pub fn set_parallel(&mut self, on: bool) {
        self.parallel = on;
    }
    pub fn set_density_evaluations(&mut self, total: u64) {
        self.evals.store(total, Ordering::Relaxed);
    }

    pub fn emission(&self) -> &E {
        &self.emission
    }
    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hyper
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn num_topics(&self) -> usize {
        self.topics.len()
    }
    pub fn documents(&self) -> &[Vec<WordId>] {
        &self.docs
    }
    pub fn assignments(&self) -> &[Vec<u32>] {
        &self.z
    }
    pub fn topic(&self, k: usize) -> &E::Payload {
        &self.topics[k]
    }
    pub fn doc_topic_counts(&self, d: usize) -> &[u32] {
        &self.doc_topic[d]
    }

    /// Recompute every count and payload from the assignments.
    pub fn refresh(&mut self) -> Result<(), SamplerError> {
        let (doc_topic, topics) = self.recount()?;
        self.doc_topic = doc_topic;
        self.topics = topics;
        Ok(())
    }

    #[allow(clippy::type_complexity)]
    fn recount(&self) -> Result<(Vec<Vec<u32>>, Vec<E::Payload>), SamplerError> {
        let k = self.hyper.num_topics;
        let mut words: Vec<Vec<WordId>> = vec![Vec::new(); k];
        let mut doc_topic = vec![vec![0u32; k]; self.docs.len()];
        for (d, (doc, zd)) in self.docs.iter().zip(&self.z).enumerate() {
            for (&w, &t) in doc.iter().zip(zd) {
                words[t as usize].push(w);
                doc_topic[d][t as usize] += 1;
            }
        }
        let topics = words
            .iter()
            .map(|ws| self.emission.rebuild(0, ws))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((doc_topic, topics))
    }

    /// Unnormalized `log p(z_{dn} = k | rest)` for every topic, with token
    /// `(d, ·)` already removed: `log(α + N_dk) + log p(word | topic k)`.
    pub fn token_log_weights(&self, d: usize, word: WordId) -> Vec<f64> {
        let alpha = self.hyper.alpha;
        let nk = &self.doc_topic[d];
        let score = |k: usize| (alpha + nk[k] as f64).ln() + self.emission.log_predictive(&self.topics[k], word);
        self.evals.fetch_add(self.topics.len() as u64, Ordering::Relaxed);
        if self.parallel {
            (0..self.topics.len()).into_par_iter().map(score).collect()
        } else {
            (0..self.topics.len()).map(score).collect()
        }
    }

    pub fn remove_token(&mut self, d: usize, n: usize) -> Result<(), SamplerError> {
        let k = self.z[d][n] as usize;
        self.emission.remove(&mut self.topics[k], self.docs[d][n])?;
        self.doc_topic[d][k] -= 1;
        Ok(())
    }

    pub fn add_token(&mut self, d: usize, n: usize, k: usize) -> Result<(), SamplerError> {
        self.emission.add(&mut self.topics[k], self.docs[d][n])?;
        self.doc_topic[d][k] += 1;
        self.z[d][n] = k as u32;
        Ok(())
    }

    /// Resample the topic of token `(d, n)`.
    pub fn token_step<R: Rng + ?Sized>(&mut self, d: usize, n: usize, rng: &mut R) -> Result<usize, SamplerError> {
        self.remove_token(d, n)?;
        let lw = self.token_log_weights(d, self.docs[d][n]);
        let k = sample_log_categorical(&lw, rng);
        self.add_token(d, n, k)?;
        Ok(k)
    }

    fn doc_order<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.docs.len()).collect();
        if self.hyper.shuffle_documents {
            order.shuffle(rng);
        }
        order
    }
}

impl<E: Emission> GibbsSampler for FlatSampler<E> {
    fn epoch(&self) -> usize {
        self.epoch
    }

    fn run_epoch(&mut self) -> Result<EpochDiagnostics, SamplerError> {
        let mut rng = stream_rng(self.seed, Some(self.epoch));
        self.refresh()?;
        let before = self.density_evaluations();
        for d in self.doc_order(&mut rng) {
            for n in 0..self.docs[d].len() {
                self.token_step(d, n, &mut rng)?;
            }
        }
        self.epoch += 1;
        let total = self.density_evaluations();
        Ok(EpochDiagnostics {
            epoch: self.epoch,
            log_likelihood: self.joint_log_likelihood(),
            topics: self.topics.iter().filter(|t| t.token_count() > 0).count(),
            paths: 1,
            density_evals: total - before,
            density_evals_total: total,
            wall_time_ms: None,
        })
    }

    /// `log p(z, w)`: Dirichlet-multinomial document terms plus per-topic
    /// evidence.
    fn joint_log_likelihood(&self) -> f64 {
        let alpha = self.hyper.alpha;
        let k = self.topics.len() as f64;
        let lg_alpha = ln_gamma(alpha);
        let docs: f64 = self
            .doc_topic
            .iter()
            .map(|nk| {
                let n: u32 = nk.iter().sum();
                ln_gamma(k * alpha) - ln_gamma(k * alpha + n as f64)
                    + nk.iter()
                        .filter(|&&c| c > 0)
                        .map(|&c| ln_gamma(alpha + c as f64) - lg_alpha)
                        .sum::<f64>()
            })
            .sum();
        docs + self.topics.iter().map(|t| self.emission.log_evidence(t)).sum::<f64>()
    }

    fn check_counts(&self) -> Result<(), SamplerError> {
        let (doc_topic, topics) = self.recount()?;
        if doc_topic != self.doc_topic {
            return Err(SamplerError::Bookkeeping("document-topic counts differ from recount".into()));
        }
        for (k, (a, b)) in topics.iter().zip(&self.topics).enumerate() {
            if !self.emission.counts_equal(a, b) {
                return Err(SamplerError::Bookkeeping(format!("topic {k} payload differs from recount")));
            }
        }
        Ok(())
    }

    fn density_evaluations(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::Multinomial;

    fn docs() -> Vec<Document> {
        vec![
            Document { doc_id: 0, label: None, tokens: vec![0, 1, 2, 0] },
            Document { doc_id: 1, label: None, tokens: vec![2, 2, 1] },
        ]
    }

    fn hyper(k: usize) -> Hyperparams {
        Hyperparams {
            num_topics: k,
            ..Hyperparams::default()
        }
    }

    #[test]
    fn symmetric_state_gives_uniform_conditional() {
        let e = Multinomial::new(3, vec![0.1]).unwrap();
        let d = vec![Document { doc_id: 0, label: None, tokens: vec![0, 0] }];
        let mut s = FlatSampler::from_assignments(e, &d, &hyper(2), 1, 0, vec![vec![0, 1]]).unwrap();
        s.remove_token(0, 0).unwrap();
        s.remove_token(0, 1).unwrap();
        let lw = s.token_log_weights(0, 0);
        assert_eq!(lw[0], lw[1]);
    }

    #[test]
    fn counts_stay_coherent_over_epochs() {
        let e = Multinomial::new(3, vec![0.1]).unwrap();
        let mut s = FlatSampler::new(e, &docs(), &hyper(3), 9).unwrap();
        for _ in 0..5 {
            s.run_epoch().unwrap();
            s.check_counts().unwrap();
        }
        assert_eq!(s.epoch(), 5);
        assert_eq!(s.density_evaluations(), 5 * 7 * 3);
    }

    #[test]
    fn zero_epochs_leave_state_unchanged() {
        let e = Multinomial::new(3, vec![0.1]).unwrap();
        let mut s = FlatSampler::new(e, &docs(), &hyper(2), 4).unwrap();
        let z = s.assignments().to_vec();
        s.train(0, &mut |_| {}).unwrap();
        assert_eq!(s.assignments(), &z[..]);
    }

    #[test]
    fn rejects_out_of_range_assignment() {
        let e = Multinomial::new(3, vec![0.1]).unwrap();
        let z = vec![vec![0, 0, 5, 0], vec![0, 0, 0]];
        assert!(FlatSampler::from_assignments(e, &docs(), &hyper(2), 0, 0, z).is_err());
    }
}
