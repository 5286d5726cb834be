//! Left-to-right held-out likelihood.
//!
//! Each document is processed token by token with `R` particles, each
//! carrying a path and the slot (topic or level) assignments of the tokens
//! seen so far. At step `n` every particle contributes its exact one-step
//! predictive `Σ_s θ̂[s][w_n] p(s | earlier slots)`; the average over
//! particles multiplies into the estimate, particles are resampled in
//! proportion to their predictive, the new token's slot is drawn from its
//! posterior, and earlier slots (and the path) are optionally refreshed by
//! one Gibbs sweep. The product of averages is an unbiased estimate of
//! `p(w_1..w_N)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, WordId};
use crate::math::{log_sum_exp, normalize_log, sample_log_categorical};
use crate::samplers::{gem_level_log_prior, Emission, FlatSampler, HierSampler, Model};

use super::EvalError;

/// Prior over a document's slots given its earlier slot counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SlotPrior {
    /// Symmetric Dirichlet over topics.
    Dirichlet { alpha: f64 },
    /// Collapsed GEM over levels, truncated and renormalized.
    Gem { m: f64, b: f64 },
}

impl SlotPrior {
    /// Normalized `log p(slot | counts)` for every slot.
    pub fn log_probs(&self, counts: &[u32]) -> Vec<f64> {
        match *self {
            SlotPrior::Dirichlet { alpha } => {
                let n: u32 = counts.iter().sum();
                let z = (alpha * counts.len() as f64 + n as f64).ln();
                counts.iter().map(|&c| (alpha + c as f64).ln() - z).collect()
            }
            SlotPrior::Gem { m, b } => {
                let lw = gem_level_log_prior(counts, m, b);
                let z = log_sum_exp(&lw);
                lw.into_iter().map(|x| x - z).collect()
            }
        }
    }
}

/// One path through the topic rows: slot `s` emits from `topics[s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeldoutPath {
    pub log_prior: f64,
    pub topics: Vec<usize>,
}

/// Frozen snapshot of a trained model as seen by a new document.
#[derive(Debug, Clone)]
pub struct HeldoutModel {
    log_theta: Vec<Vec<f64>>,
    paths: Vec<HeldoutPath>,
    slot_prior: SlotPrior,
    slots: usize,
}

impl HeldoutModel {
    pub fn new(log_theta: Vec<Vec<f64>>, paths: Vec<HeldoutPath>, slot_prior: SlotPrior) -> Result<Self, EvalError> {
        let slots = paths.first().map_or(0, |p| p.topics.len());
        if slots == 0 {
            return Err(EvalError::Config("held-out model needs at least one path with slots".into()));
        }
        if paths
            .iter()
            .any(|p| p.topics.len() != slots || p.topics.iter().any(|&t| t >= log_theta.len()))
        {
            return Err(EvalError::Config("held-out paths reference missing topic rows".into()));
        }
        let v = log_theta[0].len();
        if log_theta.iter().any(|r| r.len() != v) {
            return Err(EvalError::Config("topic rows differ in vocabulary size".into()));
        }
        Ok(Self {
            log_theta,
            paths,
            slot_prior,
            slots,
        })
    }

    /// Flat mixture of `K` topic rows with a symmetric Dirichlet.
    pub fn flat(log_theta: Vec<Vec<f64>>, alpha: f64) -> Result<Self, EvalError> {
        let path = HeldoutPath {
            log_prior: 0.0,
            topics: (0..log_theta.len()).collect(),
        };
        Self::new(log_theta, vec![path], SlotPrior::Dirichlet { alpha })
    }

    pub fn from_flat<E: Emission>(s: &FlatSampler<E>) -> Result<Self, EvalError> {
        let e = s.emission();
        let rows = (0..s.num_topics())
            .into_par_iter()
            .map(|k| e.topic_word_log_probs(s.topic(k)))
            .collect();
        Self::flat(rows, s.hyperparams().alpha)
    }

    /// Existing paths with their nCRP predictive prior plus one new-branch
    /// candidate per internal node; hypothetical nodes emit from prior-only
    /// rows.
    pub fn from_hier<E: Emission>(s: &HierSampler<E>) -> Result<Self, EvalError> {
        let tree = s.tree();
        let e = s.emission();
        let depth = tree.depth();
        let ids: Vec<usize> = tree.nodes().map(|n| n.id).collect();
        let mut row_of = vec![usize::MAX; tree.next_id()];
        for (i, &id) in ids.iter().enumerate() {
            row_of[id] = i;
        }
        let mut rows: Vec<Vec<f64>> = ids
            .par_iter()
            .map(|&id| e.topic_word_log_probs(&tree.node(id).unwrap().payload))
            .collect();
        let fresh_base = rows.len();
        rows.extend(
            (0..depth)
                .into_par_iter()
                .map(|l| e.topic_word_log_probs(&e.empty_payload(l)))
                .collect::<Vec<_>>(),
        );
        let mut paths = Vec::new();
        for c in tree.enumerate_paths() {
            let topics = (0..depth)
                .map(|l| c.node_at(l).map_or(fresh_base + l, |id| row_of[id]))
                .collect();
            paths.push(HeldoutPath {
                log_prior: tree.path_log_prior(&c).map_err(crate::samplers::SamplerError::from)?,
                topics,
            });
        }
        let h = s.hyperparams();
        Self::new(rows, paths, SlotPrior::Gem { m: h.m, b: h.b })
    }

    pub fn from_model(model: &Model) -> Result<Self, EvalError> {
        match model {
            Model::Lda(s) => Self::from_flat(s),
            Model::Glda(s) => Self::from_flat(s),
            Model::Hlda(s) => Self::from_hier(s),
            Model::Ghlda(s) => Self::from_hier(s),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.log_theta[0].len()
    }
    pub fn paths(&self) -> &[HeldoutPath] {
        &self.paths
    }
    pub fn log_theta(&self) -> &[Vec<f64>] {
        &self.log_theta
    }
    pub fn slot_prior(&self) -> SlotPrior {
        self.slot_prior
    }

    /// `log p(w)` by summing over every slot sequence and path.
    /// Exponential in the document length; for small test oracles.
    pub fn exact_log_marginal(&self, words: &[WordId]) -> f64 {
        let mut per_path = Vec::with_capacity(self.paths.len());
        for p in &self.paths {
            let mut acc = Vec::new();
            let mut counts = vec![0u32; self.slots];
            self.enumerate(p, words, 0, &mut counts, 0.0, &mut acc);
            per_path.push(p.log_prior + log_sum_exp(&acc));
        }
        log_sum_exp(&per_path)
    }

    fn enumerate(&self, p: &HeldoutPath, words: &[WordId], n: usize, counts: &mut [u32], lp: f64, acc: &mut Vec<f64>) {
        if n == words.len() {
            acc.push(lp);
            return;
        }
        let prior = self.slot_prior.log_probs(counts);
        for s in 0..self.slots {
            let step = prior[s] + self.log_theta[p.topics[s]][words[n] as usize];
            counts[s] += 1;
            self.enumerate(p, words, n + 1, counts, lp + step, acc);
            counts[s] -= 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeldoutConfig {
    pub particles: usize,
    pub seed: u64,
    /// Gibbs sweep over earlier slots (and the path) after each token.
    pub rejuvenate: bool,
}

impl Default for HeldoutConfig {
    fn default() -> Self {
        Self {
            particles: 20,
            seed: 0,
            rejuvenate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocHeldout {
    pub doc_id: usize,
    pub tokens: usize,
    pub log_likelihood: f64,
    /// Delta-method standard error of `log_likelihood`.
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldoutResult {
    pub documents: Vec<DocHeldout>,
    pub mean_log_likelihood: f64,
    pub particles: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
struct Particle {
    path: usize,
    counts: Vec<u32>,
    z: Vec<u32>,
}

/// Estimate one document with its own random stream.
pub fn left_to_right_document(
    model: &HeldoutModel,
    words: &[WordId],
    config: &HeldoutConfig,
    rng: &mut impl Rng,
) -> Result<(f64, f64), EvalError> {
    let r = config.particles;
    if r < 1 {
        return Err(EvalError::Config("at least one particle is required".into()));
    }
    if let Some(&w) = words.iter().find(|&&w| w as usize >= model.vocab_size()) {
        return Err(EvalError::Config(format!("word id {w} outside the model vocabulary")));
    }
    let path_prior: Vec<f64> = model.paths.iter().map(|p| p.log_prior).collect();
    let mut particles: Vec<Particle> = (0..r)
        .map(|_| Particle {
            path: if path_prior.len() == 1 { 0 } else { sample_log_categorical(&path_prior, rng) },
            counts: vec![0; model.slots],
            z: Vec::with_capacity(words.len()),
        })
        .collect();

    let mut log_p = 0.0;
    let mut var = 0.0;
    let mut slot_lw: Vec<Vec<f64>> = vec![Vec::new(); r];
    let mut pred = vec![0.0; r];
    for (n, &w) in words.iter().enumerate() {
        for (i, p) in particles.iter().enumerate() {
            let topics = &model.paths[p.path].topics;
            let mut lw = model.slot_prior.log_probs(&p.counts);
            for (s, x) in lw.iter_mut().enumerate() {
                *x += model.log_theta[topics[s]][w as usize];
            }
            pred[i] = log_sum_exp(&lw);
            slot_lw[i] = lw;
        }
        let step = log_sum_exp(&pred) - (r as f64).ln();
        log_p += step;
        if r > 1 {
            let dev: f64 = pred.iter().map(|&x| ((x - step).exp() - 1.0).powi(2)).sum();
            var += dev / ((r - 1) * r) as f64;
        }

        let ancestors = systematic_resample(&normalize_log(&pred), rng);
        let mut next = Vec::with_capacity(r);
        for a in ancestors {
            let mut p = particles[a].clone();
            let s = sample_log_categorical(&slot_lw[a], rng);
            p.counts[s] += 1;
            p.z.push(s as u32);
            next.push(p);
        }
        particles = next;
        if config.rejuvenate {
            for p in &mut particles {
                rejuvenate(model, &words[..=n], p, rng);
            }
        }
    }
    Ok((log_p, var.sqrt()))
}

fn rejuvenate(model: &HeldoutModel, words: &[WordId], p: &mut Particle, rng: &mut impl Rng) {
    for (i, &w) in words.iter().enumerate() {
        let old = p.z[i] as usize;
        p.counts[old] -= 1;
        let topics = &model.paths[p.path].topics;
        let mut lw = model.slot_prior.log_probs(&p.counts);
        for (s, x) in lw.iter_mut().enumerate() {
            *x += model.log_theta[topics[s]][w as usize];
        }
        let s = sample_log_categorical(&lw, rng);
        p.counts[s] += 1;
        p.z[i] = s as u32;
    }
    if model.paths.len() > 1 {
        let scores: Vec<f64> = model
            .paths
            .iter()
            .map(|c| {
                c.log_prior
                    + words
                        .iter()
                        .zip(&p.z)
                        .map(|(&w, &s)| model.log_theta[c.topics[s as usize]][w as usize])
                        .sum::<f64>()
            })
            .collect();
        p.path = sample_log_categorical(&scores, rng);
    }
}

/// Ancestor indices by systematic resampling of normalized weights.
fn systematic_resample(weights: &[f64], rng: &mut impl Rng) -> Vec<usize> {
    let r = weights.len();
    let u0: f64 = rng.random::<f64>() / r as f64;
    let mut out = Vec::with_capacity(r);
    let mut cum = weights[0];
    let mut j = 0;
    for i in 0..r {
        let u = u0 + i as f64 / r as f64;
        while u > cum && j + 1 < r {
            j += 1;
            cum += weights[j];
        }
        out.push(j);
    }
    out
}

/// Held-out log-likelihood of every test document, evaluated concurrently
/// with per-document streams and merged in input order.
pub fn left_to_right(model: &HeldoutModel, docs: &[Document], config: &HeldoutConfig) -> Result<HeldoutResult, EvalError> {
    if config.particles < 1 {
        return Err(EvalError::Config("at least one particle is required".into()));
    }
    let documents = docs
        .par_iter()
        .map(|d| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(d.doc_id as u64);
            let (ll, se) = left_to_right_document(model, &d.tokens, config, &mut rng)?;
            Ok(DocHeldout {
                doc_id: d.doc_id,
                tokens: d.tokens.len(),
                log_likelihood: ll,
                std_error: se,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let mean = if documents.is_empty() {
        0.0
    } else {
        documents.iter().map(|d| d.log_likelihood).sum::<f64>() / documents.len() as f64
    };
    Ok(HeldoutResult {
        documents,
        mean_log_likelihood: mean,
        particles: config.particles,
        seed: config.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows() -> Vec<Vec<f64>> {
        vec![
            vec![0.7f64.ln(), 0.2f64.ln(), 0.1f64.ln()],
            vec![0.1f64.ln(), 0.3f64.ln(), 0.6f64.ln()],
        ]
    }

    #[test]
    fn single_topic_is_exact_for_any_particle_count() {
        let m = HeldoutModel::flat(vec![rows()[0].clone()], 0.1).unwrap();
        let words = [0, 2, 1, 0];
        let expected: f64 = words.iter().map(|&w| rows()[0][w as usize]).sum();
        for r in [1, 3, 20] {
            let cfg = HeldoutConfig { particles: r, seed: 5, rejuvenate: true };
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let (ll, _) = left_to_right_document(&m, &words, &cfg, &mut rng).unwrap();
            assert!((ll - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn dirichlet_slot_prior_normalizes() {
        let p = SlotPrior::Dirichlet { alpha: 0.3 }.log_probs(&[2, 0, 5]);
        assert!((log_sum_exp(&p)).abs() < 1e-14);
        let g = SlotPrior::Gem { m: 0.5, b: 2.0 }.log_probs(&[1, 1, 0]);
        assert!((log_sum_exp(&g)).abs() < 1e-14);
    }

    #[test]
    fn estimate_is_close_to_exact_marginal() {
        let m = HeldoutModel::flat(rows(), 0.5).unwrap();
        let words = [0, 2, 2];
        let exact = m.exact_log_marginal(&words);
        let cfg = HeldoutConfig { particles: 5000, seed: 0, rejuvenate: true };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (ll, se) = left_to_right_document(&m, &words, &cfg, &mut rng).unwrap();
        assert!((ll - exact).abs() < 4.0 * se + 1e-3, "{ll} {exact} {se}");
    }

    #[test]
    fn zero_particles_is_config_error() {
        let m = HeldoutModel::flat(rows(), 0.5).unwrap();
        let cfg = HeldoutConfig { particles: 0, seed: 0, rejuvenate: false };
        assert!(left_to_right(&m, &[], &cfg).is_err());
    }

    #[test]
    fn systematic_resampling_keeps_proportions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = systematic_resample(&[0.5, 0.0, 0.25, 0.25], &mut rng);
        assert_eq!(a.iter().filter(|&&i| i == 0).count(), 2);
        assert!(!a.contains(&1));
    }
}
