//! Hierarchical collapsed Gibbs sampler over an nCRP tree with GEM level
//! proportions: hLDA with [`Multinomial`](super::Multinomial) topics, GhLDA
//! with [`GaussianEmission`](super::GaussianEmission).

use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::corpus::{Document, WordId};
use crate::math::{ln_gamma, sample_gumbel_max, sample_log_categorical};
use crate::tree::{CandidatePath, NodeId, Path, TopicPayload, TopicTree, TreeSnapshot};

use super::{
    gem_level_log_prior, gem_log_joint, stream_rng, Emission, EpochDiagnostics, GibbsSampler, Hyperparams,
    SamplerError,
};

/// Score of one candidate path for a detached document.
#[derive(Debug, Clone, PartialEq)]
pub struct PathScore {
    pub path: CandidatePath,
    pub log_prior: f64,
    pub log_likelihood: f64,
}

impl PathScore {
    pub fn total(&self) -> f64 {
        self.log_prior + self.log_likelihood
    }
}

/// Level of each vocabulary word from the corpus-frequency CDF cut into
/// `depth` equal-mass segments; the most frequent words map to level 0.
pub fn frequency_cdf_levels(frequencies: &[usize], depth: usize) -> Vec<u32> {
    let total: usize = frequencies.iter().sum();
    let mut order: Vec<usize> = (0..frequencies.len()).collect();
    order.sort_by_key(|&w| (std::cmp::Reverse(frequencies[w]), w));
    let mut levels = vec![0u32; frequencies.len()];
    let mut before = 0usize;
    for w in order {
        if total > 0 {
            let seg = (before as f64 / total as f64 * depth as f64).floor() as usize;
            levels[w] = seg.min(depth.saturating_sub(1)) as u32;
        }
        before += frequencies[w];
    }
    levels
}

#[derive(Debug)]
pub struct HierSampler<E: Emission> {
    emission: E,
    hyper: Hyperparams,
    seed: u64,
    epoch: usize,
    docs: Vec<Vec<WordId>>,
    levels: Vec<Vec<u32>>,
    level_counts: Vec<Vec<u32>>,
    tree: TopicTree<E::Payload>,
    evals: AtomicU64,
    parallel: bool,
}

impl<E: Emission> HierSampler<E> {
    /// Complete `branch_spec` skeleton, uniform random initial paths, pruned,
    /// and half-frequency-CDF half-uniform initial levels.
    pub fn new(emission: E, docs: &[Document], hyper: &Hyperparams, seed: u64) -> Result<Self, SamplerError> {
        let depth = hyper.depth();
        let mut rng = stream_rng(seed, None);
        let mut tree = TopicTree::complete(&hyper.branch_spec, hyper.gamma, |l| emission.empty_payload(l))?;
        let leaves = tree.existing_paths();
        for d in 0..docs.len() {
            let p = &leaves[rng.random_range(0..leaves.len())];
            tree.attach_existing(d, p)?;
        }
        tree.prune()?;

        let mut freq = vec![0usize; emission.vocab_size()];
        for d in docs {
            for &w in &d.tokens {
                if let Some(f) = freq.get_mut(w as usize) {
                    *f += 1;
                }
            }
        }
        let cdf = frequency_cdf_levels(&freq, depth);
        let levels = docs
            .iter()
            .map(|d| {
                d.tokens
                    .iter()
                    .map(|&w| {
                        if rng.random_bool(0.5) {
                            cdf.get(w as usize).copied().unwrap_or(0)
                        } else {
                            rng.random_range(0..depth as u32)
                        }
                    })
                    .collect()
            })
            .collect();
        Self::assemble(emission, docs, hyper, seed, 0, tree, levels)
    }

    /// Rebuild a sampler from a stored topology, paths and levels.
    #[allow(clippy::too_many_arguments)]
    pub fn from_assignments(
        emission: E,
        docs: &[Document],
        hyper: &Hyperparams,
        seed: u64,
        epoch: usize,
        snapshot: &TreeSnapshot,
        paths: &[Path],
        levels: Vec<Vec<u32>>,
    ) -> Result<Self, SamplerError> {
        let mut tree = TopicTree::from_snapshot(snapshot, |l| emission.empty_payload(l))?;
        if paths.len() != docs.len() {
            return Err(SamplerError::Checkpoint(format!(
                "{} paths for {} documents",
                paths.len(),
                docs.len()
            )));
        }
        for (d, p) in paths.iter().enumerate() {
            tree.attach_existing(d, p)?;
        }
        for rec in &snapshot.nodes {
            let live = tree.node(rec.id).map_or(0, |n| n.doc_count);
            if live != rec.doc_count || (live == 0 && rec.parent.is_some()) {
                return Err(SamplerError::Checkpoint(format!(
                    "node {} document count {} does not match stored {}",
                    rec.id, live, rec.doc_count
                )));
            }
        }
        Self::assemble(emission, docs, hyper, seed, epoch, tree, levels)
    }

    fn assemble(
        emission: E,
        docs: &[Document],
        hyper: &Hyperparams,
        seed: u64,
        epoch: usize,
        tree: TopicTree<E::Payload>,
        levels: Vec<Vec<u32>>,
    ) -> Result<Self, SamplerError> {
        let depth = tree.depth();
        if emission.levels() != depth {
            return Err(SamplerError::Config(format!(
                "emission has {} level priors for a depth-{depth} tree",
                emission.levels()
            )));
        }
        if levels.len() != docs.len() {
            return Err(SamplerError::Checkpoint("level rows do not match documents".into()));
        }
        let v = emission.vocab_size() as WordId;
        for (d, (doc, ld)) in docs.iter().zip(&levels).enumerate() {
            if ld.len() != doc.tokens.len() || ld.iter().any(|&l| l as usize >= depth) {
                return Err(SamplerError::Checkpoint(format!("document {d}: invalid level assignments")));
            }
            if doc.tokens.iter().any(|&w| w >= v) {
                return Err(SamplerError::Config(format!("document {d}: word id outside the emission vocabulary")));
            }
        }
        let mut s = Self {
            emission,
            hyper: hyper.clone(),
            seed,
            epoch,
            docs: docs.iter().map(|d| d.tokens.clone()).collect(),
            levels,
            level_counts: Vec::new(),
            tree,
            evals: AtomicU64::new(0),
            parallel: false,
        };
        s.refresh()?;
        Ok(s)
    }

    /// Score nodes concurrently inside each path conditional.
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
    pub fn depth(&self) -> usize {
        self.tree.depth()
    }
    pub fn tree(&self) -> &TopicTree<E::Payload> {
        &self.tree
    }
    pub fn documents(&self) -> &[Vec<WordId>] {
        &self.docs
    }
    pub fn levels(&self) -> &[Vec<u32>] {
        &self.levels
    }
    pub fn level_counts(&self, d: usize) -> &[u32] {
        &self.level_counts[d]
    }
    pub fn path(&self, d: usize) -> Result<Path, SamplerError> {
        Ok(self.tree.path_of(d)?)
    }
    pub fn paths(&self) -> Result<Vec<Path>, SamplerError> {
        (0..self.docs.len()).map(|d| self.path(d)).collect()
    }

    /// New branches are suppressed during the first `freeze_new_leaves_for`
    /// epochs.
    pub fn new_branches_allowed(&self) -> bool {
        self.epoch >= self.hyper.freeze_new_leaves_for
    }

    /// Recompute level counts and every node payload from the assignments.
    pub fn refresh(&mut self) -> Result<(), SamplerError> {
        let (level_counts, words) = self.recount()?;
        self.level_counts = level_counts;
        let ids: Vec<NodeId> = self.tree.nodes().map(|n| n.id).collect();
        for id in ids {
            let level = self.tree.node(id).unwrap().level;
            let p = self.emission.rebuild(level, words.get(id).map_or(&[][..], Vec::as_slice))?;
            *self.tree.payload_mut(id)? = p;
        }
        Ok(())
    }

    #[allow(clippy::type_complexity)]
    fn recount(&self) -> Result<(Vec<Vec<u32>>, Vec<Vec<WordId>>), SamplerError> {
        let depth = self.depth();
        let mut words: Vec<Vec<WordId>> = vec![Vec::new(); self.tree.next_id()];
        let mut level_counts = vec![vec![0u32; depth]; self.docs.len()];
        for (d, (doc, ld)) in self.docs.iter().zip(&self.levels).enumerate() {
            let path = self.tree.path_of(d)?;
            for (&w, &l) in doc.iter().zip(ld) {
                words[path.nodes()[l as usize]].push(w);
                level_counts[d][l as usize] += 1;
            }
        }
        Ok((level_counts, words))
    }

    fn words_by_level(&self, d: usize) -> Vec<Vec<WordId>> {
        let mut out = vec![Vec::new(); self.depth()];
        for (&w, &l) in self.docs[d].iter().zip(&self.levels[d]) {
            out[l as usize].push(w);
        }
        out
    }

    /// Remove document `d`'s tokens from its nodes and detach it from the
    /// tree (emptied nodes are collected).
    pub fn detach_document(&mut self, d: usize) -> Result<Path, SamplerError> {
        let path = self.tree.path_of(d)?;
        for (&w, &l) in self.docs[d].iter().zip(&self.levels[d]) {
            let p = self.tree.payload_mut(path.nodes()[l as usize])?;
            self.emission.remove(p, w)?;
        }
        Ok(self.tree.detach(d)?)
    }

    /// Attach document `d` along `path` and add its tokens at their levels.
    pub fn attach_document(&mut self, d: usize, path: &CandidatePath) -> Result<Path, SamplerError> {
        let emission = &self.emission;
        let path = self.tree.attach(d, path, |l| emission.empty_payload(l))?;
        for (&w, &l) in self.docs[d].iter().zip(&self.levels[d]) {
            let p = self.tree.payload_mut(path.nodes()[l as usize])?;
            self.emission.add(p, w)?;
        }
        Ok(path)
    }

    /// Scores of every candidate path for a detached document whose tokens
    /// at level `l` are `words[l]`. Each distinct node marginal is computed
    /// once; hypothetical nodes share one prior-only marginal per level.
    pub fn path_log_scores(&self, words: &[Vec<WordId>], allow_new: bool) -> Result<Vec<PathScore>, SamplerError> {
        let depth = self.depth();
        let mut candidates = self.tree.enumerate_paths();
        if !allow_new && candidates.iter().any(CandidatePath::is_existing) {
            candidates.retain(CandidatePath::is_existing);
        }

        let mut needed: Vec<NodeId> = Vec::new();
        let mut seen = vec![false; self.tree.next_id()];
        let mut fresh_needed = vec![false; depth];
        for c in &candidates {
            for (l, ws) in words.iter().enumerate() {
                if ws.is_empty() {
                    continue;
                }
                match c.node_at(l) {
                    Some(id) if !seen[id] => {
                        seen[id] = true;
                        needed.push(id);
                    }
                    Some(_) => {}
                    None => fresh_needed[l] = true,
                }
            }
        }

        let node_marginal = |id: &NodeId| {
            let n = self.tree.node(*id).expect("enumerated node");
            self.emission.log_marginal_set(&n.payload, &words[n.level])
        };
        let values: Vec<f64> = if self.parallel {
            needed.par_iter().map(node_marginal).collect()
        } else {
            needed.iter().map(node_marginal).collect()
        };
        let mut cache = vec![0.0; self.tree.next_id()];
        for (&id, &v) in needed.iter().zip(&values) {
            cache[id] = v;
        }
        let mut fresh = vec![0.0; depth];
        for l in 0..depth {
            if fresh_needed[l] {
                fresh[l] = self.emission.log_marginal_set(&self.emission.empty_payload(l), &words[l]);
            }
        }
        let evaluations = needed.len() + fresh_needed.iter().filter(|&&f| f).count();
        self.evals.fetch_add(evaluations as u64, Ordering::Relaxed);

        candidates
            .into_iter()
            .map(|c| {
                let log_likelihood = (0..depth)
                    .filter(|&l| !words[l].is_empty())
                    .map(|l| c.node_at(l).map_or(fresh[l], |id| cache[id]))
                    .sum();
                Ok(PathScore {
                    log_prior: self.tree.path_log_prior(&c)?,
                    log_likelihood,
                    path: c,
                })
            })
            .collect()
    }

    /// Resample the path of document `d` (detach, score, Gumbel-max, attach).
    pub fn path_step<R: Rng + ?Sized>(&mut self, d: usize, allow_new: bool, rng: &mut R) -> Result<Path, SamplerError> {
        self.detach_document(d)?;
        let words = self.words_by_level(d);
        let scores = self.path_log_scores(&words, allow_new)?;
        let totals: Vec<f64> = scores.iter().map(PathScore::total).collect();
        let pick = sample_gumbel_max(&totals, rng);
        self.attach_document(d, &scores[pick].path)
    }

    /// Unnormalized level weights for a token of `word` in document `d`
    /// whose own assignment is already removed: GEM prior plus predictive at
    /// the path node of each level.
    pub fn level_log_weights(&self, d: usize, word: WordId, path: &Path) -> Vec<f64> {
        let mut lw = gem_level_log_prior(&self.level_counts[d], self.hyper.m, self.hyper.b);
        for (l, w) in lw.iter_mut().enumerate() {
            let node = self.tree.node(path.nodes()[l]).expect("path node");
            *w += self.emission.log_predictive(&node.payload, word);
        }
        self.evals.fetch_add(lw.len() as u64, Ordering::Relaxed);
        lw
    }

    pub fn remove_token(&mut self, d: usize, n: usize, path: &Path) -> Result<(), SamplerError> {
        let l = self.levels[d][n] as usize;
        self.emission.remove(self.tree.payload_mut(path.nodes()[l])?, self.docs[d][n])?;
        self.level_counts[d][l] -= 1;
        Ok(())
    }

    pub fn add_token(&mut self, d: usize, n: usize, level: usize, path: &Path) -> Result<(), SamplerError> {
        self.emission.add(self.tree.payload_mut(path.nodes()[level])?, self.docs[d][n])?;
        self.level_counts[d][level] += 1;
        self.levels[d][n] = level as u32;
        Ok(())
    }

    /// Resample the level of token `(d, n)` on path `path` (the document's).
    pub fn level_step<R: Rng + ?Sized>(&mut self, d: usize, n: usize, path: &Path, rng: &mut R) -> Result<usize, SamplerError> {
        self.remove_token(d, n, path)?;
        let lw = self.level_log_weights(d, self.docs[d][n], path);
        let l = sample_log_categorical(&lw, rng);
        self.add_token(d, n, l, path)?;
        Ok(l)
    }

    fn doc_order<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.docs.len()).collect();
        if self.hyper.shuffle_documents {
            order.shuffle(rng);
        }
        order
    }

    /// nCRP log-probability of all current paths (documents exchangeable).
    pub fn crp_log_joint(&self) -> f64 {
        let gamma = self.tree.gamma();
        self.tree
            .nodes()
            .filter(|n| n.level + 1 < self.depth() && n.doc_count > 0)
            .map(|n| {
                let children = n.children.iter().map(|&c| self.tree.node(c).unwrap().doc_count);
                let j = n.children.len() as f64;
                j * gamma.ln() + children.map(|c| ln_gamma(c as f64)).sum::<f64>() + ln_gamma(gamma)
                    - ln_gamma(gamma + n.doc_count as f64)
            })
            .sum()
    }

    pub fn snapshot(&self) -> TreeSnapshot {
        self.tree.snapshot()
    }
}

impl<E: Emission> GibbsSampler for HierSampler<E> {
    fn epoch(&self) -> usize {
        self.epoch
    }

    fn run_epoch(&mut self) -> Result<EpochDiagnostics, SamplerError> {
        let mut rng = stream_rng(self.seed, Some(self.epoch));
        self.refresh()?;
        let allow_new = self.new_branches_allowed();
        let before = self.density_evaluations();
        for d in self.doc_order(&mut rng) {
            let path = self.path_step(d, allow_new, &mut rng)?;
            for n in 0..self.docs[d].len() {
                self.level_step(d, n, &path, &mut rng)?;
            }
        }
        self.epoch += 1;
        let total = self.density_evaluations();
        Ok(EpochDiagnostics {
            epoch: self.epoch,
            log_likelihood: self.joint_log_likelihood(),
            topics: self.tree.node_count(),
            paths: self.tree.existing_paths().len(),
            density_evals: total - before,
            density_evals_total: total,
            wall_time_ms: None,
        })
    }

    /// `log p(c, z, w)`: nCRP paths, collapsed GEM levels, node evidence.
    fn joint_log_likelihood(&self) -> f64 {
        let (m, b) = (self.hyper.m, self.hyper.b);
        let levels: f64 = self.level_counts.iter().map(|c| gem_log_joint(c, m, b)).sum();
        let nodes: f64 = self.tree.nodes().map(|n| self.emission.log_evidence(&n.payload)).sum();
        self.crp_log_joint() + levels + nodes
    }

    fn check_counts(&self) -> Result<(), SamplerError> {
        let (level_counts, words) = self.recount()?;
        if level_counts != self.level_counts {
            return Err(SamplerError::Bookkeeping("level counts differ from recount".into()));
        }
        for n in self.tree.nodes() {
            let fresh = self.emission.rebuild(n.level, &words[n.id])?;
            if !self.emission.counts_equal(&fresh, &n.payload) {
                return Err(SamplerError::Bookkeeping(format!("node {} payload differs from recount", n.id)));
            }
            let docs_below = if n.level + 1 == self.depth() {
                None
            } else {
                Some(n.children.iter().map(|&c| self.tree.node(c).unwrap().doc_count).sum::<usize>())
            };
            if docs_below.is_some_and(|s| s != n.doc_count) {
                return Err(SamplerError::Bookkeeping(format!("node {} document count is incoherent", n.id)));
            }
            if n.payload.token_count() > 0 && n.doc_count == 0 {
                return Err(SamplerError::Bookkeeping(format!("node {} holds tokens but no documents", n.id)));
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

    fn doc(id: usize, tokens: Vec<WordId>) -> Document {
        Document { doc_id: id, label: None, tokens }
    }

    fn hyper(spec: Vec<usize>) -> Hyperparams {
        Hyperparams {
            branch_spec: spec,
            freeze_new_leaves_for: 0,
            ..Hyperparams::default()
        }
    }

    #[test]
    fn frequency_cdf_puts_frequent_words_on_top() {
        assert_eq!(frequency_cdf_levels(&[8, 4, 2, 2], 4), vec![0, 2, 3, 3]);
        assert_eq!(frequency_cdf_levels(&[2, 8, 2, 4], 4), vec![3, 0, 3, 2]);
        assert_eq!(frequency_cdf_levels(&[8, 4, 2, 2], 1), vec![0; 4]);
    }

    #[test]
    fn depth_one_puts_every_token_on_level_zero() {
        let e = Multinomial::new(4, vec![1.0]).unwrap();
        let docs = vec![doc(0, vec![0, 1, 2, 3, 3])];
        let s = HierSampler::new(e, &docs, &hyper(vec![1]), 3).unwrap();
        assert!(s.levels()[0].iter().all(|&l| l == 0));
    }

    #[test]
    fn initialization_is_deterministic() {
        let docs: Vec<Document> = (0..20).map(|i| doc(i, vec![(i % 5) as u32, 1, 2, 0])).collect();
        let mk = || {
            let e = Multinomial::new(5, vec![2.0, 1.0, 0.5]).unwrap();
            HierSampler::new(e, &docs, &hyper(vec![1, 2, 2]), 11).unwrap()
        };
        let (a, b) = (mk(), mk());
        assert_eq!(a.levels(), b.levels());
        assert_eq!(a.paths().unwrap(), b.paths().unwrap());
        assert!(a.tree().node_count() <= 7);
    }

    #[test]
    fn detach_attach_roundtrip_restores_counts() {
        let docs: Vec<Document> = (0..6).map(|i| doc(i, vec![(i % 3) as u32, 1, 2])).collect();
        let e = Multinomial::new(3, vec![2.0, 1.0, 0.5]).unwrap();
        let mut s = HierSampler::new(e, &docs, &hyper(vec![1, 2, 2]), 5).unwrap();
        let ll = s.joint_log_likelihood();
        let before = s.path(2).unwrap();
        let snap = s.snapshot();
        s.detach_document(2).unwrap();
        // re-attach along the previous path, possibly recreating collected nodes
        let live: Vec<NodeId> = before.nodes().iter().copied().take_while(|&id| s.tree().node(id).is_some()).collect();
        let after = s
            .attach_document(2, &CandidatePath { prefix: live, depth: 3 })
            .unwrap();
        s.check_counts().unwrap();
        if after == before {
            assert_eq!(s.snapshot(), snap);
            assert!((s.joint_log_likelihood() - ll).abs() < 1e-10);
        }
    }

    #[test]
    fn epochs_keep_counts_coherent() {
        let docs: Vec<Document> = (0..12).map(|i| doc(i, vec![(i % 4) as u32, 1, 2, 3, (i % 2) as u32])).collect();
        let e = Multinomial::new(4, vec![2.0, 1.0, 0.5]).unwrap();
        let mut s = HierSampler::new(e, &docs, &hyper(vec![1, 2, 2]), 8).unwrap();
        for _ in 0..4 {
            let d = s.run_epoch().unwrap();
            s.check_counts().unwrap();
            assert!(d.log_likelihood.is_finite());
        }
    }

    #[test]
    fn frozen_epochs_never_grow_the_tree() {
        let docs: Vec<Document> = (0..10).map(|i| doc(i, vec![(i % 4) as u32, 1, 2])).collect();
        let e = Multinomial::new(4, vec![2.0, 1.0, 0.5]).unwrap();
        let mut h = hyper(vec![1, 2, 2]);
        h.gamma = 1e3;
        h.freeze_new_leaves_for = 3;
        let mut s = HierSampler::new(e, &docs, &h, 2).unwrap();
        let mut n = s.tree().node_count();
        for _ in 0..3 {
            s.run_epoch().unwrap();
            assert!(s.tree().node_count() <= n);
            n = s.tree().node_count();
        }
    }
}
