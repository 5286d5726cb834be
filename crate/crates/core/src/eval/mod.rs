//! Evaluation: held-out likelihood, PMI coherence, polysemy audit and topic
//! summaries. Everything here reads frozen model state.

mod heldout;
mod pmi;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Vocabulary, WordId};
use crate::samplers::{Emission, FlatSampler, HierSampler, Model, ModelKind, SamplerError};
use crate::tree::NodeId;

pub use heldout::{
    left_to_right, left_to_right_document, DocHeldout, HeldoutConfig, HeldoutModel, HeldoutPath, HeldoutResult,
    SlotPrior,
};
pub use pmi::{build_cooccurrence, pair_pmi, pmi_coherence, CooccurrenceStats, PmiReport, TopicPmi, Window};

/// Minimum share of a word's tokens a group needs to count toward polysemy.
pub const POLYSEMY_MIN_SHARE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluation configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicWord {
    pub word_id: WordId,
    pub word: String,
    pub count: u32,
    /// Log predictive density of the word under the topic (tie-breaker).
    pub log_density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicReport {
    /// Flat topic index, or tree node id.
    pub topic: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<usize>,
    pub assignment_count: usize,
    pub top_words: Vec<TopicWord>,
}

/// Words ranked by count, ties by density, then by id.
pub fn rank_words(counts: &HashMap<WordId, u32>, density: impl Fn(WordId) -> f64, n: usize) -> Vec<(WordId, u32, f64)> {
    let mut ranked: Vec<(WordId, u32, f64)> = counts
        .iter()
        .filter(|(_, &c)| c > 0)
        .map(|(&w, &c)| (w, c, density(w)))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(b.2.total_cmp(&a.2)).then(a.0.cmp(&b.0)));
    ranked.truncate(n);
    ranked
}

fn report(
    topic: usize,
    level: Option<usize>,
    counts: &HashMap<WordId, u32>,
    density: impl Fn(WordId) -> f64,
    vocab: &Vocabulary,
    n: usize,
) -> TopicReport {
    TopicReport {
        topic,
        level,
        assignment_count: counts.values().map(|&c| c as usize).sum(),
        top_words: rank_words(counts, density, n)
            .into_iter()
            .map(|(w, count, log_density)| TopicWord {
                word_id: w,
                word: vocab.word(w).to_string(),
                count,
                log_density,
            })
            .collect(),
    }
}

fn flat_reports<E: Emission>(s: &FlatSampler<E>, vocab: &Vocabulary, n: usize) -> Vec<TopicReport> {
    let mut counts: Vec<HashMap<WordId, u32>> = vec![HashMap::new(); s.num_topics()];
    for (doc, z) in s.documents().iter().zip(s.assignments()) {
        for (&w, &k) in doc.iter().zip(z) {
            *counts[k as usize].entry(w).or_default() += 1;
        }
    }
    counts
        .iter()
        .enumerate()
        .map(|(k, c)| report(k, None, c, |w| s.emission().log_predictive(s.topic(k), w), vocab, n))
        .collect()
}

fn hier_reports<E: Emission>(s: &HierSampler<E>, vocab: &Vocabulary, n: usize) -> Result<Vec<TopicReport>, EvalError> {
    let mut counts: BTreeMap<NodeId, HashMap<WordId, u32>> = s.tree().nodes().map(|n| (n.id, HashMap::new())).collect();
    for (d, (doc, levels)) in s.documents().iter().zip(s.levels()).enumerate() {
        let path = s.path(d)?;
        for (&w, &l) in doc.iter().zip(levels) {
            *counts.get_mut(&path.nodes()[l as usize]).unwrap().entry(w).or_default() += 1;
        }
    }
    Ok(counts
        .iter()
        .map(|(&id, c)| {
            let node = s.tree().node(id).unwrap();
            report(id, Some(node.level), c, |w| s.emission().log_predictive(&node.payload, w), vocab, n)
        })
        .collect())
}

/// One report per flat topic or tree node, with its top `n` words.
pub fn topic_reports(model: &Model, vocab: &Vocabulary, n: usize) -> Result<Vec<TopicReport>, EvalError> {
    match model {
        Model::Lda(s) => Ok(flat_reports(s, vocab, n)),
        Model::Glda(s) => Ok(flat_reports(s, vocab, n)),
        Model::Hlda(s) => hier_reports(s, vocab, n),
        Model::Ghlda(s) => hier_reports(s, vocab, n),
    }
}

/// Top `n` words of one topic (flat index or node id); empty for an empty or
/// unknown topic.
pub fn top_words(model: &Model, vocab: &Vocabulary, topic: usize, n: usize) -> Result<Vec<TopicWord>, EvalError> {
    Ok(topic_reports(model, vocab, n)?
        .into_iter()
        .find(|r| r.topic == topic)
        .map(|r| r.top_words)
        .unwrap_or_default())
}

/// Unit a token can be assigned to.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroupKey {
    Topic { topic: usize },
    PathLevel { path: Vec<NodeId>, level: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentGroup {
    pub key: GroupKey,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolysemyEntry {
    pub word_id: WordId,
    pub word: String,
    pub total: usize,
    /// Sorted by descending count.
    pub groups: Vec<AssignmentGroup>,
    /// At least two groups each hold ≥ [`POLYSEMY_MIN_SHARE`] of the tokens.
    pub polysemous: bool,
}

/// Group the tokens of each word with at least `min_count` tokens.
pub fn polysemy_from_assignments(
    tokens: impl IntoIterator<Item = (WordId, GroupKey)>,
    vocab: &Vocabulary,
    min_count: usize,
) -> Vec<PolysemyEntry> {
    let mut by_word: BTreeMap<WordId, BTreeMap<GroupKey, usize>> = BTreeMap::new();
    for (w, key) in tokens {
        *by_word.entry(w).or_default().entry(key).or_default() += 1;
    }
    let mut out: Vec<PolysemyEntry> = by_word
        .into_iter()
        .filter_map(|(w, groups)| {
            let total: usize = groups.values().sum();
            if total < min_count.max(1) {
                return None;
            }
            let mut groups: Vec<AssignmentGroup> = groups
                .into_iter()
                .map(|(key, count)| AssignmentGroup { key, count })
                .collect();
            groups.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.key.cmp(&b.key)));
            let heavy = groups
                .iter()
                .filter(|g| g.count as f64 >= POLYSEMY_MIN_SHARE * total as f64)
                .count();
            Some(PolysemyEntry {
                word_id: w,
                word: vocab.word(w).to_string(),
                total,
                groups,
                polysemous: heavy >= 2,
            })
        })
        .collect();
    out.sort_by(|a, b| b.total.cmp(&a.total).then(a.word_id.cmp(&b.word_id)));
    out
}

fn flat_tokens<E: Emission>(s: &FlatSampler<E>) -> Vec<(WordId, GroupKey)> {
    s.documents()
        .iter()
        .zip(s.assignments())
        .flat_map(|(doc, z)| {
            doc.iter()
                .zip(z)
                .map(|(&w, &k)| (w, GroupKey::Topic { topic: k as usize }))
        })
        .collect()
}

fn hier_tokens<E: Emission>(s: &HierSampler<E>) -> Result<Vec<(WordId, GroupKey)>, EvalError> {
    let mut out = Vec::new();
    for (d, (doc, levels)) in s.documents().iter().zip(s.levels()).enumerate() {
        let path = s.path(d)?;
        for (&w, &l) in doc.iter().zip(levels) {
            out.push((
                w,
                GroupKey::PathLevel {
                    path: path.nodes().to_vec(),
                    level: l as usize,
                },
            ));
        }
    }
    Ok(out)
}

/// Per-word distribution of token assignments over topics (flat models) or
/// `(path, level)` pairs (hierarchical models).
pub fn polysemy_report(model: &Model, vocab: &Vocabulary, min_count: usize) -> Result<Vec<PolysemyEntry>, EvalError> {
    let tokens = match model {
        Model::Lda(s) => flat_tokens(s),
        Model::Glda(s) => flat_tokens(s),
        Model::Hlda(s) => hier_tokens(s)?,
        Model::Ghlda(s) => hier_tokens(s)?,
    };
    Ok(polysemy_from_assignments(tokens, vocab, min_count))
}

/// JSON evaluation report; sections appear only when requested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heldout: Option<HeldoutResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pmi: Option<PmiReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polysemy: Option<Vec<PolysemyEntry>>,
}
