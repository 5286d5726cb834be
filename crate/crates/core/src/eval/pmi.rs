//! PMI topic coherence against a reference co-occurrence corpus.

use serde::{Deserialize, Serialize};

use crate::corpus::WordId;

use super::TopicReport;

/// Co-occurrence unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Document,
    /// Every run of `k` consecutive tokens (one window for shorter documents).
    Sliding(usize),
}

/// Word presence per window, stored as sorted window postings so that any
/// pair count is a sorted-list intersection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceStats {
    total_windows: u64,
    postings: Vec<Vec<u32>>,
}

impl CooccurrenceStats {
    /// Each window is the set of words it contains (duplicates ignored).
    pub fn from_windows<I, W>(vocab_size: usize, windows: I) -> Self
    where
        I: IntoIterator<Item = W>,
        W: AsRef<[WordId]>,
    {
        let mut postings: Vec<Vec<u32>> = vec![Vec::new(); vocab_size];
        let mut total = 0u32;
        for win in windows {
            for &w in win.as_ref() {
                let list = &mut postings[w as usize];
                if list.last() != Some(&total) {
                    list.push(total);
                }
            }
            total += 1;
        }
        Self {
            total_windows: total as u64,
            postings,
        }
    }

    pub fn total_windows(&self) -> u64 {
        self.total_windows
    }
    pub fn vocab_size(&self) -> usize {
        self.postings.len()
    }

    /// Windows containing `w`.
    pub fn word_count(&self, w: WordId) -> u64 {
        self.postings.get(w as usize).map_or(0, |p| p.len() as u64)
    }

    /// Windows containing both `a` and `b`.
    pub fn pair_count(&self, a: WordId, b: WordId) -> u64 {
        let (Some(x), Some(y)) = (self.postings.get(a as usize), self.postings.get(b as usize)) else {
            return 0;
        };
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < x.len() && j < y.len() {
            match x[i].cmp(&y[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("co-occurrence stats serialize")
    }
}

pub fn build_cooccurrence<D: AsRef<[WordId]>>(docs: &[D], vocab_size: usize, window: Window) -> CooccurrenceStats {
    match window {
        Window::Document => CooccurrenceStats::from_windows(vocab_size, docs.iter().map(|d| d.as_ref())),
        Window::Sliding(k) => {
            let k = k.max(1);
            let windows = docs.iter().flat_map(|d| {
                let t = d.as_ref();
                let count = if t.len() <= k { usize::from(!t.is_empty()) } else { t.len() - k + 1 };
                (0..count).map(move |i| &t[i..(i + k).min(t.len())])
            });
            CooccurrenceStats::from_windows(vocab_size, windows)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicPmi {
    pub topic: usize,
    /// `None` when fewer than two top words occur in the reference corpus.
    pub pmi: Option<f64>,
    pub pairs: usize,
    pub skipped_words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmiReport {
    pub top_n: usize,
    pub topics: Vec<TopicPmi>,
    /// Mean over topics with a defined score.
    pub mean: Option<f64>,
}

/// `log((p(i,j) + ε) / (p(i) p(j)))` with `ε = 1/total_windows` when
/// `smoothed`.
pub fn pair_pmi(cooc: &CooccurrenceStats, a: WordId, b: WordId, smoothed: bool) -> f64 {
    let n = cooc.total_windows() as f64;
    let eps = if smoothed { 1.0 / n } else { 0.0 };
    let pa = cooc.word_count(a) as f64 / n;
    let pb = cooc.word_count(b) as f64 / n;
    let pab = cooc.pair_count(a, b) as f64 / n;
    ((pab + eps) / (pa * pb)).ln()
}

/// Mean PMI over unordered pairs of each topic's top `top_n` words. Words
/// absent from the reference windows are skipped.
pub fn pmi_coherence(topics: &[TopicReport], cooc: &CooccurrenceStats, top_n: usize, smoothed: bool) -> PmiReport {
    let top_n = top_n.max(2);
    let mut out = Vec::with_capacity(topics.len());
    for t in topics {
        let mut ids = Vec::new();
        let mut skipped = Vec::new();
        for tw in t.top_words.iter().take(top_n) {
            if cooc.word_count(tw.word_id) > 0 {
                ids.push(tw.word_id);
            } else {
                log::info!("topic {}: '{}' does not occur in the reference corpus", t.topic, tw.word);
                skipped.push(tw.word.clone());
            }
        }
        let mut sum = 0.0;
        let mut pairs = 0;
        for i in 0..ids.len() {
            for j in i + 1..ids.len() {
                sum += pair_pmi(cooc, ids[i], ids[j], smoothed);
                pairs += 1;
            }
        }
        out.push(TopicPmi {
            topic: t.topic,
            pmi: (pairs > 0).then(|| sum / pairs as f64),
            pairs,
            skipped_words: skipped,
        });
    }
    let defined: Vec<f64> = out.iter().filter_map(|t| t.pmi).collect();
    PmiReport {
        top_n,
        mean: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
        topics: out,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counted_toy() {
        let docs: Vec<Vec<WordId>> = vec![vec![0, 1, 1], vec![1, 2], vec![0, 2, 3], vec![3], vec![0, 1, 2, 3]];
        let c = build_cooccurrence(&docs, 5, Window::Document);
        assert_eq!(c.total_windows(), 5);
        assert_eq!([0, 1, 2, 3, 4].map(|w| c.word_count(w)), [3, 3, 3, 3, 0]);
        assert_eq!(c.pair_count(0, 1), 2);
        assert_eq!(c.pair_count(1, 0), 2);
        assert_eq!(c.pair_count(0, 2), 2);
        assert_eq!(c.pair_count(1, 3), 1);
        assert_eq!(c.pair_count(2, 3), 2);
        assert_eq!(c.pair_count(0, 4), 0);
    }

    #[test]
    fn saturated_pair_has_zero_pmi() {
        let docs: Vec<Vec<WordId>> = vec![vec![0, 1], vec![1, 0]];
        let c = build_cooccurrence(&docs, 2, Window::Document);
        assert_eq!(pair_pmi(&c, 0, 1, false), 0.0);
    }

    #[test]
    fn disjoint_documents_share_no_pairs() {
        let docs: Vec<Vec<WordId>> = vec![vec![0, 1], vec![2, 3]];
        let c = build_cooccurrence(&docs, 4, Window::Document);
        assert_eq!(c.pair_count(0, 2) + c.pair_count(1, 3) + c.pair_count(0, 3), 0);
    }

    #[test]
    fn sliding_windows() {
        let docs: Vec<Vec<WordId>> = vec![vec![0, 1, 2, 3], vec![4]];
        let c = build_cooccurrence(&docs, 5, Window::Sliding(2));
        assert_eq!(c.total_windows(), 4);
        assert_eq!(c.pair_count(0, 1), 1);
        assert_eq!(c.pair_count(0, 2), 0);
        assert_eq!(c.word_count(1), 2);
    }
}
