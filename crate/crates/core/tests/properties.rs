use std::sync::Arc;

use ghlda::corpus::{Document, EmbeddingTable, Vocabulary, WordId};
use ghlda::eval::{pmi_coherence, polysemy_from_assignments, CooccurrenceStats, GroupKey, SlotPrior, TopicReport, TopicWord};
use ghlda::gaussian::{GaussianTopicStats, NiwPrior};
use ghlda::linalg::Cholesky;
use ghlda::math::{log_sum_exp, normalize_log};
use ghlda::samplers::{
    Emission, GaussianEmission, Hyperparams, Model, ModelKind, Multinomial, NiwConfig,
};
use ghlda::tree::TopicTree;
use proptest::prelude::*;

fn points(m: usize, n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0..5.0f64, m), n)
}

fn corpus(vocab: u32) -> impl Strategy<Value = Vec<Document>> {
    prop::collection::vec(prop::collection::vec(0..vocab, 1..12), 1..8).prop_map(|docs| {
        docs.into_iter()
            .enumerate()
            .map(|(doc_id, tokens)| Document {
                doc_id,
                label: None,
                tokens,
            })
            .collect()
    })
}

fn table(vocab: usize, m: usize, seed: u64) -> Arc<EmbeddingTable<f64>> {
    // deterministic spread-out rows without an RNG dependency
    let rows: Vec<Vec<f64>> = (0..vocab)
        .map(|v| (0..m).map(|j| ((v * 7 + j * 13) as f64 + seed as f64).sin() * 3.0).collect())
        .collect();
    Arc::new(EmbeddingTable::from_rows(&rows).unwrap())
}

fn hyper() -> Hyperparams {
    Hyperparams {
        num_topics: 3,
        branch_spec: vec![1, 2, 2],
        freeze_new_leaves_for: 1,
        niw: NiwConfig {
            psi_scale: 1.0,
            ..NiwConfig::default()
        },
        ..Hyperparams::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn set_marginal_is_sequential_predictive_sum(pts in (1usize..5).prop_flat_map(|m| points(m, 6))) {
        let m = pts[0].len();
        let prior = Arc::new(NiwPrior::isotropic(vec![0.5; m], 2.0, 0.3, m as f64 + 0.5).unwrap());
        let stats = GaussianTopicStats::new(prior);
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        let mut s = stats.clone();
        let mut seq = 0.0;
        for p in &refs {
            seq += s.log_predictive(p);
            s.add_point(p).unwrap();
        }
        let joint = stats.log_marginal_set(&refs);
        prop_assert!((joint - seq).abs() <= 1e-9 * seq.abs().max(1.0));
        prop_assert!((s.log_evidence() - seq).abs() <= 1e-9 * seq.abs().max(1.0));
    }

    #[test]
    fn removing_every_point_restores_the_prior_factor(pts in points(3, 10)) {
        let prior = Arc::new(NiwPrior::isotropic(vec![0.0; 3], 1.5, 0.1, 4.0).unwrap());
        let mut s = GaussianTopicStats::new(prior.clone());
        for p in &pts {
            s.add_point(p).unwrap();
        }
        for p in pts.iter().rev() {
            s.remove_point(p).unwrap();
        }
        prop_assert_eq!(s.count(), 0);
        for (a, b) in s.chol().reconstruct().iter().zip(prior.psi()) {
            prop_assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn rank_one_update_then_downdate_is_identity(x in prop::collection::vec(-3.0..3.0f64, 4)) {
        let mut a = vec![0.0; 16];
        for i in 0..4 {
            a[i * 4 + i] = 2.0 + i as f64;
        }
        a[1] = 0.5;
        a[4] = 0.5;
        let mut c = Cholesky::factor(&a, 4).unwrap();
        c.rank_one_update(&mut x.clone());
        c.rank_one_downdate(&mut x.clone()).unwrap();
        for (p, q) in c.reconstruct().iter().zip(&a) {
            prop_assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn topic_word_probabilities_normalize(words in prop::collection::vec(0u32..12, 0..20)) {
        let g = GaussianEmission::new(table(12, 3, 1), vec![NiwConfig::default().build(&table(12, 3, 1)).unwrap()]).unwrap();
        let mut p = g.empty_payload(0);
        let mul = Multinomial::new(12, vec![0.3]).unwrap();
        let mut q = mul.empty_payload(0);
        for &w in &words {
            g.add(&mut p, w).unwrap();
            mul.add(&mut q, w).unwrap();
        }
        let sum = |lp: Vec<f64>| lp.iter().map(|x| x.exp()).sum::<f64>();
        prop_assert!((sum(g.topic_word_log_probs(&p)) - 1.0).abs() < 1e-12);
        prop_assert!((sum(mul.topic_word_log_probs(&q)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_normalization_sums_to_one(xs in prop::collection::vec(-700.0..700.0f64, 1..20)) {
        let p: f64 = normalize_log(&xs).iter().sum();
        prop_assert!((p - 1.0).abs() < 1e-12);
        prop_assert!(log_sum_exp(&xs) >= xs.iter().cloned().fold(f64::MIN, f64::max));
    }

    #[test]
    fn slot_priors_normalize(counts in prop::collection::vec(0u32..50, 1..6), m in 0.05..0.95f64, b in 0.1..200.0f64) {
        for prior in [SlotPrior::Gem { m, b }, SlotPrior::Dirichlet { alpha: b / 100.0 }] {
            let total: f64 = prior.log_probs(&counts).iter().map(|x| x.exp()).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn path_priors_normalize_and_doc_counts_nest(depth in 2usize..5, gamma in 0.01..10.0f64, picks in prop::collection::vec(any::<u16>(), 1..40)) {
        let mul = Multinomial::new(2, vec![0.1; depth]).unwrap();
        let mut tree = TopicTree::new(depth, gamma, mul.empty_payload(0)).unwrap();
        for (doc, pick) in picks.iter().enumerate() {
            let cands = tree.enumerate_paths();
            tree.attach(doc, &cands[*pick as usize % cands.len()], |l| mul.empty_payload(l)).unwrap();
        }
        for doc in (0..picks.len()).step_by(3) {
            tree.detach(doc).unwrap();
        }
        let total: f64 = tree.enumerate_paths().iter().map(|c| tree.path_log_prior(c).unwrap().exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-10);
        prop_assert_eq!(tree.node(tree.root()).unwrap().doc_count, tree.attached_documents());
        for n in tree.nodes().filter(|n| !n.children.is_empty()) {
            let below: usize = n.children.iter().map(|&c| tree.node(c).unwrap().doc_count).sum();
            prop_assert_eq!(below, n.doc_count);
        }
    }

    #[test]
    fn pmi_is_symmetric_and_order_free(windows in prop::collection::vec(prop::collection::vec(0u32..6, 0..5), 1..15), perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle()) {
        let cooc = CooccurrenceStats::from_windows(6, windows.iter());
        let topic = |ids: &[WordId]| TopicReport {
            topic: 0,
            level: None,
            assignment_count: 0,
            top_words: ids.iter().map(|&w| TopicWord { word_id: w, word: w.to_string(), count: 1, log_density: 0.0 }).collect(),
        };
        let ids: Vec<WordId> = vec![0, 1, 2, 3];
        let shuffled: Vec<WordId> = perm.iter().map(|&i| ids[i]).collect();
        let a = pmi_coherence(&[topic(&ids)], &cooc, 4, true).topics[0].pmi;
        let b = pmi_coherence(&[topic(&shuffled)], &cooc, 4, true).topics[0].pmi;
        match (a, b) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
            (a, b) => prop_assert_eq!(a, b),
        }
        for x in 0..6 {
            for y in 0..6 {
                prop_assert_eq!(cooc.pair_count(x, y), cooc.pair_count(y, x));
            }
        }
    }

    #[test]
    fn polysemy_groups_sum_to_totals(tokens in prop::collection::vec((0u32..4, 0usize..3), 0..60)) {
        let vocab = Vocabulary::from_words((0..4).map(|i| format!("w{i}")).collect());
        let report = polysemy_from_assignments(
            tokens.iter().map(|&(w, k)| (w, GroupKey::Topic { topic: k })),
            &vocab,
            1,
        );
        for e in &report {
            prop_assert_eq!(e.groups.iter().map(|g| g.count).sum::<usize>(), e.total);
            prop_assert_eq!(e.total, tokens.iter().filter(|t| t.0 == e.word_id).count());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn counts_stay_coherent_and_runs_repeat(docs in corpus(10), seed in any::<u64>(), k in 0usize..4) {
        let kind = [ModelKind::Lda, ModelKind::Glda, ModelKind::Hlda, ModelKind::Ghlda][k];
        let emb = kind.is_gaussian().then(|| table(10, 2, seed % 7));
        let run = || {
            let mut model = Model::new(kind, &hyper(), &docs, 10, emb.clone(), seed).unwrap();
            let mut diags = Vec::new();
            for _ in 0..3 {
                diags.push(model.sampler_mut().run_epoch().unwrap());
                model.sampler().check_counts().unwrap();
            }
            (diags, model.checkpoint("h").unwrap().to_json())
        };
        let (a, ca) = run();
        let (b, cb) = run();
        prop_assert_eq!(a, b);
        prop_assert_eq!(ca, cb);
    }
}
