//! Model dispatch over the four samplers and the checkpoint container.
//!
//! A checkpoint stores topology and assignments only; all counts and
//! sufficient statistics are rebuilt on load, and every epoch rebuilds them
//! anyway, so a resumed run follows the uninterrupted trajectory bit for bit.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, EmbeddingTable};
use crate::tree::{Path, TreeSnapshot};

use super::{
    GaussianEmission, GhldaSampler, GibbsSampler, GldaSampler, HierSampler, HldaSampler, Hyperparams, LdaSampler,
    ModelKind, Multinomial, SamplerError,
};

pub const CHECKPOINT_FORMAT: &str = "ghlda-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Per-token topic (flat) or path-and-level (hierarchical) assignments.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Assignments {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flat: Option<Vec<Vec<u32>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<Vec<Path>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<Vec<u32>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: ModelKind,
    pub hyperparams: Hyperparams,
    pub seed: u64,
    pub epoch: usize,
    pub density_evals: u64,
    /// Opaque fingerprint of the training corpus the assignments refer to.
    pub corpus_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree: Option<TreeSnapshot>,
    pub assignments: Assignments,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SamplerError> {
        let c: Self = serde_json::from_str(text).map_err(|e| SamplerError::Checkpoint(e.to_string()))?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(SamplerError::Checkpoint(format!("unexpected format '{}'", c.format)));
        }
        if c.version > CHECKPOINT_VERSION {
            return Err(SamplerError::Checkpoint(format!(
                "checkpoint version {} is newer than supported version {CHECKPOINT_VERSION}",
                c.version
            )));
        }
        Ok(c)
    }
}

/// A trained or training model of any of the four kinds (`f64` embeddings).
#[derive(Debug)]
pub enum Model {
    Lda(LdaSampler),
    Glda(GldaSampler<f64>),
    Hlda(HldaSampler),
    Ghlda(GhldaSampler<f64>),
}

fn multinomial(kind: ModelKind, hyper: &Hyperparams, vocab_size: usize) -> Result<Multinomial, SamplerError> {
    let eta = if kind.is_hierarchical() {
        hyper.resolved_eta_levels()
    } else {
        vec![hyper.beta]
    };
    Multinomial::new(vocab_size, eta)
}

fn gaussian(
    kind: ModelKind,
    hyper: &Hyperparams,
    vocab_size: usize,
    table: Option<Arc<EmbeddingTable<f64>>>,
) -> Result<GaussianEmission<f64>, SamplerError> {
    let table = table.ok_or_else(|| SamplerError::Config(format!("{} requires embeddings", kind.name())))?;
    if table.len() != vocab_size {
        return Err(SamplerError::Config(format!(
            "embedding table has {} rows for a vocabulary of {vocab_size}",
            table.len()
        )));
    }
    let base = hyper.niw.build(&table)?;
    if kind.is_hierarchical() {
        GaussianEmission::with_level_ratios(table, &base, &hyper.resolved_psi_ratios())
    } else {
        GaussianEmission::new(table, vec![base])
    }
}

impl Model {
    pub fn new(
        kind: ModelKind,
        hyper: &Hyperparams,
        docs: &[Document],
        vocab_size: usize,
        embeddings: Option<Arc<EmbeddingTable<f64>>>,
        seed: u64,
    ) -> Result<Self, SamplerError> {
        hyper.validate(kind)?;
        Ok(match kind {
            ModelKind::Lda => Model::Lda(LdaSampler::new(multinomial(kind, hyper, vocab_size)?, docs, hyper, seed)?),
            ModelKind::Hlda => Model::Hlda(HldaSampler::new(multinomial(kind, hyper, vocab_size)?, docs, hyper, seed)?),
            ModelKind::Glda => Model::Glda(GldaSampler::new(
                gaussian(kind, hyper, vocab_size, embeddings)?,
                docs,
                hyper,
                seed,
            )?),
            ModelKind::Ghlda => Model::Ghlda(GhldaSampler::new(
                gaussian(kind, hyper, vocab_size, embeddings)?,
                docs,
                hyper,
                seed,
            )?),
        })
    }

    pub fn from_checkpoint(
        ckpt: &Checkpoint,
        docs: &[Document],
        vocab_size: usize,
        embeddings: Option<Arc<EmbeddingTable<f64>>>,
    ) -> Result<Self, SamplerError> {
        let kind = ckpt.model;
        let hyper = &ckpt.hyperparams;
        hyper.validate(kind)?;
        let a = &ckpt.assignments;
        let missing = |what: &str| SamplerError::Checkpoint(format!("{} checkpoint lacks {what}", kind.name()));
        type Hier<'a> = (&'a TreeSnapshot, &'a Vec<Path>, Vec<Vec<u32>>);
        let hier = || -> Result<Hier<'_>, SamplerError> {
            Ok((
                ckpt.tree.as_ref().ok_or_else(|| missing("a tree"))?,
                a.paths.as_ref().ok_or_else(|| missing("paths"))?,
                a.levels.clone().ok_or_else(|| missing("levels"))?,
            ))
        };
        let mut model = match kind {
            ModelKind::Lda | ModelKind::Glda => {
                let z = a.flat.clone().ok_or_else(|| missing("topic assignments"))?;
                if kind == ModelKind::Lda {
                    Model::Lda(LdaSampler::from_assignments(
                        multinomial(kind, hyper, vocab_size)?,
                        docs,
                        hyper,
                        ckpt.seed,
                        ckpt.epoch,
                        z,
                    )?)
                } else {
                    Model::Glda(GldaSampler::from_assignments(
                        gaussian(kind, hyper, vocab_size, embeddings)?,
                        docs,
                        hyper,
                        ckpt.seed,
                        ckpt.epoch,
                        z,
                    )?)
                }
            }
            ModelKind::Hlda => {
                let (t, p, l) = hier()?;
                Model::Hlda(HierSampler::from_assignments(
                    multinomial(kind, hyper, vocab_size)?,
                    docs,
                    hyper,
                    ckpt.seed,
                    ckpt.epoch,
                    t,
                    p,
                    l,
                )?)
            }
            ModelKind::Ghlda => {
                let (t, p, l) = hier()?;
                Model::Ghlda(HierSampler::from_assignments(
                    gaussian(kind, hyper, vocab_size, embeddings)?,
                    docs,
                    hyper,
                    ckpt.seed,
                    ckpt.epoch,
                    t,
                    p,
                    l,
                )?)
            }
        };
        model.set_density_evaluations(ckpt.density_evals);
        Ok(model)
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Lda(_) => ModelKind::Lda,
            Model::Glda(_) => ModelKind::Glda,
            Model::Hlda(_) => ModelKind::Hlda,
            Model::Ghlda(_) => ModelKind::Ghlda,
        }
    }

    pub fn sampler(&self) -> &dyn GibbsSampler {
        match self {
            Model::Lda(s) => s,
            Model::Glda(s) => s,
            Model::Hlda(s) => s,
            Model::Ghlda(s) => s,
        }
    }

    pub fn sampler_mut(&mut self) -> &mut dyn GibbsSampler {
        match self {
            Model::Lda(s) => s,
            Model::Glda(s) => s,
            Model::Hlda(s) => s,
            Model::Ghlda(s) => s,
        }
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        match self {
            Model::Lda(s) => s.hyperparams(),
            Model::Glda(s) => s.hyperparams(),
            Model::Hlda(s) => s.hyperparams(),
            Model::Ghlda(s) => s.hyperparams(),
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Model::Lda(s) => s.seed(),
            Model::Glda(s) => s.seed(),
            Model::Hlda(s) => s.seed(),
            Model::Ghlda(s) => s.seed(),
        }
    }

    pub fn set_parallel(&mut self, on: bool) {
        match self {
            Model::Lda(s) => s.set_parallel(on),
            Model::Glda(s) => s.set_parallel(on),
            Model::Hlda(s) => s.set_parallel(on),
            Model::Ghlda(s) => s.set_parallel(on),
        }
    }

    fn set_density_evaluations(&mut self, total: u64) {
        match self {
            Model::Lda(s) => s.set_density_evaluations(total),
            Model::Glda(s) => s.set_density_evaluations(total),
            Model::Hlda(s) => s.set_density_evaluations(total),
            Model::Ghlda(s) => s.set_density_evaluations(total),
        }
    }

    pub fn checkpoint(&self, corpus_hash: &str) -> Result<Checkpoint, SamplerError> {
        let (tree, assignments) = match self {
            Model::Lda(s) => (None, flat_assignments(s.assignments())),
            Model::Glda(s) => (None, flat_assignments(s.assignments())),
            Model::Hlda(s) => (Some(s.snapshot()), hier_assignments(s.paths()?, s.levels())),
            Model::Ghlda(s) => (Some(s.snapshot()), hier_assignments(s.paths()?, s.levels())),
        };
        let sampler = self.sampler();
        Ok(Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model: self.kind(),
            hyperparams: self.hyperparams().clone(),
            seed: self.seed(),
            epoch: sampler.epoch(),
            density_evals: sampler.density_evaluations(),
            corpus_hash: corpus_hash.into(),
            tree,
            assignments,
        })
    }
}

fn flat_assignments(z: &[Vec<u32>]) -> Assignments {
    Assignments {
        flat: Some(z.to_vec()),
        ..Assignments::default()
    }
}

fn hier_assignments(paths: Vec<Path>, levels: &[Vec<u32>]) -> Assignments {
    Assignments {
        paths: Some(paths),
        levels: Some(levels.to_vec()),
        ..Assignments::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs() -> Vec<Document> {
        (0..8)
            .map(|i| Document {
                doc_id: i,
                label: None,
                tokens: vec![(i % 3) as u32, 1, 2, (i % 2) as u32],
            })
            .collect()
    }

    fn table() -> Arc<EmbeddingTable<f64>> {
        Arc::new(EmbeddingTable::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.5], vec![-1.0, 0.2]]).unwrap())
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        for kind in [ModelKind::Lda, ModelKind::Glda, ModelKind::Hlda, ModelKind::Ghlda] {
            let h = Hyperparams {
                num_topics: 3,
                branch_spec: vec![1, 2, 2],
                freeze_new_leaves_for: 1,
                niw: super::super::NiwConfig {
                    psi_scale: 1.0,
                    ..Default::default()
                },
                ..Hyperparams::default()
            };
            let mut a = Model::new(kind, &h, &docs(), 3, Some(table()), 17).unwrap();
            let mut da = Vec::new();
            a.sampler_mut().train(4, &mut |d| da.push(d.clone())).unwrap();

            let mut b = Model::new(kind, &h, &docs(), 3, Some(table()), 17).unwrap();
            let mut db = Vec::new();
            b.sampler_mut().train(2, &mut |d| db.push(d.clone())).unwrap();
            let json = b.checkpoint("h").unwrap().to_json();
            let ck = Checkpoint::from_json(&json).unwrap();
            let mut c = Model::from_checkpoint(&ck, &docs(), 3, Some(table())).unwrap();
            c.sampler_mut().train(2, &mut |d| db.push(d.clone())).unwrap();

            assert_eq!(da, db, "{kind:?}");
            assert_eq!(a.checkpoint("h").unwrap(), c.checkpoint("h").unwrap(), "{kind:?}");
        }
    }

    #[test]
    fn gaussian_models_need_embeddings() {
        let h = Hyperparams::default();
        assert!(Model::new(ModelKind::Glda, &h, &docs(), 3, None, 1).is_err());
    }

    #[test]
    fn newer_checkpoint_is_rejected() {
        let h = Hyperparams { num_topics: 2, ..Hyperparams::default() };
        let m = Model::new(ModelKind::Lda, &h, &docs(), 3, None, 1).unwrap();
        let mut c = m.checkpoint("x").unwrap();
        c.version = CHECKPOINT_VERSION + 1;
        assert!(Checkpoint::from_json(&c.to_json()).is_err());
    }
}
