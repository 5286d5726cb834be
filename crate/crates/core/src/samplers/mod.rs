//! Collapsed Gibbs samplers.
//!
//! [`FlatSampler`] covers LDA and Gaussian LDA, [`HierSampler`] covers
//! hierarchical LDA and Gaussian hierarchical LDA; the two differ from their
//! Gaussian counterparts only in the [`Emission`] plugged in.

mod emission;
mod flat;
mod hier;
mod model;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::EmbeddingTable;
use crate::gaussian::{GaussianError, NiwPrior};
use crate::math::ln_beta;
use crate::scalar::Scalar;
use crate::tree::TreeError;

pub use emission::{Emission, GaussianEmission, Multinomial, WordCounts};
pub use flat::FlatSampler;
pub use hier::{frequency_cdf_levels, HierSampler, PathScore};
pub use model::{Assignments, Checkpoint, Model, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};

pub type LdaSampler = FlatSampler<Multinomial>;
pub type GldaSampler<T> = FlatSampler<GaussianEmission<T>>;
pub type HldaSampler = HierSampler<Multinomial>;
pub type GhldaSampler<T> = HierSampler<GaussianEmission<T>>;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("count bookkeeping violated: {0}")]
    Bookkeeping(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Lda,
    Glda,
    Hlda,
    Ghlda,
}

impl ModelKind {
    pub fn is_gaussian(self) -> bool {
        matches!(self, ModelKind::Glda | ModelKind::Ghlda)
    }
    pub fn is_hierarchical(self) -> bool {
        matches!(self, ModelKind::Hlda | ModelKind::Ghlda)
    }
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Lda => "lda",
            ModelKind::Glda => "glda",
            ModelKind::Hlda => "hlda",
            ModelKind::Ghlda => "ghlda",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "lda" => Ok(Self::Lda),
            "glda" => Ok(Self::Glda),
            "hlda" => Ok(Self::Hlda),
            "ghlda" => Ok(Self::Ghlda),
            other => Err(format!("unknown model '{other}'")),
        }
    }
}

/// NIW prior settings. `Ψ = psi_scale · I`; `dof` defaults to `M + 1` and
/// `mean` to the embedding grand mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NiwConfig {
    pub kappa: f64,
    pub dof: Option<f64>,
    pub psi_scale: f64,
    pub mean: Option<Vec<f64>>,
}

impl Default for NiwConfig {
    fn default() -> Self {
        Self {
            kappa: 0.1,
            dof: None,
            psi_scale: 50.0,
            mean: None,
        }
    }
}

impl NiwConfig {
    pub fn build<T: Scalar>(&self, table: &EmbeddingTable<T>) -> Result<NiwPrior<T>, SamplerError> {
        let dim = table.dim();
        let mean = match &self.mean {
            Some(m) if m.len() != dim => {
                return Err(SamplerError::Config(format!(
                    "prior mean has {} components, embeddings have {dim}",
                    m.len()
                )))
            }
            Some(m) => m.iter().map(|&x| T::from_f64_lossy(x)).collect(),
            None => table.grand_mean(),
        };
        let dof = self.dof.unwrap_or(dim as f64 + 1.0);
        Ok(NiwPrior::isotropic(mean, self.psi_scale, self.kappa, dof)?)
    }
}

/// All sampler hyperparameters. Unused fields are ignored by models that do
/// not need them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    /// Symmetric document–topic Dirichlet weight (flat models).
    pub alpha: f64,
    /// Topic–word Dirichlet weight (LDA).
    pub beta: f64,
    /// Number of topics (flat models).
    pub num_topics: usize,
    /// GEM mean.
    pub m: f64,
    /// GEM concentration.
    pub b: f64,
    /// nCRP concentration.
    pub gamma: f64,
    /// Initial branching per level; its length is the tree depth.
    pub branch_spec: Vec<usize>,
    /// Per-level word prior for hLDA (default `2·0.5^l`).
    pub eta_levels: Option<Vec<f64>>,
    /// Per-level `Ψ` multipliers for GhLDA (default linear from 1 to 0.4).
    pub level_psi_ratios: Option<Vec<f64>>,
    pub niw: NiwConfig,
    /// Epochs during which hierarchical samplers may not open new branches.
    pub freeze_new_leaves_for: usize,
    /// Visit documents in a seeded random order each epoch.
    pub shuffle_documents: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.1,
            num_topics: 40,
            m: 0.5,
            b: 100.0,
            gamma: 0.1,
            branch_spec: vec![1, 1, 4, 4],
            eta_levels: None,
            level_psi_ratios: None,
            niw: NiwConfig::default(),
            freeze_new_leaves_for: 5,
            shuffle_documents: false,
        }
    }
}

impl Hyperparams {
    pub fn depth(&self) -> usize {
        self.branch_spec.len()
    }

    pub fn resolved_eta_levels(&self) -> Vec<f64> {
        self.eta_levels
            .clone()
            .unwrap_or_else(|| (0..self.depth()).map(|l| 2.0 * 0.5f64.powi(l as i32)).collect())
    }

    pub fn resolved_psi_ratios(&self) -> Vec<f64> {
        self.level_psi_ratios.clone().unwrap_or_else(|| {
            let depth = self.depth();
            if depth <= 1 {
                return vec![1.0; depth];
            }
            (0..depth)
                .map(|l| 1.0 - 0.6 * l as f64 / (depth - 1) as f64)
                .collect()
        })
    }

    pub fn validate(&self, kind: ModelKind) -> Result<(), SamplerError> {
        let bad = |m: String| Err(SamplerError::Config(m));
        let positive = |name: &str, x: f64| -> Result<(), SamplerError> {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(SamplerError::Config(format!("{name} must be positive, got {x}")))
            }
        };
        if kind.is_hierarchical() {
            positive("gamma", self.gamma)?;
            positive("b", self.b)?;
            if !(self.m > 0.0 && self.m < 1.0) {
                return bad(format!("m must lie in (0, 1), got {}", self.m));
            }
            if self.branch_spec.is_empty() || self.branch_spec[0] != 1 || self.branch_spec.contains(&0) {
                return bad(format!(
                    "branch_spec must start with 1 and contain positive counts, got {:?}",
                    self.branch_spec
                ));
            }
            if self.depth() > u8::MAX as usize {
                return bad("tree depth too large".into());
            }
            let eta = self.resolved_eta_levels();
            if eta.len() != self.depth() {
                return bad(format!("eta_levels has {} entries for depth {}", eta.len(), self.depth()));
            }
            for e in eta {
                positive("eta", e)?;
            }
            let ratios = self.resolved_psi_ratios();
            if ratios.len() != self.depth() {
                return bad(format!(
                    "level_psi_ratios has {} entries for depth {}",
                    ratios.len(),
                    self.depth()
                ));
            }
            for r in ratios {
                positive("level_psi_ratio", r)?;
            }
        } else {
            positive("alpha", self.alpha)?;
            if self.num_topics == 0 {
                return bad("num_topics must be positive".into());
            }
            if self.num_topics > u32::MAX as usize {
                return bad("num_topics too large".into());
            }
        }
        if kind == ModelKind::Lda {
            positive("beta", self.beta)?;
        }
        if kind.is_gaussian() {
            positive("kappa", self.niw.kappa)?;
            positive("psi_scale", self.niw.psi_scale)?;
            if let Some(v) = self.niw.dof {
                positive("dof", v)?;
            }
        }
        Ok(())
    }
}

/// Per-epoch training diagnostics (one JSON line each).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochDiagnostics {
    pub epoch: usize,
    pub log_likelihood: f64,
    /// Live topics: non-empty flat topics, or tree nodes.
    pub topics: usize,
    /// Root-to-leaf paths (1 for flat models).
    pub paths: usize,
    pub density_evals: u64,
    pub density_evals_total: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
}

/// Common training surface of all four samplers.
pub trait GibbsSampler {
    /// Completed epochs.
    fn epoch(&self) -> usize;
    fn run_epoch(&mut self) -> Result<EpochDiagnostics, SamplerError>;
    fn joint_log_likelihood(&self) -> f64;
    /// Recount every cached count from the assignments and compare exactly.
    fn check_counts(&self) -> Result<(), SamplerError>;
    fn density_evaluations(&self) -> u64;

    fn train(
        &mut self,
        epochs: usize,
        on_epoch: &mut dyn FnMut(&EpochDiagnostics),
    ) -> Result<Vec<EpochDiagnostics>, SamplerError> {
        let mut out = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let d = self.run_epoch()?;
            on_epoch(&d);
            out.push(d);
        }
        Ok(out)
    }
}

/// Random stream for initialization (`None`) or for a given 0-based epoch.
/// Resuming from a checkpoint reproduces the same streams.
pub fn stream_rng(seed: u64, epoch: Option<usize>) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch.map_or(0, |e| e as u64 + 1));
    rng
}

/// Unnormalized log GEM(m, b) prior over levels `0..counts.len()` given the
/// document's other level counts:
/// `(mb + N_l)/(b + N_{≥l}) · Π_{i<l} ((1−m)b + N_{>i})/(b + N_{≥i})`.
/// Mass beyond the last level is dropped; callers renormalize.
pub fn gem_level_log_prior(counts: &[u32], m: f64, b: f64) -> Vec<f64> {
    let depth = counts.len();
    let mut at_or_above = vec![0.0; depth + 1];
    for l in (0..depth).rev() {
        at_or_above[l] = at_or_above[l + 1] + counts[l] as f64;
    }
    let mut out = Vec::with_capacity(depth);
    let mut stick = 0.0;
    for l in 0..depth {
        let ge = at_or_above[l];
        let gt = at_or_above[l + 1];
        out.push(stick + ((m * b + counts[l] as f64) / (b + ge)).ln());
        stick += (((1.0 - m) * b + gt) / (b + ge)).ln();
    }
    out
}

/// Collapsed GEM log-probability of a document's level counts (stick
/// proportions integrated out).
pub fn gem_log_joint(counts: &[u32], m: f64, b: f64) -> f64 {
    let (a0, b0) = (m * b, (1.0 - m) * b);
    let base = ln_beta(a0, b0);
    let mut above: f64 = counts.iter().map(|&c| c as f64).sum();
    let mut lp = 0.0;
    for &c in counts {
        above -= c as f64;
        lp += ln_beta(a0 + c as f64, b0 + above) - base;
    }
    lp
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gem_empty_counts_halves() {
        let w: Vec<f64> = gem_level_log_prior(&[0, 0, 0, 0], 0.5, 100.0)
            .into_iter()
            .map(f64::exp)
            .collect();
        for (a, b) in w.iter().zip([0.5, 0.25, 0.125, 0.0625]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn gem_product_indexes_running_level() {
        // Nonzero counts distinguish N_{>i} (running index) from N_{>l}.
        let counts = [3, 1, 2];
        let (m, b) = (0.3, 2.0);
        let w = gem_level_log_prior(&counts, m, b);
        // level 2: (mb+2)/(b+2) · ((1-m)b+3)/(b+6) · ((1-m)b+2)/(b+3)
        let expected = ((m * b + 2.0) / (b + 2.0))
            * (((1.0 - m) * b + 3.0) / (b + 6.0))
            * (((1.0 - m) * b + 2.0) / (b + 3.0));
        assert!((w[2].exp() - expected).abs() < 1e-14);
        // the alternative reading would use N_{>2}=0 and N_{≥2}=2 in both factors
        let other = ((m * b + 2.0) / (b + 2.0)) * (((1.0 - m) * b) / (b + 2.0)).powi(2);
        assert!((w[2].exp() - other).abs() > 1e-3);
    }

    #[test]
    fn gem_conditional_matches_joint_ratio() {
        let counts = [2u32, 0, 3, 1];
        let (m, b) = (0.5, 5.0);
        let w = gem_level_log_prior(&counts, m, b);
        let base = gem_log_joint(&counts, m, b);
        for l in 0..4 {
            let mut c = counts;
            c[l] += 1;
            assert!((gem_log_joint(&c, m, b) - base - w[l]).abs() < 1e-12);
        }
    }

    #[test]
    fn default_level_schedules() {
        let h = Hyperparams::default();
        assert_eq!(h.resolved_eta_levels(), vec![2.0, 1.0, 0.5, 0.25]);
        let r = h.resolved_psi_ratios();
        for (a, b) in r.iter().zip([1.0, 0.8, 0.6, 0.4]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(h.depth(), 4);
        assert_eq!(h.num_topics, 40);
        assert_eq!((h.alpha, h.beta, h.m, h.b, h.gamma), (0.1, 0.1, 0.5, 100.0, 0.1));
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut h = Hyperparams::default();
        assert!(h.validate(ModelKind::Ghlda).is_ok());
        h.level_psi_ratios = Some(vec![1.0, 0.5]);
        assert!(h.validate(ModelKind::Ghlda).is_err());
        assert!(h.validate(ModelKind::Lda).is_ok());
        let h = Hyperparams { branch_spec: vec![2, 2], ..Hyperparams::default() };
        assert!(h.validate(ModelKind::Hlda).is_err());
        let h = Hyperparams { alpha: 0.0, ..Hyperparams::default() };
        assert!(h.validate(ModelKind::Glda).is_err());
    }
}
