//! Collapsed Gibbs samplers for LDA, Gaussian LDA, hierarchical LDA and
//! Gaussian hierarchical LDA, with held-out likelihood, PMI coherence and
//! polysemy evaluation.
//!
//! Numerical kernels are generic over the floating-point [`Scalar`]; the
//! aliases below fix the common choices.

// `!(x > 0)` is the intended form: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Triangular kernels index the factor and the vector in lockstep.
#![allow(clippy::needless_range_loop)]

pub mod corpus;
pub mod eval;
pub mod gaussian;
pub mod linalg;
pub mod math;
pub mod samplers;
pub mod scalar;
pub mod tree;

pub use scalar::Scalar;

pub type Lda = samplers::LdaSampler;
pub type Hlda = samplers::HldaSampler;
pub type Glda = samplers::GldaSampler<f64>;
pub type Ghlda = samplers::GhldaSampler<f64>;
pub type Glda32 = samplers::GldaSampler<f32>;
pub type Ghlda32 = samplers::GhldaSampler<f32>;
pub type TopicStats = gaussian::GaussianTopicStats<f64>;
pub type Niw = gaussian::NiwPrior<f64>;
pub type Embeddings = corpus::EmbeddingTable<f64>;
