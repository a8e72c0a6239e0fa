//! Multiple-instance learning with attention logits regularized by a per-bag
//! graph smoothness prior.
//!
//! A bag is a set of feature vectors ("instances") with one binary label. The
//! model embeds instances, scores each with an attention head, pools the
//! embeddings under softmax attention, and classifies the pooled vector. The
//! attention logits are treated as a latent function on a bag-specific
//! neighborhood graph: the training objective adds a Dirichlet-energy penalty
//! (Dirac posterior) or a full Gaussian KL term (diagonal-Gaussian posterior)
//! scaled by a schedulable coefficient.
//!
//! Module map:
//! - [`tensor`] / [`autodiff`]: dense f64 tensors and the reverse-mode tape
//!   every differentiable path runs on.
//! - [`graph`]: bag neighborhood graphs, Laplacian products, Dirichlet energy,
//!   and the Gaussian-prior KL.
//! - [`data`]: bag containers, synthetic generation, manifest and binary I/O.
//! - [`model`]: the four model variants, parameter store, checkpoints.
//! - [`objective`]: per-bag loss assembly and the coefficient schedule.
//! - [`train`]: Adam, the warmup schedule, and the fit loop.
//! - [`metrics`]: AUROC/F1/rank tables, attention-map export, diagnostics.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
