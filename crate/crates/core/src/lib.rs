//! Zero-shot domain adaptation training stack.
//!
//! The crate covers the full experiment pipeline on CPU:
//!
//! - [`synth`]: gray/color/edge/negative domain synthesis from a gray corpus
//! - [`data`]: the four-split dataset model, manifests, triplet batching
//! - [`mixup`]: dual (category + domain) convex mixing and the contrastive
//!   triplet construction
//! - [`nn`]: conv/batch-norm/linear layers with explicit backward passes
//! - [`model`]: the six-component network (shared trunk, task and domain
//!   branches, three heads) coupled through a gradient reversal layer
//! - [`loss`]: adversarial, classification and contrastive objectives with
//!   analytic input gradients
//! - [`train`]: the alternating two-step optimization loop
//! - [`eval`]: accuracy evaluation, the ablation matrix, feature export and
//!   disentanglement scoring
//! - [`synthetic`]: a procedural glyph corpus for desk-scale experiments
//!
//! Everything numeric is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the aliases below fix the two instantiations used in practice: `f32` for
//! training speed, `f64` for gradient-oracle verification.

pub mod data;
pub mod error;
pub mod eval;
pub mod img;
pub mod mixup;
pub mod loss;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod synth;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Dataset holding `f32` pixels (the training configuration).
pub type DatasetF32 = data::ZsdaDataset<f32>;
/// Dataset holding `f64` pixels (used by the verification suites).
pub type DatasetF64 = data::ZsdaDataset<f64>;
