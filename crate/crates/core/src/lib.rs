//! Rectified-flow diffusion pretraining, distribution matching distillation
//! into a one-step generator, and a masked-infilling toy sequence task with
//! implicit duration modeling.
//!
//! The crate is organized around five subsystems:
//!
//! - [`nn`]: a minimal f64 differentiable-network substrate (tape autodiff,
//!   MLP and attention blocks with rotary embeddings, AdamW, EMA).
//! - [`flow`]: the rectified-flow interpolation schedule, training loss,
//!   drift-to-score conversion, and the Euler ODE sampler.
//! - [`dmd`]: the distillation loop that turns a pretrained drift network
//!   into a one-step generator by descending a score-difference gradient.
//! - [`oracle`]: closed-form ground truth (Gaussian/mixture scores, analytic
//!   drifts, Gaussian KL, MMD two-sample tests, DTW, finite differences)
//!   used to verify everything else.
//! - [`toytts`]: a synthetic text-to-token task with known alignment that
//!   exercises masking, fractional position indices, duration prediction,
//!   and editing/inpainting inference end to end.
//!
//! Everything is deterministic given a seed; batch-level parallelism (rayon,
//! behind the default `parallel` feature) never changes results bitwise.

pub mod ckpt;
pub mod dmd;
pub mod flow;
pub mod metrics;
pub mod nn;
pub mod oracle;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod toytts;

pub use tensor::Tensor;
