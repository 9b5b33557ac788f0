//! A synthetic text-to-token task with ground-truth alignment: utterances
//! pair a symbol sequence with a run of jittered codewords (one run per
//! symbol, run length = the symbol's duration), so masking, infilling,
//! duration prediction, and editing can all be scored exactly.

pub mod duration;
pub mod eval;
pub mod mask;
pub mod t2t;
pub mod task;

pub use duration::{DurationConfig, DurationModel};
pub use eval::{diversity_eval, duration_sweep, DiversityReport, Synth};
pub use mask::{sample_mask, MaskSpec};
pub use t2t::{T2TCond, T2TConfig, T2TDrift, T2TModel, T2TStudent};
pub use task::{gen_dataset, ToyTask, ToyTaskConfig, ToyUtterance};
