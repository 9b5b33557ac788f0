//! Parameter initialization and tape builders for linear layers and
//! pre-norm transformer blocks with rotary attention.

use rand::Rng;

use super::params::ParamStore;
use super::tape::{NodeId, Tape};
use crate::rng::normal;
use crate::tensor::Tensor;

/// Geometry of one transformer block.
#[derive(Clone, Copy, Debug)]
pub struct BlockConfig {
    pub width: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub rope_base: f64,
}

impl BlockConfig {
    pub fn head_dim(&self) -> usize {
        assert!(
            self.width % self.heads == 0,
            "width {} not divisible by heads {}",
            self.width,
            self.heads
        );
        self.width / self.heads
    }
}

/// Weight `[fan_in, fan_out]` scaled by 1/sqrt(fan_in), zero bias.
pub fn init_linear(
    store: &mut ParamStore,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl Rng,
) {
    let scale = 1.0 / (fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| normal(rng) * scale).collect();
    store
        .insert(format!("{name}.w"), Tensor::new(vec![fan_in, fan_out], data))
        .unwrap();
    store
        .insert(format!("{name}.b"), Tensor::zeros(&[fan_out]))
        .unwrap();
}

pub fn init_layer_norm(store: &mut ParamStore, name: &str, width: usize) {
    store
        .insert(format!("{name}.g"), Tensor::full(&[width], 1.0))
        .unwrap();
    store
        .insert(format!("{name}.b"), Tensor::zeros(&[width]))
        .unwrap();
}

pub fn init_block(store: &mut ParamStore, prefix: &str, cfg: &BlockConfig, rng: &mut impl Rng) {
    let w = cfg.width;
    init_layer_norm(store, &format!("{prefix}.ln1"), w);
    init_linear(store, &format!("{prefix}.q"), w, w, rng);
    init_linear(store, &format!("{prefix}.k"), w, w, rng);
    init_linear(store, &format!("{prefix}.v"), w, w, rng);
    init_linear(store, &format!("{prefix}.o"), w, w, rng);
    init_layer_norm(store, &format!("{prefix}.ln2"), w);
    init_linear(store, &format!("{prefix}.fc1"), w, w * cfg.mlp_ratio, rng);
    init_linear(store, &format!("{prefix}.fc2"), w * cfg.mlp_ratio, w, rng);
}

pub fn linear(tape: &mut Tape, store: &ParamStore, x: NodeId, name: &str) -> NodeId {
    let w = tape.param(store, &format!("{name}.w"));
    let b = tape.param(store, &format!("{name}.b"));
    let y = tape.matmul(x, w);
    tape.add_bias(y, b)
}

pub fn layer_norm(tape: &mut Tape, store: &ParamStore, x: NodeId, name: &str) -> NodeId {
    let g = tape.param(store, &format!("{name}.g"));
    let b = tape.param(store, &format!("{name}.b"));
    tape.layer_norm(x, g, b)
}

/// Multi-head self-attention over one sequence `[seq, width]` with rotary
/// position indices, no masking (the models here are bidirectional).
pub fn attention(
    tape: &mut Tape,
    store: &ParamStore,
    x: NodeId,
    indices: &[f64],
    cfg: &BlockConfig,
    prefix: &str,
) -> NodeId {
    let seq = tape.value(x).shape()[0];
    let (h, hd) = (cfg.heads, cfg.head_dim());
    let split = |tape: &mut Tape, n: NodeId| {
        let r = tape.reshape(n, &[seq, h, hd]);
        tape.swap01(r) // [h, seq, hd]
    };

    let q = linear(tape, store, x, &format!("{prefix}.q"));
    let k = linear(tape, store, x, &format!("{prefix}.k"));
    let v = linear(tape, store, x, &format!("{prefix}.v"));
    let q = split(tape, q);
    let k = split(tape, k);
    let v = split(tape, v);
    let q = tape.rope(q, indices, cfg.rope_base);
    let k = tape.rope(k, indices, cfg.rope_base);

    let kt = tape.transpose_last2(k); // [h, hd, seq]
    let scores = tape.batch_matmul(q, kt); // [h, seq, seq]
    let scores = tape.scale(scores, 1.0 / (hd as f64).sqrt());
    let probs = tape.softmax_last(scores);
    let ctx = tape.batch_matmul(probs, v); // [h, seq, hd]
    let merged = tape.swap01(ctx); // [seq, h, hd]
    let merged = tape.reshape(merged, &[seq, h * hd]);
    linear(tape, store, merged, &format!("{prefix}.o"))
}

/// Pre-norm transformer block: attention and SiLU MLP, each with a residual.
pub fn transformer_block(
    tape: &mut Tape,
    store: &ParamStore,
    x: NodeId,
    indices: &[f64],
    cfg: &BlockConfig,
    prefix: &str,
) -> NodeId {
    let h = layer_norm(tape, store, x, &format!("{prefix}.ln1"));
    let attn = attention(tape, store, h, indices, cfg, prefix);
    let x = tape.add(x, attn);

    let h = layer_norm(tape, store, x, &format!("{prefix}.ln2"));
    let h = linear(tape, store, h, &format!("{prefix}.fc1"));
    let h = tape.silu(h);
    let h = linear(tape, store, h, &format!("{prefix}.fc2"));
    tape.add(x, h)
}
