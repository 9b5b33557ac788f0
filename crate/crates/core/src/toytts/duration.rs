//! Context-conditioned duration prediction trained on the L1 difference of
//! total durations over the masked symbols.

use rand::Rng;

use super::task::ToyUtterance;
use crate::nn::layers::{self, BlockConfig};
use crate::nn::{AdamW, NodeId, ParamStore, Tape};
use crate::rng::Prng;
use crate::tensor::Tensor;
use crate::{par, rng as crng};

#[derive(Clone, Copy, Debug)]
pub struct DurationConfig {
    pub alphabet_size: usize,
    pub width: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub rope_base: f64,
}

impl DurationConfig {
    pub fn small(alphabet_size: usize) -> Self {
        Self { alphabet_size, width: 48, depth: 2, heads: 4, mlp_ratio: 2, rope_base: 10000.0 }
    }

    fn block(&self) -> BlockConfig {
        BlockConfig {
            width: self.width,
            heads: self.heads,
            mlp_ratio: self.mlp_ratio,
            rope_base: self.rope_base,
        }
    }
}

/// Per-symbol regression network: symbol embeddings plus (observed
/// duration, observed flag) channels, a couple of attention blocks over
/// integer positions, and a softplus head so outputs stay positive.
#[derive(Clone, Debug)]
pub struct DurationModel {
    pub config: DurationConfig,
    pub params: ParamStore,
}

/// Probability that a symbol's duration is observed during training.
pub const OBSERVE_PROB: f64 = 0.5;
/// Probability that nothing is observed (full duration mask).
pub const FULL_MASK_PROB: f64 = 0.1;

impl DurationModel {
    pub fn new(config: DurationConfig, rng: &mut impl Rng) -> Self {
        let mut params = ParamStore::new();
        let embed: Vec<f64> = (0..config.alphabet_size * config.width)
            .map(|_| crng::normal(rng) / (config.width as f64).sqrt())
            .collect();
        params
            .insert("embed", Tensor::new(vec![config.alphabet_size, config.width], embed))
            .unwrap();
        layers::init_linear(&mut params, "obs_in", 2, config.width, rng);
        for i in 0..config.depth {
            layers::init_block(&mut params, &format!("blk{i}"), &config.block(), rng);
        }
        layers::init_layer_norm(&mut params, "ln_f", config.width);
        layers::init_linear(&mut params, "out", config.width, 1, rng);
        Self { config, params }
    }

    /// Graph over one text; `observed[i]` carries the known duration or
    /// None. Returns the per-symbol positive prediction node `[len]`.
    fn apply(&self, tape: &mut Tape, text: &[u16], observed: &[Option<usize>]) -> NodeId {
        assert_eq!(text.len(), observed.len());
        let n = text.len();
        let embed = tape.param(&self.params, "embed");
        let rows: Vec<usize> = text.iter().map(|&s| s as usize).collect();
        let sym = tape.gather(embed, &rows);

        let mut obs = Vec::with_capacity(n * 2);
        for o in observed {
            match o {
                Some(d) => {
                    obs.push(*d as f64);
                    obs.push(1.0);
                }
                None => {
                    obs.push(0.0);
                    obs.push(0.0);
                }
            }
        }
        let obs = tape.constant(Tensor::new(vec![n, 2], obs));
        let obs = layers::linear(tape, &self.params, obs, "obs_in");
        let mut h = tape.add(sym, obs);

        let indices: Vec<f64> = (0..n).map(|i| i as f64).collect();
        for i in 0..self.config.depth {
            h = layers::transformer_block(tape, &self.params, h, &indices, &self.config.block(), &format!("blk{i}"));
        }
        let h = layers::layer_norm(tape, &self.params, h, "ln_f");
        let out = layers::linear(tape, &self.params, h, "out");
        let flat = tape.reshape(out, &[n]);
        tape.softplus(flat)
    }

    /// Per-symbol duration estimates; observed positions are echoed through
    /// unchanged, predictions fill the rest.
    pub fn predict(&self, text: &[u16], observed: &[Option<usize>]) -> Vec<f64> {
        let mut tape = Tape::new();
        let node = self.apply(&mut tape, text, observed);
        let pred = tape.value(node).data().to_vec();
        pred.iter()
            .zip(observed)
            .map(|(&p, o)| match o {
                Some(d) => *d as f64,
                None => p,
            })
            .collect()
    }

    /// Integer assembly of `predict`: observed values pass through,
    /// predictions round to the nearest integer with a floor of 1.
    pub fn assemble(&self, text: &[u16], observed: &[Option<usize>]) -> Vec<usize> {
        self.predict(text, observed)
            .iter()
            .zip(observed)
            .map(|(&p, o)| match o {
                Some(d) => *d,
                None => (p.round() as i64).max(1) as usize,
            })
            .collect()
    }

    /// Predicted total duration with nothing observed.
    pub fn predict_total(&self, text: &[u16]) -> f64 {
        let observed = vec![None; text.len()];
        self.predict(text, &observed).iter().sum()
    }
}

/// Draw the training observation pattern: with probability 0.1 nothing is
/// observed, otherwise each duration independently with probability 0.5.
pub fn sample_observation(durations: &[usize], rng: &mut impl Rng) -> Vec<Option<usize>> {
    if rng.gen::<f64>() < FULL_MASK_PROB {
        return vec![None; durations.len()];
    }
    durations
        .iter()
        .map(|&d| if rng.gen::<f64>() < OBSERVE_PROB { Some(d) } else { None })
        .collect()
}

const GRAD_CHUNK: usize = 16;

/// One optimizer step on |sum of predicted masked durations - sum of true
/// masked durations|, averaged over the batch. A fully observed element
/// contributes zero loss and zero gradient.
pub fn duration_train_step(
    model: &mut DurationModel,
    opt: &mut AdamW,
    batch: &[(&ToyUtterance, Vec<Option<usize>>)],
    _rng: &mut Prng,
) -> Result<f64, crate::nn::NnError> {
    let b = batch.len() as f64;
    let chunks: Vec<&[(&ToyUtterance, Vec<Option<usize>>)]> = batch.chunks(GRAD_CHUNK).collect();
    let model_ref = &*model;
    let partials: Vec<(f64, ParamStore)> = par::map_slice(&chunks, |chunk| {
        let mut tape = Tape::new();
        let mut total: Option<NodeId> = None;
        for (u, observed) in chunk.iter() {
            let pred = model_ref.apply(&mut tape, &u.text, observed);
            let mut mask = Vec::with_capacity(u.text.len());
            let mut true_sum = 0.0;
            for (o, &d) in observed.iter().zip(&u.durations) {
                if o.is_none() {
                    mask.push(1.0);
                    true_sum += d as f64;
                } else {
                    mask.push(0.0);
                }
            }
            let masked_sum = tape.dot_const(pred, Tensor::from_vec(mask));
            let shift = tape.constant(Tensor::scalar(true_sum));
            let diff = tape.sub(masked_sum, shift);
            let l1 = tape.abs(diff);
            let scaled = tape.scale(l1, 1.0 / b);
            total = Some(match total {
                None => scaled,
                Some(acc) => tape.add(acc, scaled),
            });
        }
        let total = total.expect("non-empty chunk");
        (tape.value(total).item(), tape.backward(total, &model_ref.params))
    });

    let mut loss = 0.0;
    let mut grads = model.params.zeros_like();
    for (v, g) in partials {
        loss += v;
        for (name, acc) in grads.iter_mut() {
            acc.add_scaled(g.get(name).unwrap(), 1.0);
        }
    }
    opt.step(&mut model.params, &grads)?;
    Ok(loss)
}

/// Closed-form baseline: E|S - 2m| where S is a sum of m i.i.d. uniform
/// draws from {lo..=hi} and the constant predictor says the midpoint per
/// symbol. Computed by exact convolution of the sum's distribution.
pub fn constant_predictor_baseline(m: usize, lo: usize, hi: usize) -> f64 {
    assert!(m >= 1 && lo <= hi);
    let span = hi - lo + 1;
    // dist[s] = P(sum of offsets == s), offsets in 0..span per symbol.
    let mut dist = vec![1.0 / span as f64; span];
    for _ in 1..m {
        let mut next = vec![0.0; dist.len() + span - 1];
        for (s, &p) in dist.iter().enumerate() {
            for o in 0..span {
                next[s + o] += p / span as f64;
            }
        }
        dist = next;
    }
    let mean_pred = m as f64 * (lo + hi) as f64 / 2.0;
    dist.iter()
        .enumerate()
        .map(|(s, &p)| p * ((s + m * lo) as f64 - mean_pred).abs())
        .sum()
}
