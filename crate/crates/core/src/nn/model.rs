//! Time-conditioned MLP drift networks for low-dimensional targets.

use rand::Rng;

use super::layers::init_linear;
use super::params::ParamStore;
use super::rope::time_embedding;
use super::tape::{NodeId, Tape};
use super::NnError;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Tanh,
}

/// MLP over `[x, time_embedding(t)]` features.
#[derive(Clone, Debug)]
pub struct MlpConfig {
    pub in_dim: usize,
    pub out_dim: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub activation: Activation,
    pub time_dim: usize,
}

impl MlpConfig {
    /// Drift network for d-dimensional samples: 4 hidden layers of width
    /// 128, SiLU, 16 sinusoidal time features.
    pub fn drift(dim: usize) -> Self {
        Self {
            in_dim: dim,
            out_dim: dim,
            hidden_width: 128,
            hidden_layers: 4,
            activation: Activation::Silu,
            time_dim: 16,
        }
    }
}

/// A parametric function with named parameters: deterministic forward
/// evaluation plus reverse-mode gradients through the tape.
#[derive(Clone, Debug)]
pub struct DiffModel {
    pub config: MlpConfig,
    pub params: ParamStore,
}

impl DiffModel {
    pub fn new(config: MlpConfig, rng: &mut impl Rng) -> Self {
        let mut params = ParamStore::new();
        let mut fan_in = config.in_dim + config.time_dim;
        for layer in 0..config.hidden_layers {
            init_linear(&mut params, &format!("l{layer}"), fan_in, config.hidden_width, rng);
            fan_in = config.hidden_width;
        }
        init_linear(&mut params, "out", fan_in, config.out_dim, rng);
        Self { config, params }
    }

    /// `[x, time_embedding(t)]` rows; `ts` has one entry per batch row.
    pub fn features(&self, x: &Tensor, ts: &[f64]) -> Result<Tensor, NnError> {
        let d = self.config.in_dim;
        if x.rank() != 2 || x.shape()[1] != d {
            return Err(NnError::ShapeMismatch {
                name: "input".into(),
                expected: vec![ts.len(), d],
                got: x.shape().to_vec(),
            });
        }
        if x.shape()[0] != ts.len() {
            return Err(NnError::ShapeMismatch {
                name: "time batch".into(),
                expected: vec![x.shape()[0]],
                got: vec![ts.len()],
            });
        }
        let b = ts.len();
        let td = self.config.time_dim;
        let mut data = Vec::with_capacity(b * (d + td));
        for (row, &t) in x.data().chunks(d).zip(ts) {
            data.extend_from_slice(row);
            data.extend_from_slice(&time_embedding(t, td));
        }
        Ok(Tensor::new(vec![b, d + td], data))
    }

    /// Apply the network to pre-built feature rows on a tape.
    pub fn apply(&self, tape: &mut Tape, features: NodeId) -> NodeId {
        let mut h = features;
        for layer in 0..self.config.hidden_layers {
            let w = tape.param(&self.params, &format!("l{layer}.w"));
            let b = tape.param(&self.params, &format!("l{layer}.b"));
            let y = tape.matmul(h, w);
            let y = tape.add_bias(y, b);
            h = match self.config.activation {
                Activation::Silu => tape.silu(y),
                Activation::Tanh => tape.tanh(y),
            };
        }
        let w = tape.param(&self.params, "out.w");
        let b = tape.param(&self.params, "out.b");
        let y = tape.matmul(h, w);
        tape.add_bias(y, b)
    }

    /// Tape-free forward pass for sampling loops.
    pub fn forward(&self, x: &Tensor, ts: &[f64]) -> Result<Tensor, NnError> {
        let feats = self.features(x, ts)?;
        let mut h = feats;
        let act = |t: Tensor, a: Activation| match a {
            Activation::Silu => t.map(|v| v / (1.0 + (-v).exp())),
            Activation::Tanh => t.map(f64::tanh),
        };
        for layer in 0..self.config.hidden_layers {
            let w = self.params.get(&format!("l{layer}.w")).unwrap();
            let b = self.params.get(&format!("l{layer}.b")).unwrap();
            let mut y = h.matmul(w);
            add_bias_inplace(&mut y, b);
            h = act(y, self.config.activation);
        }
        let w = self.params.get("out.w").unwrap();
        let b = self.params.get("out.b").unwrap();
        let mut y = h.matmul(w);
        add_bias_inplace(&mut y, b);
        Ok(y)
    }

    /// Forward pass plus reverse-mode gradients of a scalar reduction of the
    /// outputs. `reduce` maps the output node to a scalar node on the tape.
    pub fn forward_backward(
        &self,
        x: &Tensor,
        ts: &[f64],
        reduce: impl FnOnce(&mut Tape, NodeId) -> NodeId,
    ) -> Result<(f64, ParamStore), NnError> {
        let feats = self.features(x, ts)?;
        let mut tape = Tape::new();
        let f = tape.constant(feats);
        let out = self.apply(&mut tape, f);
        let loss = reduce(&mut tape, out);
        let loss_value = tape.value(loss).item();
        let grads = tape.backward(loss, &self.params);
        Ok((loss_value, grads))
    }
}

fn add_bias_inplace(x: &mut Tensor, bias: &Tensor) {
    let d = bias.shape()[0];
    for chunk in x.data_mut().chunks_mut(d) {
        for (o, &b) in chunk.iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
}
