//! AdamW with decoupled weight decay and bias correction.

use super::params::ParamStore;
use super::NnError;

/// Optimizer state: first/second moments mirror the parameter store.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step_count: u64,
    m: ParamStore,
    v: ParamStore,
}

impl AdamW {
    /// Training recipe used throughout: betas (0.9, 0.95), eps 1e-8, no
    /// weight decay, constant learning rate.
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.0,
            step_count: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One decoupled-weight-decay Adam update. Rejects non-finite gradients
    /// before touching any state, naming the offending parameter.
    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore) -> Result<(), NnError> {
        for (name, g) in grads.iter() {
            let p = params.get(name).ok_or_else(|| NnError::UnknownParam { name: name.into() })?;
            if p.shape() != g.shape() {
                return Err(NnError::ShapeMismatch {
                    name: name.into(),
                    expected: p.shape().to_vec(),
                    got: g.shape().to_vec(),
                });
            }
            if !g.all_finite() {
                return Err(NnError::NonFiniteGrad { name: name.into() });
            }
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);

        for (name, p) in params.iter_mut() {
            let g = grads.get(name).expect("verified above");
            let m = self.m.get(name).unwrap().clone();
            let v = self.v.get(name).unwrap().clone();
            let mut m_new = m;
            let mut v_new = v;
            for ((m_i, v_i), &g_i) in m_new
                .data_mut()
                .iter_mut()
                .zip(v_new.data_mut().iter_mut())
                .zip(g.data())
            {
                *m_i = self.beta1 * *m_i + (1.0 - self.beta1) * g_i;
                *v_i = self.beta2 * *v_i + (1.0 - self.beta2) * g_i * g_i;
            }
            for ((p_i, &m_i), &v_i) in p
                .data_mut()
                .iter_mut()
                .zip(m_new.data())
                .zip(v_new.data())
            {
                let m_hat = m_i / bc1;
                let v_hat = v_i / bc2;
                *p_i -= self.lr * self.weight_decay * *p_i;
                *p_i -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            self.m.set(name, m_new).unwrap();
            self.v.set(name, v_new).unwrap();
        }
        Ok(())
    }
}
