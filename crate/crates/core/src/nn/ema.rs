//! Exponential moving average of a parameter store.

use super::params::ParamStore;
use super::NnError;

#[derive(Clone, Debug)]
pub struct Ema {
    pub decay: f64,
    shadow: ParamStore,
}

impl Ema {
    /// Shadow starts as a copy of the tracked parameters.
    pub fn new(params: &ParamStore, decay: f64) -> Self {
        assert!((0.0..=1.0).contains(&decay), "decay must be in [0, 1]");
        Self { decay, shadow: params.clone() }
    }

    pub fn shadow(&self) -> &ParamStore {
        &self.shadow
    }

    pub fn into_shadow(self) -> ParamStore {
        self.shadow
    }

    /// shadow' = decay * shadow + (1 - decay) * params, elementwise.
    pub fn update(&mut self, params: &ParamStore) -> Result<(), NnError> {
        for (name, s) in self.shadow.iter_mut() {
            let p = params.get(name).ok_or_else(|| NnError::UnknownParam { name: name.into() })?;
            if p.shape() != s.shape() {
                return Err(NnError::ShapeMismatch {
                    name: name.into(),
                    expected: s.shape().to_vec(),
                    got: p.shape().to_vec(),
                });
            }
            for (s_i, &p_i) in s.data_mut().iter_mut().zip(p.data()) {
                *s_i = self.decay * *s_i + (1.0 - self.decay) * p_i;
            }
        }
        Ok(())
    }
}
