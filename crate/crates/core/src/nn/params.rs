//! Named, ordered parameter storage.

use indexmap::IndexMap;

use super::NnError;
use crate::tensor::Tensor;

/// Ordered map from parameter name to value. Iteration follows insertion
/// order; shapes are fixed at insertion and updates never change them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<(), NnError> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(NnError::DuplicateParam { name });
        }
        self.entries.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    /// Replace the value of an existing entry. The new value must keep the
    /// entry's shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<(), NnError> {
        match self.entries.get_mut(name) {
            None => Err(NnError::UnknownParam { name: name.to_string() }),
            Some(slot) => {
                if slot.shape() != value.shape() {
                    return Err(NnError::ShapeMismatch {
                        name: name.to_string(),
                        expected: slot.shape().to_vec(),
                        got: value.shape().to_vec(),
                    });
                }
                *slot = value;
                Ok(())
            }
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.entries.values().map(|t| t.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    /// A store of zeros with the same entries and shapes.
    pub fn zeros_like(&self) -> Self {
        let mut out = Self::new();
        for (name, value) in self.iter() {
            out.entries.insert(name.to_string(), Tensor::zeros(value.shape()));
        }
        out
    }

    /// Copy all values from `other` (same entry set and shapes required).
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<(), NnError> {
        for (name, value) in other.iter() {
            self.set(name, value.clone())?;
        }
        Ok(())
    }

    /// Re-key every entry with a prefix; used to namespace checkpoints.
    pub fn with_prefix(&self, prefix: &str) -> Self {
        let mut out = Self::new();
        for (name, value) in self.iter() {
            out.entries.insert(format!("{prefix}{name}"), value.clone());
        }
        out
    }

    /// Inverse of [`with_prefix`]: keep entries under `prefix`, stripped.
    pub fn strip_prefix(&self, prefix: &str) -> Self {
        let mut out = Self::new();
        for (name, value) in self.iter() {
            if let Some(rest) = name.strip_prefix(prefix) {
                out.entries.insert(rest.to_string(), value.clone());
            }
        }
        out
    }

    /// Euclidean norm over all values; used for gradient-norm logging.
    pub fn norm_l2(&self) -> f64 {
        self.entries
            .values()
            .map(|t| t.data().iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Order-sensitive FNV over names, shapes, and value bits. Detects any
    /// mutation of a store that is supposed to stay frozen.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |byte: u8| {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for (name, value) in self.iter() {
            for b in name.as_bytes() {
                eat(*b);
            }
            for d in value.shape() {
                for b in d.to_le_bytes() {
                    eat(b);
                }
            }
            for x in value.data() {
                for b in x.to_le_bytes() {
                    eat(b);
                }
            }
        }
        h
    }
}

impl FromIterator<(String, Tensor)> for ParamStore {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        let mut store = Self::new();
        for (name, value) in iter {
            store.insert(name, value).expect("duplicate parameter name");
        }
        store
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insertion_order_is_preserved() {
        let mut s = ParamStore::new();
        s.insert("z", Tensor::from_vec(vec![1.0])).unwrap();
        s.insert("a", Tensor::from_vec(vec![2.0])).unwrap();
        let names: Vec<_> = s.names().collect();
        assert_eq!(names, vec!["z", "a"]);
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::from_vec(vec![1.0])).unwrap();
        assert!(matches!(
            s.insert("w", Tensor::from_vec(vec![2.0])),
            Err(NnError::DuplicateParam { .. })
        ));
    }

    #[test]
    fn set_rejects_shape_changes() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::zeros(&[2, 2])).unwrap();
        let err = s.set("w", Tensor::zeros(&[4])).unwrap_err();
        assert!(matches!(err, NnError::ShapeMismatch { .. }));
    }

    #[test]
    fn checksum_changes_with_values() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::from_vec(vec![1.0, 2.0])).unwrap();
        let c0 = s.checksum();
        s.set("w", Tensor::from_vec(vec![1.0, 3.0])).unwrap();
        assert_ne!(c0, s.checksum());
    }
}
