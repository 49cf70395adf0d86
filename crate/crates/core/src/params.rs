//! Named parameter storage that outlives any single tape.
//!
//! Training records a fresh tape per step: the store hands out leaf
//! tensors for the forward pass, then pulls their gradients back in and
//! accumulates them. Insertion order is the canonical order for the
//! optimizer and for checkpoints.

use std::collections::HashMap;

use crate::error::{FocusError, Result, TensorError};
use crate::tensor::{Tape, Tensor};

/// One learned tensor: its canonical name, shape, values, and the
/// gradient accumulated since the last `zero_grads`.
#[derive(Debug)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct ParamStore {
    entries: Vec<Param>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<()> {
        if self.by_name.contains_key(name) {
            return Err(FocusError::Config(format!("duplicate parameter name {name}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(FocusError::Config(format!(
                "parameter {name} declares shape {shape:?} but carries {} values",
                data.len()
            )));
        }
        self.by_name.insert(name.to_string(), self.entries.len());
        self.entries.push(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            grad: vec![0.0; data.len()],
            data,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.by_name
            .get(name)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| FocusError::Config(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        let i = *self
            .by_name
            .get(name)
            .ok_or_else(|| FocusError::Config(format!("unknown parameter {name}")))?;
        Ok(&mut self.entries[i])
    }

    /// Materialize one parameter as a gradient-tracked leaf on `tape`.
    pub fn leaf_on(&self, tape: &Tape, name: &str) -> Result<Tensor> {
        let p = self.get(name)?;
        Ok(tape.leaf(&p.shape, p.data.clone())?)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|p| p.data.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.entries {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Multiply every accumulated gradient by `s` (batch averaging).
    pub fn scale_grads(&mut self, s: f64) {
        for p in &mut self.entries {
            p.grad.iter_mut().for_each(|g| *g *= s);
        }
    }

    /// Pull gradients off a finished tape and add them to the store.
    /// A bound tensor the loss never reached contributes nothing.
    pub fn accumulate_grads(&mut self, binding: &[(String, Tensor)]) -> Result<()> {
        for (name, tensor) in binding {
            let grad = match tensor.grad_real() {
                Ok(g) => g,
                Err(TensorError::Backward(_)) => continue,
                Err(e) => return Err(e.into()),
            };
            let p = self.get_mut(name)?;
            if grad.len() != p.grad.len() {
                return Err(FocusError::Config(format!(
                    "gradient for {name} has {} values, parameter has {}",
                    grad.len(),
                    p.grad.len()
                )));
            }
            for (acc, g) in p.grad.iter_mut().zip(&grad) {
                *acc += g;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insert_and_lookup_keep_order_and_reject_misuse() {
        let mut store = ParamStore::new();
        store.insert("a.w", &[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        store.insert("a.b", &[2], vec![0.5, 0.5]).unwrap();
        assert_eq!(store.len(), 2);
        assert_eq!(store.num_scalars(), 6);
        assert_eq!(store.get("a.b").unwrap().data, vec![0.5, 0.5]);
        let names: Vec<&str> = store.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, vec!["a.w", "a.b"], "iteration must follow insertion");

        assert!(store.insert("a.w", &[1], vec![0.0]).is_err(), "duplicate name");
        assert!(store.insert("c", &[3], vec![0.0]).is_err(), "shape/data mismatch");
        assert!(store.get("missing").is_err());
    }

    #[test]
    fn gradients_accumulate_across_tapes() {
        let mut store = ParamStore::new();
        store.insert("w", &[2], vec![3.0, -1.0]).unwrap();
        store.insert("unused", &[1], vec![5.0]).unwrap();

        for pass in 0..2 {
            let tape = Tape::new();
            let w = store.leaf_on(&tape, "w").unwrap();
            let unused = store.leaf_on(&tape, "unused").unwrap();
            let loss = w.mul(&w).unwrap().sum_all().unwrap();
            tape.backward(&loss).unwrap();
            store
                .accumulate_grads(&[("w".into(), w), ("unused".into(), unused)])
                .unwrap();
            let want = 2.0 * (pass + 1) as f64;
            assert_eq!(
                store.get("w").unwrap().grad,
                vec![3.0 * want, -1.0 * want],
                "pass {pass} should stack d(w^2)/dw = 2w"
            );
            assert_eq!(store.get("unused").unwrap().grad, vec![0.0], "untouched leaf stays zero");
        }

        store.zero_grads();
        assert_eq!(store.get("w").unwrap().grad, vec![0.0, 0.0]);
    }
}
