//! Named parameter arrays shared by every network, plus the glue that binds
//! them onto a tape as differentiable leaves.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{DiffError, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Ordered collection of parameter arrays addressed by [`ParamId`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<NamedParam>,
    by_name: HashMap<String, usize>,
}

/// Tape handles for every parameter of a store, in store order.
#[derive(Clone, Debug)]
pub struct Bound(pub Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter; names must be unique.
    pub fn add(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> ParamId {
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "parameter {name}: shape/value length"
        );
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter {name}"
        );
        self.by_name.insert(name.to_string(), self.params.len());
        self.params.push(NamedParam {
            name: name.to_string(),
            shape: shape.to_vec(),
            values,
        });
        ParamId(self.params.len() - 1)
    }

    /// Registers a parameter drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn add_uniform(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let values = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.add(name, shape, values)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].values
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].values
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.params[id.0].shape
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn entries(&self) -> &[NamedParam] {
        &self.params
    }

    pub fn entries_mut(&mut self) -> impl Iterator<Item = &mut NamedParam> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Records every parameter on `tape`; differentiable iff `grad`.
    pub fn bind(&self, tape: &mut Tape<f64>, grad: bool) -> Bound {
        Bound(
            self.params
                .iter()
                .map(|p| {
                    let t = Tensor::new(&p.shape, p.values.clone()).expect("consistent param");
                    if grad {
                        tape.leaf(t.with_grad())
                    } else {
                        tape.constant(t)
                    }
                })
                .collect(),
        )
    }

    /// Reads the accumulated gradients of a bound store, in store order.
    pub fn grads(&self, tape: &Tape<f64>, bound: &Bound) -> Vec<Vec<f64>> {
        bound
            .0
            .iter()
            .zip(&self.params)
            .map(|(&v, p)| {
                tape.grad(v)
                    .map(|g| g.to_vec())
                    .unwrap_or_else(|| vec![0.0; p.values.len()])
            })
            .collect()
    }

    pub fn copy_from(&mut self, other: &ParamStore) {
        assert_eq!(self.params.len(), other.params.len());
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            dst.values.copy_from_slice(&src.values);
        }
    }

    /// Replaces values from named arrays, checking every name and shape.
    pub fn load_named(&mut self, named: &[NamedParam]) -> Result<(), ParamMismatch> {
        if named.len() != self.params.len() {
            return Err(ParamMismatch::Count {
                expected: self.params.len(),
                found: named.len(),
            });
        }
        for src in named {
            let idx = *self
                .by_name
                .get(&src.name)
                .ok_or_else(|| ParamMismatch::Unknown(src.name.clone()))?;
            let dst = &mut self.params[idx];
            if dst.shape != src.shape || src.values.len() != dst.values.len() {
                return Err(ParamMismatch::Shape {
                    name: src.name.clone(),
                    expected: dst.shape.clone(),
                    found: src.shape.clone(),
                });
            }
            dst.values.copy_from_slice(&src.values);
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ParamMismatch {
    #[error("expected {expected} parameter arrays, found {found}")]
    Count { expected: usize, found: usize },
    #[error("unknown parameter {0}")]
    Unknown(String),
    #[error("parameter {name}: expected shape {expected:?}, found {found:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

/// `x · w + b` for `x: [r, in]`, `w: [in, out]`, `b: [1, out]`.
pub fn linear(tape: &mut Tape<f64>, x: Var, w: Var, b: Var) -> Result<Var, DiffError> {
    let xw = tape.matmul(x, w)?;
    tape.add_row(xw, b)
}

/// Plain-slice counterpart of [`linear`] for a single input row.
pub fn linear_row(x: &[f64], w: &[f64], b: Option<&[f64]>, out_dim: usize) -> Vec<f64> {
    let mut out = match b {
        Some(b) => b.to_vec(),
        None => vec![0.0; out_dim],
    };
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &w[i * out_dim..(i + 1) * out_dim];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += xi * wv;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn load_named_reports_shape_mismatch_by_name() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut a = ParamStore::new();
        a.add_uniform("w", &[2, 3], 2, &mut rng);
        let mut b = ParamStore::new();
        b.add_uniform("w", &[3, 2], 3, &mut rng);
        let err = a.load_named(b.entries()).unwrap_err();
        assert!(err.to_string().contains("w"), "{err}");
        assert!(matches!(err, ParamMismatch::Shape { .. }));
    }

    #[test]
    fn linear_row_matches_tape_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let w = store.add_uniform("w", &[3, 2], 3, &mut rng);
        let b = store.add_uniform("b", &[1, 2], 3, &mut rng);
        let x = vec![0.5, -1.0, 2.0];
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let xv = tape.constant(Tensor::row(x.clone()));
        let y = linear(&mut tape, xv, bound.var(w), bound.var(b)).unwrap();
        let plain = linear_row(&x, store.get(w), Some(store.get(b)), 2);
        for (a, b) in tape.values(y).iter().zip(&plain) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
