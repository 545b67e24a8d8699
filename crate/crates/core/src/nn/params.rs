//! Named parameter tensors with gradient accumulators, plus the weight
//! initializers.

use super::NnError;
use rand::Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeMap;

pub type ParamId = usize;

/// A named tensor of 64-bit values with a same-shape gradient
/// accumulator.
#[derive(Debug, Clone)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

impl ParamTensor {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Ordered collection of parameter tensors. Insertion order is the
/// serialization order, so checkpoints are deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    tensors: Vec<ParamTensor>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<ParamId, NnError> {
        let name = name.into();
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "value count must match shape"
        );
        if self.by_name.contains_key(&name) {
            return Err(NnError::DuplicateParam(name));
        }
        let id = self.tensors.len();
        let grad = vec![0.0; values.len()];
        self.by_name.insert(name.clone(), id);
        self.tensors.push(ParamTensor {
            name,
            shape,
            values,
            grad,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.tensors[id]
    }

    pub fn id_of(&self, name: &str) -> Result<ParamId, NnError> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor> {
        self.tensors.iter()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Hard error on any non-finite value; trips before numerics can
    /// silently poison a training run.
    pub fn assert_values_finite(&self) -> Result<(), NnError> {
        for t in &self.tensors {
            if t.values.iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFiniteGradient(t.name.clone()));
            }
        }
        Ok(())
    }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for t in store.tensors.iter() {
        sq += t.grad.iter().map(|g| g * g).sum::<f64>();
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for t in store.tensors.iter_mut() {
            t.grad.iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

/// Standard-normal vector.
pub fn gaussian_vec<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Orthogonal weight initialization for a row-major `[rows, cols]`
/// matrix: Gram-Schmidt over the shorter dimension of a Gaussian draw,
/// scaled by `gain`.
pub fn orthogonal_init<R: Rng>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    let g = gaussian_vec(rows * cols, rng);
    if rows >= cols {
        // Orthonormalize the columns (vectors of length `rows`).
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cols);
        for c in 0..cols {
            let mut v: Vec<f64> = (0..rows).map(|r| g[r * cols + c]).collect();
            for b in &basis {
                let dot: f64 = v.iter().zip(b.iter()).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(b.iter()).for_each(|(a, b)| *a -= dot * b);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(norm > 1e-12, "degenerate draw in orthogonal init");
            v.iter_mut().for_each(|a| *a /= norm);
            basis.push(v);
        }
        let mut w = vec![0.0; rows * cols];
        for (c, v) in basis.iter().enumerate() {
            for r in 0..rows {
                w[r * cols + c] = gain * v[r];
            }
        }
        w
    } else {
        // Orthonormalize the rows.
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(rows);
        for r in 0..rows {
            let mut v: Vec<f64> = g[r * cols..(r + 1) * cols].to_vec();
            for b in &basis {
                let dot: f64 = v.iter().zip(b.iter()).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(b.iter()).for_each(|(a, b)| *a -= dot * b);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(norm > 1e-12, "degenerate draw in orthogonal init");
            v.iter_mut().for_each(|a| *a /= norm);
            basis.push(v);
        }
        let mut w = vec![0.0; rows * cols];
        for (r, v) in basis.iter().enumerate() {
            for c in 0..cols {
                w[r * cols + c] = gain * v[c];
            }
        }
        w
    }
}
