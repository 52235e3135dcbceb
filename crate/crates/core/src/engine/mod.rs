//! Small differentiable-computation substrate for the neural scorer.
//!
//! Gradients are written out by hand for each operation and verified against
//! central finite differences by [`gradcheck`]. Everything is generic over
//! [`Real`] so the same code trains in `f32` and is checked in `f64`.

pub mod adam;
pub mod gradcheck;
pub mod gru;
pub mod loss;

use std::fmt::Debug;

use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, Differentiable, FnDifferentiable, GradCheckReport, GradCheckStatus};
pub use gru::{gru_cell_step, BiGruCache, BiGruLayer, GruCellParams, GruStepCache, GRU_TENSOR_NAMES};
pub use loss::{margin_at_kink, margin_ranking_loss, margin_ranking_loss_grad, MarginLossInputs};

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("{what}: expected length {expected}, got {got}")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("tensor data length {got} does not match shape {shape:?}")]
    ShapeMismatch { shape: Vec<usize>, got: usize },
    #[error("non-finite value at coordinate {0}")]
    NonFinite(usize),
    #[error("finite-difference step must be positive")]
    BadStep,
}

pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    fn from_f64_lossy(x: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(x).expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Row-major dense tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, EngineError> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(EngineError::ShapeMismatch {
                shape,
                got: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape)
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(shape: &[usize], bound: f64, rng: &mut impl rand::Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64_lossy(rng.gen_range(-bound..=bound)))
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[T] {
        let w = self.shape[1];
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let w = self.shape[1];
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|x| *x = T::zero());
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|x| U::from_f64_lossy(x.to_f64().expect("real")))
                .collect(),
        }
    }
}

/// `out += M x` for an `rows × cols` row-major `M`.
pub(crate) fn matvec_add<T: Real>(m: &[T], rows: usize, cols: usize, x: &[T], out: &mut [T]) {
    debug_assert_eq!(m.len(), rows * cols);
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)).take(rows) {
        let mut acc = T::zero();
        for (&a, &b) in row.iter().zip(x) {
            acc += a * b;
        }
        *o += acc;
    }
}

/// `out += Mᵀ v`.
pub(crate) fn matvec_t_add<T: Real>(m: &[T], rows: usize, cols: usize, v: &[T], out: &mut [T]) {
    debug_assert_eq!(m.len(), rows * cols);
    for (row, &vi) in m.chunks_exact(cols).take(rows).zip(v) {
        if vi == T::zero() {
            continue;
        }
        for (o, &a) in out.iter_mut().zip(row) {
            *o += a * vi;
        }
    }
}

/// `M += a bᵀ`.
pub(crate) fn outer_add<T: Real>(m: &mut [T], cols: usize, a: &[T], b: &[T]) {
    for (row, &ai) in m.chunks_exact_mut(cols).zip(a) {
        if ai == T::zero() {
            continue;
        }
        for (o, &bj) in row.iter_mut().zip(b) {
            *o += ai * bj;
        }
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_shape_checked() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]),
            Err(EngineError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn matvec_helpers() {
        let m = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut out = [0.0; 2];
        matvec_add(&m, 2, 3, &[1.0, 0.0, -1.0], &mut out);
        assert_eq!(out, [-2.0, -2.0]);
        let mut t = [0.0; 3];
        matvec_t_add(&m, 2, 3, &[1.0, 1.0], &mut t);
        assert_eq!(t, [5.0, 7.0, 9.0]);
        let mut o = [0.0; 6];
        outer_add(&mut o, 3, &[1.0, 2.0], &[1.0, 0.0, 1.0]);
        assert_eq!(o, [1.0, 0.0, 1.0, 2.0, 0.0, 2.0]);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-1000.0f64) >= 0.0);
        assert!(sigmoid(1000.0f64) <= 1.0);
    }
}
