//! Dense rank-≤2 tensors and a reverse-mode differentiation tape.

mod gradcheck;
mod lstm;
mod matrix;
mod tape;

pub use gradcheck::{grad_check, relative_error, GradCheck, GradCheckReport};
pub use lstm::{BiLstmVars, LstmVars};
pub use matrix::Matrix;
pub(crate) use tape::argmax_first;
pub use tape::{GradientFault, Tape, Var};

use crate::scalar::Scalar;

/// A learnable (or frozen) value living outside any tape, together with its
/// accumulated gradient. `grad` is present exactly when `requires_grad` is.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub value: Matrix<T>,
    pub requires_grad: bool,
    pub grad: Option<Matrix<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn parameter(value: Matrix<T>) -> Self {
        let grad = Some(Matrix::zeros(value.rows(), value.cols()));
        Tensor {
            value,
            requires_grad: true,
            grad,
        }
    }

    pub fn frozen(value: Matrix<T>) -> Self {
        Tensor {
            value,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
        self.grad = on.then(|| Matrix::zeros(self.value.rows(), self.value.cols()));
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.fill(T::zero());
        }
    }

    /// Adds `delta` into the gradient buffer; no-op for frozen tensors.
    pub fn accumulate_grad(&mut self, delta: &Matrix<T>) {
        if let Some(g) = &mut self.grad {
            g.add_assign(delta);
        }
    }

    /// Records the current value on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Var {
        tape.leaf(self.value.clone(), self.requires_grad)
    }
}
