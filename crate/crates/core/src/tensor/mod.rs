//! Dense tensors, a dynamic reverse-mode tape, and the Adam optimizer.
//!
//! Everything is `f64`. A [`Tape`] is rebuilt for every forward pass: leaves
//! are either constants, free leaves that collect their own gradient, or
//! copies of parameters held in a [`ParamStore`]. Calling
//! [`Tape::backward_into`] accumulates parameter gradients into the store,
//! where [`AdamState::step`] consumes them.

mod adam;
mod gradcheck;
mod params;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::finite_difference_check;
pub use params::{ParamId, ParamStore};
pub use tape::{Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} does not hold {len} values")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{op} requires strictly positive input, found {value}")]
    Domain { op: &'static str, value: f64 },
    #[error("axis {axis} out of range for shape {shape:?}")]
    Axis { axis: usize, shape: Vec<usize> },
    #[error("index {index} out of range for {len} rows")]
    Index { index: usize, len: usize },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("parameter {0} has no gradient")]
    MissingGrad(usize),
    #[error("optimizer state for parameter {0} does not match its shape")]
    StateShape(usize),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Row-major n-dimensional array of `f64` with an optional gradient slot.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) || shape.iter().product::<usize>() != values.len()
        {
            return Err(TensorError::InvalidShape {
                shape,
                len: values.len(),
            });
        }
        Ok(Self {
            shape,
            values,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], values)
    }

    pub fn vector(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(vec![n], values)
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            values: vec![value],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let len = shape.iter().product();
        Self::new(shape.to_vec(), vec![0.0; len])
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        let len = shape.iter().product();
        Self::new(shape.to_vec(), vec![value; len])
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            values[i * n + i] = 1.0;
        }
        Self::matrix(n, n, values)
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "from_rows",
                    left: vec![cols],
                    right: vec![row.len()],
                });
            }
            values.extend_from_slice(row);
        }
        Self::matrix(rows.len(), cols, values)
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        match &mut self.grad {
            Some(g) => g.iter_mut().for_each(|v| *v = 0.0),
            None => self.grad = Some(vec![0.0; self.values.len()]),
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub(crate) fn accumulate_grad(&mut self, delta: &[f64]) {
        let grad = self.grad.get_or_insert_with(|| vec![0.0; delta.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        self.values[0]
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Trailing dimension for matrices; 1 for vectors.
    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1]
        } else {
            1
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let c = self.cols();
        &self.values[row * c..(row + 1) * c]
    }

    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.values[row * c..(row + 1) * c]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.cols())
    }

    /// Copies the selected rows of a matrix into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let cols = self.cols();
        let mut values = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= self.rows() {
                return Err(TensorError::Index {
                    index: i,
                    len: self.rows(),
                });
            }
            values.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Self::new(shape, values)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
