//! Dense `f64` tensors, a reverse-mode gradient tape and the Adam optimizer.
//!
//! Everything the age networks need lives here: dense layers, 2-D
//! convolution, 2×2 max-pooling, ReLU, sigmoid, concatenation and MSE.
//! Activations are stored height × width × channels, row-major.

mod adam;
mod kernels;
mod ptns;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use ptns::{read_ptns, read_ptns_file, write_ptns, write_ptns_file, PTNS_MAGIC, PTNS_VERSION};
pub use tape::{Gradients, Padding, Tape, Var};
pub(crate) use tape::conv_output_hw;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape {shape:?} describes {expected} elements but {actual} values were supplied")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("tensor dimensions must be positive, got {0:?}")]
    ZeroDimension(Vec<usize>),
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("concat of an empty input list")]
    EmptyConcat,
    #[error("maxpool2 needs even spatial dimensions, got {h}x{w}")]
    OddPoolInput { h: usize, w: usize },
    #[error("conv2d: {kh}x{kw} kernel does not fit a {h}x{w} input")]
    KernelTooLarge {
        kh: usize,
        kw: usize,
        h: usize,
        w: usize,
    },
    #[error("conv2d: stride must be at least 1")]
    ZeroStride,
    #[error("variable {0} does not belong to this tape")]
    UnknownVar(usize),
    #[error("tensor file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Row-major dense array of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::ZeroDimension(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// Rank-1 tensor. Panics on an empty vector.
    pub fn vector(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "rank-1 tensor needs at least one element");
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Single-element tensor of shape `[1]`.
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {:?}", self.shape, shape),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
