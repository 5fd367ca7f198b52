//! Dense f64 linear algebra and reverse-mode differentiation.
//!
//! Everything downstream (models, losses, the skimming recurrence) is built
//! from the small op set recorded on [`tape::Tape`]. All arithmetic is 64-bit
//! and reductions run sequentially left-to-right, so repeated runs are
//! bit-identical. Ops reject NaN/Inf at their boundaries instead of letting a
//! poisoned value propagate silently.

pub mod gradcheck;
pub mod params;
pub mod tape;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: String, detail: String },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: String },
    #[error("{op}: empty input")]
    EmptyInput { op: String },
    #[error("{op}: invalid input: {detail}")]
    InvalidInput { op: String, detail: String },
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("container error: {0}")]
    Container(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NumericsError>;

/// Row-major dense tensor of f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(NumericsError::ShapeMismatch {
                op: "Tensor::new".into(),
                detail: format!("shape {:?} requires {} values, got {}", shape, expected, data.len()),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(NumericsError::NonFinite { op: "Tensor::new".into() });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    pub fn scalar(v: f64) -> Result<Self> {
        Self::new(vec![1], vec![v])
    }

    /// Matrix from row slices; all rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(NumericsError::EmptyInput { op: "Tensor::from_rows".into() });
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(NumericsError::ShapeMismatch {
                op: "Tensor::from_rows".into(),
                detail: "ragged rows".into(),
            });
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            data.extend_from_slice(r);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_vector(&self) -> bool {
        self.shape.len() == 1
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// Single scalar payload of a shape-[1] tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// Mutable access to the raw values. The caller keeps the finiteness
    /// invariant; ops re-check at their boundaries.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Callers must uphold the shape/finite invariants themselves.
    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.data.iter().enumerate() {
            if *v > self.data[best] {
                best = i;
            }
        }
        best
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// FNV-1a over the IEEE bit patterns; used for frozen-parameter checks.
pub fn bits_fingerprint(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}
