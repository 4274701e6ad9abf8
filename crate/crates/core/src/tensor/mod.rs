//! Dense row-major `f64` tensors and the numeric kernels the networks are built from.
//!
//! Every public operation validates shapes and refuses to return non-finite
//! values; NaN or infinity surfaces as [`TensorError::NonFinite`]. The slice
//! kernels at the bottom of this file are the unchecked hot paths used by the
//! model code, which validates shapes once per layer instead of once per call.

mod conv;
mod rng;

pub use conv::{conv2d, conv2d_backward_input, conv2d_backward_kernel, ConvGeometry, Padding};
pub use rng::{sample_bernoulli, sample_normal, sample_uniform, Rng};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} holds {expected} values, got {actual}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("{op} produced a non-finite value at flat index {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("log of non-positive value {value} at flat index {index}")]
    LogDomain { index: usize, value: f64 },
    #[error("{0} of an empty tensor")]
    Empty(&'static str),
    #[error("{0}")]
    Invalid(String),
}

pub type TensorResult<T> = Result<T, TensorError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> TensorResult<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape,
                expected,
                actual: data.len(),
            });
        }
        check_finite("new", &data)?;
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// Rank-0 tensor holding a single value.
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> TensorResult<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn from_rows(rows: &[&[f64]]) -> TensorResult<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "from_rows",
                    left: vec![cols],
                    right: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Raw mutable access. Callers are responsible for keeping values finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn reshape(mut self, shape: &[usize]) -> TensorResult<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(TensorError::DataLength {
                shape: shape.to_vec(),
                expected,
                actual: self.data.len(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Element at a multi-index. Panics when out of range.
    pub fn at(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        let mut flat = 0;
        for (&i, &extent) in index.iter().zip(&self.shape) {
            assert!(i < extent, "index {i} out of range {extent}");
            flat = flat * extent + i;
        }
        self.data[flat]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn add(&self, other: &Tensor) -> TensorResult<Tensor> {
        ewise(BinaryOp::Add, self, other)
    }

    pub fn sub(&self, other: &Tensor) -> TensorResult<Tensor> {
        ewise(BinaryOp::Sub, self, other)
    }

    pub fn mul(&self, other: &Tensor) -> TensorResult<Tensor> {
        ewise(BinaryOp::Mul, self, other)
    }

    pub fn scale(&self, factor: f64) -> TensorResult<Tensor> {
        let data: Vec<f64> = self.data.iter().map(|v| v * factor).collect();
        check_finite("scale", &data)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn sigmoid(&self) -> TensorResult<Tensor> {
        unary(UnaryOp::Sigmoid, self)
    }

    pub fn exp(&self) -> TensorResult<Tensor> {
        unary(UnaryOp::Exp, self)
    }

    pub fn ln(&self) -> TensorResult<Tensor> {
        unary(UnaryOp::Log, self)
    }

    pub fn matmul(&self, other: &Tensor) -> TensorResult<Tensor> {
        matmul(self, other)
    }

    /// In-place `self += other`; shapes must match exactly.
    pub fn add_assign(&mut self, other: &Tensor) -> TensorResult<()> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op: "add_assign",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Sigmoid,
    Exp,
    Log,
}

/// Elementwise binary operation. Either operand may be a single-element
/// tensor, which is broadcast against the other.
pub fn ewise(op: BinaryOp, a: &Tensor, b: &Tensor) -> TensorResult<Tensor> {
    let f = match op {
        BinaryOp::Add => |x: f64, y: f64| x + y,
        BinaryOp::Sub => |x: f64, y: f64| x - y,
        BinaryOp::Mul => |x: f64, y: f64| x * y,
    };
    let (shape, data): (Vec<usize>, Vec<f64>) = if a.shape == b.shape {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        (a.shape.clone(), data)
    } else if b.data.len() == 1 && b.rank() <= 1 {
        let y = b.data[0];
        (a.shape.clone(), a.data.iter().map(|&x| f(x, y)).collect())
    } else if a.data.len() == 1 && a.rank() <= 1 {
        let x = a.data[0];
        (b.shape.clone(), b.data.iter().map(|&y| f(x, y)).collect())
    } else {
        return Err(TensorError::ShapeMismatch {
            op: "ewise",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    };
    check_finite("ewise", &data)?;
    Ok(Tensor { shape, data })
}

pub fn unary(op: UnaryOp, a: &Tensor) -> TensorResult<Tensor> {
    let data: Vec<f64> = match op {
        UnaryOp::Sigmoid => a.data.iter().map(|&x| sigmoid(x)).collect(),
        UnaryOp::Exp => a.data.iter().map(|x| x.exp()).collect(),
        UnaryOp::Log => {
            if let Some((index, &value)) = a.data.iter().enumerate().find(|(_, v)| **v <= 0.0) {
                return Err(TensorError::LogDomain { index, value });
            }
            a.data.iter().map(|x| x.ln()).collect()
        }
    };
    check_finite(
        match op {
            UnaryOp::Sigmoid => "sigmoid",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
        },
        &data,
    )?;
    Ok(Tensor {
        shape: a.shape.clone(),
        data,
    })
}

/// Logistic function `1 / (1 + e^-x)`, evaluated on the branch that cannot
/// overflow. Saturates to exactly 0.0 or 1.0 for large `|x|`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> TensorResult<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a.data[i * k + p];
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    check_finite("matmul", &out)?;
    Ok(Tensor {
        shape: vec![m, n],
        data: out,
    })
}

/// `max(v) + ln Σ exp(v - max(v))`.
pub fn logsumexp(values: &Tensor) -> TensorResult<f64> {
    logsumexp_slice(values.data()).ok_or(TensorError::Empty("logsumexp"))
}

/// Slice form of [`logsumexp`]; `None` for an empty slice. Entries equal to
/// negative infinity contribute nothing, and an all `-inf` input yields `-inf`.
pub fn logsumexp_slice(values: &[f64]) -> Option<f64> {
    let max = values
        .iter()
        .copied()
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))?;
    if values.len() == 1 {
        return Some(max);
    }
    if max == f64::NEG_INFINITY {
        return Some(max);
    }
    let s: f64 = values.iter().map(|v| (v - max).exp()).sum();
    Some(max + s.ln())
}

pub(crate) fn check_finite(op: &'static str, data: &[f64]) -> TensorResult<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(TensorError::NonFinite { op, index }),
        None => Ok(()),
    }
}

/// `out = W x` for a row-major `rows × cols` weight.
pub(crate) fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        let row = &w[r * cols..(r + 1) * cols];
        *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

/// `out += Wᵀ y`.
pub(crate) fn matvec_t_acc(w: &[f64], rows: usize, cols: usize, y: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    for r in 0..rows {
        let yr = y[r];
        if yr == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += wv * yr;
        }
    }
}

/// `dw += y xᵀ`.
pub(crate) fn outer_acc(dw: &mut [f64], y: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, &yr) in y.iter().enumerate() {
        if yr == 0.0 {
            continue;
        }
        let row = &mut dw[r * cols..(r + 1) * cols];
        for (d, &xv) in row.iter_mut().zip(x) {
            *d += yr * xv;
        }
    }
}
