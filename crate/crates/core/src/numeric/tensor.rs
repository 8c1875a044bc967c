//! Dense row-major `f64` arrays.
//!
//! Every tensor holds only finite values. Constructors and arithmetic check
//! this and report a [`Error::Numeric`] instead of handing back NaN or ±∞.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Elementwise operations exposed on plain tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Logistic,
    Tanh,
    Exp,
    Log,
}

impl Elementwise {
    pub fn arity(self) -> usize {
        match self {
            Elementwise::Add | Elementwise::Sub | Elementwise::Mul => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Elementwise::Add => "add",
            Elementwise::Sub => "sub",
            Elementwise::Mul => "mul",
            Elementwise::Logistic => "logistic",
            Elementwise::Tanh => "tanh",
            Elementwise::Exp => "exp",
            Elementwise::Log => "log",
        }
    }
}

/// Numerically stable logistic function.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn check_finite(op: &str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(op))
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&e| e == 0) {
            return Err(Error::dim(
                "tensor",
                format!("extents must be positive, got {shape:?}"),
            ));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim(
                "tensor",
                format!(
                    "shape {shape:?} needs {expected} values, got {}",
                    data.len()
                ),
            ));
        }
        check_finite("tensor", &data)?;
        Ok(Tensor { shape, data })
    }

    /// Constructor for internally computed buffers whose length is known to match.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>, op: &str) -> Result<Self> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        check_finite(op, &data)?;
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(value.is_finite(), "fill value must be finite");
        assert!(
            !shape.is_empty() && shape.iter().all(|&e| e > 0),
            "extents must be positive"
        );
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(vec![1], vec![value])
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    /// A single-row matrix `[1, n]`.
    pub fn row(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![1, data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Stacks equal-length rows into an `[n, k]` matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("from_rows", "rows have unequal lengths"));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Interprets the tensor as a matrix: rank-1 `[n]` is a single row.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            s => (s[0], s[1..].iter().product()),
        }
    }

    pub fn rows(&self) -> usize {
        self.dims2().0
    }

    pub fn cols(&self) -> usize {
        self.dims2().1
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::Contract(format!(
                "expected a scalar, got shape {:?}",
                self.shape
            )))
        }
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape.len() != 2 || other.shape.len() != 2 {
            return Err(Error::dim(
                "matmul",
                format!(
                    "operands must be matrices, got {:?} and {:?}",
                    self.shape, other.shape
                ),
            ));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(Error::dim(
                "matmul",
                format!("inner extents differ: {:?} x {:?}", self.shape, other.shape),
            ));
        }
        let out = matmul_raw(&self.data, &other.data, m, k, n);
        Tensor::from_parts(vec![m, n], out, "matmul")
    }

    fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::dim(
                op,
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Tensor::from_parts(self.shape.clone(), data, op)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn map(&self, op: &str, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Tensor::from_parts(self.shape.clone(), data, op)
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        self.map("scale", |v| v * c)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn elementwise(op: Elementwise, operands: &[&Tensor]) -> Result<Tensor> {
        if operands.len() != op.arity() {
            return Err(Error::Contract(format!(
                "{} takes {} operand(s), got {}",
                op.name(),
                op.arity(),
                operands.len()
            )));
        }
        let a = operands[0];
        match op {
            Elementwise::Add => a.add(operands[1]),
            Elementwise::Sub => a.sub(operands[1]),
            Elementwise::Mul => a.mul(operands[1]),
            Elementwise::Logistic => a.map("logistic", logistic),
            Elementwise::Tanh => a.map("tanh", f64::tanh),
            Elementwise::Exp => a.map("exp", f64::exp),
            Elementwise::Log => {
                if let Some(v) = a.data.iter().find(|&&v| v <= 0.0) {
                    return Err(Error::domain("log", format!("non-positive input {v}")));
                }
                a.map("log", f64::ln)
            }
        }
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}{:?}", self.shape, self.data)
    }
}
