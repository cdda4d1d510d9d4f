use crate::error::{Error, Result};

use super::scalar::{gemm, Scalar};

/// Dense row-major N-dimensional array.
///
/// Invariants: `shape.iter().product() == data.len()` and every element is
/// finite. Constructors and arithmetic check both; in-place mutation through
/// [`Tensor::data_mut`] is trusted.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

/// Elementwise operation tags.
///
/// `Max0` is the elementwise maximum; with a scalar `0` right-hand side it is
/// the rectifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Max0,
}

/// Right-hand side of an elementwise operation.
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a, T> {
    Tensor(&'a Tensor<T>),
    Scalar(T),
}

impl<'a, T> From<&'a Tensor<T>> for Operand<'a, T> {
    fn from(t: &'a Tensor<T>) -> Self {
        Operand::Tensor(t)
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        let t = Tensor { shape, data };
        t.ensure_finite("Tensor::new")?;
        Ok(t)
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; len],
        }
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new([rows.len(), cols], data)
    }

    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// `(rows, cols)` of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape(format!("expected a matrix, got {:?}", self.shape))),
        }
    }

    /// Number of entries along the first axis.
    pub fn outer_len(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Number of elements in one slice along the first axis.
    pub fn item_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    /// The `i`-th slice along the first axis (a row for matrices).
    pub fn item(&self, i: usize) -> &[T] {
        let len = self.item_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn item_mut(&mut self, i: usize) -> &mut [T] {
        let len = self.item_len();
        &mut self.data[i * len..(i + 1) * len]
    }

    /// Gathers the given first-axis slices into a new tensor.
    pub fn select(&self, indices: &[usize]) -> Tensor<T> {
        let len = self.item_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(self.item(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor { shape, data }
    }

    /// Concatenates tensors along the first axis.
    pub fn concat(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let tail = &first.shape[1..];
        let mut outer = 0;
        let mut data = Vec::new();
        for p in parts {
            if &p.shape[1..] != tail {
                return Err(Error::shape(format!(
                    "concat: {:?} vs {:?}",
                    first.shape, p.shape
                )));
            }
            outer += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = outer;
        Ok(Tensor { shape, data })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64_lossy(v.as_f64()))
                .collect(),
        }
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    pub fn elementwise<'a>(
        &self,
        op: ElementwiseOp,
        rhs: impl Into<Operand<'a, T>>,
    ) -> Result<Tensor<T>>
    where
        T: 'a,
    {
        let f = |a: T, b: T| match op {
            ElementwiseOp::Add => a + b,
            ElementwiseOp::Sub => a - b,
            ElementwiseOp::Mul => a * b,
            ElementwiseOp::Max0 => {
                if a > b {
                    a
                } else {
                    b
                }
            }
        };
        let data: Vec<T> = match rhs.into() {
            Operand::Scalar(b) => self.data.iter().map(|&a| f(a, b)).collect(),
            Operand::Tensor(other) => {
                if other.shape == self.shape {
                    self.data
                        .iter()
                        .zip(&other.data)
                        .map(|(&a, &b)| f(a, b))
                        .collect()
                } else if other.len() == 1 {
                    let b = other.data[0];
                    self.data.iter().map(|&a| f(a, b)).collect()
                } else if self.len() == 1 {
                    let a = self.data[0];
                    return Tensor {
                        shape: other.shape.clone(),
                        data: other.data.iter().map(|&b| f(a, b)).collect(),
                    }
                    .checked(op);
                } else {
                    return Err(Error::shape(format!(
                        "{op:?}: {:?} vs {:?}",
                        self.shape, other.shape
                    )));
                }
            }
        };
        Tensor {
            shape: self.shape.clone(),
            data,
        }
        .checked(op)
    }

    fn checked(self, op: ElementwiseOp) -> Result<Tensor<T>> {
        self.ensure_finite(&format!("{op:?}"))?;
        Ok(self)
    }

    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.elementwise(ElementwiseOp::Add, rhs)
    }

    pub fn sub(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.elementwise(ElementwiseOp::Sub, rhs)
    }

    pub fn scale(&self, s: T) -> Result<Tensor<T>> {
        self.elementwise(ElementwiseOp::Mul, Operand::Scalar(s))
    }

    pub fn relu(&self) -> Tensor<T> {
        self.map(|v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, k) = self.dims2()?;
        let (k2, n) = rhs.dims2()?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner dimensions {k} vs {k2}"
            )));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, T::one(), &self.data, false, &rhs.data, false, T::zero(), &mut out);
        Tensor {
            shape: vec![m, n],
            data: out,
        }
        .checked_named("matmul")
    }

    fn checked_named(self, what: &str) -> Result<Tensor<T>> {
        self.ensure_finite(what)?;
        Ok(self)
    }

    pub fn transpose(&self) -> Result<Tensor<T>> {
        let (r, c) = self.dims2()?;
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor {
            shape: vec![c, r],
            data,
        })
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    /// Per-column mean of a matrix.
    pub fn column_means(&self) -> Result<Vec<f64>> {
        let (r, c) = self.dims2()?;
        if r == 0 {
            return Err(Error::BatchTooSmall("mean of an empty batch".into()));
        }
        let mut acc = vec![0.0; c];
        for i in 0..r {
            for (a, v) in acc.iter_mut().zip(self.item(i)) {
                *a += v.as_f64();
            }
        }
        let inv = 1.0 / r as f64;
        Ok(acc.into_iter().map(|s| s * inv).collect())
    }
}
