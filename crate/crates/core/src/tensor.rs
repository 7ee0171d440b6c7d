//! Dense row-major tensors and the numeric kernels the graph ops are built on.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major dense tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![T::zero(); n] }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: vec![], data: vec![value] }
    }

    pub fn vector(data: Vec<T>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), values.iter().map(|&v| T::lit(v)).collect())
    }

    /// Samples every entry from `N(0, std^2)`.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("finite std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::lit(normal.sample(rng))).collect();
        Self { shape: shape.to_vec(), data }
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

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of a matrix view: the leading dimensions are flattened.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    /// Size of the last axis.
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, c: T) {
        for a in &mut self.data {
            *a *= c;
        }
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64() * v.as_f64()).sum()
    }

    /// `self @ other` for two matrices.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, k) = (self.rows(), self.cols());
        let (k2, m) = (other.rows(), other.cols());
        if k != k2 {
            return Err(Error::shape("matmul", format!("{:?} x {:?}", self.shape, other.shape)));
        }
        let mut out = Tensor::zeros(&[n, m]);
        T::gemm(
            n, k, m, T::one(), &self.data, k as isize, 1, &other.data, m as isize, 1,
            T::zero(), &mut out.data, m as isize, 1,
        );
        Ok(out)
    }

    /// `self @ other^T`.
    pub fn matmul_t(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, k) = (self.rows(), self.cols());
        let (m, k2) = (other.rows(), other.cols());
        if k != k2 {
            return Err(Error::shape("matmul_t", format!("{:?} x {:?}^T", self.shape, other.shape)));
        }
        let mut out = Tensor::zeros(&[n, m]);
        T::gemm(
            n, k, m, T::one(), &self.data, k as isize, 1, &other.data, 1, k as isize,
            T::zero(), &mut out.data, m as isize, 1,
        );
        Ok(out)
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

/// Numerically stable softmax (max-subtracted).
pub fn softmax<T: Scalar>(x: &[T]) -> Result<Vec<T>> {
    if x.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite { op: "softmax" });
    }
    let mut out = x.to_vec();
    softmax_in_place(&mut out);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "softmax" });
    }
    Ok(out)
}

pub(crate) fn softmax_in_place<T: Scalar>(x: &mut [T]) {
    if x.is_empty() {
        return;
    }
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

/// `sqrt(2 / pi)` and the cubic coefficient of the tanh form of GELU.
const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044_715;

/// GELU, tanh approximation: `0.5 x (1 + tanh(c (x + a x^3)))`.
pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    let inner = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    half * x * (T::one() + inner.tanh())
}

pub(crate) fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let th = (c * (x + a * x * x * x)).tanh();
    let sech2 = T::one() - th * th;
    half * (T::one() + th) + half * x * sech2 * c * (T::one() + T::lit(3.0) * a * x * x)
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Per-vector layer normalization followed by the affine `gain * xhat + bias`.
pub fn layer_norm<T: Scalar>(x: &[T], gain: &[T], bias: &[T], eps: T) -> Result<Vec<T>> {
    if x.is_empty() {
        return Err(Error::Empty("layer_norm"));
    }
    if gain.len() != x.len() || bias.len() != x.len() {
        return Err(Error::shape(
            "layer_norm",
            format!("x {} gain {} bias {}", x.len(), gain.len(), bias.len()),
        ));
    }
    let (xhat, _) = normalize(x, eps);
    Ok(xhat.iter().zip(gain).zip(bias).map(|((&h, &g), &b)| h * g + b).collect())
}

/// Returns `(xhat, 1/sigma)`.
pub(crate) fn normalize<T: Scalar>(x: &[T], eps: T) -> (Vec<T>, T) {
    let n = T::from_usize(x.len()).unwrap();
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let inv = T::one() / (var + eps).sqrt();
    let inv = if inv.is_finite() { inv } else { T::zero() };
    (x.iter().map(|&v| (v - mean) * inv).collect(), inv)
}
