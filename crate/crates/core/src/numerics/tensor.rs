use rayon::prelude::*;

use super::{fill_indexed, Rng, PAR_THRESHOLD};
use crate::error::{Error, Result};

/// Row-major dense tensor of rank 0 to 3.
///
/// Spiking tensors use the layout `[T, B, N]`: time, batch, features. Spatial
/// axes of event frames are flattened into `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

/// Right-hand side of an elementwise operation.
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Tensor(&'a Tensor),
    Scalar(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    L2Norm,
}

/// Axes to reduce over.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Axes {
    All,
    Some(Vec<usize>),
}

impl BinaryOp {
    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
        }
    }
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.len() > 3 {
            return Err(Error::InvalidShape {
                shape: shape.to_vec(),
                reason: "rank above 3".into(),
            });
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidShape {
                shape: shape.to_vec(),
                reason: format!("{} values supplied, {} expected", data.len(), expected),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(shape.len() <= 3, "rank above 3");
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds a tensor from a function of the flat index.
    pub fn from_fn<F>(shape: &[usize], f: F) -> Self
    where
        F: Fn(usize) -> f64 + Sync,
    {
        let mut t = Self::zeros(shape);
        fill_indexed(&mut t.data, f);
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(T, B, N)` extents of a rank-3 tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [t, b, n] => Ok((t, b, n)),
            _ => Err(Error::InvalidShape {
                shape: self.shape.clone(),
                reason: "expected [T, B, N]".into(),
            }),
        }
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn into_reshaped(self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape, self.data)
    }

    pub fn ensure_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Applies `f` elementwise.
    pub fn map<F>(&self, f: F) -> Tensor
    where
        F: Fn(f64) -> f64 + Sync,
    {
        let src = &self.data;
        Tensor::from_fn(&self.shape, |i| f(src[i]))
    }

    /// Applies `f` to aligned element pairs of two same-shaped tensors.
    pub fn zip_map<F>(&self, other: &Tensor, f: F) -> Result<Tensor>
    where
        F: Fn(f64, f64) -> f64 + Sync,
    {
        self.ensure_same_shape(other)?;
        let (a, b) = (&self.data, &other.data);
        Ok(Tensor::from_fn(&self.shape, |i| f(a[i], b[i])))
    }

    pub fn elementwise(&self, op: BinaryOp, rhs: Operand<'_>) -> Result<Tensor> {
        match rhs {
            Operand::Tensor(b) => self.zip_map(b, |x, y| op.apply(x, y)),
            Operand::Scalar(s) => Ok(self.map(|x| op.apply(x, s))),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(BinaryOp::Add, Operand::Tensor(other))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(BinaryOp::Sub, Operand::Tensor(other))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(BinaryOp::Mul, Operand::Tensor(other))
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.map(|x| x * factor)
    }

    /// Matrix product of `[M, K]` and `[K, P]`.
    ///
    /// Each output element is accumulated over `k = 0..K` in increasing order,
    /// starting from `0.0`, which is exactly the naive triple loop.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = match self.shape[..] {
            [m, k] => (m, k),
            _ => {
                return Err(Error::InvalidShape {
                    shape: self.shape.clone(),
                    reason: "matmul expects rank-2 operands".into(),
                })
            }
        };
        let (k2, p) = match other.shape[..] {
            [k2, p] => (k2, p),
            _ => {
                return Err(Error::InvalidShape {
                    shape: other.shape.clone(),
                    reason: "matmul expects rank-2 operands".into(),
                })
            }
        };
        if k != k2 {
            return Err(Error::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let mut out = vec![0.0; m * p];
        if p == 0 {
            return Tensor::new(&[m, p], out);
        }
        let (a, b) = (&self.data, &other.data);
        let row = |i: usize, acc: &mut [f64]| {
            for kk in 0..k {
                let aik = a[i * k + kk];
                let brow = &b[kk * p..(kk + 1) * p];
                for (c, &bkj) in acc.iter_mut().zip(brow) {
                    *c += aik * bkj;
                }
            }
        };
        if m * p * k.max(1) < PAR_THRESHOLD {
            for (i, acc) in out.chunks_mut(p).enumerate() {
                row(i, acc);
            }
        } else {
            out.par_chunks_mut(p)
                .enumerate()
                .for_each(|(i, acc)| row(i, acc));
        }
        Tensor::new(&[m, p], out)
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = match self.shape[..] {
            [m, n] => (m, n),
            _ => {
                return Err(Error::InvalidShape {
                    shape: self.shape.clone(),
                    reason: "transpose expects rank 2".into(),
                })
            }
        };
        let d = &self.data;
        Ok(Tensor::from_fn(&[n, m], |idx| {
            let (j, i) = (idx / m, idx % m);
            d[i * n + j]
        }))
    }

    /// Logistic function `1 / (1 + exp(-x))`, saturating without NaN.
    pub fn sigmoid(&self) -> Tensor {
        self.map(sigmoid)
    }

    /// Independent Bernoulli draws; element `i` is decided by `rng.uniform(i)`
    /// alone.
    pub fn bernoulli_sample(&self, rng: &Rng) -> Result<Tensor> {
        if let Some((index, &value)) = self
            .data
            .iter()
            .enumerate()
            .find(|(_, p)| !(0.0..=1.0).contains(*p))
        {
            return Err(Error::ProbabilityOutOfRange { index, value });
        }
        Ok(self.indexed_bernoulli(rng))
    }

    pub(crate) fn indexed_bernoulli(&self, rng: &Rng) -> Tensor {
        let p = &self.data;
        Tensor::from_fn(&self.shape, |i| bernoulli(p[i], rng.uniform(i as u64)))
    }

    /// Reduces over `axes`, keeping the remaining axes in order.
    ///
    /// Accumulation walks the input in row-major order, so each output slot
    /// sums its inputs in a fixed order.
    pub fn reduce(&self, op: Reduction, axes: &Axes) -> Result<Tensor> {
        let rank = self.shape.len();
        let mut reduce_mask = vec![false; rank];
        match axes {
            Axes::All => reduce_mask.iter_mut().for_each(|m| *m = true),
            Axes::Some(list) => {
                for &ax in list {
                    if ax >= rank {
                        return Err(Error::InvalidAxis {
                            axis: ax,
                            shape: self.shape.clone(),
                        });
                    }
                    reduce_mask[ax] = true;
                }
            }
        }
        let out_shape: Vec<usize> = self
            .shape
            .iter()
            .zip(&reduce_mask)
            .filter(|(_, &r)| !r)
            .map(|(&e, _)| e)
            .collect();
        let count: usize = self
            .shape
            .iter()
            .zip(&reduce_mask)
            .filter(|(_, &r)| r)
            .map(|(&e, _)| e)
            .product();
        if count == 0 && op == Reduction::Mean {
            return Err(Error::EmptyReduction);
        }

        let out_len: usize = out_shape.iter().product();
        let mut acc = vec![0.0; out_len];
        // strides of the kept axes inside the output
        let mut out_strides = vec![0usize; rank];
        let mut s = 1;
        for ax in (0..rank).rev() {
            if !reduce_mask[ax] {
                out_strides[ax] = s;
                s *= self.shape[ax];
            }
        }
        let mut index = vec![0usize; rank];
        for &x in &self.data {
            let o: usize = index.iter().zip(&out_strides).map(|(i, s)| i * s).sum();
            acc[o] += match op {
                Reduction::L2Norm => x * x,
                _ => x,
            };
            for ax in (0..rank).rev() {
                index[ax] += 1;
                if index[ax] < self.shape[ax] {
                    break;
                }
                index[ax] = 0;
            }
        }
        match op {
            Reduction::Sum => {}
            Reduction::Mean => acc.iter_mut().for_each(|v| *v /= count as f64),
            Reduction::L2Norm => acc.iter_mut().for_each(|v| *v = v.sqrt()),
        }
        Tensor::new(&out_shape, acc)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().fold(0.0, |a, &x| a + x)
    }

    pub fn mean(&self) -> Result<f64> {
        if self.data.is_empty() {
            return Err(Error::EmptyReduction);
        }
        Ok(self.sum() / self.data.len() as f64)
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |a, &x| a + x * x).sqrt()
    }

    /// Contiguous slice of one time row of a `[T, B, N]` tensor.
    pub fn time_row(&self, t: usize) -> &[f64] {
        let stride: usize = self.shape[1..].iter().product();
        &self.data[t * stride..(t + 1) * stride]
    }

    /// Delays along axis 0 by one step: row 0 becomes zeros, row `t` takes
    /// row `t - 1`.
    pub fn shift_time(&self) -> Tensor {
        let stride: usize = self.shape[1..].iter().product();
        let d = &self.data;
        Tensor::from_fn(&self.shape, |i| if i < stride { 0.0 } else { d[i - stride] })
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub(crate) fn bernoulli(p: f64, uniform: f64) -> f64 {
    if uniform < p {
        1.0
    } else {
        0.0
    }
}
