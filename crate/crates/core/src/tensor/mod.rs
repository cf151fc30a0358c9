//! Dense row-major `f64` tensors.
//!
//! Every other module carries its values in [`Tensor`]. The container is
//! deliberately small: shape algebra, a handful of elementwise maps, a
//! fixed-order matmul and axis reductions. Reductions always accumulate
//! left to right so results never depend on how work is scheduled.

mod rng;
mod tsr;

pub use rng::SeededRng;
pub use tsr::{decode_tsr, encode_tsr, read_tsr, write_tsr, TSR_MAGIC};

use crate::error::{arg_err, shape_err, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Elementwise nonlinearities used across the crate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Sigmoid,
    Softplus,
    Exp,
    Neg,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Silu => silu(z),
            Activation::Sigmoid => sigmoid(z),
            Activation::Softplus => softplus(z),
            Activation::Exp => z.exp(),
            Activation::Neg => -z,
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

/// `ln(1 + e^z)`, evaluated without overflow for large `z`.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z + (-z).exp()
    } else {
        z.exp().ln_1p()
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return shape_err("tensor shape must have at least one extent");
    }
    if shape.contains(&0) {
        return shape_err(format!("zero extent in shape {shape:?}"));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    /// Builds a tensor, rejecting shape/length disagreement and non-finite values.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n = check_shape(&shape)?;
        if n != data.len() {
            return shape_err(format!(
                "shape {shape:?} holds {n} values but {} were given",
                data.len()
            ));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return arg_err(format!("non-finite value {bad} in tensor data"));
        }
        Ok(Self { shape, data })
    }

    /// Internal constructor for values produced by trusted kernels.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Self::from_parts(shape.to_vec(), vec![value; n]))
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Result<Self> {
        let n = check_shape(shape)?;
        Self::new(shape.to_vec(), (0..n).map(&mut f).collect())
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::from_fn(&[n, n], |k| if k / n == k % n { 1.0 } else { 0.0 })
    }

    /// Standard-normal draws; advances `rng` by exactly one variate per element.
    pub fn randn(shape: &[usize], rng: &mut SeededRng) -> Result<Self> {
        let n = check_shape(shape)?;
        let data = (0..n).map(|_| rng.normal()).collect();
        Ok(Self::from_parts(shape.to_vec(), data))
    }

    /// Uniform draws in `[lo, hi)`.
    pub fn rand_uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut SeededRng) -> Result<Self> {
        let n = check_shape(shape)?;
        let data = (0..n).map(|_| lo + (hi - lo) * rng.uniform()).collect();
        Ok(Self::from_parts(shape.to_vec(), data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn dim(&self, axis: usize) -> Result<usize> {
        self.shape
            .get(axis)
            .copied()
            .ok_or_else(|| crate::Error::Shape(format!("axis {axis} out of range for rank {}", self.rank())))
    }

    /// Row-major offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &e)| {
                debug_assert!(i < e);
                acc * e + i
            })
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n = check_shape(shape)?;
        if n != self.len() {
            return shape_err(format!("cannot reshape {:?} into {shape:?}", self.shape));
        }
        Ok(Self::from_parts(shape.to_vec(), self.data.clone()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn activate(&self, act: Activation) -> Tensor {
        self.map(|v| act.apply(v))
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return shape_err(format!("shape mismatch {:?} vs {:?}", self.shape, other.shape));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self::from_parts(self.shape.clone(), data))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|v| k * v)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        let d = self.zip_map(other, |a, b| (a - b).abs())?;
        Ok(d.data.iter().fold(0.0, |m, &v| m.max(v)))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    /// `(m × k) · (k × n)` with a fixed accumulation order per output entry.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || rhs.rank() != 2 {
            return shape_err(format!(
                "matmul expects rank-2 operands, got {:?} and {:?}",
                self.shape, rhs.shape
            ));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (rhs.shape[0], rhs.shape[1]);
        if k != k2 {
            return shape_err(format!("matmul inner extents differ: {k} vs {k2}"));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &self.data[i * k..(i + 1) * k];
            let dst = &mut out[i * n..(i + 1) * n];
            for (p, &a) in row.iter().enumerate() {
                let src = &rhs.data[p * n..(p + 1) * n];
                for (d, &b) in dst.iter_mut().zip(src) {
                    *d += a * b;
                }
            }
        }
        Ok(Self::from_parts(vec![m, n], out))
    }

    pub fn transpose2(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return shape_err("transpose2 expects a rank-2 tensor");
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Self::from_parts(vec![n, m], out))
    }

    /// Splits the shape around `axis` into (outer, extent, inner) block sizes.
    fn axis_blocks(&self, axis: usize) -> Result<(usize, usize, usize)> {
        if axis >= self.rank() {
            return shape_err(format!("axis {axis} out of range for rank {}", self.rank()));
        }
        let outer = self.shape[..axis].iter().product();
        let inner = self.shape[axis + 1..].iter().product();
        Ok((outer, self.shape[axis], inner))
    }

    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = match parts.first() {
            Some(t) => *t,
            None => return shape_err("concat needs at least one part"),
        };
        let (outer, _, inner) = first.axis_blocks(axis)?;
        let mut extent = 0;
        for p in parts {
            if p.rank() != first.rank()
                || p.shape[..axis] != first.shape[..axis]
                || p.shape[axis + 1..] != first.shape[axis + 1..]
            {
                return shape_err(format!(
                    "concat along axis {axis}: {:?} incompatible with {:?}",
                    p.shape, first.shape
                ));
            }
            extent += p.shape[axis];
        }
        let mut data = Vec::with_capacity(outer * extent * inner);
        for o in 0..outer {
            for p in parts {
                let block = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = extent;
        Ok(Self::from_parts(shape, data))
    }

    /// Splits into `[..at)` and `[at..)` along `axis`; both halves must be non-empty.
    pub fn split(&self, axis: usize, at: usize) -> Result<(Tensor, Tensor)> {
        let (outer, extent, inner) = self.axis_blocks(axis)?;
        if at == 0 || at >= extent {
            return shape_err(format!("split index {at} must lie strictly inside extent {extent}"));
        }
        let mut left = Vec::with_capacity(outer * at * inner);
        let mut right = Vec::with_capacity(outer * (extent - at) * inner);
        for o in 0..outer {
            let base = o * extent * inner;
            left.extend_from_slice(&self.data[base..base + at * inner]);
            right.extend_from_slice(&self.data[base + at * inner..base + extent * inner]);
        }
        let mut ls = self.shape.clone();
        ls[axis] = at;
        let mut rs = self.shape.clone();
        rs[axis] = extent - at;
        Ok((Self::from_parts(ls, left), Self::from_parts(rs, right)))
    }

    /// Sums out `axis`. A rank-1 input yields shape `[1]`.
    pub fn reduce_sum(&self, axis: usize) -> Result<Tensor> {
        let (outer, extent, inner) = self.axis_blocks(axis)?;
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for e in 0..extent {
                let src = &self.data[(o * extent + e) * inner..(o * extent + e + 1) * inner];
                for (d, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += v;
                }
            }
        }
        let mut shape: Vec<usize> = self.shape.clone();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(Self::from_parts(shape, out))
    }

    pub fn reduce_mean(&self, axis: usize) -> Result<Tensor> {
        let extent = self.dim(axis)? as f64;
        Ok(self.reduce_sum(axis)?.scale(1.0 / extent))
    }

    /// Contiguous slice of the sub-tensor at `index` along the leading axis.
    pub fn outer_slice(&self, index: usize) -> &[f64] {
        let inner: usize = self.shape[1..].iter().product();
        &self.data[index * inner..(index + 1) * inner]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
