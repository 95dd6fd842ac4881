//! Dense 4-D tensors in batch/channel/height/width layout. This is the
//! universal value type of the crate: images, activations, gradients and
//! saliency maps are all `Tensor`s.

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Extents of a 4-D tensor, `(N, C, H, W)` row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    /// Number of elements.
    pub fn count(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Elements per batch item.
    pub fn sample_count(&self) -> usize {
        self.c * self.h * self.w
    }

    /// Same extents apart from the batch dimension.
    pub fn sample_eq(&self, other: &Shape) -> bool {
        self.c == other.c && self.h == other.h && self.w == other.w
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Dense row-major tensor over a floating-point scalar.
///
/// Invariants: `data.len() == shape.count()`, and all values are finite.
/// Constructors that accept external data enforce both; internal kernels
/// preserve finiteness except where a contract states otherwise (training
/// divergence and attack-loss checks surface those cases as errors).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S: Scalar> {
    shape: Shape,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![S::zero(); shape.count()],
        }
    }

    pub fn filled(shape: Shape, value: S) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.count()],
        }
    }

    /// Build from raw row-major data; rejects length mismatches and
    /// non-finite values.
    pub fn from_vec(shape: Shape, data: Vec<S>) -> Result<Self> {
        if data.len() != shape.count() {
            return Err(Error::shape(
                "tensor construction",
                format!("{} values for shape {shape}", shape.count()),
                format!("{} values", data.len()),
            ));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("tensor construction".into()));
        }
        Ok(Tensor { shape, data })
    }

    /// Internal constructor for values produced by our own kernels.
    pub(crate) fn from_parts(shape: Shape, data: Vec<S>) -> Self {
        debug_assert_eq!(data.len(), shape.count());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + h) * self.shape.w + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> S {
        self.data[self.index(n, c, h, w)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, h: usize, w: usize) -> &mut S {
        let i = self.index(n, c, h, w);
        &mut self.data[i]
    }

    /// View the tensor under different extents with the same element count.
    pub fn reshaped(&self, shape: Shape) -> Result<Self> {
        if shape.count() != self.shape.count() {
            return Err(Error::shape(
                "reshape",
                format!("{} elements", self.shape.count()),
                format!("shape {shape} with {} elements", shape.count()),
            ));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    /// Extract batch item `n` as a `1xCxHxW` tensor.
    pub fn sample(&self, n: usize) -> Tensor<S> {
        assert!(n < self.shape.n, "sample index {n} out of range");
        let per = self.shape.sample_count();
        Tensor {
            shape: Shape::new(1, self.shape.c, self.shape.h, self.shape.w),
            data: self.data[n * per..(n + 1) * per].to_vec(),
        }
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Tensor<S> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor<S>, f: impl Fn(S, S) -> S) -> Result<Tensor<S>> {
        self.check_same_shape("zip_map", other)?;
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn check_same_shape(&self, context: &str, other: &Tensor<S>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                context,
                self.shape.to_string(),
                other.shape.to_string(),
            ));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_value(&self) -> S {
        self.data
            .iter()
            .copied()
            .fold(S::neg_infinity(), |acc, v| if v > acc { v } else { acc })
    }

    pub fn abs_sum(&self) -> S {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn l2_norm(&self) -> S {
        self.data.iter().map(|&v| v * v).sum::<S>().sqrt()
    }

    pub fn linf_norm(&self) -> S {
        self.data
            .iter()
            .map(|v| v.abs())
            .fold(S::zero(), |acc, v| if v > acc { v } else { acc })
    }

    /// Largest absolute elementwise difference; shapes must agree.
    pub fn max_abs_diff(&self, other: &Tensor<S>) -> Result<S> {
        self.check_same_shape("max_abs_diff", other)?;
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| (a - b).abs())
            .fold(S::zero(), |acc, v| if v > acc { v } else { acc }))
    }

    /// Cast every element, e.g. for 32-bit serialization of a 64-bit model.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| T::from_f64(v.to_f64().expect("scalar to f64")).expect("f64 to scalar"))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_length_mismatch() {
        let err = Tensor::<f64>::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0]).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn from_vec_rejects_non_finite() {
        let err =
            Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 2), vec![1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn indexing_is_row_major() {
        let t = Tensor::from_vec(
            Shape::new(1, 2, 2, 2),
            vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0],
        )
        .unwrap();
        assert_eq!(t.at(0, 0, 0, 1), 1.0);
        assert_eq!(t.at(0, 1, 0, 0), 4.0);
        assert_eq!(t.at(0, 1, 1, 1), 7.0);
    }

    #[test]
    fn sample_extracts_batch_item() {
        let t = Tensor::from_vec(Shape::new(2, 1, 1, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = t.sample(1);
        assert_eq!(s.shape(), Shape::new(1, 1, 1, 2));
        assert_eq!(s.data(), &[3.0, 4.0]);
    }

    #[test]
    fn norms() {
        let t = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![3.0, -4.0, 0.0]).unwrap();
        assert_eq!(t.l2_norm(), 5.0);
        assert_eq!(t.linf_norm(), 4.0);
        assert_eq!(t.abs_sum(), 7.0);
    }

    #[test]
    fn works_with_f32() {
        let t = Tensor::<f32>::filled(Shape::new(1, 1, 2, 2), 0.5);
        assert_eq!(t.abs_sum(), 2.0);
    }
}
