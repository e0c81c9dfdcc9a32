//! Dense row-major tensor with channel-last layout.
//!
//! Layer code reads the trailing axes as `(h, w, c)` or `(l, h, w, c)` and
//! treats any leading axes as a batch.

use crate::error::{shape_err, Result, StanError};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(shape_err!("zero-sized dimension in {:?}", shape));
        }
        if n != data.len() {
            return Err(shape_err!(
                "shape {:?} needs {} elements, got {}",
                shape,
                n,
                data.len()
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Size of the last axis.
    pub fn channels(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(shape_err!("cannot reshape {:?} into {:?}", self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_shape(other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn expect_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape_err!("{:?} vs {:?}", self.shape, other.shape));
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::lit(self.data.len() as f64)
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.expect_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum())
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, &x| if x.abs() > m { x.abs() } else { m })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::lit(x.as_f64())).collect(),
        }
    }

    /// Number of elements in one slice along axis 0.
    fn outer_stride(&self) -> usize {
        self.shape[1..].iter().product()
    }

    /// Copy of slice `i` along axis 0.
    pub fn index_axis0(&self, i: usize) -> Self {
        let s = self.outer_stride();
        Tensor {
            shape: if self.shape.len() > 1 {
                self.shape[1..].to_vec()
            } else {
                vec![1]
            },
            data: self.data[i * s..(i + 1) * s].to_vec(),
        }
    }

    pub fn slice_axis0(&self, i: usize) -> &[T] {
        let s = self.outer_stride();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn slice_axis0_mut(&mut self, i: usize) -> &mut [T] {
        let s = self.outer_stride();
        &mut self.data[i * s..(i + 1) * s]
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(items: &[&Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| StanError::Input("stack of zero tensors".into()))?;
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            first.expect_same_shape(t)?;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor { shape, data })
    }

    /// Concatenate along the last axis.
    pub fn concat_channels(a: &Self, b: &Self) -> Result<Self> {
        let (ra, rb) = (a.rank(), b.rank());
        if ra != rb || a.shape[..ra - 1] != b.shape[..rb - 1] {
            return Err(shape_err!("concat {:?} with {:?}", a.shape, b.shape));
        }
        let (ca, cb) = (a.channels(), b.channels());
        let mut shape = a.shape.clone();
        shape[ra - 1] = ca + cb;
        let mut data = Vec::with_capacity(a.len() + b.len());
        for (x, y) in a.data.chunks_exact(ca).zip(b.data.chunks_exact(cb)) {
            data.extend_from_slice(x);
            data.extend_from_slice(y);
        }
        Ok(Tensor { shape, data })
    }

    /// Inverse of [`Tensor::concat_channels`]: split off the first `ca` channels.
    pub fn split_channels(&self, ca: usize) -> Result<(Self, Self)> {
        let c = self.channels();
        if ca == 0 || ca >= c {
            return Err(shape_err!("split {} channels off {:?}", ca, self.shape));
        }
        let cb = c - ca;
        let pixels = self.len() / c;
        let mut a = Vec::with_capacity(pixels * ca);
        let mut b = Vec::with_capacity(pixels * cb);
        for px in self.data.chunks_exact(c) {
            a.extend_from_slice(&px[..ca]);
            b.extend_from_slice(&px[ca..]);
        }
        let r = self.rank();
        let mut sa = self.shape.clone();
        sa[r - 1] = ca;
        let mut sb = self.shape.clone();
        sb[r - 1] = cb;
        Ok((Tensor { shape: sa, data: a }, Tensor { shape: sb, data: b }))
    }
}
