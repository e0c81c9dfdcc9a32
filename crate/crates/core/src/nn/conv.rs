//! Convolution layers lowered to GEMM through im2col.
//!
//! Every layer here is a special case of one volumetric kernel: temporal axis
//! with "valid" padding, spatial axes with "same" padding
//! (`out = ceil(in / stride)`, extra padding on the trailing edge). A 2D
//! convolution is the depth-1 case, and the transposed convolution is the
//! exact adjoint of the 2D one.

use rand::Rng;

use crate::error::{shape_err, Result, StanError};
use crate::nn::init::glorot_uniform;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// "same" padding: returns (output size, padding before).
pub fn same_padding(input: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    (out, total / 2)
}

/// Index arithmetic for one volumetric convolution over a batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_len: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub k_len: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub out_c: usize,
    pub stride: [usize; 3],
    pub out_len: usize,
    pub out_h: usize,
    pub out_w: usize,
    pad_h: usize,
    pad_w: usize,
}

impl ConvGeometry {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        batch: usize,
        [in_len, in_h, in_w, in_c]: [usize; 4],
        [k_len, k_h, k_w]: [usize; 3],
        out_c: usize,
        stride: [usize; 3],
    ) -> Result<Self> {
        if stride.contains(&0) {
            return Err(StanError::Config(format!("non-positive stride {:?}", stride)));
        }
        if k_len > in_len {
            return Err(shape_err!(
                "temporal kernel {} longer than input length {}",
                k_len,
                in_len
            ));
        }
        let out_len = (in_len - k_len) / stride[0] + 1;
        let (out_h, pad_h) = same_padding(in_h, k_h, stride[1]);
        let (out_w, pad_w) = same_padding(in_w, k_w, stride[2]);
        Ok(ConvGeometry {
            batch,
            in_len,
            in_h,
            in_w,
            in_c,
            k_len,
            k_h,
            k_w,
            out_c,
            stride,
            out_len,
            out_h,
            out_w,
            pad_h,
            pad_w,
        })
    }

    pub fn rows(&self) -> usize {
        self.batch * self.out_len * self.out_h * self.out_w
    }

    pub fn patch(&self) -> usize {
        self.k_len * self.k_h * self.k_w * self.in_c
    }

    pub fn input_len(&self) -> usize {
        self.batch * self.in_len * self.in_h * self.in_w * self.in_c
    }

    fn is_pointwise(&self) -> bool {
        self.k_len == 1 && self.k_h == 1 && self.k_w == 1 && self.stride == [1, 1, 1]
    }

    /// Visit every (column offset, input offset) pair of one im2col row.
    #[inline]
    fn for_each_tap(&self, row: usize, mut f: impl FnMut(usize, Option<usize>)) {
        let ow = row % self.out_w;
        let rest = row / self.out_w;
        let oh = rest % self.out_h;
        let rest = rest / self.out_h;
        let ol = rest % self.out_len;
        let b = rest / self.out_len;
        let c = self.in_c;
        let mut col = 0;
        for dz in 0..self.k_len {
            let z = ol * self.stride[0] + dz;
            for dy in 0..self.k_h {
                let y = (oh * self.stride[1] + dy) as isize - self.pad_h as isize;
                for dx in 0..self.k_w {
                    let x = (ow * self.stride[2] + dx) as isize - self.pad_w as isize;
                    let inside =
                        y >= 0 && (y as usize) < self.in_h && x >= 0 && (x as usize) < self.in_w;
                    let src = inside.then(|| {
                        (((b * self.in_len + z) * self.in_h + y as usize) * self.in_w + x as usize)
                            * c
                    });
                    f(col, src);
                    col += c;
                }
            }
        }
    }

    fn im2col<T: Scalar>(&self, input: &[T]) -> Vec<T> {
        let patch = self.patch();
        let c = self.in_c;
        let mut cols = vec![T::zero(); self.rows() * patch];
        for (row, dst) in cols.chunks_exact_mut(patch).enumerate() {
            self.for_each_tap(row, |col, src| {
                if let Some(s) = src {
                    dst[col..col + c].copy_from_slice(&input[s..s + c]);
                }
            });
        }
        cols
    }

    fn col2im<T: Scalar>(&self, cols: &[T], out: &mut [T]) {
        let patch = self.patch();
        let c = self.in_c;
        for (row, src_row) in cols.chunks_exact(patch).enumerate() {
            self.for_each_tap(row, |col, dst| {
                if let Some(d) = dst {
                    for (o, &v) in out[d..d + c].iter_mut().zip(&src_row[col..col + c]) {
                        *o += v;
                    }
                }
            });
        }
    }

    /// y = conv(x) (no bias). `weight` is (patch x out_c) row-major.
    pub fn apply<T: Scalar>(&self, input: &[T], weight: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.rows() * self.out_c];
        if self.is_pointwise() {
            T::gemm(
                self.rows(),
                self.patch(),
                self.out_c,
                T::one(),
                input,
                false,
                weight,
                false,
                T::zero(),
                &mut out,
            );
        } else {
            let cols = self.im2col(input);
            T::gemm(
                self.rows(),
                self.patch(),
                self.out_c,
                T::one(),
                &cols,
                false,
                weight,
                false,
                T::zero(),
                &mut out,
            );
        }
        out
    }

    /// x̄ = convᵀ(ȳ): the adjoint of [`ConvGeometry::apply`] with respect to its input.
    pub fn apply_transpose<T: Scalar>(&self, grad_out: &[T], weight: &[T]) -> Vec<T> {
        let mut grad_in = vec![T::zero(); self.input_len()];
        if self.is_pointwise() {
            T::gemm(
                self.rows(),
                self.out_c,
                self.patch(),
                T::one(),
                grad_out,
                false,
                weight,
                true,
                T::zero(),
                &mut grad_in,
            );
        } else {
            let mut cols = vec![T::zero(); self.rows() * self.patch()];
            T::gemm(
                self.rows(),
                self.out_c,
                self.patch(),
                T::one(),
                grad_out,
                false,
                weight,
                true,
                T::zero(),
                &mut cols,
            );
            self.col2im(&cols, &mut grad_in);
        }
        grad_in
    }

    /// ∂⟨ȳ, conv(x)⟩/∂W, accumulated into `grad_w` (patch x out_c).
    pub fn weight_grad<T: Scalar>(&self, input: &[T], grad_out: &[T], grad_w: &mut [T]) {
        let owned;
        let cols: &[T] = if self.is_pointwise() {
            input
        } else {
            owned = self.im2col(input);
            &owned
        };
        T::gemm(
            self.patch(),
            self.rows(),
            self.out_c,
            T::one(),
            cols,
            true,
            grad_out,
            false,
            T::one(),
            grad_w,
        );
    }
}

fn add_bias<T: Scalar>(out: &mut [T], bias: &[T]) {
    let c = bias.len();
    for px in out.chunks_exact_mut(c) {
        for (o, &b) in px.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

fn bias_grad<T: Scalar>(grad_out: &[T], c: usize) -> Vec<T> {
    let mut g = vec![T::zero(); c];
    for px in grad_out.chunks_exact(c) {
        for (a, &v) in g.iter_mut().zip(px) {
            *a += v;
        }
    }
    g
}

/// Gradients produced by a layer's backward pass.
#[derive(Clone, Debug)]
pub struct LayerGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

fn check_kernel(dims: &[usize]) -> Result<()> {
    if dims.iter().any(|&k| k == 0 || k % 2 == 0) {
        return Err(StanError::Config(format!("kernel dims must be odd, got {:?}", dims)));
    }
    Ok(())
}

fn split_batch(shape: &[usize], trailing: usize) -> Result<(usize, &[usize])> {
    if shape.len() < trailing {
        return Err(shape_err!(
            "expected at least {} axes, got {:?}",
            trailing,
            shape
        ));
    }
    let k = shape.len() - trailing;
    Ok((shape[..k].iter().product(), &shape[k..]))
}

/// 2D convolution, weights `(kh, kw, c_in, c_out)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: [usize; 2],
}

impl<T: Scalar> Conv2d<T> {
    pub fn zeros(kernel: [usize; 2], c_in: usize, c_out: usize, stride: [usize; 2]) -> Result<Self> {
        check_kernel(&kernel)?;
        if stride.contains(&0) {
            return Err(StanError::Config(format!("non-positive stride {:?}", stride)));
        }
        Ok(Conv2d {
            weight: Tensor::zeros(&[kernel[0], kernel[1], c_in, c_out]),
            bias: Tensor::zeros(&[c_out]),
            stride,
        })
    }

    pub fn glorot<R: Rng>(
        kernel: [usize; 2],
        c_in: usize,
        c_out: usize,
        stride: [usize; 2],
        rng: &mut R,
    ) -> Result<Self> {
        let mut layer = Self::zeros(kernel, c_in, c_out, stride)?;
        let area = kernel[0] * kernel[1];
        glorot_uniform(&mut layer.weight, area * c_in, area * c_out, rng);
        Ok(layer)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[3]
    }

    pub fn geometry(&self, input_shape: &[usize]) -> Result<ConvGeometry> {
        let (n, hwc) = split_batch(input_shape, 3)?;
        let ws = self.weight.shape();
        if hwc[2] != ws[2] {
            return Err(shape_err!(
                "conv2d expects {} input channels, got {}",
                ws[2],
                hwc[2]
            ));
        }
        ConvGeometry::new(
            n,
            [1, hwc[0], hwc[1], hwc[2]],
            [1, ws[0], ws[1]],
            ws[3],
            [1, self.stride[0], self.stride[1]],
        )
    }

    fn output_shape(input_shape: &[usize], g: &ConvGeometry) -> Vec<usize> {
        let mut s = input_shape[..input_shape.len() - 3].to_vec();
        s.extend_from_slice(&[g.out_h, g.out_w, g.out_c]);
        s
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.geometry(input.shape())?;
        let mut out = g.apply(input.data(), self.weight.data());
        add_bias(&mut out, self.bias.data());
        Tensor::from_vec(&Self::output_shape(input.shape(), &g), out)
    }

    pub fn backward(&self, input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<LayerGrads<T>> {
        let g = self.geometry(input.shape())?;
        let expect = Self::output_shape(input.shape(), &g);
        if grad_out.shape() != expect.as_slice() {
            return Err(shape_err!("conv2d grad {:?} vs {:?}", grad_out.shape(), expect));
        }
        let gi = g.apply_transpose(grad_out.data(), self.weight.data());
        let mut gw = vec![T::zero(); self.weight.len()];
        g.weight_grad(input.data(), grad_out.data(), &mut gw);
        Ok(LayerGrads {
            input: Tensor::from_vec(input.shape(), gi)?,
            weight: Tensor::from_vec(self.weight.shape(), gw)?,
            bias: Tensor::from_vec(self.bias.shape(), bias_grad(grad_out.data(), g.out_c))?,
        })
    }
}

/// Transposed 2D convolution: the adjoint of a "same"-padded [`Conv2d`]
/// mapping `(h·s, w·s, c_out)` to `(h, w, c_in)`. Weights are stored in that
/// convolution's layout, `(kh, kw, c_out, c_in)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvTranspose2d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: [usize; 2],
}

impl<T: Scalar> ConvTranspose2d<T> {
    pub fn zeros(kernel: [usize; 2], c_in: usize, c_out: usize, stride: [usize; 2]) -> Result<Self> {
        check_kernel(&kernel)?;
        if stride.contains(&0) {
            return Err(StanError::Config(format!("non-positive stride {:?}", stride)));
        }
        Ok(ConvTranspose2d {
            weight: Tensor::zeros(&[kernel[0], kernel[1], c_out, c_in]),
            bias: Tensor::zeros(&[c_out]),
            stride,
        })
    }

    pub fn glorot<R: Rng>(
        kernel: [usize; 2],
        c_in: usize,
        c_out: usize,
        stride: [usize; 2],
        rng: &mut R,
    ) -> Result<Self> {
        let mut layer = Self::zeros(kernel, c_in, c_out, stride)?;
        let area = kernel[0] * kernel[1];
        glorot_uniform(&mut layer.weight, area * c_in, area * c_out, rng);
        Ok(layer)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[3]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[2]
    }

    /// Geometry of the underlying forward convolution.
    fn geometry(&self, input_shape: &[usize]) -> Result<ConvGeometry> {
        let (n, hwc) = split_batch(input_shape, 3)?;
        let ws = self.weight.shape();
        if hwc[2] != ws[3] {
            return Err(shape_err!(
                "deconv2d expects {} input channels, got {}",
                ws[3],
                hwc[2]
            ));
        }
        let g = ConvGeometry::new(
            n,
            [1, hwc[0] * self.stride[0], hwc[1] * self.stride[1], ws[2]],
            [1, ws[0], ws[1]],
            ws[3],
            [1, self.stride[0], self.stride[1]],
        )?;
        debug_assert_eq!((g.out_h, g.out_w), (hwc[0], hwc[1]));
        Ok(g)
    }

    fn output_shape(&self, input_shape: &[usize]) -> Vec<usize> {
        let r = input_shape.len();
        let mut s = input_shape[..r - 3].to_vec();
        s.extend_from_slice(&[
            input_shape[r - 3] * self.stride[0],
            input_shape[r - 2] * self.stride[1],
            self.out_channels(),
        ]);
        s
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.geometry(input.shape())?;
        let mut out = g.apply_transpose(input.data(), self.weight.data());
        add_bias(&mut out, self.bias.data());
        Tensor::from_vec(&self.output_shape(input.shape()), out)
    }

    pub fn backward(&self, input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<LayerGrads<T>> {
        let g = self.geometry(input.shape())?;
        let expect = self.output_shape(input.shape());
        if grad_out.shape() != expect.as_slice() {
            return Err(shape_err!("deconv2d grad {:?} vs {:?}", grad_out.shape(), expect));
        }
        let gi = g.apply(grad_out.data(), self.weight.data());
        let mut gw = vec![T::zero(); self.weight.len()];
        g.weight_grad(grad_out.data(), input.data(), &mut gw);
        Ok(LayerGrads {
            input: Tensor::from_vec(input.shape(), gi)?,
            weight: Tensor::from_vec(self.weight.shape(), gw)?,
            bias: Tensor::from_vec(
                self.bias.shape(),
                bias_grad(grad_out.data(), self.out_channels()),
            )?,
        })
    }
}

/// 3D convolution over `(l, h, w, c)`, weights `(kd, kh, kw, c_in, c_out)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv3d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: [usize; 3],
}

impl<T: Scalar> Conv3d<T> {
    pub fn zeros(kernel: [usize; 3], c_in: usize, c_out: usize, stride: [usize; 3]) -> Result<Self> {
        check_kernel(&kernel)?;
        if stride.contains(&0) {
            return Err(StanError::Config(format!("non-positive stride {:?}", stride)));
        }
        Ok(Conv3d {
            weight: Tensor::zeros(&[kernel[0], kernel[1], kernel[2], c_in, c_out]),
            bias: Tensor::zeros(&[c_out]),
            stride,
        })
    }

    pub fn glorot<R: Rng>(
        kernel: [usize; 3],
        c_in: usize,
        c_out: usize,
        stride: [usize; 3],
        rng: &mut R,
    ) -> Result<Self> {
        let mut layer = Self::zeros(kernel, c_in, c_out, stride)?;
        let vol = kernel[0] * kernel[1] * kernel[2];
        glorot_uniform(&mut layer.weight, vol * c_in, vol * c_out, rng);
        Ok(layer)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[4]
    }

    pub fn geometry(&self, input_shape: &[usize]) -> Result<ConvGeometry> {
        let (n, lhwc) = split_batch(input_shape, 4)?;
        let ws = self.weight.shape();
        if lhwc[3] != ws[3] {
            return Err(shape_err!(
                "conv3d expects {} input channels, got {}",
                ws[3],
                lhwc[3]
            ));
        }
        ConvGeometry::new(
            n,
            [lhwc[0], lhwc[1], lhwc[2], lhwc[3]],
            [ws[0], ws[1], ws[2]],
            ws[4],
            self.stride,
        )
    }

    fn output_shape(input_shape: &[usize], g: &ConvGeometry) -> Vec<usize> {
        let mut s = input_shape[..input_shape.len() - 4].to_vec();
        s.extend_from_slice(&[g.out_len, g.out_h, g.out_w, g.out_c]);
        s
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.geometry(input.shape())?;
        let mut out = g.apply(input.data(), self.weight.data());
        add_bias(&mut out, self.bias.data());
        Tensor::from_vec(&Self::output_shape(input.shape(), &g), out)
    }

    pub fn backward(&self, input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<LayerGrads<T>> {
        let g = self.geometry(input.shape())?;
        let expect = Self::output_shape(input.shape(), &g);
        if grad_out.shape() != expect.as_slice() {
            return Err(shape_err!("conv3d grad {:?} vs {:?}", grad_out.shape(), expect));
        }
        let gi = g.apply_transpose(grad_out.data(), self.weight.data());
        let mut gw = vec![T::zero(); self.weight.len()];
        g.weight_grad(input.data(), grad_out.data(), &mut gw);
        Ok(LayerGrads {
            input: Tensor::from_vec(input.shape(), gi)?,
            weight: Tensor::from_vec(self.weight.shape(), gw)?,
            bias: Tensor::from_vec(self.bias.shape(), bias_grad(grad_out.data(), g.out_c))?,
        })
    }
}

pub fn conv2d<T: Scalar>(input: &Tensor<T>, params: &Conv2d<T>) -> Result<Tensor<T>> {
    params.forward(input)
}

pub fn deconv2d<T: Scalar>(input: &Tensor<T>, params: &ConvTranspose2d<T>) -> Result<Tensor<T>> {
    params.forward(input)
}

pub fn conv3d<T: Scalar>(input: &Tensor<T>, params: &Conv3d<T>) -> Result<Tensor<T>> {
    params.forward(input)
}
