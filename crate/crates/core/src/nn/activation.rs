//! Pointwise nonlinearities and their derivatives.
//!
//! Backward functions take the forward *output* where that is enough to
//! recover the derivative.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// ELU with α = 1.
#[inline]
pub fn elu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// d elu / dx expressed through the output y = elu(x).
#[inline]
fn elu_grad_from_output<T: Scalar>(y: T) -> T {
    if y > T::zero() {
        T::one()
    } else {
        y + T::one()
    }
}

pub fn elu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(elu)
}

pub fn sigmoid_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid)
}

pub fn tanh_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.tanh())
}

/// Backward through ELU. With `guided`, negative upstream gradients are
/// zeroed before the local derivative is applied.
pub fn elu_backward<T: Scalar>(output: &Tensor<T>, grad: &Tensor<T>, guided: bool) -> Tensor<T> {
    output
        .zip_map(grad, |y, g| {
            if guided && g < T::zero() {
                T::zero()
            } else {
                g * elu_grad_from_output(y)
            }
        })
        .expect("elu backward shapes")
}

pub fn sigmoid_backward<T: Scalar>(output: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    output
        .zip_map(grad, |y, g| g * y * (T::one() - y))
        .expect("sigmoid backward shapes")
}

pub fn tanh_backward<T: Scalar>(output: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    output
        .zip_map(grad, |y, g| g * (T::one() - y * y))
        .expect("tanh backward shapes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elu_values() {
        assert_eq!(elu(2.0f64), 2.0);
        assert_eq!(elu(0.0f64), 0.0);
        assert!((elu(-1.0f64) - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-800.0f64) >= 0.0);
        assert!(sigmoid(800.0f64) <= 1.0);
        assert!(sigmoid(-800.0f32).is_finite());
    }

    #[test]
    fn guided_elu_drops_negative_upstream() {
        let y = Tensor::<f64>::from_vec(&[3], vec![1.0, -0.5, 2.0]).unwrap();
        let g = Tensor::<f64>::from_vec(&[3], vec![-1.0, 1.0, 3.0]).unwrap();
        let plain = elu_backward(&y, &g, false);
        let guided = elu_backward(&y, &g, true);
        assert_eq!(plain.data(), &[-1.0, 0.5, 3.0]);
        assert_eq!(guided.data(), &[0.0, 0.5, 3.0]);
    }
}
