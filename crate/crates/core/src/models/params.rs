use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Gradients in the same order as [`Parameterized::params`].
pub type Grads<T> = Vec<Tensor<T>>;

/// A network whose trainable tensors can be enumerated in a fixed order.
pub trait Parameterized<T: Scalar> {
    fn params(&self) -> Vec<(String, &Tensor<T>)>;
    fn params_mut(&mut self) -> Vec<&mut Tensor<T>>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    fn zero_grads(&self) -> Grads<T> {
        self.params()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect()
    }

    /// All parameters concatenated, in order.
    fn flat_params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for (_, t) in self.params() {
            out.extend_from_slice(t.data());
        }
        out
    }

    fn set_flat_params(&mut self, flat: &[T]) -> Result<()> {
        let total = self.param_count();
        if flat.len() != total {
            return Err(shape_err!("{} flat values for {} parameters", flat.len(), total));
        }
        let mut off = 0;
        for t in self.params_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }
}

pub fn flatten_grads<T: Scalar>(grads: &[Tensor<T>]) -> Vec<T> {
    let mut out = Vec::new();
    for g in grads {
        out.extend_from_slice(g.data());
    }
    out
}

pub fn accumulate_grads<T: Scalar>(acc: &mut [Tensor<T>], other: &[Tensor<T>]) -> Result<()> {
    if acc.len() != other.len() {
        return Err(shape_err!("{} vs {} gradient tensors", acc.len(), other.len()));
    }
    for (a, b) in acc.iter_mut().zip(other) {
        a.add_assign(b)?;
    }
    Ok(())
}
