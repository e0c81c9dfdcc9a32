//! Generator and discriminator networks.

pub mod checkpoint;
pub mod discriminator;
pub mod generator;
pub mod params;

pub use discriminator::{Discriminator, DiscriminatorConfig, DiscriminatorGrads, DiscriminatorTrace};
pub use generator::{Generator, GeneratorConfig, GeneratorTrace};
pub use params::{accumulate_grads, flatten_grads, Grads, Parameterized};

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Insert `center` between the two halves of `window`.
///
/// `window` is `(2k, H, W, 1)` with `center` `(H, W, 1)`, or batched as
/// `(n, 2k, H, W, 1)` with `(n, H, W, 1)`. The result has `2k + 1` frames with
/// `center` at index `k`; every other frame is copied bit for bit.
pub fn assemble_fake_sequence<T: Scalar>(window: &Tensor<T>, center: &Tensor<T>) -> Result<Tensor<T>> {
    let ws = window.shape();
    let (n, f, frame_shape) = match ws.len() {
        4 => (1, ws[0], &ws[1..]),
        5 => (ws[0], ws[1], &ws[2..]),
        _ => return Err(shape_err!("window must be rank 4 or 5, got {:?}", ws)),
    };
    if f % 2 != 0 {
        return Err(shape_err!("window of odd length {}", f));
    }
    let frame_len: usize = frame_shape.iter().product();
    if center.len() != n * frame_len || center.shape()[center.rank() - 3..] != *frame_shape {
        return Err(shape_err!(
            "center {:?} does not fit window {:?}",
            center.shape(),
            ws
        ));
    }
    let k = f / 2;
    let mut data = Vec::with_capacity(n * (f + 1) * frame_len);
    for b in 0..n {
        let w = &window.data()[b * f * frame_len..(b + 1) * f * frame_len];
        data.extend_from_slice(&w[..k * frame_len]);
        data.extend_from_slice(&center.data()[b * frame_len..(b + 1) * frame_len]);
        data.extend_from_slice(&w[k * frame_len..]);
    }
    let mut shape = ws.to_vec();
    shape[ws.len() - 4] = f + 1;
    Tensor::from_vec(&shape, data)
}

/// Per-sample gradient of the center slot of a batched `(n, 2k+1, H, W, 1)` sequence.
pub fn center_slot<T: Scalar>(seq: &Tensor<T>) -> Tensor<T> {
    let len = seq.shape()[1];
    generator::select_frame(seq, len / 2)
}
