//! Convolutional LSTM cell without peephole connections.
//!
//! All four gates come from one 3×3 "same" convolution over the channel-wise
//! concatenation `[x, h]`, with output channels laid out as `[i, f, o, g]`:
//!
//! ```text
//! i, f, o = σ(·)    g = tanh(·)
//! c' = f ⊙ c + i ⊙ g
//! h' = o ⊙ tanh(c')
//! ```

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::nn::activation::sigmoid;
use crate::nn::conv::Conv2d;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLstmState<T> {
    pub h: Tensor<T>,
    pub c: Tensor<T>,
}

impl<T: Scalar> ConvLstmState<T> {
    /// All-zero state for a batch of `(h, w)` maps.
    pub fn zeros(batch_shape: &[usize], hidden: usize) -> Self {
        let mut shape = batch_shape.to_vec();
        shape.push(hidden);
        ConvLstmState {
            h: Tensor::zeros(&shape),
            c: Tensor::zeros(&shape),
        }
    }

    pub fn concat(a: &Self, b: &Self) -> Result<Self> {
        Ok(ConvLstmState {
            h: Tensor::concat_channels(&a.h, &b.h)?,
            c: Tensor::concat_channels(&a.c, &b.c)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLstmCell<T> {
    pub gates: Conv2d<T>,
    hidden: usize,
}

/// Values saved by [`ConvLstmCell::step`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ConvLstmCache<T> {
    joint: Tensor<T>,
    acts: Tensor<T>,
    c_prev: Tensor<T>,
    tanh_c: Tensor<T>,
}

pub struct ConvLstmGrads<T> {
    pub input: Tensor<T>,
    pub state: ConvLstmState<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> ConvLstmCell<T> {
    pub fn zeros(input_channels: usize, hidden: usize) -> Result<Self> {
        Ok(ConvLstmCell {
            gates: Conv2d::zeros([3, 3], input_channels + hidden, 4 * hidden, [1, 1])?,
            hidden,
        })
    }

    /// Glorot weights, zero biases except the forget gate at 1.0.
    pub fn glorot<R: Rng>(input_channels: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let gates = Conv2d::glorot([3, 3], input_channels + hidden, 4 * hidden, [1, 1], rng)?;
        let mut cell = ConvLstmCell { gates, hidden };
        for b in &mut cell.gates.bias.data_mut()[hidden..2 * hidden] {
            *b = T::one();
        }
        Ok(cell)
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input_channels(&self) -> usize {
        self.gates.in_channels() - self.hidden
    }

    pub fn step(
        &self,
        input: &Tensor<T>,
        state: &ConvLstmState<T>,
    ) -> Result<(ConvLstmState<T>, ConvLstmCache<T>)> {
        let (is, hs) = (input.shape(), state.h.shape());
        if is.len() != hs.len() || is[..is.len() - 1] != hs[..hs.len() - 1] {
            return Err(shape_err!("convlstm input {:?} vs state {:?}", is, hs));
        }
        if hs.last() != Some(&self.hidden) || state.c.shape() != hs {
            return Err(shape_err!(
                "convlstm state {:?}/{:?}, hidden {}",
                hs,
                state.c.shape(),
                self.hidden
            ));
        }
        let joint = Tensor::concat_channels(input, &state.h)?;
        let mut acts = self.gates.forward(&joint)?;
        let n = self.hidden;
        let mut c_new = Tensor::zeros(hs);
        let mut h_new = Tensor::zeros(hs);
        let mut tanh_c = Tensor::zeros(hs);
        for (p, gate) in acts.data_mut().chunks_exact_mut(4 * n).enumerate() {
            let base = p * n;
            for j in 0..n {
                let i = sigmoid(gate[j]);
                let f = sigmoid(gate[n + j]);
                let o = sigmoid(gate[2 * n + j]);
                let g = gate[3 * n + j].tanh();
                gate[j] = i;
                gate[n + j] = f;
                gate[2 * n + j] = o;
                gate[3 * n + j] = g;
                let c = f * state.c.data()[base + j] + i * g;
                let tc = c.tanh();
                c_new.data_mut()[base + j] = c;
                tanh_c.data_mut()[base + j] = tc;
                h_new.data_mut()[base + j] = o * tc;
            }
        }
        let cache = ConvLstmCache {
            joint,
            acts,
            c_prev: state.c.clone(),
            tanh_c,
        };
        Ok((ConvLstmState { h: h_new, c: c_new }, cache))
    }

    /// Backward through one step given gradients on the new `(h, c)`.
    pub fn step_backward(
        &self,
        cache: &ConvLstmCache<T>,
        grad: &ConvLstmState<T>,
    ) -> Result<ConvLstmGrads<T>> {
        let n = self.hidden;
        let one = T::one();
        let mut d_gates = Tensor::zeros(cache.acts.shape());
        let mut dc_prev = Tensor::zeros(cache.c_prev.shape());
        for (p, (dz, gate)) in d_gates
            .data_mut()
            .chunks_exact_mut(4 * n)
            .zip(cache.acts.data().chunks_exact(4 * n))
            .enumerate()
        {
            let base = p * n;
            for j in 0..n {
                let (i, f, o, g) = (gate[j], gate[n + j], gate[2 * n + j], gate[3 * n + j]);
                let tc = cache.tanh_c.data()[base + j];
                let dh = grad.h.data()[base + j];
                let dc = grad.c.data()[base + j] + dh * o * (one - tc * tc);
                let d_o = dh * tc;
                let d_i = dc * g;
                let d_g = dc * i;
                let d_f = dc * cache.c_prev.data()[base + j];
                dc_prev.data_mut()[base + j] = dc * f;
                dz[j] = d_i * i * (one - i);
                dz[n + j] = d_f * f * (one - f);
                dz[2 * n + j] = d_o * o * (one - o);
                dz[3 * n + j] = d_g * (one - g * g);
            }
        }
        let lg = self.gates.backward(&cache.joint, &d_gates)?;
        let (dx, dh_prev) = lg.input.split_channels(self.input_channels())?;
        Ok(ConvLstmGrads {
            input: dx,
            state: ConvLstmState {
                h: dh_prev,
                c: dc_prev,
            },
            weight: lg.weight,
            bias: lg.bias,
        })
    }
}

pub fn convlstm_step<T: Scalar>(
    input: &Tensor<T>,
    state: &ConvLstmState<T>,
    cell: &ConvLstmCell<T>,
) -> Result<ConvLstmState<T>> {
    cell.step(input, state).map(|(s, _)| s)
}
