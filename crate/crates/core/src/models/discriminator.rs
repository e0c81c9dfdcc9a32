//! 3D-convolutional patch discriminator over 11-frame sequences.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result, StanError};
use crate::models::params::{Grads, Parameterized};
use crate::nn::activation::{elu_backward, elu_forward, sigmoid_backward, sigmoid_forward};
use crate::nn::Conv3d;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// (temporal, spatial) kernel extents of the six layers.
const KERNELS: [[usize; 3]; 6] = [
    [5, 5, 5],
    [3, 5, 5],
    [3, 3, 3],
    [3, 3, 3],
    [1, 3, 3],
    [1, 3, 3],
];
const SPATIAL_STRIDES: [usize; 6] = [2, 2, 2, 2, 2, 1];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub input_size: usize,
    pub sequence_length: usize,
    pub channels: [usize; 5],
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            input_size: 224,
            sequence_length: 11,
            channels: [32, 64, 128, 256, 512],
        }
    }
}

impl DiscriminatorConfig {
    /// Channel schedule `(2, 4, 8, 16, 32) × base`; base 16 is the full network.
    pub fn scaled(input_size: usize, base_channels: usize) -> Self {
        let b = base_channels;
        DiscriminatorConfig {
            input_size,
            sequence_length: 11,
            channels: [2 * b, 4 * b, 8 * b, 16 * b, 32 * b],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let reduced = KERNELS
            .iter()
            .try_fold(self.sequence_length, |l, k| l.checked_sub(k[0] - 1));
        if reduced != Some(1) {
            return Err(StanError::Config(format!(
                "temporal kernels (5,3,3,3,1,1) need sequence length 11, got {}",
                self.sequence_length
            )));
        }
        if self.input_size == 0 || self.channels.contains(&0) {
            return Err(StanError::Config("sizes must be positive".into()));
        }
        Ok(())
    }

    /// Side of the square output probability map.
    pub fn patch_grid(&self) -> usize {
        SPATIAL_STRIDES
            .iter()
            .fold(self.input_size, |s, &st| s.div_ceil(st))
    }

    /// Receptive field side of one output patch, in input pixels.
    pub fn receptive_field(&self) -> usize {
        let mut rf = 1;
        let mut jump = 1;
        for (k, s) in KERNELS.iter().zip(SPATIAL_STRIDES) {
            rf += (k[1] - 1) * jump;
            jump *= s;
        }
        rf
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T> {
    config: DiscriminatorConfig,
    pub layers: [Conv3d<T>; 6],
}

#[derive(Clone, Debug)]
pub struct DiscriminatorTrace<T> {
    input: Tensor<T>,
    /// Post-activation outputs; the last one is the probability map.
    activations: Vec<Tensor<T>>,
}

impl<T: Scalar> DiscriminatorTrace<T> {
    /// `(n, 1, g, g, 1)` probability map.
    pub fn output(&self) -> &Tensor<T> {
        self.activations.last().expect("discriminator output")
    }

    pub fn layer_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.activations
            .iter()
            .enumerate()
            .map(|(i, t)| (format!("3D Conv{}", i + 1), t.shape()[1..].to_vec()))
            .collect()
    }
}

/// Gradients of a discriminator backward pass.
pub struct DiscriminatorGrads<T> {
    pub params: Grads<T>,
    pub input: Tensor<T>,
}

impl<T: Scalar> Discriminator<T> {
    fn in_out(config: &DiscriminatorConfig) -> [(usize, usize); 6] {
        let c = config.channels;
        [
            (1, c[0]),
            (c[0], c[1]),
            (c[1], c[2]),
            (c[2], c[3]),
            (c[3], c[4]),
            (c[4], 1),
        ]
    }

    pub fn new<R: Rng>(config: DiscriminatorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let io = Self::in_out(&config);
        let mut layers = Vec::with_capacity(6);
        for i in 0..6 {
            layers.push(Conv3d::glorot(
                KERNELS[i],
                io[i].0,
                io[i].1,
                [1, SPATIAL_STRIDES[i], SPATIAL_STRIDES[i]],
                rng,
            )?);
        }
        Ok(Discriminator {
            layers: layers.try_into().expect("six layers"),
            config,
        })
    }

    pub fn zeros(config: DiscriminatorConfig) -> Result<Self> {
        config.validate()?;
        let io = Self::in_out(&config);
        let mut layers = Vec::with_capacity(6);
        for i in 0..6 {
            layers.push(Conv3d::zeros(
                KERNELS[i],
                io[i].0,
                io[i].1,
                [1, SPATIAL_STRIDES[i], SPATIAL_STRIDES[i]],
            )?);
        }
        Ok(Discriminator {
            layers: layers.try_into().expect("six layers"),
            config,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    fn batched(&self, seq: &Tensor<T>) -> Result<Tensor<T>> {
        let c = &self.config;
        let s = seq.shape();
        let tail = [c.sequence_length, c.input_size, c.input_size, 1];
        if s.len() >= 4 && s[s.len() - 4] != c.sequence_length {
            return Err(StanError::Input(format!(
                "sequence must hold {} frames, got shape {:?}",
                c.sequence_length, s
            )));
        }
        match s.len() {
            4 if s == tail => {
                let mut shape = vec![1];
                shape.extend_from_slice(s);
                seq.clone().reshape(&shape)
            }
            5 if s[1..] == tail => Ok(seq.clone()),
            _ => Err(shape_err!("sequence {:?} does not match {:?}", s, tail)),
        }
    }

    pub fn forward_trace(&self, seq: &Tensor<T>) -> Result<DiscriminatorTrace<T>> {
        let input = self.batched(seq)?;
        let mut x = input.clone();
        let mut activations = Vec::with_capacity(6);
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&x)?;
            x = if i == 5 {
                sigmoid_forward(&z)
            } else {
                elu_forward(&z)
            };
            activations.push(x.clone());
        }
        Ok(DiscriminatorTrace { input, activations })
    }

    /// Patch probabilities `(n, 1, g, g, 1)`, or `(1, g, g, 1)` for one sequence.
    pub fn forward(&self, seq: &Tensor<T>) -> Result<Tensor<T>> {
        let single = seq.rank() == 4;
        let out = self.forward_trace(seq)?.output().clone();
        if single {
            let s = out.shape()[1..].to_vec();
            out.reshape(&s)
        } else {
            Ok(out)
        }
    }

    /// Backward from `grad_out` on the probability map. With `guided`, every
    /// ELU additionally discards negative upstream gradients; the final
    /// sigmoid is never gated.
    pub fn backward(
        &self,
        trace: &DiscriminatorTrace<T>,
        grad_out: &Tensor<T>,
        guided: bool,
    ) -> Result<DiscriminatorGrads<T>> {
        let out = trace.output();
        if grad_out.len() != out.len() {
            return Err(shape_err!(
                "discriminator grad {:?} vs output {:?}",
                grad_out.shape(),
                out.shape()
            ));
        }
        let grad_out = grad_out.clone().reshape(out.shape())?;
        let mut g = sigmoid_backward(out, &grad_out);
        let mut grads = Vec::with_capacity(12);
        for i in (0..6).rev() {
            let input = if i == 0 {
                &trace.input
            } else {
                &trace.activations[i - 1]
            };
            let lg = self.layers[i].backward(input, &g)?;
            grads.push(lg.bias);
            grads.push(lg.weight);
            g = if i == 0 {
                lg.input
            } else {
                elu_backward(&trace.activations[i - 1], &lg.input, guided)
            };
        }
        grads.reverse();
        Ok(DiscriminatorGrads {
            params: grads,
            input: g,
        })
    }
}

impl<T: Scalar> Parameterized<T> for Discriminator<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::with_capacity(12);
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("conv3d_{}.weight", i + 1), &l.weight));
            out.push((format!("conv3d_{}.bias", i + 1), &l.bias));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::with_capacity(12);
        for l in self.layers.iter_mut() {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }
}
