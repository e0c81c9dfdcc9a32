//! Spatio-temporal generator: spatial encoder, bidirectional ConvLSTM and
//! spatial decoder synthesizing the center frame of a window.
//!
//! ```text
//! frames t-k..t-1 ─ encoder ─► forward ConvLSTM  ─┐
//!                                                 ├─ concat (h, c) ─► combined ConvLSTM (1 step) ─► decoder ─► X̂_t
//! frames t+k..t+1 ─ encoder ─► backward ConvLSTM ─┘
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result, StanError};
use crate::models::params::{Grads, Parameterized};
use crate::nn::activation::{elu_backward, elu_forward, tanh_backward, tanh_forward};
use crate::nn::{Conv2d, ConvLstmCache, ConvLstmCell, ConvLstmState, ConvTranspose2d};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub input_size: usize,
    pub base_channels: usize,
    /// Frames on each side of the target (`k`); the window holds `2k`.
    pub half_window: usize,
    pub convlstm_hidden: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            input_size: 224,
            base_channels: 16,
            half_window: 5,
            convlstm_hidden: 64,
        }
    }
}

impl GeneratorConfig {
    /// Widths proportional to `base_channels`, ConvLSTM hidden = 4 × base.
    pub fn scaled(input_size: usize, base_channels: usize) -> Self {
        GeneratorConfig {
            input_size,
            base_channels,
            half_window: 5,
            convlstm_hidden: 4 * base_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.input_size % 8 != 0 {
            return Err(StanError::Config(format!(
                "generator input size {} must be a positive multiple of 8",
                self.input_size
            )));
        }
        if self.half_window == 0 {
            return Err(StanError::Config("half window must be at least 1".into()));
        }
        if self.base_channels == 0 || self.convlstm_hidden == 0 {
            return Err(StanError::Config("channel widths must be positive".into()));
        }
        Ok(())
    }

    pub fn window_len(&self) -> usize {
        2 * self.half_window
    }

    pub fn latent_size(&self) -> usize {
        self.input_size / 8
    }

    pub fn latent_channels(&self) -> usize {
        8 * self.base_channels
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T> {
    config: GeneratorConfig,
    pub encoder: [Conv2d<T>; 4],
    pub forward_lstm: ConvLstmCell<T>,
    pub backward_lstm: ConvLstmCell<T>,
    pub combined_lstm: ConvLstmCell<T>,
    pub decoder: [ConvTranspose2d<T>; 4],
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Clone, Debug)]
pub struct GeneratorTrace<T> {
    batch: usize,
    frames: Tensor<T>,
    encoded: Vec<Tensor<T>>,
    forward_steps: Vec<ConvLstmCache<T>>,
    backward_steps: Vec<ConvLstmCache<T>>,
    forward_state: ConvLstmState<T>,
    backward_state: ConvLstmState<T>,
    combined_step: ConvLstmCache<T>,
    combined_state: ConvLstmState<T>,
    decoded: Vec<Tensor<T>>,
}

impl<T: Scalar> GeneratorTrace<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.decoded.last().expect("decoder output")
    }

    /// Per-sample output shape of every layer, in network order.
    pub fn layer_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        let strip = |t: &Tensor<T>| t.shape()[1..].to_vec();
        let names = ["Conv1", "Conv2", "Conv3", "Conv4"];
        let mut rows: Vec<(&'static str, Vec<usize>)> = names
            .iter()
            .zip(&self.encoded)
            .map(|(n, t)| (*n, strip(t)))
            .collect();
        rows.push(("Forward ConvLSTM", strip(&self.forward_state.h)));
        rows.push(("Backward ConvLSTM", strip(&self.backward_state.h)));
        rows.push(("Combined ConvLSTM", strip(&self.combined_state.h)));
        let names = ["DeConv1", "DeConv2", "DeConv3", "DeConv4"];
        rows.extend(names.iter().zip(&self.decoded).map(|(n, t)| (*n, strip(t))));
        rows
    }
}

/// Copy frame `j` of every sample out of a `(n, f, ...)` tensor.
pub(crate) fn select_frame<T: Scalar>(seq: &Tensor<T>, j: usize) -> Tensor<T> {
    let s = seq.shape();
    let per_frame: usize = s[2..].iter().product();
    let mut data = Vec::with_capacity(s[0] * per_frame);
    for b in 0..s[0] {
        let off = (b * s[1] + j) * per_frame;
        data.extend_from_slice(&seq.data()[off..off + per_frame]);
    }
    let mut shape = vec![s[0]];
    shape.extend_from_slice(&s[2..]);
    Tensor::from_vec(&shape, data).expect("frame selection")
}

pub(crate) fn add_to_frame<T: Scalar>(seq: &mut Tensor<T>, j: usize, grad: &Tensor<T>) {
    let s = seq.shape().to_vec();
    let per_frame: usize = s[2..].iter().product();
    for b in 0..s[0] {
        let off = (b * s[1] + j) * per_frame;
        let src = &grad.data()[b * per_frame..(b + 1) * per_frame];
        for (d, &g) in seq.data_mut()[off..off + per_frame].iter_mut().zip(src) {
            *d += g;
        }
    }
}

impl<T: Scalar> Generator<T> {
    pub fn new<R: Rng>(config: GeneratorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let b = config.base_channels;
        let hid = config.convlstm_hidden;
        let latent = config.latent_channels();
        Ok(Generator {
            encoder: [
                Conv2d::glorot([5, 5], 1, b, [2, 2], rng)?,
                Conv2d::glorot([5, 5], b, 2 * b, [2, 2], rng)?,
                Conv2d::glorot([3, 3], 2 * b, 4 * b, [2, 2], rng)?,
                Conv2d::glorot([3, 3], 4 * b, latent, [1, 1], rng)?,
            ],
            forward_lstm: ConvLstmCell::glorot(latent, hid, rng)?,
            backward_lstm: ConvLstmCell::glorot(latent, hid, rng)?,
            combined_lstm: ConvLstmCell::glorot(2 * hid, 2 * hid, rng)?,
            decoder: [
                ConvTranspose2d::glorot([3, 3], 2 * hid, 4 * b, [1, 1], rng)?,
                ConvTranspose2d::glorot([3, 3], 4 * b, 2 * b, [2, 2], rng)?,
                ConvTranspose2d::glorot([5, 5], 2 * b, b, [2, 2], rng)?,
                ConvTranspose2d::glorot([5, 5], b, 1, [2, 2], rng)?,
            ],
            config,
        })
    }

    pub fn zeros(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let b = config.base_channels;
        let hid = config.convlstm_hidden;
        let latent = config.latent_channels();
        Ok(Generator {
            encoder: [
                Conv2d::zeros([5, 5], 1, b, [2, 2])?,
                Conv2d::zeros([5, 5], b, 2 * b, [2, 2])?,
                Conv2d::zeros([3, 3], 2 * b, 4 * b, [2, 2])?,
                Conv2d::zeros([3, 3], 4 * b, latent, [1, 1])?,
            ],
            forward_lstm: ConvLstmCell::zeros(latent, hid)?,
            backward_lstm: ConvLstmCell::zeros(latent, hid)?,
            combined_lstm: ConvLstmCell::zeros(2 * hid, 2 * hid)?,
            decoder: [
                ConvTranspose2d::zeros([3, 3], 2 * hid, 4 * b, [1, 1])?,
                ConvTranspose2d::zeros([3, 3], 4 * b, 2 * b, [2, 2])?,
                ConvTranspose2d::zeros([5, 5], 2 * b, b, [2, 2])?,
                ConvTranspose2d::zeros([5, 5], b, 1, [2, 2])?,
            ],
            config,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    /// Accepts `(2k, H, W, 1)` or a batch `(n, 2k, H, W, 1)`.
    fn batched_window(&self, window: &Tensor<T>) -> Result<Tensor<T>> {
        let c = &self.config;
        let s = window.shape();
        let tail = [c.window_len(), c.input_size, c.input_size, 1];
        match s.len() {
            4 if s == tail => {
                let mut shape = vec![1];
                shape.extend_from_slice(s);
                window.clone().reshape(&shape)
            }
            5 if s[1..] == tail => Ok(window.clone()),
            _ if s.len() >= 4 && s[s.len() - 4] != c.window_len() => Err(StanError::Input(format!(
                "context window must hold {} frames, got shape {:?}",
                c.window_len(),
                s
            ))),
            _ => Err(shape_err!(
                "window {:?} does not match generator input {:?}",
                s,
                tail
            )),
        }
    }

    pub fn forward_trace(&self, window: &Tensor<T>) -> Result<GeneratorTrace<T>> {
        let frames = self.batched_window(window)?;
        let n = frames.shape()[0];
        let k = self.config.half_window;
        let size = self.config.input_size;
        let f = self.config.window_len();

        let mut x = frames.clone().reshape(&[n * f, size, size, 1])?;
        let mut encoded = Vec::with_capacity(4);
        for conv in &self.encoder {
            x = elu_forward(&conv.forward(&x)?);
            encoded.push(x.clone());
        }
        let ls = self.config.latent_size();
        let latent = x.reshape(&[n, f, ls, ls, self.config.latent_channels()])?;

        let hid = self.config.convlstm_hidden;
        let mut state = ConvLstmState::zeros(&[n, ls, ls], hid);
        let mut forward_steps = Vec::with_capacity(k);
        for j in 0..k {
            let (s, cache) = self.forward_lstm.step(&select_frame(&latent, j), &state)?;
            state = s;
            forward_steps.push(cache);
        }
        let forward_state = state;

        let mut state = ConvLstmState::zeros(&[n, ls, ls], hid);
        let mut backward_steps = Vec::with_capacity(k);
        for j in (k..f).rev() {
            let (s, cache) = self.backward_lstm.step(&select_frame(&latent, j), &state)?;
            state = s;
            backward_steps.push(cache);
        }
        let backward_state = state;

        let joint = ConvLstmState::concat(&forward_state, &backward_state)?;
        let (combined_state, combined_step) = self.combined_lstm.step(&joint.h, &joint)?;

        let mut y = combined_state.h.clone();
        let mut decoded = Vec::with_capacity(4);
        for (i, deconv) in self.decoder.iter().enumerate() {
            let z = deconv.forward(&y)?;
            y = if i == 3 { tanh_forward(&z) } else { elu_forward(&z) };
            decoded.push(y.clone());
        }

        Ok(GeneratorTrace {
            batch: n,
            frames,
            encoded,
            forward_steps,
            backward_steps,
            forward_state,
            backward_state,
            combined_step,
            combined_state,
            decoded,
        })
    }

    /// Generated center frame(s): `(H, W, 1)` for a single window, else `(n, H, W, 1)`.
    pub fn forward(&self, window: &Tensor<T>) -> Result<Tensor<T>> {
        let single = window.rank() == 4;
        let out = self.forward_trace(window)?.output().clone();
        if single {
            out.reshape(&[self.config.input_size, self.config.input_size, 1])
        } else {
            Ok(out)
        }
    }

    /// Parameter gradients for upstream gradient `grad_out` on the `(n, H, W, 1)` output.
    pub fn backward(&self, trace: &GeneratorTrace<T>, grad_out: &Tensor<T>) -> Result<Grads<T>> {
        let out = trace.output();
        if grad_out.len() != out.len() {
            return Err(shape_err!(
                "generator grad {:?} vs output {:?}",
                grad_out.shape(),
                out.shape()
            ));
        }
        let grad_out = grad_out.clone().reshape(out.shape())?;
        let n = trace.batch;
        let k = self.config.half_window;
        let f = self.config.window_len();
        let hid = self.config.convlstm_hidden;

        // decoder
        let mut dec_w = Vec::with_capacity(4);
        let mut g = tanh_backward(out, &grad_out);
        for i in (0..4).rev() {
            let input = if i == 0 {
                &trace.combined_state.h
            } else {
                &trace.decoded[i - 1]
            };
            let lg = self.decoder[i].backward(input, &g)?;
            dec_w.push((lg.weight, lg.bias));
            g = if i == 0 {
                lg.input
            } else {
                elu_backward(&trace.decoded[i - 1], &lg.input, false)
            };
        }
        dec_w.reverse();

        // combined step
        let zero_c = Tensor::zeros(trace.combined_state.c.shape());
        let comb = self.combined_lstm.step_backward(
            &trace.combined_step,
            &ConvLstmState { h: g, c: zero_c },
        )?;
        let dh_joint = {
            let mut t = comb.input.clone();
            t.add_assign(&comb.state.h)?;
            t
        };
        let (dh_f, dh_b) = dh_joint.split_channels(hid)?;
        let (dc_f, dc_b) = comb.state.c.split_channels(hid)?;

        let ls = self.config.latent_size();
        let lc = self.config.latent_channels();
        let mut d_latent = Tensor::zeros(&[n, f, ls, ls, lc]);

        let mut fwd_w = Tensor::zeros(self.forward_lstm.gates.weight.shape());
        let mut fwd_b = Tensor::zeros(self.forward_lstm.gates.bias.shape());
        let mut grad = ConvLstmState { h: dh_f, c: dc_f };
        for j in (0..k).rev() {
            let sg = self.forward_lstm.step_backward(&trace.forward_steps[j], &grad)?;
            add_to_frame(&mut d_latent, j, &sg.input);
            fwd_w.add_assign(&sg.weight)?;
            fwd_b.add_assign(&sg.bias)?;
            grad = sg.state;
        }

        let mut bwd_w = Tensor::zeros(self.backward_lstm.gates.weight.shape());
        let mut bwd_b = Tensor::zeros(self.backward_lstm.gates.bias.shape());
        let mut grad = ConvLstmState { h: dh_b, c: dc_b };
        // step s consumed frame f-1-s
        for s in (0..k).rev() {
            let sg = self.backward_lstm.step_backward(&trace.backward_steps[s], &grad)?;
            add_to_frame(&mut d_latent, f - 1 - s, &sg.input);
            bwd_w.add_assign(&sg.weight)?;
            bwd_b.add_assign(&sg.bias)?;
            grad = sg.state;
        }

        // encoder
        let mut g = d_latent.reshape(trace.encoded[3].shape())?;
        let mut enc_w = Vec::with_capacity(4);
        let size = self.config.input_size;
        let raw = trace.frames.clone().reshape(&[n * f, size, size, 1])?;
        for i in (0..4).rev() {
            let g_pre = elu_backward(&trace.encoded[i], &g, false);
            let input = if i == 0 { &raw } else { &trace.encoded[i - 1] };
            let lg = self.encoder[i].backward(input, &g_pre)?;
            enc_w.push((lg.weight, lg.bias));
            g = lg.input;
        }
        enc_w.reverse();

        let mut grads = Vec::with_capacity(self.params().len());
        for (w, b) in enc_w {
            grads.push(w);
            grads.push(b);
        }
        grads.extend([fwd_w, fwd_b, bwd_w, bwd_b, comb.weight, comb.bias]);
        for (w, b) in dec_w {
            grads.push(w);
            grads.push(b);
        }
        Ok(grads)
    }
}

impl<T: Scalar> Parameterized<T> for Generator<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, c) in self.encoder.iter().enumerate() {
            out.push((format!("conv{}.weight", i + 1), &c.weight));
            out.push((format!("conv{}.bias", i + 1), &c.bias));
        }
        for (name, cell) in [
            ("forward_lstm", &self.forward_lstm),
            ("backward_lstm", &self.backward_lstm),
            ("combined_lstm", &self.combined_lstm),
        ] {
            out.push((format!("{name}.weight"), &cell.gates.weight));
            out.push((format!("{name}.bias"), &cell.gates.bias));
        }
        for (i, c) in self.decoder.iter().enumerate() {
            out.push((format!("deconv{}.weight", i + 1), &c.weight));
            out.push((format!("deconv{}.bias", i + 1), &c.bias));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for c in self.encoder.iter_mut() {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        for cell in [
            &mut self.forward_lstm,
            &mut self.backward_lstm,
            &mut self.combined_lstm,
        ] {
            out.push(&mut cell.gates.weight);
            out.push(&mut cell.gates.bias);
        }
        for c in self.decoder.iter_mut() {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out
    }
}
