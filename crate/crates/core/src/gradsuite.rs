//! Finite-difference gradient suite in 64-bit precision: every layer, the
//! ConvLSTM cell, and both training objectives at a 16x16 scale.

use rand::Rng;
use serde::Serialize;

use crate::error::Result;
use crate::models::{
    assemble_fake_sequence, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig,
    Parameterized,
};
use crate::nn::activation::{elu_backward, elu_forward};
use crate::nn::{grad_check_report, Conv2d, Conv3d, ConvLstmCell, ConvLstmState, ConvTranspose2d};
use crate::rng::{stream_rng, StanRng, Stream};
use crate::tensor::Tensor;
use crate::training::losses::{discriminator_loss, pixel_objective, realism_objective};
use crate::training::trainer::{discriminator_grads, generator_grads, Batch};

pub const TOLERANCE: f64 = 1e-4;
const EPS: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct SuiteEntry {
    pub name: String,
    /// Norm-wise relative error of the whole gradient; the pass criterion.
    pub relative_error: f64,
    /// Largest per-coordinate relative error, dominated by near-zero entries.
    pub max_coordinate_error: f64,
    /// Analytic and numeric derivative at that coordinate.
    pub worst: (f64, f64),
    pub checked: usize,
    pub passed: bool,
}

fn random(shape: &[usize], r: &mut StanRng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).expect("shape")
}

fn projection(len: usize, r: &mut StanRng) -> Vec<f64> {
    (0..len).map(|_| r.gen_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn entry(
    name: &str,
    f: impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    theta: &[f64],
) -> Result<SuiteEntry> {
    let r = grad_check_report(f, theta, EPS, None)?;
    Ok(SuiteEntry {
        name: name.to_string(),
        relative_error: r.norm_relative_error,
        max_coordinate_error: r.max_relative_error,
        worst: (r.analytic, r.numeric),
        checked: r.checked,
        passed: r.norm_relative_error < TOLERANCE,
    })
}

/// Layers whose forward is `(input, weight, bias) -> output` with a matching backward.
trait Layer: Clone {
    fn weight(&mut self) -> &mut Tensor<f64>;
    fn bias(&mut self) -> &mut Tensor<f64>;
    fn fwd(&self, x: &Tensor<f64>) -> Result<Tensor<f64>>;
    fn bwd(&self, x: &Tensor<f64>, g: &Tensor<f64>) -> Result<crate::nn::LayerGrads<f64>>;
}

macro_rules! impl_layer {
    ($t:ty) => {
        impl Layer for $t {
            fn weight(&mut self) -> &mut Tensor<f64> {
                &mut self.weight
            }
            fn bias(&mut self) -> &mut Tensor<f64> {
                &mut self.bias
            }
            fn fwd(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
                self.forward(x)
            }
            fn bwd(&self, x: &Tensor<f64>, g: &Tensor<f64>) -> Result<crate::nn::LayerGrads<f64>> {
                self.backward(x, g)
            }
        }
    };
}
impl_layer!(Conv2d<f64>);
impl_layer!(ConvTranspose2d<f64>);
impl_layer!(Conv3d<f64>);

/// Input, weight and bias gradients of a projected layer output.
fn layer_entry<L: Layer>(name: &str, layer: L, in_shape: &[usize], r: &mut StanRng) -> Result<SuiteEntry> {
    let mut layer = layer;
    let x0 = random(in_shape, r);
    let p = projection(layer.fwd(&x0)?.len(), r);
    let (ni, nw) = (x0.len(), layer.weight().len());
    let nb = layer.bias().len();
    let mut theta = x0.data().to_vec();
    theta.extend(layer.weight().data());
    theta.extend((0..nb).map(|_| r.gen_range(-0.5..0.5)));
    let f = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut l = layer.clone();
        let x = Tensor::from_vec(x0.shape(), theta[..ni].to_vec())?;
        l.weight().data_mut().copy_from_slice(&theta[ni..ni + nw]);
        l.bias().data_mut().copy_from_slice(&theta[ni + nw..]);
        let y = l.fwd(&x)?;
        let lg = l.bwd(&x, &Tensor::from_vec(y.shape(), p.clone())?)?;
        let mut g = lg.input.into_data();
        g.extend(lg.weight.into_data());
        g.extend(lg.bias.into_data());
        Ok((dot(y.data(), &p), g))
    };
    entry(name, f, &theta)
}

fn conv_elu_entry(r: &mut StanRng) -> Result<SuiteEntry> {
    let x = random(&[6, 6, 2], r);
    let l1 = Conv2d::<f64>::glorot([3, 3], 2, 3, [2, 2], r)?;
    let l2 = Conv2d::<f64>::glorot([3, 3], 3, 2, [1, 1], r)?;
    let p = projection(18, r);
    let f = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (mut a, mut b) = (l1.clone(), l2.clone());
        let (w1, rest) = theta.split_at(l1.weight.len());
        let (b1, rest) = rest.split_at(l1.bias.len());
        let (w2, b2) = rest.split_at(l2.weight.len());
        a.weight.data_mut().copy_from_slice(w1);
        a.bias.data_mut().copy_from_slice(b1);
        b.weight.data_mut().copy_from_slice(w2);
        b.bias.data_mut().copy_from_slice(b2);
        let h1 = elu_forward(&a.forward(&x)?);
        let h2 = elu_forward(&b.forward(&h1)?);
        let g2 = elu_backward(&h2, &Tensor::from_vec(h2.shape(), p.clone())?, false);
        let lg2 = b.backward(&h1, &g2)?;
        let lg1 = a.backward(&x, &elu_backward(&h1, &lg2.input, false))?;
        let mut g = lg1.weight.into_data();
        g.extend(lg1.bias.into_data());
        g.extend(lg2.weight.into_data());
        g.extend(lg2.bias.into_data());
        Ok((dot(h2.data(), &p), g))
    };
    let mut theta = l1.weight.data().to_vec();
    theta.extend((0..l1.bias.len()).map(|_| r.gen_range(-0.5..0.5)));
    theta.extend(l2.weight.data());
    theta.extend((0..l2.bias.len()).map(|_| r.gen_range(-0.5..0.5)));
    entry("conv2d + elu stack", f, &theta)
}

fn convlstm_entry(r: &mut StanRng) -> Result<SuiteEntry> {
    let cell = ConvLstmCell::<f64>::glorot(2, 3, r)?;
    let x0 = random(&[4, 4, 2], r);
    let h0 = random(&[4, 4, 3], r).map(|v| 0.5 * v);
    let c0 = random(&[4, 4, 3], r);
    let ph = projection(48, r);
    let pc = projection(48, r);
    let (nw, nb) = (cell.gates.weight.len(), cell.gates.bias.len());
    let f = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut c = cell.clone();
        c.gates.weight.data_mut().copy_from_slice(&theta[..nw]);
        c.gates.bias.data_mut().copy_from_slice(&theta[nw..nw + nb]);
        let rest = &theta[nw + nb..];
        let x = Tensor::from_vec(&[4, 4, 2], rest[..32].to_vec())?;
        let s = ConvLstmState {
            h: Tensor::from_vec(&[4, 4, 3], rest[32..80].to_vec())?,
            c: Tensor::from_vec(&[4, 4, 3], rest[80..].to_vec())?,
        };
        let (out, cache) = c.step(&x, &s)?;
        let value = dot(out.h.data(), &ph) + dot(out.c.data(), &pc);
        let upstream = ConvLstmState {
            h: Tensor::from_vec(&[4, 4, 3], ph.clone())?,
            c: Tensor::from_vec(&[4, 4, 3], pc.clone())?,
        };
        let grads = c.step_backward(&cache, &upstream)?;
        let mut g = grads.weight.into_data();
        g.extend(grads.bias.into_data());
        g.extend(grads.input.into_data());
        g.extend(grads.state.h.into_data());
        g.extend(grads.state.c.into_data());
        Ok((value, g))
    };
    let mut theta = cell.gates.weight.data().to_vec();
    theta.extend(cell.gates.bias.data());
    theta.extend(x0.data());
    theta.extend(h0.data());
    theta.extend(c0.data());
    entry("convlstm step", f, &theta)
}

/// Small networks and a batch of smooth random windows at 16x16.
pub fn desk16(seed: u64) -> Result<(Generator<f64>, Discriminator<f64>, Batch<f64>)> {
    let g = Generator::new(
        GeneratorConfig::scaled(16, 1),
        &mut stream_rng(seed, Stream::GeneratorInit, 16),
    )?;
    let d = Discriminator::new(
        DiscriminatorConfig::scaled(16, 1),
        &mut stream_rng(seed, Stream::DiscriminatorInit, 16),
    )?;
    let mut r = stream_rng(seed, Stream::Misc, 16);
    let n = 2;
    let seqs = random(&[n, 11, 16, 16, 1], &mut r).map(|v| 0.8 * v);
    let mut windows = Vec::new();
    let mut centers = Vec::new();
    let frame = 16 * 16;
    for b in 0..n {
        let s = &seqs.data()[b * 11 * frame..(b + 1) * 11 * frame];
        windows.extend_from_slice(&s[..5 * frame]);
        windows.extend_from_slice(&s[6 * frame..]);
        centers.extend_from_slice(&s[5 * frame..6 * frame]);
    }
    let batch = Batch {
        windows: Tensor::from_vec(&[n, 10, 16, 16, 1], windows)?,
        centers: Tensor::from_vec(&[n, 16, 16, 1], centers)?,
        sequences: seqs,
    };
    Ok((g, d, batch))
}

/// `L_G` with respect to every generator parameter, through the discriminator.
pub fn generator_loss_entry(seed: u64, lambda: f64) -> Result<SuiteEntry> {
    let (g, d, batch) = desk16(seed)?;
    let f = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut g = g.clone();
        g.set_flat_params(theta)?;
        let (real, pixel, grads) = generator_grads(&g, &d, &batch, lambda)?;
        let value = crate::training::losses::generator_loss(&real, &pixel, lambda)?;
        Ok((value, crate::models::flatten_grads(&grads)))
    };
    entry("generator loss L_G (16x16)", f, &g.flat_params())
}

/// `L_D` with respect to every discriminator parameter, fake sequences fixed.
pub fn discriminator_loss_entry(seed: u64) -> Result<SuiteEntry> {
    let (g, d, batch) = desk16(seed)?;
    let fake = assemble_fake_sequence(&batch.windows, &g.forward(&batch.windows)?)?;
    let f = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut d = d.clone();
        d.set_flat_params(theta)?;
        let (value, grads) = discriminator_grads(&d, &batch.sequences, &fake)?;
        Ok((value, crate::models::flatten_grads(&grads)))
    };
    entry("discriminator loss L_D (16x16)", f, &d.flat_params())
}

/// Pixel loss of the generator alone, the pretraining objective.
pub fn pixel_loss_entry(seed: u64) -> Result<SuiteEntry> {
    let (g, _, batch) = desk16(seed)?;
    let f = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut g = g.clone();
        g.set_flat_params(theta)?;
        let trace = g.forward_trace(&batch.windows)?;
        let obj = pixel_objective(trace.output(), &batch.centers)?;
        let grads = g.backward(&trace, &obj.grad)?;
        Ok((obj.total(), crate::models::flatten_grads(&grads)))
    };
    entry("pixel loss (16x16)", f, &g.flat_params())
}

/// Realism and discriminator losses agree with their direct evaluation.
pub fn loss_consistency(seed: u64) -> Result<f64> {
    let (g, d, batch) = desk16(seed)?;
    let fake = assemble_fake_sequence(&batch.windows, &g.forward(&batch.windows)?)?;
    let real_maps = d.forward(&batch.sequences)?;
    let fake_maps = d.forward(&fake)?;
    let split = |m: &Tensor<f64>| -> Vec<Tensor<f64>> { (0..m.shape()[0]).map(|i| m.index_axis0(i)).collect() };
    let direct = discriminator_loss(&split(&real_maps), &split(&fake_maps))?;
    let (via_grads, _) = discriminator_grads(&d, &batch.sequences, &fake)?;
    let realism: f64 = realism_objective(&fake_maps).total();
    let realism_direct: f64 = split(&fake_maps)
        .iter()
        .map(crate::training::losses::realism_loss)
        .sum();
    Ok((direct - via_grads).abs().max((realism - realism_direct).abs()))
}

/// Run every check.
pub fn run(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut r = stream_rng(seed, Stream::Misc, 1);
    let conv = Conv2d::<f64>::glorot([3, 3], 2, 3, [2, 2], &mut r)?;
    let conv5 = Conv2d::<f64>::glorot([5, 5], 1, 2, [2, 2], &mut r)?;
    let deconv = ConvTranspose2d::<f64>::glorot([5, 5], 2, 2, [2, 2], &mut r)?;
    let deconv3 = ConvTranspose2d::<f64>::glorot([3, 3], 3, 2, [1, 1], &mut r)?;
    let c3 = Conv3d::<f64>::glorot([3, 3, 3], 2, 2, [1, 2, 2], &mut r)?;
    let c3_first = Conv3d::<f64>::glorot([5, 5, 5], 1, 2, [1, 2, 2], &mut r)?;
    let mut out = vec![
        layer_entry("conv2d 3x3 stride 2", conv, &[2, 6, 6, 2], &mut r)?,
        layer_entry("conv2d 5x5 stride 2", conv5, &[5, 5, 1], &mut r)?,
        layer_entry("deconv2d 5x5 stride 2", deconv, &[3, 3, 2], &mut r)?,
        layer_entry("deconv2d 3x3 stride 1", deconv3, &[4, 4, 3], &mut r)?,
        layer_entry("conv3d 3x3x3", c3, &[5, 6, 6, 2], &mut r)?,
        layer_entry("conv3d 5x5x5", c3_first, &[6, 5, 5, 1], &mut r)?,
        conv_elu_entry(&mut r)?,
        convlstm_entry(&mut r)?,
    ];
    out.push(pixel_loss_entry(seed)?);
    out.push(generator_loss_entry(seed, 1.0)?);
    out.push(discriminator_loss_entry(seed)?);
    Ok(out)
}
