//! Generator and discriminator objectives.
//!
//! The discriminator emits a grid of patch probabilities, so each `log D`
//! term is the mean of per-patch log terms. Probabilities are clamped to
//! `[1e-6, 1 - 1e-6]` before any logarithm.

use crate::error::{shape_err, Result, StanError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const PROB_EPS: f64 = 1e-6;

#[inline]
fn clamp_prob<T: Scalar>(p: T) -> (T, bool) {
    let lo = T::lit(PROB_EPS);
    let hi = T::one() - lo;
    if p < lo {
        (lo, false)
    } else if p > hi {
        (hi, false)
    } else {
        (p, true)
    }
}

/// Mean over patches of `-log p`.
pub fn neg_log_mean<T: Scalar>(patches: &[T]) -> T {
    let s: T = patches.iter().map(|&p| -clamp_prob(p).0.ln()).sum();
    s / T::lit(patches.len() as f64)
}

/// Mean over patches of `-log(1 - p)`.
pub fn neg_log1m_mean<T: Scalar>(patches: &[T]) -> T {
    let s: T = patches
        .iter()
        .map(|&p| -(T::one() - clamp_prob(p).0).ln())
        .sum();
    s / T::lit(patches.len() as f64)
}

/// Mean over patches of `log p`; the discriminator term of the abnormality loss.
pub fn log_mean<T: Scalar>(patches: &[T]) -> T {
    -neg_log_mean(patches)
}

fn neg_log_mean_grad<T: Scalar>(patches: &[T], out: &mut [T]) {
    let inv = T::one() / T::lit(patches.len() as f64);
    for (g, &p) in out.iter_mut().zip(patches) {
        let (q, live) = clamp_prob(p);
        *g = if live { -inv / q } else { T::zero() };
    }
}

fn neg_log1m_mean_grad<T: Scalar>(patches: &[T], out: &mut [T]) {
    let inv = T::one() / T::lit(patches.len() as f64);
    for (g, &p) in out.iter_mut().zip(patches) {
        let (q, live) = clamp_prob(p);
        *g = if live { inv / (T::one() - q) } else { T::zero() };
    }
}

/// Realism loss of one patch map: mean of `-log D(Ŝ)` over patches.
pub fn realism_loss<T: Scalar>(patch_map: &Tensor<T>) -> T {
    neg_log_mean(patch_map.data())
}

/// Euclidean norm of the difference.
pub fn pixel_loss<T: Scalar>(generated: &Tensor<T>, real: &Tensor<T>) -> Result<T> {
    if generated.len() != real.len() {
        return Err(shape_err!(
            "pixel loss on {:?} vs {:?}",
            generated.shape(),
            real.shape()
        ));
    }
    Ok(squared_distance(generated.data(), real.data()).sqrt())
}

fn squared_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum()
}

/// `Σ_t ℓ_real(t) + λ·ℓ_pixel(t)`.
pub fn generator_loss<T: Scalar>(realism: &[T], pixel: &[T], lambda: T) -> Result<T> {
    if realism.is_empty() {
        return Err(StanError::Input("generator loss over an empty batch".into()));
    }
    if realism.len() != pixel.len() {
        return Err(shape_err!(
            "{} realism terms vs {} pixel terms",
            realism.len(),
            pixel.len()
        ));
    }
    Ok(realism
        .iter()
        .zip(pixel)
        .map(|(&r, &p)| r + lambda * p)
        .sum())
}

/// `Σ_t mean(-log(1 - D(Ŝ_t))) + mean(-log D(S_t))`.
pub fn discriminator_loss<T: Scalar>(real_maps: &[Tensor<T>], fake_maps: &[Tensor<T>]) -> Result<T> {
    if real_maps.len() != fake_maps.len() {
        return Err(shape_err!(
            "{} real maps vs {} fake maps",
            real_maps.len(),
            fake_maps.len()
        ));
    }
    Ok(real_maps
        .iter()
        .zip(fake_maps)
        .map(|(r, f)| neg_log1m_mean(f.data()) + neg_log_mean(r.data()))
        .sum())
}

/// Value and gradient of a loss on a batched `(n, ...)` tensor.
pub struct Objective<T> {
    pub per_sample: Vec<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Objective<T> {
    pub fn total(&self) -> T {
        self.per_sample.iter().copied().sum()
    }
}

fn per_sample_len<T: Scalar>(t: &Tensor<T>) -> usize {
    t.len() / t.shape()[0]
}

/// Per-sample realism loss of a batch of patch maps and its gradient.
pub fn realism_objective<T: Scalar>(maps: &Tensor<T>) -> Objective<T> {
    let m = per_sample_len(maps);
    let mut grad = Tensor::zeros(maps.shape());
    let per_sample = maps
        .data()
        .chunks_exact(m)
        .zip(grad.data_mut().chunks_exact_mut(m))
        .map(|(p, g)| {
            neg_log_mean_grad(p, g);
            neg_log_mean(p)
        })
        .collect();
    Objective { per_sample, grad }
}

/// Per-sample `mean(-log(1 - p))` of a batch of patch maps and its gradient.
pub fn fake_objective<T: Scalar>(maps: &Tensor<T>) -> Objective<T> {
    let m = per_sample_len(maps);
    let mut grad = Tensor::zeros(maps.shape());
    let per_sample = maps
        .data()
        .chunks_exact(m)
        .zip(grad.data_mut().chunks_exact_mut(m))
        .map(|(p, g)| {
            neg_log1m_mean_grad(p, g);
            neg_log1m_mean(p)
        })
        .collect();
    Objective { per_sample, grad }
}

/// Per-sample pixel loss of a batch of frames and its gradient w.r.t. `generated`.
pub fn pixel_objective<T: Scalar>(generated: &Tensor<T>, real: &Tensor<T>) -> Result<Objective<T>> {
    if generated.len() != real.len() {
        return Err(shape_err!(
            "pixel loss on {:?} vs {:?}",
            generated.shape(),
            real.shape()
        ));
    }
    let m = per_sample_len(generated);
    let mut grad = Tensor::zeros(generated.shape());
    let per_sample = generated
        .data()
        .chunks_exact(m)
        .zip(real.data().chunks_exact(m))
        .zip(grad.data_mut().chunks_exact_mut(m))
        .map(|((a, b), g)| {
            let norm = squared_distance(a, b).sqrt();
            if norm > T::zero() {
                for ((gi, &x), &y) in g.iter_mut().zip(a).zip(b) {
                    *gi = (x - y) / norm;
                }
            }
            norm
        })
        .collect();
    Ok(Objective { per_sample, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn map(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn realism_loss_examples() {
        assert!((realism_loss(&map(&[0.5; 49])) - LN_2).abs() < 1e-12);
        assert!(realism_loss(&map(&[1.0; 4])) < 1e-5);
        let oracle = (-(0.25f64).ln() - (0.75f64).ln()) / 2.0;
        assert!((realism_loss(&map(&[0.25, 0.75])) - oracle).abs() < 1e-12);
        assert!((oracle - 0.8370).abs() < 1e-4);
    }

    #[test]
    fn clamping_keeps_losses_finite() {
        assert!(realism_loss(&map(&[0.0, 1.0])).is_finite());
        assert!(neg_log1m_mean(&[1.0f32, 0.0]).is_finite());
        let o = realism_objective(&Tensor::<f64>::from_vec(&[1, 2], vec![0.0, 0.5]).unwrap());
        assert_eq!(o.grad.data()[0], 0.0);
        assert!((o.grad.data()[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pixel_loss_examples() {
        let a = Tensor::<f64>::from_fn(&[4, 4, 1], |i| i as f64 * 0.1);
        assert_eq!(pixel_loss(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b.data_mut()[5] -= 0.3;
        assert!((pixel_loss(&a, &b).unwrap() - 0.3).abs() < 1e-12);
        let c = Tensor::<f64>::zeros(&[3, 3]);
        assert!(pixel_loss(&a, &c).is_err());
    }

    #[test]
    fn generator_loss_examples() {
        let l = generator_loss(&[0.6931], &[0.5], 1.0).unwrap();
        assert!((l - 1.1931f64).abs() < 1e-12);
        assert_eq!(generator_loss(&[0.0f64], &[0.0], 1.0).unwrap(), 0.0);
        assert_eq!(generator_loss(&[0.2f64, 0.3], &[5.0, 7.0], 0.0).unwrap(), 0.5);
        assert!(generator_loss::<f64>(&[], &[], 1.0).is_err());
    }

    #[test]
    fn discriminator_loss_examples() {
        let ones = map(&[1.0; 4]);
        let zeros = map(&[0.0; 4]);
        assert!(discriminator_loss(&[ones], &[zeros]).unwrap() < 1e-5);
        let half = map(&[0.5; 4]);
        let l = discriminator_loss(&[half.clone()], &[half]).unwrap();
        assert!((l - 2.0 * LN_2).abs() < 1e-12);
        assert!(discriminator_loss::<f64>(&[map(&[0.5])], &[]).is_err());
    }
}
