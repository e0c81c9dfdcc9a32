//! Two-phase training: pixel-loss pretraining of the generator, then
//! alternating discriminator / generator updates.

use std::fs::{File, OpenOptions};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::clip::{window_centers, Clip};
use crate::error::{Result, StanError};
use crate::models::{
    accumulate_grads, assemble_fake_sequence, center_slot, Discriminator, Generator, GeneratorTrace, Parameterized,
};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::training::losses::{
    fake_objective, generator_loss, pixel_objective, realism_objective,
};
use crate::training::optim::Adam;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub lambda: f64,
    /// Upper bound on pretraining steps.
    pub pretrain_steps: usize,
    /// Held-out evaluations between plateau checks.
    pub pretrain_eval_every: usize,
    pub pretrain_patience: usize,
    pub holdout_size: usize,
    pub adversarial_steps: usize,
    pub betas: (f64, f64),
    pub seed: u64,
    /// Checkpoint period in adversarial steps; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-4,
            batch_size: 3,
            lambda: 1.0,
            pretrain_steps: 2000,
            pretrain_eval_every: 50,
            pretrain_patience: 5,
            holdout_size: 12,
            adversarial_steps: 2000,
            betas: (0.9, 0.999),
            seed: 7,
            checkpoint_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(StanError::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(StanError::Config(format!(
                "learning rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.holdout_size == 0 || self.pretrain_eval_every == 0 {
            return Err(StanError::Config(
                "batch size, holdout size and evaluation period must be positive".into(),
            ));
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(StanError::Config(format!("moment decays {:?} outside [0, 1)", self.betas)));
        }
        Ok(())
    }
}

/// Batch-summed losses of one adversarial step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: usize,
    pub l_real: f64,
    pub l_pixel: f64,
    #[serde(rename = "L_G")]
    pub l_g: f64,
    #[serde(rename = "L_D")]
    pub l_d: f64,
}

impl LossReport {
    fn check(&self) -> Result<()> {
        for (what, v) in [
            ("l_real", self.l_real),
            ("l_pixel", self.l_pixel),
            ("L_G", self.l_g),
            ("L_D", self.l_d),
        ] {
            if !v.is_finite() {
                return Err(StanError::Divergence {
                    step: self.step,
                    what: format!("{what} = {v}"),
                });
            }
        }
        Ok(())
    }
}

/// Append-only `step,l_real,l_pixel,L_G,L_D` log.
pub struct LossLog {
    writer: csv::Writer<File>,
}

impl LossLog {
    pub fn create(path: &Path) -> Result<Self> {
        let fresh = !path.exists() || std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| StanError::io(path, e))?;
        let writer = csv::WriterBuilder::new().has_headers(fresh).from_writer(f);
        Ok(LossLog { writer })
    }

    pub fn append(&mut self, r: &LossReport) -> Result<()> {
        self.writer.serialize(r)?;
        self.writer
            .flush()
            .map_err(|e| StanError::Io {
                path: "loss log".into(),
                source: e,
            })
    }
}

/// One training batch: `(n, 2k, H, W, 1)` windows, `(n, H, W, 1)` centers and
/// `(n, 2k+1, H, W, 1)` real sequences.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub windows: Tensor<T>,
    pub centers: Tensor<T>,
    pub sequences: Tensor<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn len(&self) -> usize {
        self.windows.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_indices(clips: &[Clip<T>], picks: &[(usize, usize)], k: usize) -> Result<Self> {
        let mut w = Vec::with_capacity(picks.len());
        let mut c = Vec::with_capacity(picks.len());
        let mut s = Vec::with_capacity(picks.len());
        for &(ci, t) in picks {
            let clip = &clips[ci];
            w.push(clip.window(t, k)?);
            c.push(clip.frame(t));
            s.push(clip.sequence(t, k)?);
        }
        Ok(Batch {
            windows: Tensor::stack(&w.iter().collect::<Vec<_>>())?,
            centers: Tensor::stack(&c.iter().collect::<Vec<_>>())?,
            sequences: Tensor::stack(&s.iter().collect::<Vec<_>>())?,
        })
    }
}

/// Uniform sampler over every full window of every clip.
pub struct WindowSampler {
    index: Vec<(usize, usize)>,
    k: usize,
}

impl WindowSampler {
    pub fn new<T: Scalar>(clips: &[Clip<T>], k: usize) -> Result<Self> {
        let index: Vec<_> = clips
            .iter()
            .enumerate()
            .flat_map(|(ci, c)| window_centers(c.len(), k).map(move |t| (ci, t)))
            .collect();
        if index.is_empty() {
            return Err(StanError::Input(format!(
                "no clip has the {} frames a window needs",
                2 * k + 1
            )));
        }
        Ok(WindowSampler { index, k })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn sample<T: Scalar, R: Rng>(&self, clips: &[Clip<T>], n: usize, rng: &mut R) -> Result<Batch<T>> {
        let picks: Vec<_> = (0..n)
            .map(|_| self.index[rng.gen_range(0..self.index.len())])
            .collect();
        Batch::from_indices(clips, &picks, self.k)
    }
}

/// Summed pixel loss of `g` on `batch`.
pub fn batch_pixel_loss<T: Scalar>(g: &Generator<T>, batch: &Batch<T>) -> Result<f64> {
    let out = g.forward(&batch.windows)?;
    Ok(pixel_objective(&out, &batch.centers)?.total().as_f64())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub steps: usize,
    /// Batch-summed pixel loss per step.
    pub train: Vec<f64>,
    /// `(step, held-out pixel loss)` at each evaluation, including step 0.
    pub holdout: Vec<(usize, f64)>,
    pub stopped_on_plateau: bool,
}

impl PretrainReport {
    /// Lowest held-out loss seen.
    pub fn floor(&self) -> f64 {
        self.holdout.iter().map(|h| h.1).fold(f64::INFINITY, f64::min)
    }
}

/// Minimize the pixel loss alone until the held-out loss stops improving for
/// `pretrain_patience` evaluations or `pretrain_steps` is reached.
pub fn pretrain_generator<T: Scalar>(
    g: &mut Generator<T>,
    clips: &[Clip<T>],
    cfg: &TrainConfig,
) -> Result<PretrainReport> {
    cfg.validate()?;
    let k = g.config().half_window;
    let sampler = WindowSampler::new(clips, k)?;
    let holdout = sampler.sample(clips, cfg.holdout_size, &mut stream_rng(cfg.seed, Stream::Misc, 0))?;
    let mut rng = stream_rng(cfg.seed, Stream::Pretrain, 0);
    let mut opt = Adam::new(cfg.learning_rate, cfg.betas);
    let mut report = PretrainReport::default();
    let mut best = batch_pixel_loss(g, &holdout)?;
    report.holdout.push((0, best));
    let mut stale = 0;
    for step in 1..=cfg.pretrain_steps {
        let batch = sampler.sample(clips, cfg.batch_size, &mut rng)?;
        let trace = g.forward_trace(&batch.windows)?;
        let obj = pixel_objective(trace.output(), &batch.centers)?;
        let loss = obj.total().as_f64();
        if !loss.is_finite() {
            return Err(StanError::Divergence {
                step,
                what: format!("pretrain l_pixel = {loss}"),
            });
        }
        let grads = g.backward(&trace, &obj.grad)?;
        opt.step(g.params_mut(), &grads)?;
        report.train.push(loss);
        report.steps = step;
        if step % cfg.pretrain_eval_every == 0 {
            let h = batch_pixel_loss(g, &holdout)?;
            report.holdout.push((step, h));
            log::debug!("pretrain step {step}: train {loss:.4} holdout {h:.4}");
            if h < best {
                best = h;
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.pretrain_patience {
                    report.stopped_on_plateau = true;
                    break;
                }
            }
        }
    }
    Ok(report)
}

/// Optimizer state and sampling stream of the adversarial phase.
pub struct AdversarialTrainer<T> {
    pub config: TrainConfig,
    g_opt: Adam<T>,
    d_opt: Adam<T>,
    sampler: WindowSampler,
    rng: crate::rng::StanRng,
    step: usize,
}

impl<T: Scalar> AdversarialTrainer<T> {
    pub fn new(clips: &[Clip<T>], half_window: usize, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(AdversarialTrainer {
            g_opt: Adam::new(config.learning_rate, config.betas),
            d_opt: Adam::new(config.learning_rate, config.betas),
            sampler: WindowSampler::new(clips, half_window)?,
            rng: stream_rng(config.seed, Stream::Adversarial, 0),
            step: 0,
            config,
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// One discriminator update followed by one generator update on a freshly sampled batch.
    pub fn step(
        &mut self,
        g: &mut Generator<T>,
        d: &mut Discriminator<T>,
        clips: &[Clip<T>],
    ) -> Result<LossReport> {
        let batch = self.sampler.sample(clips, self.config.batch_size, &mut self.rng)?;
        self.step += 1;
        adversarial_step(
            g,
            d,
            &batch,
            self.config.lambda,
            (&mut self.g_opt, &mut self.d_opt),
            self.step,
        )
    }
}

/// Gradient of `L_D` w.r.t. the discriminator, with the fake sequences fixed.
pub fn discriminator_grads<T: Scalar>(
    d: &Discriminator<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
) -> Result<(T, Vec<Tensor<T>>)> {
    let rt = d.forward_trace(real)?;
    let ft = d.forward_trace(fake)?;
    let ro = realism_objective(rt.output());
    let fo = fake_objective(ft.output());
    let mut grads = d.backward(&rt, &ro.grad, false)?.params;
    accumulate_grads(&mut grads, &d.backward(&ft, &fo.grad, false)?.params)?;
    Ok((ro.total() + fo.total(), grads))
}

/// `L_G` per sample and its gradient w.r.t. the generator, back through `d`.
pub fn generator_grads<T: Scalar>(
    g: &Generator<T>,
    d: &Discriminator<T>,
    batch: &Batch<T>,
    lambda: T,
) -> Result<(Vec<T>, Vec<T>, Vec<Tensor<T>>)> {
    let gt = g.forward_trace(&batch.windows)?;
    let fake = assemble_fake_sequence(&batch.windows, gt.output())?;
    generator_grads_from(g, d, &gt, &fake, &batch.centers, lambda)
}

fn generator_grads_from<T: Scalar>(
    g: &Generator<T>,
    d: &Discriminator<T>,
    gt: &GeneratorTrace<T>,
    fake: &Tensor<T>,
    centers: &Tensor<T>,
    lambda: T,
) -> Result<(Vec<T>, Vec<T>, Vec<Tensor<T>>)> {
    let ft = d.forward_trace(fake)?;
    let ro = realism_objective(ft.output());
    let through_d = d.backward(&ft, &ro.grad, false)?.input;
    let mut grad_out = center_slot(&through_d);
    let po = pixel_objective(gt.output(), centers)?;
    let mut pg = po.grad;
    pg.scale(lambda);
    grad_out.add_assign(&pg.reshape(grad_out.shape())?)?;
    let grads = g.backward(gt, &grad_out)?;
    Ok((ro.per_sample, po.per_sample, grads))
}

fn adversarial_step<T: Scalar>(
    g: &mut Generator<T>,
    d: &mut Discriminator<T>,
    batch: &Batch<T>,
    lambda: f64,
    (g_opt, d_opt): (&mut Adam<T>, &mut Adam<T>),
    step: usize,
) -> Result<LossReport> {
    let gt = g.forward_trace(&batch.windows)?;
    let fake = assemble_fake_sequence(&batch.windows, gt.output())?;
    let (l_d, d_grads) = discriminator_grads(d, &batch.sequences, &fake)?;
    if !l_d.as_f64().is_finite() {
        return Err(StanError::Divergence {
            step,
            what: format!("L_D = {l_d}"),
        });
    }
    d_opt.step(d.params_mut(), &d_grads)?;

    let lambda_t = T::lit(lambda);
    let (l_real, l_pixel, g_grads) =
        generator_grads_from(g, d, &gt, &fake, &batch.centers, lambda_t)?;
    let l_g = generator_loss(&l_real, &l_pixel, lambda_t)?;
    let report = LossReport {
        step,
        l_real: l_real.iter().map(|v| v.as_f64()).sum(),
        l_pixel: l_pixel.iter().map(|v| v.as_f64()).sum(),
        l_g: l_g.as_f64(),
        l_d: l_d.as_f64(),
    };
    report.check()?;
    g_opt.step(g.params_mut(), &g_grads)?;
    Ok(report)
}

/// Run `adversarial_steps` alternating updates. `on_step` sees every report
/// together with the updated networks (for logging and checkpoints).
pub fn adversarial_train<T, F>(
    g: &mut Generator<T>,
    d: &mut Discriminator<T>,
    clips: &[Clip<T>],
    cfg: &TrainConfig,
    mut on_step: F,
) -> Result<Vec<LossReport>>
where
    T: Scalar,
    F: FnMut(&LossReport, &Generator<T>, &Discriminator<T>) -> Result<()>,
{
    let mut trainer = AdversarialTrainer::new(clips, g.config().half_window, cfg.clone())?;
    let mut reports = Vec::with_capacity(cfg.adversarial_steps);
    for _ in 0..cfg.adversarial_steps {
        let r = trainer.step(g, d, clips)?;
        on_step(&r, g, d)?;
        reports.push(r);
    }
    Ok(reports)
}
