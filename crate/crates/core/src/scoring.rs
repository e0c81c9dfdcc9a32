//! Per-frame abnormality loss and normalized score.
//!
//! For an interior frame `t` the loss is
//! `ℓ_s(t) = ‖G(window) − X_t‖₂ − λ_s · mean log D(S_t)`, where the second
//! term uses the real sequence. `λ_s` is calibrated per clip from the ratio of
//! the maxima of the two terms, and scores are min-max normalized.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::clip::{window_centers, Clip};
use crate::error::{Result, StanError};
use crate::models::{Discriminator, Generator};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::training::losses::{log_mean, pixel_objective};

/// Windows scored per forward pass.
const SCORE_CHUNK: usize = 8;

/// `pixel_term − λ_s · mean_log_d`.
pub fn abnormality_loss(pixel_term: f64, mean_log_d: f64, lambda_s: f64) -> f64 {
    pixel_term - lambda_s * mean_log_d
}

/// `(max pixel / max |disc|) / 10`; zero when every discriminator term is zero.
pub fn calibrate_lambda_s(pixel_terms: &[f64], disc_terms: &[f64]) -> Result<f64> {
    if pixel_terms.is_empty() || disc_terms.is_empty() {
        return Err(StanError::Input("λ_s calibration needs nonempty series".into()));
    }
    let max_pixel = pixel_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let max_disc = disc_terms.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if max_disc == 0.0 {
        log::warn!("discriminator terms are all zero; λ_s set to 0");
        return Ok(0.0);
    }
    Ok(max_pixel / max_disc / 10.0)
}

/// Min-max normalization to [0, 1]; a constant series maps to zeros.
pub fn normalize_scores(losses: &[f64]) -> Vec<f64> {
    normalize_with(losses, min_max(losses))
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

fn normalize_with(losses: &[f64], (lo, hi): (f64, f64)) -> Vec<f64> {
    let span = hi - lo;
    losses
        .iter()
        .map(|&l| if span > 0.0 { (l - lo) / span } else { 0.0 })
        .collect()
}

/// Which terms enter the loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detector {
    Combined,
    GeneratorOnly,
    DiscriminatorOnly,
}

impl Detector {
    pub const ALL: [Detector; 3] = [
        Detector::Combined,
        Detector::GeneratorOnly,
        Detector::DiscriminatorOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Detector::Combined => "combined",
            Detector::GeneratorOnly => "generator_only",
            Detector::DiscriminatorOnly => "discriminator_only",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormScope {
    #[default]
    Clip,
    Global,
}

/// Scores for one clip. Every vector has one entry per frame; frames
/// without a full window carry the values of the nearest scored frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub clip_id: String,
    /// `‖G(window) − X_t‖₂`.
    pub pixel_term: Vec<f64>,
    /// `−mean log D(S_t)`, which is nonnegative.
    pub disc_term: Vec<f64>,
    pub lambda_s: f64,
    pub loss: Vec<f64>,
    pub score: Vec<f64>,
    /// Inclusive range of frames with a full window.
    pub scored: (usize, usize),
}

impl ScoreSeries {
    /// Build from interior terms (`pixel[i]`, `disc[i]` for frame `first + i`).
    pub fn from_terms(
        clip_id: impl Into<String>,
        len: usize,
        first: usize,
        pixel: &[f64],
        disc: &[f64],
    ) -> Result<Self> {
        if pixel.len() != disc.len() || pixel.is_empty() || first + pixel.len() > len {
            return Err(StanError::Input(format!(
                "{} pixel / {} disc terms from frame {first} in a clip of {len}",
                pixel.len(),
                disc.len()
            )));
        }
        let lambda_s = calibrate_lambda_s(pixel, disc)?;
        let last = first + pixel.len() - 1;
        let spread = |v: &[f64]| -> Vec<f64> {
            (0..len)
                .map(|t| v[t.clamp(first, last) - first])
                .collect()
        };
        let pixel_term = spread(pixel);
        let disc_term = spread(disc);
        let mut s = ScoreSeries {
            clip_id: clip_id.into(),
            pixel_term,
            disc_term,
            lambda_s,
            loss: Vec::new(),
            score: Vec::new(),
            scored: (first, last),
        };
        s.loss = s.losses(Detector::Combined);
        s.score = normalize_scores(&s.loss);
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loss.is_empty()
    }

    /// Per-frame loss of `detector`. The generator-only loss is the combined
    /// loss at `λ_s = 0`; the discriminator-only loss is `−mean log D`.
    pub fn losses(&self, detector: Detector) -> Vec<f64> {
        match detector {
            Detector::Combined => self
                .pixel_term
                .iter()
                .zip(&self.disc_term)
                .map(|(&p, &d)| abnormality_loss(p, -d, self.lambda_s))
                .collect(),
            Detector::GeneratorOnly => self
                .pixel_term
                .iter()
                .map(|&p| abnormality_loss(p, 0.0, 0.0))
                .collect(),
            Detector::DiscriminatorOnly => self.disc_term.clone(),
        }
    }

    pub fn scores(&self, detector: Detector) -> Vec<f64> {
        normalize_scores(&self.losses(detector))
    }
}

/// Renormalize every series' `score` with one min/max over all clips.
pub fn normalize_global(series: &mut [ScoreSeries]) {
    let all: Vec<f64> = series.iter().flat_map(|s| s.loss.iter().copied()).collect();
    let range = min_max(&all);
    for s in series {
        s.score = normalize_with(&s.loss, range);
    }
}

/// Scores of `detector` for every series under `scope`.
pub fn detector_scores(series: &[ScoreSeries], detector: Detector, scope: NormScope) -> Vec<Vec<f64>> {
    match scope {
        NormScope::Clip => series.iter().map(|s| s.scores(detector)).collect(),
        NormScope::Global => {
            let losses: Vec<Vec<f64>> = series.iter().map(|s| s.losses(detector)).collect();
            let all: Vec<f64> = losses.iter().flatten().copied().collect();
            let range = min_max(&all);
            losses.iter().map(|l| normalize_with(l, range)).collect()
        }
    }
}

/// `(pixel_term, disc_term)` for every frame with a full window, in order.
pub fn frame_terms<T: Scalar>(
    clip: &Clip<T>,
    g: &Generator<T>,
    d: &Discriminator<T>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = g.config().half_window;
    let centers: Vec<usize> = window_centers(clip.len(), k).collect();
    if centers.is_empty() {
        return Err(StanError::Input(format!(
            "clip {} has {} frames; scoring needs at least {}",
            clip.id,
            clip.len(),
            2 * k + 1
        )));
    }
    let mut pixel = Vec::with_capacity(centers.len());
    let mut disc = Vec::with_capacity(centers.len());
    for chunk in centers.chunks(SCORE_CHUNK) {
        let windows: Vec<Tensor<T>> = chunk.iter().map(|&t| clip.window(t, k)).collect::<Result<_>>()?;
        let reals: Vec<Tensor<T>> = chunk.iter().map(|&t| clip.frame(t)).collect();
        let seqs: Vec<Tensor<T>> = chunk.iter().map(|&t| clip.sequence(t, k)).collect::<Result<_>>()?;
        let windows = Tensor::stack(&windows.iter().collect::<Vec<_>>())?;
        let reals = Tensor::stack(&reals.iter().collect::<Vec<_>>())?;
        let seqs = Tensor::stack(&seqs.iter().collect::<Vec<_>>())?;
        let generated = g.forward(&windows)?;
        pixel.extend(
            pixel_objective(&generated, &reals)?
                .per_sample
                .iter()
                .map(|v| v.as_f64()),
        );
        let maps = d.forward(&seqs)?;
        let per = maps.len() / chunk.len();
        disc.extend(maps.data().chunks_exact(per).map(|m| -log_mean(m).as_f64()));
    }
    Ok((pixel, disc))
}

/// Score every frame of `clip`.
pub fn score_clip<T: Scalar>(clip: &Clip<T>, g: &Generator<T>, d: &Discriminator<T>) -> Result<ScoreSeries> {
    let (pixel, disc) = frame_terms(clip, g, d)?;
    ScoreSeries::from_terms(clip.id.clone(), clip.len(), g.config().half_window, &pixel, &disc)
}

#[derive(Serialize)]
struct ScoreRow<'a> {
    clip_id: &'a str,
    frame_index: usize,
    score: f64,
    pixel_term: f64,
    disc_term: f64,
    lambda_s: f64,
}

/// `clip_id,frame_index,score,pixel_term,disc_term,lambda_s`.
pub fn write_scores(path: &Path, series: &[ScoreSeries]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| StanError::io(path, e))?;
    let mut w = csv::Writer::from_writer(f);
    for s in series {
        for t in 0..s.len() {
            w.serialize(ScoreRow {
                clip_id: &s.clip_id,
                frame_index: t,
                score: s.score[t],
                pixel_term: s.pixel_term[t],
                disc_term: s.disc_term[t],
                lambda_s: s.lambda_s,
            })?;
        }
    }
    w.flush().map_err(|e| StanError::io(path, e))
}

#[derive(Deserialize)]
struct ScoreRecord {
    clip_id: String,
    frame_index: usize,
    score: f64,
    pixel_term: f64,
    disc_term: f64,
    lambda_s: f64,
}

/// Read a scores CSV back, grouped by clip in file order. Scored ranges are
/// not stored, so `scored` spans the whole clip.
pub fn read_scores(path: &Path) -> Result<Vec<ScoreSeries>> {
    if !path.exists() {
        return Err(StanError::Missing(path.to_path_buf()));
    }
    let f = std::fs::File::open(path).map_err(|e| StanError::io(path, e))?;
    let mut out: Vec<ScoreSeries> = Vec::new();
    for r in csv::Reader::from_reader(f).deserialize() {
        let r: ScoreRecord = r?;
        if out.last().map(|s| s.clip_id != r.clip_id).unwrap_or(true) {
            out.push(ScoreSeries {
                clip_id: r.clip_id.clone(),
                pixel_term: Vec::new(),
                disc_term: Vec::new(),
                lambda_s: r.lambda_s,
                loss: Vec::new(),
                score: Vec::new(),
                scored: (0, 0),
            });
        }
        let s = out.last_mut().expect("pushed above");
        if r.frame_index != s.score.len() {
            return Err(StanError::Input(format!(
                "scores for {} are not in frame order at frame {}",
                r.clip_id, r.frame_index
            )));
        }
        s.pixel_term.push(r.pixel_term);
        s.disc_term.push(r.disc_term);
        s.loss.push(abnormality_loss(r.pixel_term, -r.disc_term, r.lambda_s));
        s.score.push(r.score);
        s.scored.1 = r.frame_index;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn abnormality_loss_examples() {
        assert_eq!(abnormality_loss(1.5, -3.0, 0.0), 1.5);
        assert_eq!(abnormality_loss(1.5, 0.0, 0.7), 1.5);
        let v = abnormality_loss(2.0, (0.5f64).ln(), 0.3);
        assert!((v - (2.0 + 0.3 * LN_2)).abs() < 1e-12);
        assert!((v - 2.2079).abs() < 1e-4);
    }

    #[test]
    fn lambda_s_examples() {
        assert_eq!(calibrate_lambda_s(&[1.0, 5.0], &[2.0, 0.5]).unwrap(), 0.25);
        assert!((calibrate_lambda_s(&[3.0], &[3.0]).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(calibrate_lambda_s(&[3.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert!(calibrate_lambda_s(&[], &[1.0]).is_err());
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_scores(&[1.0, 3.0, 2.0]), vec![0.0, 1.0, 0.5]);
        assert_eq!(normalize_scores(&[4.0; 3]), vec![0.0; 3]);
    }

    #[test]
    fn boundary_frames_take_nearest_interior_score() {
        let s = ScoreSeries::from_terms("c", 14, 5, &[1.0, 2.0, 3.0, 4.0], &[0.5, 0.5, 0.5, 0.5]).unwrap();
        assert_eq!(s.len(), 14);
        assert_eq!(s.scored, (5, 8));
        assert_eq!(&s.pixel_term[..6], &[1.0; 6]);
        assert_eq!(&s.pixel_term[8..], &[4.0; 6]);
        assert_eq!(s.score[0], 0.0);
        assert_eq!(s.score[13], 1.0);
    }

    #[test]
    fn single_interior_frame_broadcasts() {
        let s = ScoreSeries::from_terms("c", 11, 5, &[2.0], &[1.0]).unwrap();
        assert_eq!(s.loss, vec![s.loss[5]; 11]);
        assert_eq!(s.score, vec![0.0; 11]);
    }

    #[test]
    fn detectors_decompose_the_combined_loss() {
        let s = ScoreSeries::from_terms("c", 13, 5, &[1.0, 4.0, 2.0], &[0.2, 0.1, 0.9]).unwrap();
        let g = s.losses(Detector::GeneratorOnly);
        let d = s.losses(Detector::DiscriminatorOnly);
        for t in 0..13 {
            assert_eq!(s.loss[t], g[t] + s.lambda_s * d[t]);
        }
    }

    #[test]
    fn global_scope_uses_one_range() {
        let a = ScoreSeries::from_terms("a", 11, 5, &[1.0], &[1.0]).unwrap();
        let b = ScoreSeries::from_terms("b", 12, 5, &[2.0, 6.0], &[1.0, 1.0]).unwrap();
        let mut v = vec![a, b];
        normalize_global(&mut v);
        assert!(v[0].score.iter().all(|&x| x == 0.0));
        assert_eq!(v[1].score[11], 1.0);
        let per_clip = detector_scores(&v, Detector::Combined, NormScope::Global);
        assert_eq!(per_clip[1], v[1].score);
    }

    #[test]
    fn csv_round_trip() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("s.csv");
        let s = ScoreSeries::from_terms("a", 12, 5, &[1.0, 2.5], &[0.3, 0.7]).unwrap();
        write_scores(&p, std::slice::from_ref(&s)).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("clip_id,frame_index,score,pixel_term,disc_term,lambda_s\n"));
        let back = read_scores(&p).unwrap();
        assert_eq!(back[0].score, s.score);
        assert_eq!(back[0].pixel_term, s.pixel_term);
        assert_eq!(back[0].lambda_s, s.lambda_s);
    }
}
