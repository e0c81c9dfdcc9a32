//! Seeded synthetic surveillance-style video.
//!
//! A fixed static scene with bright disks drifting at constant velocity and
//! bouncing off the borders. Anomalies take over one object for a labeled
//! interval:
//!
//! * `fast_mover`: the object moves several times faster than any normal one;
//! * `reverse_direction`: the object flips its direction of travel every frame;
//! * `shape_change`: the object is drawn as a larger, brighter square.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::clip::{Clip, ClipSource};
use crate::error::{Result, StanError};
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    FastMover,
    ReverseDirection,
    ShapeChange,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 3] = [
        AnomalyKind::FastMover,
        AnomalyKind::ReverseDirection,
        AnomalyKind::ShapeChange,
    ];
}

/// Anomaly on object 0 of clip `clip`, frames `start..=end`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyEvent {
    pub clip: usize,
    pub kind: AnomalyKind,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub size: usize,
    pub clips: usize,
    pub frames: usize,
    pub blobs: usize,
    pub radius: f64,
    /// Normal speed range in pixels per frame.
    pub speed: (f64, f64),
    /// Amplitude of uniform per-pixel sensor noise.
    pub noise: f64,
    pub fast_factor: f64,
    pub anomalies: Vec<AnomalyEvent>,
    pub id_prefix: String,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 7,
            size: 64,
            clips: 1,
            frames: 200,
            blobs: 3,
            radius: 4.0,
            speed: (0.5, 1.5),
            noise: 0.01,
            fast_factor: 4.0,
            anomalies: Vec::new(),
            id_prefix: "clip".into(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.clips == 0 || self.frames == 0 {
            return Err(StanError::Config("synthetic corpus must be non-empty".into()));
        }
        if 2.0 * self.radius >= self.size as f64 || self.radius <= 0.0 {
            return Err(StanError::Config(format!(
                "blob radius {} does not fit a {}px image",
                self.radius, self.size
            )));
        }
        if self.speed.0 < 0.0 || self.speed.1 < self.speed.0 {
            return Err(StanError::Config(format!("bad speed range {:?}", self.speed)));
        }
        for a in &self.anomalies {
            if a.clip >= self.clips || a.start > a.end || a.end >= self.frames {
                return Err(StanError::Config(format!(
                    "anomaly {:?} outside {} clips x {} frames",
                    a, self.clips, self.frames
                )));
            }
            if self.blobs == 0 {
                return Err(StanError::Config("anomalies need at least one object".into()));
            }
        }
        Ok(())
    }
}

/// Static scene shared by every synthetic clip: dark ground, a lighter
/// walkway band and a soft vertical gradient.
pub fn background(size: usize) -> Vec<f32> {
    let s = size as f64;
    let mut bg = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let fy = (y as f64 + 0.5) / s;
            let fx = (x as f64 + 0.5) / s;
            let band = if (0.3..0.7).contains(&fy) { 0.25 } else { 0.0 };
            let v = -0.75 + band + 0.1 * fy + 0.05 * (6.0 * fx).sin();
            bg.push(v as f32);
        }
    }
    bg
}

#[derive(Clone, Copy, Debug)]
struct Blob {
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
}

fn bounce(p: &mut f64, v: &mut f64, lo: f64, hi: f64) {
    if *p < lo {
        *p = 2.0 * lo - *p;
        *v = -*v;
    }
    if *p > hi {
        *p = 2.0 * hi - *p;
        *v = -*v;
    }
    *p = p.clamp(lo, hi);
}

#[inline]
fn coverage(edge: f64) -> f64 {
    (edge + 0.5).clamp(0.0, 1.0)
}

fn paint_disk(frame: &mut [f32], size: usize, b: &Blob, r: f64, value: f64) {
    let (x0, x1) = ((b.x - r - 1.0).floor().max(0.0) as usize, ((b.x + r + 1.0).ceil() as usize).min(size));
    let (y0, y1) = ((b.y - r - 1.0).floor().max(0.0) as usize, ((b.y + r + 1.0).ceil() as usize).min(size));
    for y in y0..y1 {
        for x in x0..x1 {
            let d = ((x as f64 + 0.5 - b.x).powi(2) + (y as f64 + 0.5 - b.y).powi(2)).sqrt();
            let a = coverage(r - d);
            let p = &mut frame[y * size + x];
            *p = (*p as f64 * (1.0 - a) + value * a) as f32;
        }
    }
}

fn paint_square(frame: &mut [f32], size: usize, b: &Blob, half: f64, value: f64) {
    let (x0, x1) = ((b.x - half - 1.0).floor().max(0.0) as usize, ((b.x + half + 1.0).ceil() as usize).min(size));
    let (y0, y1) = ((b.y - half - 1.0).floor().max(0.0) as usize, ((b.y + half + 1.0).ceil() as usize).min(size));
    for y in y0..y1 {
        for x in x0..x1 {
            let ax = coverage(half - (x as f64 + 0.5 - b.x).abs());
            let ay = coverage(half - (y as f64 + 0.5 - b.y).abs());
            let a = ax * ay;
            let p = &mut frame[y * size + x];
            *p = (*p as f64 * (1.0 - a) + value * a) as f32;
        }
    }
}

/// Axis-aligned box `(x0, y0, x1, y1)` (exclusive upper bounds) covering an object.
pub type BoundingBox = (usize, usize, usize, usize);

/// Generated clip plus the per-frame box of the anomalous object (if any).
#[derive(Clone, Debug)]
pub struct SynthClip {
    pub clip: Clip<f32>,
    pub anomaly_boxes: Vec<Option<BoundingBox>>,
}

fn bbox(size: usize, b: &Blob, half: f64) -> BoundingBox {
    let lo = |c: f64| (c - half).floor().max(0.0) as usize;
    let hi = |c: f64| ((c + half).ceil() as usize).min(size);
    (lo(b.x), lo(b.y), hi(b.x), hi(b.y))
}

const BLOB_VALUE: f64 = 0.7;
const SQUARE_VALUE: f64 = 1.0;
const SQUARE_SCALE: f64 = 1.6;

fn render_clip(spec: &SynthSpec, index: usize) -> SynthClip {
    let mut rng = stream_rng(spec.seed, Stream::SynthCorpus, index as u64);
    let size = spec.size;
    let r = spec.radius;
    let (lo, hi) = (r, size as f64 - r);
    let mut blobs: Vec<Blob> = (0..spec.blobs)
        .map(|_| {
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let speed = if spec.speed.1 > spec.speed.0 {
                rng.gen_range(spec.speed.0..spec.speed.1)
            } else {
                spec.speed.0
            };
            Blob {
                x: rng.gen_range(lo..hi),
                y: rng.gen_range(lo..hi),
                vx: speed * angle.cos(),
                vy: speed * angle.sin(),
            }
        })
        .collect();
    let events: Vec<&AnomalyEvent> = spec.anomalies.iter().filter(|a| a.clip == index).collect();
    let active = |t: usize| events.iter().find(|a| (a.start..=a.end).contains(&t)).copied();

    let bg = background(size);
    let frame_len = size * size;
    let mut data = Vec::with_capacity(spec.frames * frame_len);
    let mut labels = vec![0u8; spec.frames];
    let mut boxes = vec![None; spec.frames];
    for t in 0..spec.frames {
        let event = active(t);
        if t > 0 {
            for (i, b) in blobs.iter_mut().enumerate() {
                let (mut dx, mut dy) = (b.vx, b.vy);
                match event {
                    Some(a) if i == 0 => match a.kind {
                        AnomalyKind::FastMover => {
                            dx *= spec.fast_factor;
                            dy *= spec.fast_factor;
                        }
                        AnomalyKind::ReverseDirection => {
                            let sign = if (t - a.start) % 2 == 0 { 1.0 } else { -1.0 };
                            dx *= 2.0 * sign;
                            dy *= 2.0 * sign;
                        }
                        AnomalyKind::ShapeChange => {}
                    },
                    _ => {}
                }
                b.x += dx;
                b.y += dy;
                let (mut vx, mut vy) = (dx, dy);
                bounce(&mut b.x, &mut vx, lo, hi);
                bounce(&mut b.y, &mut vy, lo, hi);
                // keep the sign flips caused by bouncing, not the anomaly scaling
                if vx.signum() != dx.signum() {
                    b.vx = -b.vx;
                }
                if vy.signum() != dy.signum() {
                    b.vy = -b.vy;
                }
            }
        }
        let mut frame = bg.clone();
        for (i, b) in blobs.iter().enumerate() {
            match event {
                Some(a) if i == 0 && a.kind == AnomalyKind::ShapeChange => {
                    paint_square(&mut frame, size, b, SQUARE_SCALE * r, SQUARE_VALUE);
                }
                _ => paint_disk(&mut frame, size, b, r, BLOB_VALUE),
            }
        }
        if let Some(a) = event {
            labels[t] = 1;
            let half = if a.kind == AnomalyKind::ShapeChange {
                SQUARE_SCALE * r
            } else {
                r
            };
            boxes[t] = Some(bbox(size, &blobs[0], half + 0.5));
        }
        if spec.noise > 0.0 {
            for p in &mut frame {
                *p += rng.gen_range(-spec.noise..spec.noise) as f32;
            }
        }
        data.extend(frame.into_iter().map(|v| v.clamp(-1.0, 1.0)));
    }
    let frames = Tensor::from_vec(&[spec.frames, size, size, 1], data).expect("frame buffer");
    let clip = Clip::new(
        format!("{}_{:03}", spec.id_prefix, index),
        frames,
        Some(labels),
        ClipSource::Synthetic,
    )
    .expect("consistent clip");
    SynthClip {
        clip,
        anomaly_boxes: boxes,
    }
}

/// Render every clip of `spec` with anomaly boxes.
pub fn synth_generate_detailed(spec: &SynthSpec) -> Result<Vec<SynthClip>> {
    spec.validate()?;
    Ok((0..spec.clips).map(|i| render_clip(spec, i)).collect())
}

pub fn synth_generate(spec: &SynthSpec) -> Result<Vec<Clip<f32>>> {
    Ok(synth_generate_detailed(spec)?
        .into_iter()
        .map(|s| s.clip)
        .collect())
}

/// Normal-only training split and an anomalous test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub train: SynthSpec,
    pub test: SynthSpec,
}

impl CorpusSpec {
    /// Train clips carry no anomalies; each test clip gets one event whose
    /// kind cycles through [`AnomalyKind::ALL`].
    pub fn desk(seed: u64, size: usize, train_clips: usize, test_clips: usize, frames: usize) -> Self {
        let mut rng = stream_rng(seed, Stream::SynthTest, 0);
        let base = SynthSpec {
            seed,
            size,
            frames,
            radius: (size as f64 / 16.0).max(1.5),
            ..SynthSpec::default()
        };
        let train = SynthSpec {
            clips: train_clips,
            id_prefix: "train".into(),
            ..base.clone()
        };
        let anomalies = (0..test_clips)
            .map(|clip| {
                let len = rng.gen_range(frames / 6..=frames / 4).max(1);
                let margin = (frames / 10).max(1);
                let start = rng.gen_range(margin..(frames - margin - len).max(margin + 1));
                AnomalyEvent {
                    clip,
                    kind: AnomalyKind::ALL[clip % 3],
                    start,
                    end: (start + len - 1).min(frames - 1),
                }
            })
            .collect();
        let test = SynthSpec {
            seed: seed.wrapping_add(0x9E37_79B9_7F4A_7C15),
            clips: test_clips,
            anomalies,
            id_prefix: "test".into(),
            ..base
        };
        CorpusSpec { train, test }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_event(kind: AnomalyKind, start: usize, end: usize) -> SynthSpec {
        SynthSpec {
            frames: 120,
            anomalies: vec![AnomalyEvent {
                clip: 0,
                kind,
                start,
                end,
            }],
            ..SynthSpec::default()
        }
    }

    #[test]
    fn anomaly_free_clips_are_all_normal() {
        let clips = synth_generate(&SynthSpec {
            clips: 2,
            frames: 30,
            ..SynthSpec::default()
        })
        .unwrap();
        for c in clips {
            assert!(c.labels().unwrap().iter().all(|&l| l == 0));
        }
    }

    #[test]
    fn labels_match_interval_exactly() {
        for kind in AnomalyKind::ALL {
            let c = &synth_generate(&one_event(kind, 40, 80)).unwrap()[0];
            let l = c.labels().unwrap();
            for (t, &v) in l.iter().enumerate() {
                assert_eq!(v == 1, (40..=80).contains(&t), "frame {t}");
            }
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = one_event(AnomalyKind::FastMover, 10, 20);
        let a = synth_generate(&spec).unwrap();
        let b = synth_generate(&spec).unwrap();
        let bits = |c: &Clip<f32>| c.frames().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a[0]), bits(&b[0]));
        let other = synth_generate(&SynthSpec { seed: 8, ..spec }).unwrap();
        assert_ne!(bits(&a[0]), bits(&other[0]));
    }

    #[test]
    fn frames_stay_in_range() {
        let c = &synth_generate(&one_event(AnomalyKind::ShapeChange, 5, 50)).unwrap()[0];
        assert!(c.frames().data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn oversized_blob_is_rejected() {
        let spec = SynthSpec {
            radius: 40.0,
            ..SynthSpec::default()
        };
        assert!(synth_generate(&spec).is_err());
        assert!(synth_generate(&one_event(AnomalyKind::FastMover, 100, 200)).is_err());
    }

    #[test]
    fn desk_corpus_train_split_is_normal_only() {
        let c = CorpusSpec::desk(7, 32, 3, 3, 60);
        assert!(c.train.anomalies.is_empty());
        assert_eq!(c.test.anomalies.len(), 3);
        for clip in synth_generate(&c.train).unwrap() {
            assert!(clip.labels().unwrap().iter().all(|&l| l == 0));
        }
        for a in &c.test.anomalies {
            assert!(a.end < 60);
        }
    }
}
