use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result, StanError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipSource {
    Ingested,
    Synthetic,
}

/// Ordered grayscale frames `(L, H, W, 1)` in [-1, 1] with optional per-frame labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip<T> {
    pub id: String,
    frames: Tensor<T>,
    labels: Option<Vec<u8>>,
    pub source: ClipSource,
}

impl<T: Scalar> Clip<T> {
    pub fn new(
        id: impl Into<String>,
        frames: Tensor<T>,
        labels: Option<Vec<u8>>,
        source: ClipSource,
    ) -> Result<Self> {
        let s = frames.shape();
        if s.len() != 4 || s[3] != 1 {
            return Err(shape_err!("clip frames must be (L, H, W, 1), got {:?}", s));
        }
        if let Some(l) = &labels {
            if l.len() != s[0] {
                return Err(StanError::Input(format!(
                    "{} labels for {} frames",
                    l.len(),
                    s[0]
                )));
            }
            if l.iter().any(|&v| v > 1) {
                return Err(StanError::Input("labels must be 0 or 1".into()));
            }
        }
        Ok(Clip {
            id: id.into(),
            frames,
            labels,
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(H, W)`.
    pub fn frame_size(&self) -> (usize, usize) {
        (self.frames.shape()[1], self.frames.shape()[2])
    }

    pub fn frames(&self) -> &Tensor<T> {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> Tensor<T> {
        self.frames.index_axis0(t)
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn set_labels(&mut self, labels: Vec<u8>) -> Result<()> {
        if labels.len() != self.len() {
            return Err(StanError::Input(format!(
                "{} labels for {} frames",
                labels.len(),
                self.len()
            )));
        }
        self.labels = Some(labels);
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Clip<U> {
        Clip {
            id: self.id.clone(),
            frames: self.frames.cast(),
            labels: self.labels.clone(),
            source: self.source,
        }
    }

    fn frame_len(&self) -> usize {
        self.frames.len() / self.len()
    }

    /// Frames `t-k..t-1, t+1..t+k` as `(2k, H, W, 1)`.
    pub fn window(&self, t: usize, k: usize) -> Result<Tensor<T>> {
        if t < k || t + k >= self.len() {
            return Err(StanError::Input(format!(
                "frame {t} has no full ±{k} window in a clip of {}",
                self.len()
            )));
        }
        let fl = self.frame_len();
        let d = self.frames.data();
        let mut data = Vec::with_capacity(2 * k * fl);
        data.extend_from_slice(&d[(t - k) * fl..t * fl]);
        data.extend_from_slice(&d[(t + 1) * fl..(t + k + 1) * fl]);
        let (h, w) = self.frame_size();
        Tensor::from_vec(&[2 * k, h, w, 1], data)
    }

    /// Real sequence `t-k..t+k` as `(2k+1, H, W, 1)`.
    pub fn sequence(&self, t: usize, k: usize) -> Result<Tensor<T>> {
        if t < k || t + k >= self.len() {
            return Err(StanError::Input(format!(
                "frame {t} has no full ±{k} window in a clip of {}",
                self.len()
            )));
        }
        let fl = self.frame_len();
        let (h, w) = self.frame_size();
        Tensor::from_vec(
            &[2 * k + 1, h, w, 1],
            self.frames.data()[(t - k) * fl..(t + k + 1) * fl].to_vec(),
        )
    }
}

/// Target indices with a full window: `k ..= L-1-k`.
pub fn window_centers(len: usize, k: usize) -> std::ops::Range<usize> {
    if len < 2 * k + 1 {
        0..0
    } else {
        k..len - k
    }
}

/// Every full context window of the clip with its target index.
pub fn make_windows<T: Scalar>(clip: &Clip<T>, k: usize) -> Vec<(Tensor<T>, usize)> {
    window_centers(clip.len(), k)
        .map(|t| (clip.window(t, k).expect("center in range"), t))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(len: usize) -> Clip<f32> {
        let frames = Tensor::from_fn(&[len, 2, 2, 1], |i| (i / 4) as f32);
        Clip::new("c", frames, None, ClipSource::Synthetic).unwrap()
    }

    #[test]
    fn window_counts() {
        assert_eq!(make_windows(&clip(11), 5).len(), 1);
        assert_eq!(make_windows(&clip(11), 5)[0].1, 5);
        assert!(make_windows(&clip(10), 5).is_empty());
        assert_eq!(window_centers(200, 5).len(), 190);
        for len in 0..40 {
            for k in 1..6 {
                assert_eq!(window_centers(len, k).len(), len.saturating_sub(2 * k));
            }
        }
    }

    #[test]
    fn window_skips_center_and_sequence_includes_it() {
        let c = clip(12);
        let w = c.window(6, 5).unwrap();
        let firsts: Vec<f32> = (0..10).map(|i| w.slice_axis0(i)[0]).collect();
        assert_eq!(firsts, vec![1., 2., 3., 4., 5., 7., 8., 9., 10., 11.]);
        let s = c.sequence(6, 5).unwrap();
        assert_eq!(s.shape(), &[11, 2, 2, 1]);
        assert_eq!(s.slice_axis0(5)[0], 6.0);
        assert!(c.window(0, 5).is_err());
    }

    #[test]
    fn labels_must_align() {
        let frames = Tensor::<f32>::zeros(&[3, 2, 2, 1]);
        assert!(Clip::new("x", frames.clone(), Some(vec![0, 1]), ClipSource::Ingested).is_err());
        assert!(Clip::new("x", frames, Some(vec![0, 1, 2]), ClipSource::Ingested).is_err());
    }
}
