//! Localization maps: per-pixel generator error and guided-backpropagation
//! gradients of the discriminator.

use std::path::Path;

use image::GrayImage;

use crate::data::io::quantize;
use crate::error::{shape_err, Result, StanError};
use crate::models::Discriminator;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Nonnegative `H x W` intensities.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(shape_err!("{} values for a {height}x{width} map", values.len()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(StanError::NonFinite("heatmap values must be finite and >= 0".into()));
        }
        Ok(Heatmap {
            height,
            width,
            values,
        })
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Values scaled so the maximum is 1; a zero map stays zero.
    pub fn normalized(&self) -> Vec<f64> {
        let m = self.max();
        self.values
            .iter()
            .map(|&v| if m > 0.0 { v / m } else { 0.0 })
            .collect()
    }

    fn region(&self, (x0, y0, x1, y1): (usize, usize, usize, usize)) -> impl Iterator<Item = (bool, f64)> + '_ {
        (0..self.height).flat_map(move |y| {
            (0..self.width).map(move |x| ((x0..x1).contains(&x) && (y0..y1).contains(&y), self.get(y, x)))
        })
    }

    /// Mean inside and outside the box `(x0, y0, x1, y1)` (exclusive upper bounds).
    pub fn box_means(&self, bbox: (usize, usize, usize, usize)) -> (f64, f64) {
        let (mut si, mut ni, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
        for (inside, v) in self.region(bbox) {
            if inside {
                si += v;
                ni += 1;
            } else {
                so += v;
                no += 1;
            }
        }
        (si / ni.max(1) as f64, so / no.max(1) as f64)
    }

    /// Share of the total mass inside the box; 0 for a zero map.
    pub fn mass_fraction(&self, bbox: (usize, usize, usize, usize)) -> f64 {
        let total = self.total();
        if total == 0.0 {
            return 0.0;
        }
        self.region(bbox).filter(|r| r.0).map(|r| r.1).sum::<f64>() / total
    }
}

/// Grow a box by `radius` pixels on every side, clipped to the frame.
pub fn dilate_box(
    (x0, y0, x1, y1): (usize, usize, usize, usize),
    radius: usize,
    height: usize,
    width: usize,
) -> (usize, usize, usize, usize) {
    (
        x0.saturating_sub(radius),
        y0.saturating_sub(radius),
        (x1 + radius).min(width),
        (y1 + radius).min(height),
    )
}

fn frame_dims(shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [h, w] | [h, w, 1] | [1, h, w, 1] => Ok((*h, *w)),
        _ => Err(shape_err!("expected a single-channel frame, got {:?}", shape)),
    }
}

/// `|X̂_t − X_t|` per pixel.
pub fn error_map<T: Scalar>(generated: &Tensor<T>, real: &Tensor<T>) -> Result<Heatmap> {
    if generated.shape() != real.shape() {
        return Err(shape_err!(
            "error map of {:?} vs {:?}",
            generated.shape(),
            real.shape()
        ));
    }
    let (h, w) = frame_dims(generated.shape())?;
    let values = generated
        .data()
        .iter()
        .zip(real.data())
        .map(|(&a, &b)| (a - b).abs().as_f64())
        .collect();
    Heatmap::new(h, w, values)
}

/// Guided backpropagation of the mean patch output down to the input
/// sequence; the map is the per-pixel maximum gradient magnitude over time.
pub fn guided_backprop_map<T: Scalar>(seq: &Tensor<T>, d: &Discriminator<T>) -> Result<Heatmap> {
    let trace = d.forward_trace(seq)?;
    let out = trace.output();
    let grad_out = Tensor::full(out.shape(), T::one() / T::lit(out.len() as f64));
    let g = d.backward(&trace, &grad_out, true)?.input;
    let s = g.shape();
    let (l, h, w) = (s[1], s[2], s[3]);
    let mut values = vec![0.0f64; h * w];
    for f in 0..l {
        let slice = &g.data()[f * h * w..(f + 1) * h * w];
        for (m, &v) in values.iter_mut().zip(slice) {
            *m = m.max(v.abs().as_f64());
        }
    }
    Heatmap::new(h, w, values)
}

fn to_gray(height: usize, width: usize, px: Vec<u8>) -> GrayImage {
    GrayImage::from_raw(width as u32, height as u32, px).expect("pixel buffer size")
}

fn heat_pixels(map: &Heatmap) -> Vec<u8> {
    map.normalized()
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

fn save_gray(img: &GrayImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|source| StanError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// 8-bit grayscale, max-normalized; a zero map is all black.
pub fn save_heatmap(map: &Heatmap, path: &Path) -> Result<()> {
    save_gray(&to_gray(map.height, map.width, heat_pixels(map)), path)
}

/// Side by side: real frame | generated frame | error map | gradient map.
pub fn save_montage<T: Scalar>(
    real: &Tensor<T>,
    generated: &Tensor<T>,
    error: &Heatmap,
    gradient: &Heatmap,
    path: &Path,
) -> Result<()> {
    let (h, w) = frame_dims(real.shape())?;
    if frame_dims(generated.shape())? != (h, w)
        || (error.height, error.width) != (h, w)
        || (gradient.height, gradient.width) != (h, w)
    {
        return Err(shape_err!("montage panels must share a {h}x{w} size"));
    }
    let frame_px = |t: &Tensor<T>| -> Vec<u8> { t.data().iter().map(|v| quantize(v.as_f64() as f32)).collect() };
    let panels = [frame_px(real), frame_px(generated), heat_pixels(error), heat_pixels(gradient)];
    let mut img = GrayImage::new((4 * w) as u32, h as u32);
    for (p, panel) in panels.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                img.put_pixel((p * w + x) as u32, y as u32, image::Luma([panel[y * w + x]]));
            }
        }
    }
    save_gray(&img, path)
}
