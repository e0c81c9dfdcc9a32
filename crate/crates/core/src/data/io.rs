//! Frame directories and label CSVs.
//!
//! A clip on disk is a directory of zero-padded, lexicographically ordered
//! PNG or PGM frames. A corpus is `train/<clip>/` and `test/<clip>/` plus
//! `test_labels.csv` (`clip_id,frame_index,label`) and `test_events.csv`
//! (`clip_id,start,end`).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{DynamicImage, GrayImage, ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use crate::data::clip::{Clip, ClipSource};
use crate::error::{Result, StanError};
use crate::tensor::Tensor;

const FRAME_EXTENSIONS: [&str; 4] = ["png", "pgm", "pnm", "ppm"];

pub const LABELS_FILE: &str = "test_labels.csv";
pub const EVENTS_FILE: &str = "test_events.csv";

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.exists() {
        return Err(StanError::Missing(dir.to_path_buf()));
    }
    let mut entries = Vec::new();
    for e in fs::read_dir(dir).map_err(|e| StanError::io(dir, e))? {
        entries.push(e.map_err(|e| StanError::io(dir, e))?.path());
    }
    entries.sort();
    Ok(entries)
}

fn is_frame(p: &Path) -> bool {
    p.is_file()
        && p.extension()
            .and_then(|e| e.to_str())
            .map(|e| FRAME_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            .unwrap_or(false)
}

/// Luminance in [0, 1]. Colour input uses ITU-R 601 weights.
fn luminance(img: DynamicImage) -> ImageBuffer<Luma<f32>, Vec<f32>> {
    if img.color().has_color() {
        let rgb = img.to_rgb32f();
        let (w, h) = rgb.dimensions();
        ImageBuffer::from_fn(w, h, |x, y| {
            let p = rgb.get_pixel(x, y).0;
            let v = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
            Luma([v.clamp(0.0, 1.0) as f32])
        })
    } else {
        img.to_luma32f()
    }
}

/// One image as `size x size` values in [-1, 1], row-major.
pub fn load_frame(path: &Path, size: usize) -> Result<Vec<f32>> {
    let img = image::open(path).map_err(|source| StanError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lum = luminance(img);
    if lum.dimensions() != (size as u32, size as u32) {
        lum = imageops::resize(&lum, size as u32, size as u32, FilterType::Triangle);
    }
    Ok(lum.into_raw().into_iter().map(|v| v * 2.0 - 1.0).collect())
}

/// Load every frame image in `dir` (sorted by file name) into a clip.
pub fn load_clip(dir: &Path, size: usize) -> Result<Clip<f32>> {
    let frames: Vec<PathBuf> = read_dir_sorted(dir)?.into_iter().filter(|p| is_frame(p)).collect();
    if frames.is_empty() {
        return Err(StanError::Input(format!(
            "no PNG/PGM frames in {}",
            dir.display()
        )));
    }
    let mut data = Vec::with_capacity(frames.len() * size * size);
    for f in &frames {
        data.extend(load_frame(f, size)?);
    }
    let id = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "clip".into());
    let t = Tensor::from_vec(&[frames.len(), size, size, 1], data)?;
    Clip::new(id, t, None, ClipSource::Ingested)
}

/// Every clip directory under `dir`, in name order.
pub fn load_clips(dir: &Path, size: usize) -> Result<Vec<Clip<f32>>> {
    let clips: Result<Vec<_>> = read_dir_sorted(dir)?
        .into_iter()
        .filter(|p| p.is_dir())
        .map(|p| load_clip(&p, size))
        .collect();
    let clips = clips?;
    if clips.is_empty() {
        return Err(StanError::Input(format!("no clip directories in {}", dir.display())));
    }
    Ok(clips)
}

pub fn quantize(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

/// Write a clip as `dir/000000.png, ...`.
pub fn save_clip(clip: &Clip<f32>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| StanError::io(dir, e))?;
    let (h, w) = clip.frame_size();
    for t in 0..clip.len() {
        let px: Vec<u8> = clip.frames().slice_axis0(t).iter().map(|&v| quantize(v)).collect();
        let img = GrayImage::from_raw(w as u32, h as u32, px).expect("frame buffer size");
        let path = dir.join(format!("{t:06}.png"));
        img.save(&path).map_err(|source| StanError::Image { path, source })?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRow {
    pub clip_id: String,
    pub frame_index: usize,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRow {
    pub clip_id: String,
    pub start: usize,
    pub end: usize,
}

/// Maximal runs of label 1 as inclusive `(start, end)` pairs.
pub fn label_intervals(labels: &[u8]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (t, &l) in labels.iter().enumerate() {
        match (l == 1, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                out.push((s, t - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, labels.len() - 1));
    }
    out
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let f = fs::File::create(path).map_err(|e| StanError::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    if !path.exists() {
        return Err(StanError::Missing(path.to_path_buf()));
    }
    let f = fs::File::open(path).map_err(|e| StanError::io(path, e))?;
    Ok(csv::Reader::from_reader(f))
}

pub fn write_labels<T>(path: &Path, clips: &[Clip<T>]) -> Result<()>
where
    T: crate::Scalar,
{
    let mut w = csv_writer(path)?;
    for c in clips {
        let labels = c
            .labels()
            .ok_or_else(|| StanError::Input(format!("clip {} has no labels", c.id)))?;
        for (frame_index, &label) in labels.iter().enumerate() {
            w.serialize(LabelRow {
                clip_id: c.id.clone(),
                frame_index,
                label,
            })?;
        }
    }
    w.flush().map_err(|e| StanError::io(path, e))
}

/// Labels per clip id, each vector indexed by frame.
pub fn read_labels(path: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut rows: BTreeMap<String, Vec<(usize, u8)>> = BTreeMap::new();
    for r in csv_reader(path)?.deserialize() {
        let r: LabelRow = r?;
        if r.label > 1 {
            return Err(StanError::Input(format!("label {} is not 0 or 1", r.label)));
        }
        rows.entry(r.clip_id).or_default().push((r.frame_index, r.label));
    }
    rows.into_iter()
        .map(|(id, mut v)| {
            v.sort_unstable();
            for (i, &(f, _)) in v.iter().enumerate() {
                if f != i {
                    return Err(StanError::Input(format!(
                        "labels for {id} are not contiguous from frame 0"
                    )));
                }
            }
            Ok((id, v.into_iter().map(|(_, l)| l).collect()))
        })
        .collect()
}

pub fn write_events(path: &Path, events: &[EventRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for e in events {
        w.serialize(e)?;
    }
    w.flush().map_err(|e| StanError::io(path, e))
}

pub fn read_events(path: &Path) -> Result<Vec<EventRow>> {
    let rows: std::result::Result<Vec<EventRow>, _> = csv_reader(path)?.deserialize().collect();
    let rows = rows?;
    if let Some(bad) = rows.iter().find(|e| e.start > e.end) {
        return Err(StanError::Input(format!("event {bad:?} ends before it starts")));
    }
    Ok(rows)
}

/// Ground-truth events derived from per-frame labels.
pub fn events_from_clips<T: crate::Scalar>(clips: &[Clip<T>]) -> Vec<EventRow> {
    clips
        .iter()
        .flat_map(|c| {
            label_intervals(c.labels().unwrap_or(&[]))
                .into_iter()
                .map(|(start, end)| EventRow {
                    clip_id: c.id.clone(),
                    start,
                    end,
                })
        })
        .collect()
}

/// Write a train/test corpus in the on-disk layout.
pub fn write_corpus(out: &Path, train: &[Clip<f32>], test: &[Clip<f32>]) -> Result<()> {
    for (split, clips) in [("train", train), ("test", test)] {
        for c in clips {
            save_clip(c, &out.join(split).join(&c.id))?;
        }
    }
    write_labels(&out.join(LABELS_FILE), test)?;
    write_events(&out.join(EVENTS_FILE), &events_from_clips(test))
}

/// Attach labels from `labels` to clips by id.
pub fn attach_labels(clips: &mut [Clip<f32>], labels: &BTreeMap<String, Vec<u8>>) -> Result<()> {
    for c in clips {
        let l = labels
            .get(&c.id)
            .ok_or_else(|| StanError::Input(format!("no labels for clip {}", c.id)))?;
        c.set_labels(l.clone())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_gray(dir: &Path, name: &str, v: u8, size: u32) {
        GrayImage::from_pixel(size, size, Luma([v]))
            .save(dir.join(name))
            .unwrap();
    }

    #[test]
    fn affine_intensity_map() {
        let d = tempfile::tempdir().unwrap();
        write_gray(d.path(), "000.png", 0, 4);
        write_gray(d.path(), "001.png", 255, 4);
        write_gray(d.path(), "002.pgm", 128, 4);
        let c = load_clip(d.path(), 4).unwrap();
        assert_eq!(c.len(), 3);
        assert!(c.frames().slice_axis0(0).iter().all(|&v| v == -1.0));
        assert!(c.frames().slice_axis0(1).iter().all(|&v| v == 1.0));
        let want = 128.0 * 2.0 / 255.0 - 1.0;
        assert!(c.frames().slice_axis0(2).iter().all(|&v| (v - want).abs() < 1e-6));
        assert!((want - 0.00392).abs() < 1e-5);
    }

    #[test]
    fn inconsistent_sizes_are_resized() {
        let d = tempfile::tempdir().unwrap();
        write_gray(d.path(), "0.png", 255, 8);
        write_gray(d.path(), "1.png", 0, 5);
        let c = load_clip(d.path(), 6).unwrap();
        assert_eq!(c.frames().shape(), &[2, 6, 6, 1]);
        assert!(c.frames().slice_axis0(0).iter().all(|&v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn colour_uses_601_weights() {
        let d = tempfile::tempdir().unwrap();
        image::RgbImage::from_pixel(2, 2, image::Rgb([255, 0, 0]))
            .save(d.path().join("0.png"))
            .unwrap();
        let v = load_frame(&d.path().join("0.png"), 2).unwrap();
        assert!((v[0] - (0.299 * 2.0 - 1.0)).abs() < 1e-6);
    }

    #[test]
    fn empty_and_missing_directories_fail() {
        let d = tempfile::tempdir().unwrap();
        assert!(matches!(load_clip(d.path(), 4), Err(StanError::Input(_))));
        assert!(matches!(
            load_clip(&d.path().join("nope"), 4),
            Err(StanError::Missing(_))
        ));
    }

    #[test]
    fn save_load_round_trip_within_half_step() {
        let d = tempfile::tempdir().unwrap();
        let frames = Tensor::from_fn(&[3, 5, 5, 1], |i| ((i as f32) * 0.37).sin());
        let c = Clip::new("c", frames, None, ClipSource::Synthetic).unwrap();
        save_clip(&c, d.path()).unwrap();
        let back = load_clip(d.path(), 5).unwrap();
        for (a, b) in c.frames().data().iter().zip(back.frames().data()) {
            assert!((a - b).abs() <= 1.0 / 255.0 + 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn label_and_event_csvs_round_trip() {
        let d = tempfile::tempdir().unwrap();
        let frames = Tensor::<f32>::zeros(&[6, 2, 2, 1]);
        let c = Clip::new("a", frames, Some(vec![0, 1, 1, 0, 1, 0]), ClipSource::Synthetic).unwrap();
        let lp = d.path().join("l.csv");
        write_labels(&lp, std::slice::from_ref(&c)).unwrap();
        assert_eq!(read_labels(&lp).unwrap()["a"], vec![0, 1, 1, 0, 1, 0]);
        let ev = events_from_clips(&[c]);
        assert_eq!(ev.len(), 2);
        assert_eq!((ev[0].start, ev[0].end, ev[1].start, ev[1].end), (1, 2, 4, 4));
        let ep = d.path().join("e.csv");
        write_events(&ep, &ev).unwrap();
        assert_eq!(read_events(&ep).unwrap(), ev);
        assert_eq!(
            fs::read_to_string(&ep).unwrap().lines().next(),
            Some("clip_id,start,end")
        );
    }

    #[test]
    fn intervals_of_labels() {
        assert!(label_intervals(&[0, 0]).is_empty());
        assert_eq!(label_intervals(&[1, 1, 0, 1]), vec![(0, 1), (3, 3)]);
    }
}
