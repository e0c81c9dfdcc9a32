//! Clips, context windows, frame I/O and the synthetic corpus.

pub mod clip;
pub mod io;
pub mod synth;

pub use clip::{make_windows, window_centers, Clip, ClipSource};
pub use io::{load_clip, load_clips, save_clip, write_corpus};
pub use synth::{
    synth_generate, synth_generate_detailed, AnomalyEvent, AnomalyKind, BoundingBox, CorpusSpec,
    SynthClip, SynthSpec,
};
