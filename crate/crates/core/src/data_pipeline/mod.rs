//! Manifest ingestion, preprocessing, pair sampling and toy data synthesis.

mod audio;
mod dataset;
mod image;
mod manifest;
mod toy;

pub use audio::{preprocess_audio, read_wav, resample, rms, write_wav, AudioConfig, AudioWaveform};
pub use dataset::{
    derive_seed, Clip, ClipSource, Dataset, ItemRef, MatchingExample, Mode, Splits, StoredExample, StoredItem,
};
pub use image::{mosaic, preprocess_image, read_png, resize_area, write_face, write_png, FaceImage, ImageConfig, RawImage};
pub use manifest::{import_csv, parse_jsonl, read_manifest, to_jsonl, validate_records, write_manifest, ClipRecord};
pub use toy::{render_frame, render_window, synthesize_sources, synthesize_toy_dataset, toy_identity, ToyConfig, ToyIdentity};
