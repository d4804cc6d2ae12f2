//! Procedural paired audio/face data where identity is recoverable from
//! either modality by construction.
//!
//! Each identity owns three tone frequencies and a coloured shape. A binary
//! attribute picks the frequency band and the shape family. Phases, pitch
//! jitter, loudness envelope, noise, shape position and background vary per
//! sample.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::audio::write_wav;
use super::dataset::{derive_seed, ClipSource};
use super::image::{write_png, RawImage};
use super::manifest::{write_manifest, ClipRecord};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyConfig {
    pub n_identities: usize,
    pub clips_per_identity: usize,
    pub frames_per_clip: usize,
    pub sample_rate: u32,
    /// Audio seconds per frame window.
    pub window_s: f64,
    pub image_size: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            n_identities: 20,
            clips_per_identity: 5,
            frames_per_clip: 6,
            sample_rate: 16_000,
            window_s: 1.0,
            image_size: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyIdentity {
    pub attribute: u8,
    pub freqs: [f64; 3],
    pub amps: [f64; 3],
    pub color: [f32; 3],
    pub accent: [f32; 3],
    pub radius: f32,
    pub aspect: f32,
    pub accent_offset: f32,
}

fn hsv(h: f32, s: f32, v: f32) -> [f32; 3] {
    let c = v * s;
    let hp = (h.rem_euclid(1.0)) * 6.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

pub fn toy_identity(seed: u64, id: usize) -> ToyIdentity {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x1D, id as u64]));
    let attribute = (id % 2) as u8;
    let (lo, hi) = if attribute == 0 { (400.0, 1500.0) } else { (1600.0, 3800.0) };
    let mut freqs = [0.0; 3];
    for f in &mut freqs {
        *f = rng.random_range(lo..hi);
    }
    let mut amps = [0.0; 3];
    for a in &mut amps {
        *a = rng.random_range(0.5..1.0);
    }
    let hue: f32 = rng.random();
    ToyIdentity {
        attribute,
        freqs,
        amps,
        color: hsv(hue, rng.random_range(0.6..1.0), rng.random_range(0.6..1.0)),
        accent: hsv(hue + rng.random_range(0.25..0.75), rng.random_range(0.5..1.0), rng.random_range(0.3..1.0)),
        radius: rng.random_range(0.22..0.34),
        aspect: rng.random_range(0.7..1.3),
        accent_offset: rng.random_range(-0.4..0.4),
    }
}

/// One audio window: identity tones with random phase, slight pitch
/// jitter, a slow loudness envelope and additive noise.
pub fn render_window(ident: &ToyIdentity, sample_rate: u32, n: usize, rng: &mut impl Rng) -> Vec<f32> {
    let jitter = rng.random_range(0.99..1.01);
    let phases: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let env_rate = rng.random_range(2.0..6.0);
    let env_phase = rng.random_range(0.0..2.0 * PI);
    let gain = rng.random_range(0.3..1.0);
    let amp_sum: f64 = ident.amps.iter().sum();
    let noise = Normal::new(0.0, 0.25 * (0.5f64).sqrt()).expect("valid sigma");
    (0..n)
        .map(|i| {
            let t = i as f64 / sample_rate as f64;
            let tone: f64 = (0..3)
                .map(|k| ident.amps[k] * (2.0 * PI * ident.freqs[k] * jitter * t + phases[k]).sin())
                .sum::<f64>()
                / amp_sum;
            let env = 0.6 + 0.4 * (2.0 * PI * env_rate * t + env_phase).sin();
            let v = gain * 0.5 * (tone * env + noise.sample(rng));
            v.clamp(-0.99, 0.99) as f32
        })
        .collect()
}

/// One face frame rendered with 2x2 supersampling.
pub fn render_frame(ident: &ToyIdentity, size: usize, rng: &mut impl Rng) -> RawImage {
    let s = size as f32;
    let bg_level: f32 = rng.random_range(0.25..0.75);
    let bg: Vec<f32> = (0..3).map(|_| bg_level + rng.random_range(-0.1..0.1)).collect();
    let grad_dir: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let (gx, gy) = (grad_dir.cos() * 0.1, grad_dir.sin() * 0.1);
    let cx = 0.5 * s + rng.random_range(-0.12..0.12) * s;
    let cy = 0.5 * s + rng.random_range(-0.12..0.12) * s;
    let r = ident.radius * s * rng.random_range(0.95..1.05);
    let (rx, ry) = (r * ident.aspect.sqrt(), r / ident.aspect.sqrt());
    let (ax, ay, ar) = (cx, cy + ident.accent_offset * ry, 0.35 * r);
    let noise = Normal::new(0.0f32, 0.02).expect("valid sigma");
    let mut data = vec![0.0f32; 3 * size * size];
    for y in 0..size {
        for x in 0..size {
            let mut acc = [0.0f32; 3];
            for (sx, sy) in [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)] {
                let (px, py) = (x as f32 + sx, y as f32 + sy);
                let (u, v) = ((px - cx) / rx, (py - cy) / ry);
                let inside = if ident.attribute == 0 {
                    u * u + v * v <= 1.0
                } else {
                    u.abs() <= 0.9 && v.abs() <= 0.9
                };
                let in_accent = ((px - ax).powi(2) + (py - ay).powi(2)).sqrt() <= ar;
                let col: [f32; 3] = if inside && in_accent {
                    ident.accent
                } else if inside {
                    ident.color
                } else {
                    let shade = gx * (px / s - 0.5) + gy * (py / s - 0.5);
                    [bg[0] + shade, bg[1] + shade, bg[2] + shade]
                };
                for c in 0..3 {
                    acc[c] += col[c] * 0.25;
                }
            }
            for c in 0..3 {
                data[(c * size + y) * size + x] = (acc[c] + noise.sample(rng)).clamp(0.0, 1.0);
            }
        }
    }
    RawImage {
        width: size,
        height: size,
        data,
    }
}

fn check(cfg: &ToyConfig) -> Result<()> {
    if cfg.n_identities < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 identities to form negatives, got {}",
            cfg.n_identities
        )));
    }
    if cfg.clips_per_identity == 0 || cfg.frames_per_clip < 2 || cfg.image_size == 0 || cfg.window_s <= 0.0 {
        return Err(Error::InvalidInput(
            "clips_per_identity must be positive, frames_per_clip at least 2, sizes positive".into(),
        ));
    }
    Ok(())
}

fn clip_id(ident: usize, clip: usize) -> String {
    format!("id{ident:03}_c{clip:02}")
}

/// Renders every clip in memory.
pub fn synthesize_sources(cfg: &ToyConfig, seed: u64) -> Result<Vec<ClipSource>> {
    check(cfg)?;
    let win = (cfg.sample_rate as f64 * cfg.window_s).round() as usize;
    let mut out = Vec::with_capacity(cfg.n_identities * cfg.clips_per_identity);
    for id in 0..cfg.n_identities {
        let ident = toy_identity(seed, id);
        for c in 0..cfg.clips_per_identity {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xC1, id as u64, c as u64]));
            let cid = clip_id(id, c);
            let mut audio = Vec::with_capacity(win * cfg.frames_per_clip);
            let mut frames = Vec::with_capacity(cfg.frames_per_clip);
            for _ in 0..cfg.frames_per_clip {
                audio.extend(render_window(&ident, cfg.sample_rate, win, &mut rng));
                frames.push(render_frame(&ident, cfg.image_size, &mut rng));
            }
            out.push(ClipSource {
                record: ClipRecord {
                    clip_id: cid.clone(),
                    audio_path: format!("audio/{cid}.wav"),
                    frame_paths: (0..cfg.frames_per_clip).map(|f| format!("frames/{cid}_{f}.png")).collect(),
                    identity_id: Some(format!("id{id:03}")),
                    attribute: Some(ident.attribute.to_string()),
                },
                audio,
                sample_rate: cfg.sample_rate,
                frames,
            });
        }
    }
    Ok(out)
}

/// Writes WAV/PNG media and `manifest.jsonl` under `out_dir`.
pub fn synthesize_toy_dataset(cfg: &ToyConfig, seed: u64, out_dir: &Path) -> Result<Vec<ClipRecord>> {
    let sources = synthesize_sources(cfg, seed)?;
    for sub in ["audio", "frames"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut records = Vec::with_capacity(sources.len());
    for src in sources {
        write_wav(&out_dir.join(&src.record.audio_path), &src.audio, src.sample_rate)?;
        for (p, f) in src.record.frame_paths.iter().zip(&src.frames) {
            let signed: Vec<f32> = f.data.iter().map(|v| v * 2.0 - 1.0).collect();
            write_png(&out_dir.join(p), f.width, f.height, &signed)?;
        }
        records.push(src.record);
    }
    write_manifest(&out_dir.join("manifest.jsonl"), &records)?;
    Ok(records)
}
