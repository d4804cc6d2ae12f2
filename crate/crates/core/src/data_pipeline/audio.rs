//! Waveform loading, resampling, length fixing and loudness normalization.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AudioConfig {
    pub sample_rate: u32,
    pub duration_s: f64,
    pub rms_reference: f64,
}

impl Default for AudioConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            duration_s: 6.0,
            rms_reference: 0.01,
        }
    }
}

impl AudioConfig {
    pub fn n_samples(&self) -> usize {
        (self.sample_rate as f64 * self.duration_s).round() as usize
    }
}

/// Fixed-length mono waveform.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioWaveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioWaveform {
    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }
}

pub fn rms(x: &[f32]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Band-limited resampling with a Hann-windowed sinc kernel.
pub fn resample(x: &[f32], from: u32, to: u32) -> Vec<f32> {
    if from == to || x.is_empty() {
        return x.to_vec();
    }
    let ratio = to as f64 / from as f64;
    let out_len = (x.len() as f64 * ratio).round() as usize;
    // Cutoff relative to the input rate; lowered when downsampling.
    let scale = ratio.min(1.0);
    let half = 16.0 / scale;
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let t = n as f64 / ratio;
        let lo = ((t - half).ceil().max(0.0)) as usize;
        let hi = ((t + half).floor() as usize).min(x.len() - 1);
        let mut acc = 0.0;
        for (k, &xk) in x.iter().enumerate().take(hi + 1).skip(lo) {
            let d = t - k as f64;
            let u = d / half;
            if u.abs() >= 1.0 {
                continue;
            }
            let w = 0.5 * (1.0 + (PI * u).cos());
            let arg = scale * d;
            let s = if arg.abs() < 1e-12 { 1.0 } else { (PI * arg).sin() / (PI * arg) };
            acc += xk as f64 * scale * s * w;
        }
        out.push(acc as f32);
    }
    out
}

/// Resamples to the configured rate, loops short signals and cuts a random
/// window of exactly the configured duration, then scales to the reference
/// RMS level.
pub fn preprocess_audio(raw: &[f32], raw_rate: u32, cfg: &AudioConfig, rng: &mut impl Rng) -> Result<AudioWaveform> {
    if raw.is_empty() {
        return Err(Error::InvalidInput("empty waveform".into()));
    }
    if raw_rate == 0 {
        return Err(Error::InvalidInput("sample rate must be positive".into()));
    }
    let x = resample(raw, raw_rate, cfg.sample_rate);
    if x.is_empty() {
        return Err(Error::InvalidInput("waveform is shorter than one sample after resampling".into()));
    }
    let target = cfg.n_samples();
    if target == 0 {
        return Err(Error::Config("audio duration yields zero samples".into()));
    }
    let mut looped = x.clone();
    while looped.len() < target {
        looped.extend_from_slice(&x);
    }
    let offset = rng.random_range(0..=looped.len() - target);
    let mut samples = looped[offset..offset + target].to_vec();
    let level = rms(&samples);
    if level == 0.0 || !level.is_finite() {
        return Err(Error::ZeroEnergy);
    }
    let gain = cfg.rms_reference / level;
    for s in &mut samples {
        *s = (*s as f64 * gain) as f32;
    }
    Ok(AudioWaveform {
        samples,
        sample_rate: cfg.sample_rate,
    })
}

/// Reads a PCM or float WAV file and mixes it down to mono.
pub fn read_wav(path: &Path) -> Result<(Vec<f32>, u32)> {
    let mut reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_error(path, e))?,
        hound::SampleFormat::Int => {
            let full = (1i64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 / full))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| wav_error(path, e))?
        }
    };
    let mono = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f32>() / channels as f32)
        .collect();
    Ok((mono, spec.sample_rate))
}

/// Writes 16-bit PCM mono.
pub fn write_wav(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(|e| wav_error(path, e))?;
    }
    w.finalize().map_err(|e| wav_error(path, e))
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sine(freq: f64, rate: u32, n: usize) -> Vec<f32> {
        (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / rate as f64).sin() as f32)
            .collect()
    }

    #[test]
    fn short_input_is_looped_to_exact_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = preprocess_audio(&sine(220.0, 16_000, 48_000), 16_000, &AudioConfig::default(), &mut rng).unwrap();
        assert_eq!(w.samples.len(), 96_000);
        assert!((w.rms() - 0.01).abs() < 1e-6);
    }

    #[test]
    fn zero_input_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = preprocess_audio(&vec![0.0; 96_000], 16_000, &AudioConfig::default(), &mut rng);
        assert!(matches!(r, Err(Error::ZeroEnergy)));
    }

    #[test]
    fn empty_or_rateless_input_is_invalid() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = AudioConfig::default();
        assert!(matches!(preprocess_audio(&[], 16_000, &cfg, &mut rng), Err(Error::InvalidInput(_))));
        assert!(matches!(preprocess_audio(&[1.0], 0, &cfg, &mut rng), Err(Error::InvalidInput(_))));
        // A single sample at 48 kHz rounds to zero samples at 16 kHz.
        assert!(matches!(preprocess_audio(&[1.0], 48_000, &cfg, &mut rng), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn resampling_preserves_a_tone() {
        let x = sine(440.0, 44_100, 44_100);
        let y = resample(&x, 44_100, 16_000);
        assert_eq!(y.len(), 16_000);
        let reference = sine(440.0, 16_000, 16_000);
        // Ignore the kernel's edge transients.
        let err = y[200..15_800]
            .iter()
            .zip(&reference[200..15_800])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(err < 5e-3, "max error {err}");
    }

    #[test]
    fn resampling_removes_content_above_the_new_nyquist() {
        let x = sine(12_000.0, 48_000, 48_000);
        let y = resample(&x, 48_000, 16_000);
        assert!(rms(&y[200..15_800]) < 0.01);
    }

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let x = sine(300.0, 16_000, 1000).iter().map(|v| v * 0.5).collect::<Vec<_>>();
        write_wav(&path, &x, 16_000).unwrap();
        let (y, rate) = read_wav(&path).unwrap();
        assert_eq!(rate, 16_000);
        assert!(x.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-4));
    }
}
