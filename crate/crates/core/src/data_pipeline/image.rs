//! Face image representation, resizing, augmentation and PNG I/O.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageConfig {
    pub size: usize,
    /// Random horizontal flips during training.
    pub flip: bool,
}

impl Default for ImageConfig {
    fn default() -> Self {
        Self { size: 128, flip: true }
    }
}

/// Decoded image, channel-major `[3, height, width]` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

/// Square RGB image, channel-major `[3, size, size]` with values in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceImage {
    pub size: usize,
    pub data: Vec<f32>,
}

impl FaceImage {
    pub fn new(size: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * size * size {
            return Err(Error::InvalidInput(format!(
                "expected {} values for a {size}x{size} image, got {}",
                3 * size * size,
                data.len()
            )));
        }
        Ok(Self { size, data })
    }

    pub fn flipped(&self) -> Self {
        let s = self.size;
        let mut out = self.data.clone();
        for row in out.chunks_mut(s) {
            row.reverse();
        }
        debug_assert_eq!(out.len(), 3 * s * s);
        Self { size: s, data: out }
    }
}

/// Separable area-averaging weights mapping `n_in` samples onto `n_out`.
fn area_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f32)>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let (a, b) = (o as f64 * scale, (o + 1) as f64 * scale);
            let mut taps = Vec::new();
            let mut i = a.floor() as usize;
            while (i as f64) < b && i < n_in {
                let overlap = (b.min(i as f64 + 1.0) - a.max(i as f64)).max(0.0);
                if overlap > 0.0 {
                    taps.push((i, (overlap / scale) as f32));
                }
                i += 1;
            }
            taps
        })
        .collect()
}

/// Downscales with exact area averaging.
pub fn resize_area(img: &RawImage, out_w: usize, out_h: usize) -> RawImage {
    let (wx, wy) = (area_weights(img.width, out_w), area_weights(img.height, out_h));
    let mut tmp = vec![0.0f32; 3 * img.height * out_w];
    for c in 0..3 {
        for y in 0..img.height {
            let row = &img.data[(c * img.height + y) * img.width..][..img.width];
            for (ox, taps) in wx.iter().enumerate() {
                tmp[(c * img.height + y) * out_w + ox] = taps.iter().map(|&(i, w)| row[i] * w).sum();
            }
        }
    }
    let mut data = vec![0.0f32; 3 * out_h * out_w];
    for c in 0..3 {
        for (oy, taps) in wy.iter().enumerate() {
            for ox in 0..out_w {
                data[(c * out_h + oy) * out_w + ox] = taps
                    .iter()
                    .map(|&(i, w)| tmp[(c * img.height + i) * out_w + ox] * w)
                    .sum();
            }
        }
    }
    RawImage {
        width: out_w,
        height: out_h,
        data,
    }
}

/// Resizes a pre-cropped square face to the target size and maps it to
/// `[-1, 1]`. With `augment`, flips horizontally with probability 0.5.
pub fn preprocess_image(raw: &RawImage, cfg: &ImageConfig, augment: bool, rng: &mut impl Rng) -> Result<FaceImage> {
    if raw.width != raw.height {
        return Err(Error::InvalidInput(format!("image is not square ({}x{})", raw.width, raw.height)));
    }
    if raw.width < cfg.size {
        return Err(Error::InvalidInput(format!(
            "image is {}x{}, smaller than the target {}",
            raw.width, raw.height, cfg.size
        )));
    }
    if raw.data.len() != 3 * raw.width * raw.height {
        return Err(Error::InvalidInput("pixel buffer does not match dimensions".into()));
    }
    let resized = if raw.width == cfg.size {
        raw.clone()
    } else {
        resize_area(raw, cfg.size, cfg.size)
    };
    let data = resized.data.iter().map(|&v| (v * 2.0 - 1.0).clamp(-1.0, 1.0)).collect();
    let img = FaceImage { size: cfg.size, data };
    Ok(if augment && cfg.flip && rng.random_bool(0.5) {
        img.flipped()
    } else {
        img
    })
}

pub fn read_png(path: &Path) -> Result<RawImage> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(|e| png_error(path, e))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(|e| png_error(path, e))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => {
            return Err(Error::Format(format!("{}: unexpanded palette image", path.display())))
        }
    };
    let mut data = vec![0.0f32; 3 * w * h];
    for p in 0..w * h {
        let px = &buf[p * channels..][..channels];
        for c in 0..3 {
            let v = if channels < 3 { px[0] } else { px[c] };
            data[c * w * h + p] = v as f32 / 255.0;
        }
    }
    Ok(RawImage {
        width: w,
        height: h,
        data,
    })
}

/// Writes an 8-bit RGB PNG from channel-major `[3, h, w]` data in `[-1, 1]`.
pub fn write_png(path: &Path, width: usize, height: usize, data: &[f32]) -> Result<()> {
    assert_eq!(data.len(), 3 * width * height, "pixel buffer does not match dimensions");
    let mut rgb = vec![0u8; 3 * width * height];
    for p in 0..width * height {
        for c in 0..3 {
            let v = (data[c * width * height + p].clamp(-1.0, 1.0) + 1.0) * 0.5;
            rgb[p * 3 + c] = (v * 255.0).round() as u8;
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| png_enc_error(path, e))?;
    w.write_image_data(&rgb).map_err(|e| png_enc_error(path, e))?;
    w.finish().map_err(|e| png_enc_error(path, e))
}

pub fn write_face(path: &Path, img: &FaceImage) -> Result<()> {
    write_png(path, img.size, img.size, &img.data)
}

/// Tiles equally sized images into a grid with a 2-pixel mid-gray border.
pub fn mosaic(images: &[FaceImage], cols: usize) -> (usize, usize, Vec<f32>) {
    let s = images.first().map_or(1, |i| i.size);
    let cols = cols.max(1).min(images.len().max(1));
    let rows = images.len().div_ceil(cols).max(1);
    let pad = 2;
    let (w, h) = (cols * (s + pad) + pad, rows * (s + pad) + pad);
    let mut data = vec![0.0f32; 3 * w * h];
    for (k, img) in images.iter().enumerate() {
        let (r, c) = (k / cols, k % cols);
        let (oy, ox) = (pad + r * (s + pad), pad + c * (s + pad));
        for ch in 0..3 {
            for y in 0..s {
                for x in 0..s {
                    data[(ch * h + oy + y) * w + ox + x] = img.data[(ch * s + y) * s + x];
                }
            }
        }
    }
    (w, h, data)
}

fn png_error(path: &Path, e: png::DecodingError) -> Error {
    match e {
        png::DecodingError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

fn png_enc_error(path: &Path, e: png::EncodingError) -> Error {
    match e {
        png::EncodingError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn constant(size: usize, v: f32) -> RawImage {
        RawImage {
            width: size,
            height: size,
            data: vec![v; 3 * size * size],
        }
    }

    #[test]
    fn resizes_224_to_128_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let raw = RawImage {
            width: 224,
            height: 224,
            data: (0..3 * 224 * 224).map(|i| ((i * 7919) % 256) as f32 / 255.0).collect(),
        };
        let img = preprocess_image(&raw, &ImageConfig::default(), true, &mut rng).unwrap();
        assert_eq!(img.size, 128);
        assert_eq!(img.data.len(), 3 * 128 * 128);
        assert!(img.data.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn mid_gray_maps_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = preprocess_image(&constant(224, 0.5), &ImageConfig::default(), false, &mut rng).unwrap();
        assert!(img.data.iter().all(|&v| v.abs() < 1e-6));
    }

    #[test]
    fn rejects_bad_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = ImageConfig::default();
        let wide = RawImage {
            width: 200,
            height: 150,
            data: vec![0.0; 3 * 200 * 150],
        };
        assert!(matches!(preprocess_image(&wide, &cfg, false, &mut rng), Err(Error::InvalidInput(_))));
        assert!(matches!(preprocess_image(&constant(64, 0.1), &cfg, false, &mut rng), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn area_resize_preserves_mean() {
        let raw = RawImage {
            width: 10,
            height: 10,
            data: (0..300).map(|i| (i % 17) as f32 / 16.0).collect(),
        };
        let small = resize_area(&raw, 3, 3);
        for c in 0..3 {
            let m_in: f32 = raw.data[c * 100..(c + 1) * 100].iter().sum::<f32>() / 100.0;
            let m_out: f32 = small.data[c * 9..(c + 1) * 9].iter().sum::<f32>() / 9.0;
            assert!((m_in - m_out).abs() < 1e-5);
        }
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.png");
        let img = FaceImage::new(4, (0..48).map(|i| i as f32 / 47.0 * 2.0 - 1.0).collect()).unwrap();
        write_face(&path, &img).unwrap();
        let raw = read_png(&path).unwrap();
        let back: Vec<f32> = raw.data.iter().map(|v| v * 2.0 - 1.0).collect();
        assert!(img.data.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1.0 / 127.0));
    }
}
