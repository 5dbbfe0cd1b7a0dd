//! Grayscale images: binary PGM I/O and synthetic test images.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::RngConfig;
use crate::signal::Signal;

pub const PEAK: f64 = 255.0;
pub const MID_GRAY: f64 = 128.0;

/// A row-major grayscale image whose pixels are unrounded reals.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Signal,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Signal) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(
                "image dimensions must be positive".into(),
            ));
        }
        if pixels.dim() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                actual: pixels.dim(),
            });
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Encodes as binary PGM (`P5`, maxval 255). Pixels are rounded and
    /// clamped to `[0, 255]` here and nowhere else.
    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().map(|v| v.round().clamp(0.0, PEAK) as u8));
        out
    }

    pub fn from_pgm_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let magic = next_token(bytes, &mut pos)?;
        if magic != b"P5" {
            return Err(Error::Format("not a binary PGM (expected P5)".into()));
        }
        let width = parse_usize(next_token(bytes, &mut pos)?)?;
        let height = parse_usize(next_token(bytes, &mut pos)?)?;
        let maxval = parse_usize(next_token(bytes, &mut pos)?)?;
        if maxval != 255 {
            return Err(Error::Format(format!("unsupported PGM maxval {maxval}")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        let n = width * height;
        let raster = bytes
            .get(pos..pos + n)
            .ok_or_else(|| Error::Format("truncated PGM raster".into()))?;
        let pixels = Signal::new(raster.iter().map(|&b| f64::from(b)).collect())?;
        GrayImage::new(width, height, pixels)
    }

    pub fn read_pgm(path: &Path) -> Result<Self> {
        Self::from_pgm_bytes(&fs::read(path)?)
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_pgm_bytes())?;
        Ok(())
    }
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("truncated PGM header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn parse_usize(token: &[u8]) -> Result<usize> {
    std::str::from_utf8(token)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format("bad PGM header field".into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageKind {
    /// Horizontal ramp with a per-row offset.
    Gradient,
    /// Multi-octave smooth noise stretched to the full pixel range.
    TextureNoise,
    /// A few Gaussian blobs over a flat background.
    Blobs,
}

impl ImageKind {
    pub fn from_name(name: &str) -> Option<ImageKind> {
        match name {
            "gradient" => Some(ImageKind::Gradient),
            "texture-noise" => Some(ImageKind::TextureNoise),
            "blobs" => Some(ImageKind::Blobs),
            _ => None,
        }
    }
}

/// Synthetic grayscale image with values in `[0, 255]`.
pub fn synth_image(
    width: usize,
    height: usize,
    kind: ImageKind,
    rng: RngConfig,
) -> Result<GrayImage> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidParameter(
            "image dimensions must be positive".into(),
        ));
    }
    let mut rng = rng.rng();
    let mut px = vec![0.0; width * height];
    match kind {
        ImageKind::Gradient => {
            let slope = rng.random_range(0.5..1.0);
            let span = (width.max(2) - 1) as f64;
            for y in 0..height {
                let offset = rng.random_range(0.0..(1.0 - slope)) * PEAK;
                for x in 0..width {
                    px[y * width + x] = offset + slope * PEAK * x as f64 / span;
                }
            }
        }
        ImageKind::TextureNoise => {
            let mut amplitude = 1.0;
            let mut cell = (width.max(height) as f64 / 2.0).max(1.0);
            while cell >= 1.0 {
                add_value_noise(&mut px, width, height, cell, amplitude, &mut rng);
                amplitude *= 0.6;
                cell /= 2.0;
            }
            stretch(&mut px);
        }
        ImageKind::Blobs => {
            let background = rng.random_range(40.0..100.0);
            px.iter_mut().for_each(|p| *p = background);
            for _ in 0..rng.random_range(3..7) {
                let cx = rng.random_range(0.0..width as f64);
                let cy = rng.random_range(0.0..height as f64);
                let r = rng.random_range(0.1..0.35) * width.min(height) as f64;
                let a = rng.random_range(-60.0..150.0);
                for y in 0..height {
                    for x in 0..width {
                        let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                        px[y * width + x] += a * (-d2 / (2.0 * r * r)).exp();
                    }
                }
            }
            for p in &mut px {
                let n: f64 = StandardNormal.sample(&mut rng);
                *p = (*p + 3.0 * n).clamp(0.0, PEAK);
            }
        }
    }
    GrayImage::new(width, height, Signal::new(px)?)
}

/// Bilinearly interpolated lattice noise with the given cell size.
fn add_value_noise(
    px: &mut [f64],
    width: usize,
    height: usize,
    cell: f64,
    amplitude: f64,
    rng: &mut impl Rng,
) {
    let gw = (width as f64 / cell).ceil() as usize + 2;
    let gh = (height as f64 / cell).ceil() as usize + 2;
    let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.random_range(-1.0..1.0)).collect();
    for y in 0..height {
        let fy = y as f64 / cell;
        let (y0, ty) = (fy.floor() as usize, fy.fract());
        for x in 0..width {
            let fx = x as f64 / cell;
            let (x0, tx) = (fx.floor() as usize, fx.fract());
            let at = |i: usize, j: usize| lattice[j * gw + i];
            let top = at(x0, y0) * (1.0 - tx) + at(x0 + 1, y0) * tx;
            let bottom = at(x0, y0 + 1) * (1.0 - tx) + at(x0 + 1, y0 + 1) * tx;
            px[y * width + x] += amplitude * (top * (1.0 - ty) + bottom * ty);
        }
    }
}

fn stretch(px: &mut [f64]) {
    let lo = px.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = px.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(f64::EPSILON);
    px.iter_mut().for_each(|p| *p = (*p - lo) / span * PEAK);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_rows_are_monotone() {
        let img = synth_image(4, 4, ImageKind::Gradient, RngConfig::new(1, 0)).unwrap();
        for y in 0..4 {
            for x in 1..4 {
                assert!(img.get(x, y) >= img.get(x - 1, y));
            }
        }
        assert!(img.pixels.iter().all(|&p| (0.0..=PEAK).contains(&p)));
    }

    #[test]
    fn same_seed_same_image() {
        for kind in [
            ImageKind::Gradient,
            ImageKind::TextureNoise,
            ImageKind::Blobs,
        ] {
            let a = synth_image(16, 8, kind, RngConfig::new(3, 2)).unwrap();
            let b = synth_image(16, 8, kind, RngConfig::new(3, 2)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn zero_dimensions_rejected() {
        assert!(synth_image(0, 4, ImageKind::Blobs, RngConfig::new(1, 0)).is_err());
        assert!(synth_image(4, 0, ImageKind::Blobs, RngConfig::new(1, 0)).is_err());
    }

    #[test]
    fn texture_images_are_distinct_and_cover_the_range() {
        // Histogram-coverage oracle: fraction of 32 equal-width bins hit.
        let images: Vec<GrayImage> = (0..50)
            .map(|i| {
                synth_image(
                    32,
                    32,
                    ImageKind::TextureNoise,
                    RngConfig::new(11, 0).substream(i),
                )
                .unwrap()
            })
            .collect();
        for (i, img) in images.iter().enumerate() {
            let mut bins = [false; 32];
            for &p in img.pixels.iter() {
                bins[((p / 256.0 * 32.0) as usize).min(31)] = true;
            }
            let coverage = bins.iter().filter(|&&b| b).count() as f64 / 32.0;
            assert!(coverage > 0.8, "image {i} covers {coverage}");
            for other in &images[..i] {
                assert_ne!(other.pixels, img.pixels);
            }
        }
    }

    #[test]
    fn pgm_round_trip_rounds_and_clamps() {
        let px = Signal::new(vec![0.4, 254.6, 300.0, -5.0, 12.0, 128.49]).unwrap();
        let img = GrayImage::new(3, 2, px).unwrap();
        let bytes = img.to_pgm_bytes();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        let back = GrayImage::from_pgm_bytes(&bytes).unwrap();
        assert_eq!(
            back.pixels.as_slice(),
            &[0.0, 255.0, 255.0, 0.0, 12.0, 128.0]
        );
        assert_eq!(back.to_pgm_bytes(), bytes);
    }

    #[test]
    fn pgm_header_comments_and_errors() {
        let mut bytes = b"P5 # comment\n2 1\n255\n".to_vec();
        bytes.extend([7u8, 9]);
        let img = GrayImage::from_pgm_bytes(&bytes).unwrap();
        assert_eq!(img.pixels.as_slice(), &[7.0, 9.0]);
        assert!(GrayImage::from_pgm_bytes(b"P2\n1 1\n255\n0").is_err());
        assert!(GrayImage::from_pgm_bytes(b"P5\n4 4\n255\n\x01").is_err());
        assert!(GrayImage::from_pgm_bytes(b"P5\n1 1\n65535\n\x01\x01").is_err());
    }
}
