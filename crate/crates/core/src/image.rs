//! Grayscale images, PGM/PNG codecs, display windowing, synthetic noise
//! and the squared-error primitive shared by the losses.

use std::fmt;
use std::io::Cursor;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major grayscale image with real-valued intensities.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl fmt::Debug for Image {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Image")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Input(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::Input(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|p| !p.is_finite()) {
            return Err(Error::Numeric(format!("non-finite pixel at index {i}")));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Builds an image from pixels that are already known to be valid.
    pub(crate) fn from_raw(width: usize, height: usize, pixels: Vec<f64>) -> Self {
        debug_assert_eq!(pixels.len(), width * height);
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn ensure_same_dims(&self, other: &Image) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Shape {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        Ok(())
    }

    /// Applies `f` pixelwise to produce an image of the same dimensions.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Image {
        Image::from_raw(
            self.width,
            self.height,
            self.pixels.iter().map(|&p| f(p)).collect(),
        )
    }

    pub(crate) fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Image {
        debug_assert_eq!(self.dims(), other.dims());
        Image::from_raw(
            self.width,
            self.height,
            self.pixels
                .iter()
                .zip(&other.pixels)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn sub(&self, other: &Image) -> Result<Image> {
        self.ensure_same_dims(other)?;
        Ok(self.zip_map(other, |a, b| a - b))
    }

    pub fn add(&self, other: &Image) -> Result<Image> {
        self.ensure_same_dims(other)?;
        Ok(self.zip_map(other, |a, b| a + b))
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Image) -> Result<f64> {
        self.ensure_same_dims(other)?;
        Ok(self
            .pixels
            .iter()
            .zip(&other.pixels)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Inner product of the pixel vectors.
    pub fn dot(&self, other: &Image) -> Result<f64> {
        self.ensure_same_dims(other)?;
        Ok(self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| a * b)
            .sum())
    }
}

/// Supported on-disk formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImageFormat {
    Pgm8,
    Pgm16,
    PngGray,
}

impl ImageFormat {
    /// Guesses the format from a file extension. `.pgm` maps to 16-bit PGM
    /// on write; on read the header decides the depth.
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        match ext.as_deref() {
            Some("pgm") | Some("pnm") => Ok(ImageFormat::Pgm16),
            Some("png") => Ok(ImageFormat::PngGray),
            _ => Err(Error::UnsupportedFormat(format!(
                "cannot infer image format from {}",
                path.display()
            ))),
        }
    }

    pub fn max_value(self) -> f64 {
        match self {
            ImageFormat::Pgm8 => 255.0,
            ImageFormat::Pgm16 => 65535.0,
            ImageFormat::PngGray => 255.0,
        }
    }

    fn is_pgm(self) -> bool {
        matches!(self, ImageFormat::Pgm8 | ImageFormat::Pgm16)
    }
}

impl FromStr for ImageFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pgm8" => Ok(ImageFormat::Pgm8),
            "pgm16" => Ok(ImageFormat::Pgm16),
            "png" | "png-gray" => Ok(ImageFormat::PngGray),
            other => Err(Error::Input(format!("unknown image format '{other}'"))),
        }
    }
}

/// Decodes an image and maps intensities linearly to [0, 1].
///
/// For PGM the declared format only decides whether 16-bit samples are
/// acceptable; the header's maxval is the divisor.
pub fn load_image(bytes: &[u8], format: ImageFormat) -> Result<Image> {
    if bytes.is_empty() {
        return Err(Error::Format("empty stream".into()));
    }
    if format.is_pgm() {
        decode_pgm(bytes, format)
    } else {
        decode_png(bytes)
    }
}

pub fn save_image(img: &Image, format: ImageFormat) -> Result<Vec<u8>> {
    match format {
        ImageFormat::Pgm8 => Ok(encode_pgm(img, 255)),
        ImageFormat::Pgm16 => Ok(encode_pgm(img, 65535)),
        ImageFormat::PngGray => encode_png(img),
    }
}

pub fn read_image(path: &Path) -> Result<Image> {
    let format = ImageFormat::from_path(path)?;
    let bytes = std::fs::read(path)?;
    load_image(&bytes, format)
}

pub fn write_image(img: &Image, path: &Path) -> Result<()> {
    let format = ImageFormat::from_path(path)?;
    std::fs::write(path, save_image(img, format)?)?;
    Ok(())
}

fn quantize(value: f64, max: u32) -> u32 {
    (value.clamp(0.0, 1.0) * max as f64).round() as u32
}

struct PgmHeader {
    width: usize,
    height: usize,
    maxval: u32,
    data_offset: usize,
}

fn parse_pgm_header(bytes: &[u8]) -> Result<PgmHeader> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(Error::Format("missing PNM magic number".into()));
    }
    match bytes[1] {
        b'5' => {}
        b'2' => {
            return Err(Error::UnsupportedFormat(
                "plain (ASCII) PGM is not supported, expected P5".into(),
            ))
        }
        b'3' | b'6' | b'7' => {
            return Err(Error::UnsupportedFormat(
                "multi-channel PNM input, expected single-channel P5".into(),
            ))
        }
        _ => return Err(Error::Format("unrecognized PNM magic number".into())),
    }

    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in &mut fields {
        // whitespace and comments may precede every header token
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated or malformed PGM header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("PGM header value out of range".into()))?;
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Format("missing whitespace after PGM maxval".into())),
    }

    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::Format("PGM with zero dimension".into()));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("invalid PGM maxval {maxval}")));
    }
    Ok(PgmHeader {
        width: width as usize,
        height: height as usize,
        maxval,
        data_offset: pos,
    })
}

fn decode_pgm(bytes: &[u8], format: ImageFormat) -> Result<Image> {
    let header = parse_pgm_header(bytes)?;
    let wide = header.maxval > 255;
    if wide && format == ImageFormat::Pgm8 {
        return Err(Error::Format(format!(
            "declared 8-bit PGM but maxval is {}",
            header.maxval
        )));
    }
    let n = header.width * header.height;
    let sample_bytes = if wide { 2 } else { 1 };
    let data = &bytes[header.data_offset..];
    if data.len() < n * sample_bytes {
        return Err(Error::Format(format!(
            "PGM raster truncated: need {} bytes, have {}",
            n * sample_bytes,
            data.len()
        )));
    }
    let scale = header.maxval as f64;
    let pixels = if wide {
        data[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale)
            .collect()
    } else {
        data[..n].iter().map(|&b| b as f64 / scale).collect()
    };
    Image::new(header.width, header.height, pixels)
}

fn encode_pgm(img: &Image, maxval: u32) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, maxval).into_bytes();
    if maxval > 255 {
        out.reserve(img.len() * 2);
        for &p in &img.pixels {
            out.extend_from_slice(&(quantize(p, maxval) as u16).to_be_bytes());
        }
    } else {
        out.extend(img.pixels.iter().map(|&p| quantize(p, maxval) as u8));
    }
    out
}

fn decode_png(bytes: &[u8]) -> Result<Image> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    // expands 1/2/4-bit gray to 8 bits; 16-bit samples are left intact
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    let (color, depth) = reader.output_color_type();
    if color != png::ColorType::Grayscale {
        return Err(Error::UnsupportedFormat(format!(
            "png color type {color:?}, expected single-channel grayscale"
        )));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format("png: image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    let (width, height) = (info.width as usize, info.height as usize);
    let mut pixels = Vec::with_capacity(width * height);
    for row in buf.chunks(info.line_size).take(height) {
        match depth {
            png::BitDepth::Sixteen => pixels.extend(
                row[..2 * width]
                    .chunks_exact(2)
                    .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0),
            ),
            _ => pixels.extend(row[..width].iter().map(|&b| b as f64 / 255.0)),
        }
    }
    Image::new(width, height, pixels)
}

fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::Format(format!("png: {e}")))?;
        let data: Vec<u8> = img.pixels.iter().map(|&p| quantize(p, 255) as u8).collect();
        writer
            .write_image_data(&data)
            .map_err(|e| Error::Format(format!("png: {e}")))?;
    }
    Ok(out)
}

/// Center/width intensity window used for display.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisplayWindow {
    pub center: f64,
    pub width: f64,
}

impl DisplayWindow {
    pub fn new(center: f64, width: f64) -> Result<Self> {
        if !width.is_finite() || width <= 0.0 || !center.is_finite() {
            return Err(Error::Input(format!(
                "window width must be positive and finite, got center={center} width={width}"
            )));
        }
        Ok(Self { center, width })
    }
}

impl Default for DisplayWindow {
    fn default() -> Self {
        Self {
            center: 0.5,
            width: 1.0,
        }
    }
}

pub fn apply_window(img: &Image, window: DisplayWindow) -> Image {
    let low = window.center - window.width / 2.0;
    img.map(|p| ((p - low) / window.width).clamp(0.0, 1.0))
}

/// Noise models for synthesizing low-dose frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseModel {
    Gaussian { std: f64 },
    /// Photon-count noise: `k ~ Poisson(pixel * scale) / scale`.
    Poisson { scale: f64 },
}

pub fn add_noise(img: &Image, model: NoiseModel, seed: u64) -> Result<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match model {
        NoiseModel::Gaussian { std } => {
            if !std.is_finite() || std < 0.0 {
                return Err(Error::ParamRange(format!("noise std must be >= 0, got {std}")));
            }
            if std == 0.0 {
                return Ok(img.clone());
            }
            let normal = Normal::new(0.0, std)
                .map_err(|e| Error::ParamRange(format!("gaussian noise: {e}")))?;
            Ok(img.map(|p| p + normal.sample(&mut rng)))
        }
        NoiseModel::Poisson { scale } => {
            if !scale.is_finite() || scale <= 0.0 {
                return Err(Error::ParamRange(format!(
                    "poisson scale must be > 0, got {scale}"
                )));
            }
            let pixels = img
                .pixels
                .iter()
                .map(|&p| {
                    let lambda = p * scale;
                    if lambda > 0.0 && lambda.is_finite() {
                        // Poisson::new only fails on non-positive or huge lambda
                        Poisson::new(lambda)
                            .map(|d| d.sample(&mut rng) / scale)
                            .unwrap_or(p)
                    } else {
                        0.0
                    }
                })
                .collect();
            Image::new(img.width, img.height, pixels)
        }
    }
}

/// Per-pixel mean of squared differences.
pub fn sum_squared_diff(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let total: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(total / a.len() as f64)
}
