//! Image, mask, depth and feature rasters and their on-disk formats.
//!
//! Colour images are stored on disk as 8-bit sRGB PNG and held in memory as
//! linear RGB in `[0, 1]`, using the IEC 61966-2-1 transfer function:
//!
//! ```text
//! linear = s / 12.92                      if s <= 0.04045
//!        = ((s + 0.055) / 1.055)^2.4      otherwise
//! s      = 12.92 * linear                 if linear <= 0.0031308
//!        = 1.055 * linear^(1/2.4) - 0.055 otherwise
//! ```
//!
//! Raster formats (little-endian):
//!
//! * depth: `u32 width, u32 height, f32 scale`, then `width * height` `f32`
//!   values row-major. Depth in scene units is `value * scale`; `0` marks an
//!   undefined pixel.
//! * features: `u32 width, u32 height, u32 channels`, then
//!   `width * height * channels` `f32` values, row-major with channels
//!   innermost.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use crate::error::{Error, Result};

pub fn srgb_to_linear(s: f64) -> f64 {
    if s <= 0.04045 {
        s / 12.92
    } else {
        ((s + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb(l: f64) -> f64 {
    if l <= 0.0031308 {
        12.92 * l
    } else {
        1.055 * l.powf(1.0 / 2.4) - 0.055
    }
}

fn decode_lut() -> &'static [f32; 256] {
    static LUT: OnceLock<[f32; 256]> = OnceLock::new();
    LUT.get_or_init(|| {
        let mut lut = [0f32; 256];
        for (i, v) in lut.iter_mut().enumerate() {
            *v = srgb_to_linear(i as f64 / 255.0) as f32;
        }
        lut
    })
}

pub fn srgb8_to_linear(v: u8) -> f32 {
    decode_lut()[v as usize]
}

pub fn linear_to_srgb8(l: f32) -> u8 {
    let s = linear_to_srgb((l as f64).clamp(0.0, 1.0));
    (s * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Linear RGB image, row-major, 3 interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn get(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, row: usize, col: usize, rgb: [f32; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn to_srgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| linear_to_srgb8(v)).collect()
    }

    pub fn from_srgb8(width: usize, height: usize, bytes: &[u8]) -> Self {
        Self {
            width,
            height,
            data: bytes.iter().map(|&b| srgb8_to_linear(b)).collect(),
        }
    }

    /// The image as it reads back after an 8-bit sRGB save.
    pub fn quantized(&self) -> Self {
        Self::from_srgb8(self.width, self.height, &self.to_srgb8())
    }

    /// Stored 8-bit sRGB values normalised to `[0, 1]`; the domain metrics
    /// are computed in.
    pub fn display_values(&self) -> Vec<f64> {
        self.to_srgb8().iter().map(|&b| b as f64 / 255.0).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![true; width * height],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.data[row * self.width + col] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    /// Scene units; `0` where undefined.
    pub data: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f32) {
        self.data[row * self.width + col] = v;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [f32] {
        let i = (row * self.width + col) * self.channels;
        &mut self.data[i..i + self.channels]
    }
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn open(path: &Path) -> Result<File> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(File::open(path)?)
}

struct Decoded {
    width: usize,
    height: usize,
    channels: usize,
    bytes: Vec<u8>,
}

fn decode_png(path: &Path) -> Result<Decoded> {
    let mut decoder = png::Decoder::new(BufReader::new(open(path)?));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| format_err(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf)?;
    buf.truncate(info.buffer_size());
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(format_err(path, "unexpanded palette")),
    };
    Ok(Decoded {
        width: info.width as usize,
        height: info.height as usize,
        channels,
        bytes: buf,
    })
}

fn encode_png(path: &Path, width: usize, height: usize, color: png::ColorType, bytes: &[u8]) -> Result<()> {
    let file = File::create(path)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header()?;
    writer.write_image_data(bytes)?;
    writer.finish()?;
    Ok(())
}

/// Reads an 8-bit PNG (grey, RGB or RGBA; alpha dropped) as linear RGB.
pub fn read_image(path: &Path) -> Result<Image> {
    let d = decode_png(path)?;
    let mut rgb = Vec::with_capacity(d.width * d.height * 3);
    for px in d.bytes.chunks_exact(d.channels) {
        match d.channels {
            1 | 2 => rgb.extend_from_slice(&[px[0]; 3]),
            _ => rgb.extend_from_slice(&px[..3]),
        }
    }
    Ok(Image::from_srgb8(d.width, d.height, &rgb))
}

pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    encode_png(path, image.width, image.height, png::ColorType::Rgb, &image.to_srgb8())
}

/// Reads a mask PNG. Every value must be 0 or 255.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let d = decode_png(path)?;
    let mut mask = Mask::new(d.width, d.height);
    for (i, px) in d.bytes.chunks_exact(d.channels).enumerate() {
        let v = px[0];
        if v != 0 && v != 255 {
            return Err(Error::NonBinaryMask {
                path: path.to_path_buf(),
                value: v,
            });
        }
        mask.data[i] = v == 255;
    }
    Ok(mask)
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let bytes: Vec<u8> = mask.data.iter().map(|&m| if m { 255 } else { 0 }).collect();
    encode_png(path, mask.width, mask.height, png::ColorType::Grayscale, &bytes)
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn read_depth(path: &Path) -> Result<DepthMap> {
    let mut bytes = Vec::new();
    open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 12 {
        return Err(format_err(path, "truncated depth header"));
    }
    let width = read_u32(&bytes, 0) as usize;
    let height = read_u32(&bytes, 4) as usize;
    let scale = f32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if bytes.len() != 12 + width * height * 4 {
        return Err(format_err(path, "depth payload length does not match header"));
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) * scale)
        .collect();
    Ok(DepthMap { width, height, data })
}

/// Writes with `scale = 1`, so values round-trip exactly.
pub fn write_depth(path: &Path, depth: &DepthMap) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&(depth.width as u32).to_le_bytes())?;
    w.write_all(&(depth.height as u32).to_le_bytes())?;
    w.write_all(&1f32.to_le_bytes())?;
    for v in &depth.data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<FeatureMap> {
    let mut bytes = Vec::new();
    open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 12 {
        return Err(format_err(path, "truncated feature header"));
    }
    let width = read_u32(&bytes, 0) as usize;
    let height = read_u32(&bytes, 4) as usize;
    let channels = read_u32(&bytes, 8) as usize;
    if bytes.len() != 12 + width * height * channels * 4 {
        return Err(format_err(path, "feature payload length does not match header"));
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(FeatureMap {
        width,
        height,
        channels,
        data,
    })
}

pub fn write_features(path: &Path, features: &FeatureMap) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in [features.width, features.height, features.channels] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    for v in &features.data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Bilinear resampling with pixel centres at `(j + 0.5, i + 0.5)` and
/// clamped borders.
pub fn resize_bilinear(image: &Image, width: usize, height: usize) -> Image {
    if (width, height) == (image.width, image.height) {
        return image.clone();
    }
    let mut out = Image::new(width, height);
    let sx = image.width as f64 / width as f64;
    let sy = image.height as f64 / height as f64;
    let clamp = |v: f64, n: usize| v.clamp(0.0, (n - 1) as f64);
    for r in 0..height {
        let y = clamp((r as f64 + 0.5) * sy - 0.5, image.height);
        let (y0, fy) = (y.floor() as usize, y - y.floor());
        let y1 = (y0 + 1).min(image.height - 1);
        for c in 0..width {
            let x = clamp((c as f64 + 0.5) * sx - 0.5, image.width);
            let (x0, fx) = (x.floor() as usize, x - x.floor());
            let x1 = (x0 + 1).min(image.width - 1);
            let mut px = [0f32; 3];
            let (a, b, cc, d) = (image.get(y0, x0), image.get(y0, x1), image.get(y1, x0), image.get(y1, x1));
            for k in 0..3 {
                let top = a[k] as f64 * (1.0 - fx) + b[k] as f64 * fx;
                let bot = cc[k] as f64 * (1.0 - fx) + d[k] as f64 * fx;
                px[k] = (top * (1.0 - fy) + bot * fy) as f32;
            }
            out.set(r, c, px);
        }
    }
    out
}

/// Box-filter downsampling by an integer factor; trailing partial blocks are dropped.
pub fn downsample_image(image: &Image, factor: usize) -> Image {
    if factor <= 1 {
        return image.clone();
    }
    let (w, h) = (image.width / factor, image.height / factor);
    let mut out = Image::new(w, h);
    let n = (factor * factor) as f64;
    for r in 0..h {
        for c in 0..w {
            let mut acc = [0f64; 3];
            for dr in 0..factor {
                for dc in 0..factor {
                    let p = image.get(r * factor + dr, c * factor + dc);
                    for k in 0..3 {
                        acc[k] += p[k] as f64;
                    }
                }
            }
            out.set(r, c, [(acc[0] / n) as f32, (acc[1] / n) as f32, (acc[2] / n) as f32]);
        }
    }
    out
}

/// A block is set when at least half its pixels are.
pub fn downsample_mask(mask: &Mask, factor: usize) -> Mask {
    if factor <= 1 {
        return mask.clone();
    }
    let (w, h) = (mask.width / factor, mask.height / factor);
    let mut out = Mask::new(w, h);
    for r in 0..h {
        for c in 0..w {
            let mut on = 0;
            for dr in 0..factor {
                for dc in 0..factor {
                    on += usize::from(mask.get(r * factor + dr, c * factor + dc));
                }
            }
            out.set(r, c, 2 * on >= factor * factor);
        }
    }
    out
}

/// Mean over the defined pixels of each block.
pub fn downsample_depth(depth: &DepthMap, factor: usize) -> DepthMap {
    if factor <= 1 {
        return depth.clone();
    }
    let (w, h) = (depth.width / factor, depth.height / factor);
    let mut out = DepthMap::new(w, h);
    for r in 0..h {
        for c in 0..w {
            let (mut acc, mut n) = (0f64, 0usize);
            for dr in 0..factor {
                for dc in 0..factor {
                    let v = depth.get(r * factor + dr, c * factor + dc);
                    if v > 0.0 {
                        acc += v as f64;
                        n += 1;
                    }
                }
            }
            if n > 0 {
                out.set(r, c, (acc / n as f64) as f32);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn srgb_round_trip_every_code() {
        for v in 0..=255u8 {
            assert_eq!(linear_to_srgb8(srgb8_to_linear(v)), v);
        }
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let bytes: Vec<u8> = (0..4 * 3 * 3).map(|i| (i * 7 % 256) as u8).collect();
        let img = Image::from_srgb8(4, 3, &bytes);
        let p = dir.path().join("a.png");
        write_image(&p, &img).unwrap();
        let back = read_image(&p).unwrap();
        assert_eq!(back, img);
        assert_eq!(back.to_srgb8(), bytes);
    }

    #[test]
    fn grey_mask_value_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        encode_png(&p, 2, 1, png::ColorType::Grayscale, &[0, 128]).unwrap();
        match read_mask(&p) {
            Err(Error::NonBinaryMask { value, .. }) => assert_eq!(value, 128),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn depth_and_feature_rasters_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = DepthMap::new(3, 2);
        d.set(1, 2, 3.25);
        d.set(0, 0, 1e-3);
        let p = dir.path().join("d.depth");
        write_depth(&p, &d).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 12 + 6 * 4);
        assert_eq!(read_depth(&p).unwrap(), d);

        let mut f = FeatureMap::new(2, 2, 3);
        f.pixel_mut(1, 1)[2] = -0.5;
        let p = dir.path().join("f.feat");
        write_features(&p, &f).unwrap();
        assert_eq!(read_features(&p).unwrap(), f);
    }

    #[test]
    fn upsampling_constant_stays_constant() {
        let img = Image::filled(5, 3, [0.25, 0.5, 0.75]);
        let up = resize_bilinear(&img, 20, 12);
        assert!(up.data.chunks_exact(3).all(|p| p == [0.25, 0.5, 0.75]));
        assert_eq!(resize_bilinear(&img, 5, 3), img);
    }
}
