//! Raster types shared by every stage, and their PNG persistence.
//!
//! All pixel values are `f32` in `[0, 1]`; quantization only happens when
//! reading or writing PNG files. Color images are stored planar
//! (`[channel][row][col]`), which is also the layout the networks consume.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidValue(format!(
            "image must be at least 1x1, got {height}x{width}"
        )));
    }
    Ok(())
}

fn check_unit_range(data: &[f32], what: &str) -> Result<()> {
    match data.iter().position(|v| !(0.0..=1.0).contains(v)) {
        Some(i) => Err(Error::InvalidValue(format!(
            "{what} value {} at index {i} is outside [0, 1]",
            data[i]
        ))),
        None => Ok(()),
    }
}

/// Three-channel color image, planar, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl RgbImage {
    /// Build from planar data (`3 * height * width` values).
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(height, width)?;
        if data.len() != 3 * height * width {
            return Err(Error::DimensionMismatch(format!(
                "rgb {height}x{width} needs {} values, got {}",
                3 * height * width,
                data.len()
            )));
        }
        check_unit_range(&data, "rgb")?;
        Ok(RgbImage {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(3 * height * width);
        for c in 0..3 {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        Self::from_fn(height, width, |c, _, _| rgb[c])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }
}

/// Single-channel opacity matte, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaMatte {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl AlphaMatte {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(height, width)?;
        if data.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "alpha {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        check_unit_range(&data, "alpha")?;
        Ok(AlphaMatte {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrimapLabel {
    Background,
    Unknown,
    Foreground,
}

impl TrimapLabel {
    pub fn to_byte(self) -> u8 {
        match self {
            TrimapLabel::Background => 0,
            TrimapLabel::Unknown => 128,
            TrimapLabel::Foreground => 255,
        }
    }

    /// Snap a byte to the nearest label, tolerating ±8 levels.
    pub fn from_byte(v: u8) -> Option<Self> {
        match v {
            0..=8 => Some(TrimapLabel::Background),
            120..=136 => Some(TrimapLabel::Unknown),
            247..=255 => Some(TrimapLabel::Foreground),
            _ => None,
        }
    }

    /// Value of the label on a network input plane.
    pub fn plane_value(self) -> f32 {
        match self {
            TrimapLabel::Background => 0.0,
            TrimapLabel::Unknown => 0.5,
            TrimapLabel::Foreground => 1.0,
        }
    }
}

/// Three-region annotation: definite background, unknown, definite foreground.
#[derive(Clone, Debug, PartialEq)]
pub struct Trimap {
    height: usize,
    width: usize,
    labels: Vec<TrimapLabel>,
}

impl Trimap {
    pub fn new(height: usize, width: usize, labels: Vec<TrimapLabel>) -> Result<Self> {
        check_dims(height, width)?;
        if labels.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "trimap {height}x{width} needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(Trimap {
            height,
            width,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, label: TrimapLabel) -> Result<Self> {
        Self::new(height, width, vec![label; height * width])
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> TrimapLabel) -> Result<Self> {
        let mut labels = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                labels.push(f(y, x));
            }
        }
        Self::new(height, width, labels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn labels(&self) -> &[TrimapLabel] {
        &self.labels
    }

    pub fn get(&self, y: usize, x: usize) -> TrimapLabel {
        self.labels[y * self.width + x]
    }

    fn mask_of(&self, label: TrimapLabel) -> RegionMask {
        RegionMask {
            height: self.height,
            width: self.width,
            bits: self.labels.iter().map(|&l| l == label).collect(),
        }
    }

    pub fn foreground(&self) -> RegionMask {
        self.mask_of(TrimapLabel::Foreground)
    }

    pub fn background(&self) -> RegionMask {
        self.mask_of(TrimapLabel::Background)
    }

    pub fn unknown(&self) -> RegionMask {
        self.mask_of(TrimapLabel::Unknown)
    }

    /// Network input plane: background 0.0, unknown 0.5, foreground 1.0.
    pub fn plane(&self) -> Vec<f32> {
        self.labels.iter().map(|l| l.plane_value()).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.labels.iter().map(|l| l.to_byte()).collect()
    }
}

/// See [`Trimap::plane`].
pub fn trimap_plane(t: &Trimap) -> Vec<f32> {
    t.plane()
}

/// Per-pixel selection of a region.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl RegionMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "mask {height}x{width} needs {} bits, got {}",
                height * width,
                bits.len()
            )));
        }
        Ok(RegionMask {
            height,
            width,
            bits,
        })
    }

    pub fn full(height: usize, width: usize) -> Self {
        RegionMask {
            height,
            width,
            bits: vec![true; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }
}

/// Bit depth used when writing PNG files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn max_value(self) -> u32 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }

    pub fn from_bits(bits: u8) -> Result<Self> {
        match bits {
            8 => Ok(BitDepth::Eight),
            16 => Ok(BitDepth::Sixteen),
            other => Err(Error::InvalidValue(format!("bit depth must be 8 or 16, got {other}"))),
        }
    }
}

/// Round-half-up quantization of a unit value.
pub fn quantize(v: f32, depth: BitDepth) -> u16 {
    let max = depth.max_value() as f64;
    ((v.clamp(0.0, 1.0) as f64) * max + 0.5).floor() as u16
}

/// Decoded PNG samples, interleaved, widened to `u16`.
struct DecodedPng {
    width: usize,
    height: usize,
    channels: usize,
    max: u16,
    samples: Vec<u16>,
}

fn decode_png(path: &Path) -> Result<DecodedPng> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |reason: String| Error::Image {
        path: path.to_path_buf(),
        reason,
    };
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| corrupt(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| corrupt("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| corrupt(e.to_string()))?;
    let (width, height) = (info.width as usize, info.height as usize);
    if width == 0 || height == 0 {
        return Err(corrupt("zero-sized image".into()));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(corrupt("palette not expanded".into())),
    };
    let count = width * height * channels;
    let (samples, max) = match info.bit_depth {
        png::BitDepth::Eight => (buf[..count].iter().map(|&b| b as u16).collect(), 255),
        png::BitDepth::Sixteen => (
            buf[..2 * count]
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect(),
            65535,
        ),
        other => return Err(corrupt(format!("unsupported bit depth {other:?}"))),
    };
    Ok(DecodedPng {
        width,
        height,
        channels,
        max,
        samples,
    })
}

impl DecodedPng {
    /// Single gray plane: gray(+alpha) directly, or RGB(A) whose color
    /// channels agree everywhere.
    fn gray_plane(&self, path: &Path) -> Result<Vec<u16>> {
        let n = self.width * self.height;
        let c = self.channels;
        match c {
            1 | 2 => Ok((0..n).map(|i| self.samples[i * c]).collect()),
            _ => {
                let mut out = Vec::with_capacity(n);
                for i in 0..n {
                    let px = &self.samples[i * c..i * c + 3];
                    if px[0] != px[1] || px[1] != px[2] {
                        return Err(Error::Image {
                            path: path.to_path_buf(),
                            reason: format!(
                                "multi-channel image with unequal channels at pixel {i}"
                            ),
                        });
                    }
                    out.push(px[0]);
                }
                Ok(out)
            }
        }
    }
}

/// Load a color PNG. An alpha channel is ignored with a warning; gray
/// images are replicated into all three channels.
pub fn load_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let png = decode_png(path)?;
    if png.channels == 2 || png.channels == 4 {
        log::warn!("{}: ignoring alpha channel", path.display());
    }
    let n = png.width * png.height;
    let max = png.max as f32;
    let c = png.channels;
    let mut data = vec![0.0; 3 * n];
    for i in 0..n {
        for ch in 0..3 {
            let src = if c >= 3 { ch } else { 0 };
            data[ch * n + i] = png.samples[i * c + src] as f32 / max;
        }
    }
    RgbImage::new(png.height, png.width, data)
}

pub fn load_alpha(path: impl AsRef<Path>) -> Result<AlphaMatte> {
    let path = path.as_ref();
    let png = decode_png(path)?;
    let max = png.max as f32;
    let data = png
        .gray_plane(path)?
        .into_iter()
        .map(|v| v as f32 / max)
        .collect();
    AlphaMatte::new(png.height, png.width, data)
}

pub fn load_trimap(path: impl AsRef<Path>) -> Result<Trimap> {
    let path = path.as_ref();
    let png = decode_png(path)?;
    let plane = png.gray_plane(path)?;
    let mut labels = Vec::with_capacity(plane.len());
    for (i, v) in plane.into_iter().enumerate() {
        let byte = if png.max == 255 {
            v as u8
        } else {
            ((v as u32 + 128) / 257) as u8
        };
        let label = TrimapLabel::from_byte(byte).ok_or(Error::NotATrimap {
            x: i % png.width,
            y: i / png.width,
            value: byte,
        })?;
        labels.push(label);
    }
    Trimap::new(png.height, png.width, labels)
}

fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: BitDepth,
    samples: &[u16],
) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(color);
    let bytes: Vec<u8> = match depth {
        BitDepth::Eight => {
            encoder.set_depth(png::BitDepth::Eight);
            samples.iter().map(|&v| v as u8).collect()
        }
        BitDepth::Sixteen => {
            encoder.set_depth(png::BitDepth::Sixteen);
            samples.iter().flat_map(|v| v.to_be_bytes()).collect()
        }
    };
    let encode_err = |e: png::EncodingError| Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut writer = encoder.write_header().map_err(encode_err)?;
    writer.write_image_data(&bytes).map_err(encode_err)?;
    writer.finish().map_err(encode_err)
}

pub fn save_alpha(matte: &AlphaMatte, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let samples: Vec<u16> = matte.data.iter().map(|&v| quantize(v, depth)).collect();
    write_png(
        path.as_ref(),
        matte.width,
        matte.height,
        png::ColorType::Grayscale,
        depth,
        &samples,
    )
}

pub fn save_rgb(img: &RgbImage, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let n = img.width * img.height;
    let mut samples = Vec::with_capacity(3 * n);
    for i in 0..n {
        for c in 0..3 {
            samples.push(quantize(img.data[c * n + i], depth));
        }
    }
    write_png(
        path.as_ref(),
        img.width,
        img.height,
        png::ColorType::Rgb,
        depth,
        &samples,
    )
}

/// Write a trimap as 8-bit gray with the byte encoding {0, 128, 255}.
pub fn save_trimap(t: &Trimap, path: impl AsRef<Path>) -> Result<()> {
    let samples: Vec<u16> = t.labels.iter().map(|l| l.to_byte() as u16).collect();
    write_png(
        path.as_ref(),
        t.width,
        t.height,
        png::ColorType::Grayscale,
        BitDepth::Eight,
        &samples,
    )
}
