//! Image ingestion, RGB to YUV conversion and planar YUV files.
//!
//! Conversion is full-range BT.601. Every rounding step in this module is
//! half away from zero so datasets come out identical on every platform.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interleaved 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub samples: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, samples: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if samples.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "{}x{} rgb image needs {} samples, got {}",
                width,
                height,
                width * height * 3,
                samples.len()
            )));
        }
        Ok(Self { width, height, samples })
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.samples[i], self.samples[i + 1], self.samples[i + 2]]
    }

    /// Box-filter down-scaling by an integer factor. Trailing rows and
    /// columns that do not fill a whole box are dropped.
    pub fn downscale(&self, factor: usize) -> Result<RgbImage> {
        if factor == 0 {
            return Err(Error::InvalidArgument("scale factor must be >= 1".into()));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let (w, h) = (self.width / factor, self.height / factor);
        if w == 0 || h == 0 {
            return Err(Error::InvalidArgument(format!(
                "{}x{} image is too small for factor {factor}",
                self.width, self.height
            )));
        }
        let area = (factor * factor) as u32;
        let mut samples = Vec::with_capacity(w * h * 3);
        for oy in 0..h {
            for ox in 0..w {
                let mut acc = [0u32; 3];
                for dy in 0..factor {
                    for dx in 0..factor {
                        let p = self.pixel(ox * factor + dx, oy * factor + dy);
                        for c in 0..3 {
                            acc[c] += p[c] as u32;
                        }
                    }
                }
                for a in acc {
                    samples.push(((2 * a + area) / (2 * area)) as u8);
                }
            }
        }
        RgbImage::new(w, h, samples)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChromaFormat {
    #[serde(rename = "444")]
    Yuv444,
    #[serde(rename = "420")]
    Yuv420,
}

impl ChromaFormat {
    pub fn as_u8(self) -> u8 {
        match self {
            ChromaFormat::Yuv444 => 0,
            ChromaFormat::Yuv420 => 1,
        }
    }

    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(ChromaFormat::Yuv444),
            1 => Ok(ChromaFormat::Yuv420),
            other => Err(Error::Format(format!("unknown chroma format tag {other}"))),
        }
    }
}

impl fmt::Display for ChromaFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChromaFormat::Yuv444 => "444",
            ChromaFormat::Yuv420 => "420",
        })
    }
}

impl std::str::FromStr for ChromaFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "444" => Ok(ChromaFormat::Yuv444),
            "420" => Ok(ChromaFormat::Yuv420),
            other => Err(Error::InvalidArgument(format!(
                "chroma format must be 420 or 444, got {other:?}"
            ))),
        }
    }
}

/// A single 2-D plane of unsigned samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u16>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<u16>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{width}x{height} plane needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: u16) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u16) {
        self.data[y * self.width + x] = v;
    }

    fn crop(&self, width: usize, height: usize) -> Plane {
        let mut data = Vec::with_capacity(width * height);
        for row in self.data.chunks(self.width).take(height) {
            data.extend_from_slice(&row[..width]);
        }
        Plane { width, height, data }
    }
}

/// Planar Y/Cb/Cr frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub y: Plane,
    pub cb: Plane,
    pub cr: Plane,
    pub bit_depth: u8,
    pub chroma_format: ChromaFormat,
}

impl Frame {
    pub fn new(y: Plane, cb: Plane, cr: Plane, bit_depth: u8, chroma_format: ChromaFormat) -> Result<Self> {
        check_bit_depth(bit_depth)?;
        let (cw, ch) = chroma_dims(y.width, y.height, chroma_format)?;
        for (name, p) in [("cb", &cb), ("cr", &cr)] {
            if p.width != cw || p.height != ch {
                return Err(Error::Shape(format!(
                    "{name} plane is {}x{}, expected {cw}x{ch} for {chroma_format}",
                    p.width, p.height
                )));
            }
        }
        let max = (1u32 << bit_depth) - 1;
        for (name, p) in [("y", &y), ("cb", &cb), ("cr", &cr)] {
            if let Some(v) = p.data.iter().find(|&&v| v as u32 > max) {
                return Err(Error::InvalidArgument(format!(
                    "{name} sample {v} exceeds {bit_depth}-bit range"
                )));
            }
        }
        Ok(Self {
            y,
            cb,
            cr,
            bit_depth,
            chroma_format,
        })
    }

    pub fn width(&self) -> usize {
        self.y.width
    }

    pub fn height(&self) -> usize {
        self.y.height
    }

    /// Largest representable sample, `2^bit_depth - 1`.
    pub fn max_value(&self) -> u16 {
        ((1u32 << self.bit_depth) - 1) as u16
    }
}

fn check_bit_depth(bit_depth: u8) -> Result<()> {
    if bit_depth == 8 || bit_depth == 10 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "bit depth must be 8 or 10, got {bit_depth}"
        )))
    }
}

fn chroma_dims(width: usize, height: usize, format: ChromaFormat) -> Result<(usize, usize)> {
    match format {
        ChromaFormat::Yuv444 => Ok((width, height)),
        ChromaFormat::Yuv420 => {
            if !width.is_multiple_of(2) || !height.is_multiple_of(2) {
                return Err(Error::Shape(format!(
                    "4:2:0 frames need even luma dimensions, got {width}x{height}"
                )));
            }
            Ok((width / 2, height / 2))
        }
    }
}

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

/// Decodes a PNG or binary/ASCII PPM file into 8-bit RGB.
pub fn decode_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image_bytes(&bytes)
}

pub fn decode_image_bytes(bytes: &[u8]) -> Result<RgbImage> {
    let format = if bytes.starts_with(PNG_SIGNATURE) {
        image::ImageFormat::Png
    } else if bytes.starts_with(b"P6") || bytes.starts_with(b"P3") {
        image::ImageFormat::Pnm
    } else {
        return Err(Error::Unsupported(
            "only PNG and PPM (P3/P6) inputs are accepted".into(),
        ));
    };
    let decoded = image::load_from_memory_with_format(bytes, format).map_err(|e| match e {
        image::ImageError::Unsupported(u) => Error::Unsupported(u.to_string()),
        image::ImageError::Limits(l) => Error::Unsupported(l.to_string()),
        other => Error::Corrupt(other.to_string()),
    })?;
    use image::ColorType::*;
    match decoded.color() {
        L8 | La8 | Rgb8 | Rgba8 => {}
        other => {
            return Err(Error::Unsupported(format!(
                "only 8-bit images are accepted, got {other:?}"
            )))
        }
    }
    let rgb = decoded.to_rgb8();
    RgbImage::new(rgb.width() as usize, rgb.height() as usize, rgb.into_raw())
}

/// Full-range BT.601 conversion to a 4:4:4 frame.
pub fn rgb_to_yuv444(img: &RgbImage, bit_depth: u8) -> Result<Frame> {
    check_bit_depth(bit_depth)?;
    let max = ((1u32 << bit_depth) - 1) as f64;
    let mid = (1u32 << (bit_depth - 1)) as f64;
    let scale = max / 255.0;
    let clamp = |v: f64| v.round().clamp(0.0, max) as u16;

    let n = img.width * img.height;
    let (mut y, mut cb, mut cr) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for px in img.samples.chunks_exact(3) {
        let (r, g, b) = (px[0] as f64, px[1] as f64, px[2] as f64);
        y.push(clamp(scale * (0.299 * r + 0.587 * g + 0.114 * b)));
        cb.push(clamp(mid + scale * (-0.168736 * r - 0.331264 * g + 0.5 * b)));
        cr.push(clamp(mid + scale * (0.5 * r - 0.418688 * g - 0.081312 * b)));
    }
    let (w, h) = (img.width, img.height);
    Frame::new(
        Plane::new(w, h, y)?,
        Plane::new(w, h, cb)?,
        Plane::new(w, h, cr)?,
        bit_depth,
        ChromaFormat::Yuv444,
    )
}

/// 2x2 mean chroma down-sampling. Odd luma dimensions are cropped to even
/// on the right/bottom first.
pub fn subsample_420(frame: &Frame) -> Result<Frame> {
    if frame.chroma_format != ChromaFormat::Yuv444 {
        return Err(Error::InvalidArgument("subsample_420 expects a 4:4:4 frame".into()));
    }
    let w = frame.width() & !1;
    let h = frame.height() & !1;
    if w == 0 || h == 0 {
        return Err(Error::Shape(format!(
            "{}x{} frame is too small for 4:2:0",
            frame.width(),
            frame.height()
        )));
    }
    let half = |p: &Plane| {
        let mut out = Plane::filled(w / 2, h / 2, 0);
        for cy in 0..h / 2 {
            for cx in 0..w / 2 {
                let (x, y) = (2 * cx, 2 * cy);
                let sum =
                    p.get(x, y) as u32 + p.get(x + 1, y) as u32 + p.get(x, y + 1) as u32 + p.get(x + 1, y + 1) as u32;
                out.set(cx, cy, ((sum + 2) / 4) as u16);
            }
        }
        out
    };
    Frame::new(
        frame.y.crop(w, h),
        half(&frame.cb),
        half(&frame.cr),
        frame.bit_depth,
        ChromaFormat::Yuv420,
    )
}

fn bytes_per_sample(bit_depth: u8) -> usize {
    if bit_depth > 8 {
        2
    } else {
        1
    }
}

/// Exact byte length of a planar file with the given layout.
pub fn yuv_file_len(width: usize, height: usize, bit_depth: u8, format: ChromaFormat) -> Result<u64> {
    let (cw, ch) = chroma_dims(width, height, format)?;
    Ok(((width * height + 2 * cw * ch) * bytes_per_sample(bit_depth)) as u64)
}

/// Writes Y, then Cb, then Cr. Samples above 8 bits are 16-bit little-endian.
pub fn write_yuv(frame: &Frame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bps = bytes_per_sample(frame.bit_depth);
    let len = yuv_file_len(frame.width(), frame.height(), frame.bit_depth, frame.chroma_format)?;
    let mut buf = Vec::with_capacity(len as usize);
    for plane in [&frame.y, &frame.cb, &frame.cr] {
        for &v in &plane.data {
            if bps == 2 {
                buf.extend_from_slice(&v.to_le_bytes());
            } else {
                buf.push(v as u8);
            }
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_yuv(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    bit_depth: u8,
    chroma_format: ChromaFormat,
) -> Result<Frame> {
    check_bit_depth(bit_depth)?;
    let path = path.as_ref();
    let expected = yuv_file_len(width, height, bit_depth, chroma_format)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            expected,
            actual: bytes.len() as u64,
        });
    }
    let bps = bytes_per_sample(bit_depth);
    let (cw, ch) = chroma_dims(width, height, chroma_format)?;
    let mut offset = 0;
    let mut take = |w: usize, h: usize| {
        let n = w * h;
        let raw = &bytes[offset..offset + n * bps];
        offset += n * bps;
        let data: Vec<u16> = if bps == 2 {
            raw.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect()
        } else {
            raw.iter().map(|&b| b as u16).collect()
        };
        Plane::new(w, h, data)
    };
    let y = take(width, height)?;
    let cb = take(cw, ch)?;
    let cr = take(cw, ch)?;
    Frame::new(y, cb, cr, bit_depth, chroma_format)
}

/// Sidecar description written next to every prepared `.yuv` file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct YuvMeta {
    pub width: usize,
    pub height: usize,
    pub bit_depth: u8,
    pub chroma_format: ChromaFormat,
    pub source: String,
    /// Integer down-scaling factor applied to the source before conversion.
    pub scale: usize,
}

impl YuvMeta {
    pub fn of(frame: &Frame, source: impl Into<String>, scale: usize) -> Self {
        Self {
            width: frame.width(),
            height: frame.height(),
            bit_depth: frame.bit_depth,
            chroma_format: frame.chroma_format,
            source: source.into(),
            scale,
        }
    }

    /// Path of the sidecar for a given `.yuv` path.
    pub fn sidecar_path(yuv: &Path) -> std::path::PathBuf {
        yuv.with_extension("json")
    }

    pub fn load_for(yuv: &Path) -> Result<Self> {
        let p = Self::sidecar_path(yuv);
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save_for(&self, yuv: &Path) -> Result<()> {
        let p = Self::sidecar_path(yuv);
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }
}
