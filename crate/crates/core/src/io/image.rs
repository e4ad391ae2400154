//! PNG (8-bit, sRGB-tagged) and PFM (32-bit float) image files.

use std::io::Cursor;
use std::path::Path;

use crate::image::{RgbImage, ScalarImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Png,
    Pfm,
}

impl ImageFormat {
    /// Format implied by the file extension.
    pub fn from_path(path: &Path) -> Result<Self, ImageError> {
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        match ext.to_ascii_lowercase().as_str() {
            "png" => Ok(ImageFormat::Png),
            "pfm" => Ok(ImageFormat::Pfm),
            _ => Err(ImageError::UnsupportedFormat(path.display().to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Image {
    Rgb(RgbImage),
    Scalar(ScalarImage),
}

impl Image {
    pub fn dims(&self) -> (u32, u32) {
        match self {
            Image::Rgb(i) => i.dims(),
            Image::Scalar(i) => i.dims(),
        }
    }

    /// Three-channel view; gray images are replicated.
    pub fn into_rgb(self) -> RgbImage {
        match self {
            Image::Rgb(i) => i,
            Image::Scalar(s) => RgbImage {
                width: s.width,
                height: s.height,
                data: s.data.iter().map(|&v| [v; 3]).collect(),
            },
        }
    }

    /// Single-channel view; RGB images keep their first channel.
    pub fn into_scalar(self) -> ScalarImage {
        match self {
            Image::Scalar(s) => s,
            Image::Rgb(i) => i.channel(0),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("unsupported image format for {0}")]
    UnsupportedFormat(String),
    #[error("PNG error: {0}")]
    Png(String),
    #[error("PFM error: {0}")]
    Pfm(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Round-half-up 8-bit quantization of a value clamped to `[0, 1]`.
pub fn quantize(v: f32) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v as f64 * 255.0 + 0.5).floor() as u8
}

pub fn encode_png(img: &Image) -> Result<Vec<u8>, ImageError> {
    let (w, h) = img.dims();
    let (color, bytes): (png::ColorType, Vec<u8>) = match img {
        Image::Rgb(i) => (png::ColorType::Rgb, i.data.iter().flatten().map(|&v| quantize(v)).collect()),
        Image::Scalar(s) => (png::ColorType::Grayscale, s.data.iter().map(|&v| quantize(v)).collect()),
    };
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w, h);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_source_srgb(png::SrgbRenderingIntent::Perceptual);
        let mut writer = enc.write_header().map_err(|e| ImageError::Png(e.to_string()))?;
        writer.write_image_data(&bytes).map_err(|e| ImageError::Png(e.to_string()))?;
    }
    Ok(out)
}

pub fn decode_png(bytes: &[u8]) -> Result<Image, ImageError> {
    let perr = |e: png::DecodingError| ImageError::Png(e.to_string());
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(perr)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ImageError::Png("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(perr)?;
    let (w, h) = (info.width, info.height);
    let n = w as usize * h as usize;
    let f = |b: u8| b as f32 / 255.0;
    let row = info.line_size;
    let px = |k: usize, ch: usize, stride: usize| buf[(k / w as usize) * row + (k % w as usize) * stride + ch];
    Ok(match info.color_type {
        png::ColorType::Grayscale => Image::Scalar(ScalarImage {
            width: w,
            height: h,
            data: (0..n).map(|k| f(px(k, 0, 1))).collect(),
        }),
        png::ColorType::GrayscaleAlpha => Image::Scalar(ScalarImage {
            width: w,
            height: h,
            data: (0..n).map(|k| f(px(k, 0, 2))).collect(),
        }),
        png::ColorType::Rgb | png::ColorType::Rgba => {
            let stride = if info.color_type == png::ColorType::Rgb { 3 } else { 4 };
            Image::Rgb(RgbImage {
                width: w,
                height: h,
                data: (0..n).map(|k| [0, 1, 2].map(|c| f(px(k, c, stride)))).collect(),
            })
        }
        other => return Err(ImageError::Png(format!("unsupported color type {other:?}"))),
    })
}

/// PFM bytes: "PF" (RGB) or "Pf" (gray), little-endian scale -1.0, rows bottom to top.
pub fn encode_pfm(img: &Image) -> Vec<u8> {
    let (w, h) = img.dims();
    let tag = if matches!(img, Image::Rgb(_)) { "PF" } else { "Pf" };
    let mut out = format!("{tag}\n{w} {h}\n-1.0\n").into_bytes();
    for row in (0..h as usize).rev() {
        let range = row * w as usize..(row + 1) * w as usize;
        match img {
            Image::Rgb(i) => i.data[range].iter().flatten().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            Image::Scalar(s) => s.data[range].iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Image, ImageError> {
    let bad = |m: &str| ImageError::Pfm(m.to_string());
    // Header: three whitespace-separated tokens after the tag, then exactly one whitespace byte.
    let mut pos = 0;
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("header ends early"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
    }
    pos += 1;
    let channels = match tokens[0] {
        "PF" => 3,
        "Pf" => 1,
        _ => return Err(bad("unknown tag")),
    };
    let w: u32 = tokens[1].parse().map_err(|_| bad("bad width"))?;
    let h: u32 = tokens[2].parse().map_err(|_| bad("bad height"))?;
    let scale: f64 = tokens[3].parse().map_err(|_| bad("bad scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad("bad scale"));
    }
    let little = scale < 0.0;
    let n = w as usize * h as usize;
    let payload = bytes.get(pos..).unwrap_or(&[]);
    if payload.len() != n * channels * 4 {
        return Err(bad("payload size does not match dimensions"));
    }
    let vals: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| {
            let b: [u8; 4] = c.try_into().expect("4 bytes");
            if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        })
        .collect();
    let row_len = w as usize * channels;
    let mut top_down = Vec::with_capacity(vals.len());
    for row in (0..h as usize).rev() {
        top_down.extend_from_slice(&vals[row * row_len..(row + 1) * row_len]);
    }
    Ok(if channels == 3 {
        Image::Rgb(RgbImage {
            width: w,
            height: h,
            data: top_down.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        })
    } else {
        Image::Scalar(ScalarImage {
            width: w,
            height: h,
            data: top_down,
        })
    })
}

pub fn write_image(img: &Image, path: impl AsRef<Path>, format: ImageFormat) -> Result<(), ImageError> {
    let bytes = match format {
        ImageFormat::Png => encode_png(img)?,
        ImageFormat::Pfm => encode_pfm(img),
    };
    super::write_atomic(path.as_ref(), &bytes)?;
    Ok(())
}

/// Reads a PNG or PFM file, chosen by extension.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image, ImageError> {
    let path = path.as_ref();
    let format = ImageFormat::from_path(path)?;
    let bytes = std::fs::read(path)?;
    match format {
        ImageFormat::Png => decode_png(&bytes),
        ImageFormat::Pfm => decode_pfm(&bytes),
    }
}
