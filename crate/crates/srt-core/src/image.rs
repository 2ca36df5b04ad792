//! Binary PPM (P6) / PGM (P5) codec, maxval 255 only.
//!
//! Pixels are stored as f32 in [0,1], row-major HWC. Writing quantizes with
//! round-half-up, so any value that is an exact multiple of 1/255 survives a
//! write/read round trip unchanged. The writer emits the canonical header
//! `P6\n<w> <h>\n255\n`, which makes write(read(f)) byte-identical for files
//! in that form.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, SrtError};

/// Raster image with 1 (gray) or 3 (RGB) channels, values in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Row-major HWC.
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(SrtError::ImageFormat("zero image dimension".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(SrtError::ImageFormat(format!(
                "unsupported channel count {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(SrtError::ImageFormat(format!(
                "pixel buffer length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
            return Err(SrtError::ImageFormat("pixel values must lie in [0,1]".into()));
        }
        Ok(Image { height, width, channels, data })
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Image::new(height, width, channels, vec![value; height * width * channels])
    }

    #[inline]
    pub fn pixel(&self, u: usize, v: usize) -> &[f32] {
        let base = (u * self.width + v) * self.channels;
        &self.data[base..base + self.channels]
    }
}

/// Reads a binary P6 (RGB) or P5 (gray) file with maxval 255.
pub fn read_ppm(path: &Path) -> Result<Image> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_netpbm(&bytes)
}

/// Writes `image` as P6 when it has 3 channels, P5 when it has 1.
pub fn write_ppm(image: &Image, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(&encode_netpbm(image))?;
    w.flush()?;
    Ok(())
}

/// In-memory encoder; canonical header, round-half-up quantization.
pub fn encode_netpbm(image: &Image) -> Vec<u8> {
    let magic = if image.channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(image.data.iter().map(|&v| quantize_u8(v)));
    out
}

/// In-memory decoder for P5/P6, maxval 255, with comment handling.
pub fn decode_netpbm(bytes: &[u8]) -> Result<Image> {
    let mut cursor = 0usize;
    let magic = take_token(bytes, &mut cursor)?;
    let channels = match magic.as_str() {
        "P6" => 3,
        "P5" => 1,
        other => {
            return Err(SrtError::ImageFormat(format!(
                "unsupported magic {other:?} (want P5 or P6)"
            )))
        }
    };
    let width: usize = parse_dim(&take_token(bytes, &mut cursor)?)?;
    let height: usize = parse_dim(&take_token(bytes, &mut cursor)?)?;
    let maxval: usize = parse_dim(&take_token(bytes, &mut cursor)?)?;
    if maxval != 255 {
        return Err(SrtError::ImageFormat(format!(
            "unsupported maxval {maxval} (only 255)"
        )));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if cursor >= bytes.len() || !bytes[cursor].is_ascii_whitespace() {
        return Err(SrtError::ImageFormat("missing header/payload separator".into()));
    }
    cursor += 1;
    let n = height * width * channels;
    let payload = bytes
        .get(cursor..cursor + n)
        .ok_or_else(|| SrtError::ImageFormat("truncated pixel payload".into()))?;
    let data: Vec<f32> = payload.iter().map(|&b| b as f32 / 255.0).collect();
    Image::new(height, width, channels, data)
}

fn quantize_u8(v: f32) -> u8 {
    // round-half-up; v is nonnegative so floor(x + 0.5) is exactly that
    let q = (v as f64 * 255.0 + 0.5).floor();
    q.clamp(0.0, 255.0) as u8
}

fn parse_dim(tok: &str) -> Result<usize> {
    let v: usize = tok
        .parse()
        .map_err(|_| SrtError::ImageFormat(format!("bad header field {tok:?}")))?;
    if v == 0 {
        return Err(SrtError::ImageFormat("zero dimension in header".into()));
    }
    Ok(v)
}

/// Extracts the next whitespace-delimited header token, skipping `#` comments.
fn take_token(bytes: &[u8], cursor: &mut usize) -> Result<String> {
    loop {
        while *cursor < bytes.len() && bytes[*cursor].is_ascii_whitespace() {
            *cursor += 1;
        }
        if *cursor < bytes.len() && bytes[*cursor] == b'#' {
            while *cursor < bytes.len() && bytes[*cursor] != b'\n' {
                *cursor += 1;
            }
            continue;
        }
        break;
    }
    let start = *cursor;
    while *cursor < bytes.len() && !bytes[*cursor].is_ascii_whitespace() {
        *cursor += 1;
    }
    if start == *cursor {
        return Err(SrtError::ImageFormat("truncated header".into()));
    }
    String::from_utf8(bytes[start..*cursor].to_vec())
        .map_err(|_| SrtError::ImageFormat("non-UTF8 header token".into()))
}
