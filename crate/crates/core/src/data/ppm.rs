//! Binary PPM (P6, maxval 255).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Encodes a `C×H×W` image as P6. Values are clamped to `[0,255]` and
/// rounded; one-channel images are replicated across RGB.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = image.chw()?;
    if c != 1 && c != 3 {
        return Err(Error::UnsupportedFormat(format!("cannot write {c}-channel image as PPM")));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * h * w);
    let plane = h * w;
    let data = image.data();
    let byte = |v: f32| v.clamp(0.0, 255.0).round() as u8;
    for i in 0..plane {
        for ch in 0..3 {
            let src = if c == 1 { 0 } else { ch };
            out.push(byte(data[src * plane + i]));
        }
    }
    Ok(out)
}

pub fn write_ppm(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(image)?).map_err(|e| Error::io(path, e))
}

/// Decodes P6 bytes into a `3×H×W` tensor.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos)?;
    if magic != b"P6" {
        return Err(Error::UnsupportedFormat(format!(
            "expected binary PPM (P6), found {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let w = parse_dim(next_token(bytes, &mut pos)?, "width")?;
    let h = parse_dim(next_token(bytes, &mut pos)?, "height")?;
    let maxval = parse_dim(next_token(bytes, &mut pos)?, "maxval")?;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!("maxval {maxval}, only 255 is supported")));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::MalformedHeader("missing whitespace after maxval".into())),
    }
    let raster = &bytes[pos..];
    let plane = w * h;
    if raster.len() < 3 * plane {
        return Err(Error::MalformedHeader(format!(
            "raster has {} bytes, expected {}",
            raster.len(),
            3 * plane
        )));
    }
    let mut data = vec![0f32; 3 * plane];
    for (i, px) in raster[..3 * plane].chunks_exact(3).enumerate() {
        for ch in 0..3 {
            data[ch * plane + i] = px[ch] as f32;
        }
    }
    Tensor::new(vec![3, h, w], data)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    decode_ppm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Reduces an image read from PPM to the requested channel count: three
/// channels pass through, one channel takes the channel mean.
pub fn to_channels(image: Tensor, channels: usize) -> Result<Tensor> {
    let (c, h, w) = image.chw()?;
    match (c, channels) {
        (a, b) if a == b => Ok(image),
        (3, 1) => {
            let plane = h * w;
            let d = image.data();
            let gray = (0..plane).map(|i| (d[i] + d[plane + i] + d[2 * plane + i]) / 3.0).collect();
            Tensor::new(vec![1, h, w], gray)
        }
        _ => Err(Error::shape("image channels", channels, c)),
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
        return Err(Error::MalformedHeader("unexpected end of header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn parse_dim(token: &[u8], what: &str) -> Result<usize> {
    std::str::from_utf8(token)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::MalformedHeader(format!("invalid {what} {:?}", String::from_utf8_lossy(token))))
}
