//! Binary PNM images: P6 colour and P5 grey, 8- or 16-bit samples.
//!
//! Decoded images are `H×W×C` tensors holding raw sample values
//! (`0..=maxval`), with `C = 3` for P6 and `C = 1` for P5.

use std::fs;
use std::path::Path;

use super::write_atomic;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn fmt_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: u32,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 {
        return fmt_err("file too short for a PNM header");
    }
    let magic = [bytes[0], bytes[1]];
    if &magic != b"P5" && &magic != b"P6" {
        return fmt_err("only binary P5/P6 images are supported");
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return fmt_err("truncated PNM header"),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return fmt_err("malformed PNM header field");
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("PNM header field out of range".into()))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return fmt_err("missing whitespace after PNM maxval");
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return fmt_err(format!("unsupported PNM geometry {width}x{height} maxval {maxval}"));
    }
    Ok(Header { magic, width: width as usize, height: height as usize, maxval, data_start: pos + 1 })
}

/// Decodes an image and reports its maxval alongside the pixels.
pub fn decode_pnm(bytes: &[u8]) -> Result<(Tensor, u32)> {
    let h = parse_header(bytes)?;
    let channels = if &h.magic == b"P6" { 3 } else { 1 };
    let n = h.width * h.height * channels;
    let wide = h.maxval > 255;
    let payload = &bytes[h.data_start..];
    let need = if wide { 2 * n } else { n };
    if payload.len() < need {
        return fmt_err(format!("PNM payload has {} bytes, expected {need}", payload.len()));
    }
    let data: Vec<f64> = if wide {
        payload[..need].chunks_exact(2).map(|c| f64::from(u16::from_be_bytes([c[0], c[1]]))).collect()
    } else {
        payload[..need].iter().map(|&b| f64::from(b)).collect()
    };
    Ok((Tensor::new(vec![h.height, h.width, channels], data)?, h.maxval))
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<(Tensor, u32)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    decode_pnm(&bytes)
}

fn image_dims(img: &Tensor, channels: usize) -> Result<(usize, usize)> {
    match img.shape() {
        [h, w, c] if *c == channels => Ok((*h, *w)),
        [h, w] if channels == 1 => Ok((*h, *w)),
        s => Err(Error::Shape(format!("cannot encode shape {s:?} with {channels} channel(s)"))),
    }
}

fn quantize8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Encodes an `H×W×3` tensor as 8-bit P6, rounding and clamping samples.
pub fn encode_ppm(img: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = image_dims(img, 3)?;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(img.data().iter().map(|&v| quantize8(v)));
    Ok(out)
}

/// Encodes an `H×W` (or `H×W×1`) tensor as 8-bit P5.
pub fn encode_pgm(img: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = image_dims(img, 1)?;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(img.data().iter().map(|&v| quantize8(v)));
    Ok(out)
}

/// Encodes as 16-bit P5 after multiplying every sample by `scale`.
pub fn encode_pgm16(img: &Tensor, scale: f64) -> Result<Vec<u8>> {
    let (h, w) = image_dims(img, 1)?;
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    for &v in img.data() {
        let q = (v * scale).round().clamp(0.0, 65535.0) as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    Ok(out)
}

pub fn write_ppm(path: impl AsRef<Path>, img: &Tensor) -> Result<()> {
    write_atomic(path.as_ref(), &encode_ppm(img)?)
}

pub fn write_pgm(path: impl AsRef<Path>, img: &Tensor) -> Result<()> {
    write_atomic(path.as_ref(), &encode_pgm(img)?)
}

pub fn write_pgm16(path: impl AsRef<Path>, img: &Tensor, scale: f64) -> Result<()> {
    write_atomic(path.as_ref(), &encode_pgm16(img, scale)?)
}
