//! Binary PPM (P6) images and PGM (P5) masks, maxval 255.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn header(magic: &str, w: usize, h: usize) -> Vec<u8> {
    format!("{magic}\n{w} {h}\n255\n").into_bytes()
}

/// Parses a binary PNM header. Returns `(width, height, payload offset)`.
fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<(usize, usize, usize)> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(format_err(format!(
            "expected magic {}, found {found:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(format_err("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(format_err("malformed header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| format_err("header field out of range"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(format_err("missing whitespace after header")),
    }
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 {
        return Err(format_err(format!("invalid dimensions {w}x{h}")));
    }
    if maxval != 255 {
        return Err(format_err(format!("unsupported maxval {maxval}")));
    }
    Ok((w, h, pos))
}

fn payload(bytes: &[u8], at: usize, len: usize) -> Result<&[u8]> {
    let rest = &bytes[at..];
    match rest.len().cmp(&len) {
        std::cmp::Ordering::Less => Err(format_err(format!("truncated payload: {} of {len} bytes", rest.len()))),
        std::cmp::Ordering::Greater => Err(format_err("trailing bytes after payload")),
        std::cmp::Ordering::Equal => Ok(rest),
    }
}

/// Encodes a `(1, 3, H, W)` image, quantizing each channel to 8 bits.
pub fn encode_ppm(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let s = image.shape();
    if s.n() != 1 || s.c() != 3 {
        return Err(Error::Shape(format!("ppm expects (1,3,H,W), got {s}")));
    }
    let plane = s.plane();
    let d = image.data();
    let mut out = header("P6", s.w(), s.h());
    out.reserve(3 * plane);
    for i in 0..plane {
        out.extend([d[i], d[plane + i], d[2 * plane + i]].map(quantize));
    }
    Ok(out)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let (w, h, at) = parse_header(bytes, b"P6")?;
    let plane = w * h;
    let px = payload(bytes, at, 3 * plane)?;
    let mut data = vec![0.0f32; 3 * plane];
    for i in 0..plane {
        for c in 0..3 {
            data[c * plane + i] = px[3 * i + c] as f32 / 255.0;
        }
    }
    Tensor::from_vec([1, 3, h, w], data)
}

/// Encodes a `(1, 1, H, W)` binary mask as 0 / 255.
pub fn encode_pgm(mask: &Tensor<f32>) -> Result<Vec<u8>> {
    let s = mask.shape();
    if s.n() != 1 || s.c() != 1 {
        return Err(Error::Shape(format!("pgm expects (1,1,H,W), got {s}")));
    }
    let mut out = header("P5", s.w(), s.h());
    for &v in mask.data() {
        out.push(match v {
            0.0 => 0,
            1.0 => 255,
            _ => return Err(Error::Domain(format!("mask value {v} is not 0 or 1"))),
        });
    }
    Ok(out)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let (w, h, at) = parse_header(bytes, b"P5")?;
    let px = payload(bytes, at, w * h)?;
    let data = px
        .iter()
        .map(|&b| match b {
            0 => Ok(0.0),
            255 => Ok(1.0),
            _ => Err(format_err(format!("mask byte {b} is neither 0 nor 255"))),
        })
        .collect::<Result<Vec<f32>>>()?;
    Tensor::from_vec([1, 1, h, w], data)
}

fn write(path: &Path, bytes: Result<Vec<u8>>) -> Result<()> {
    let bytes = bytes.map_err(|e| e.in_file(path))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read<T>(path: &Path, decode: impl Fn(&[u8]) -> Result<T>) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| e.in_file(path))
}

pub fn write_ppm(image: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), encode_ppm(image))
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    read(path.as_ref(), decode_ppm)
}

pub fn write_pgm(mask: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), encode_pgm(mask))
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    read(path.as_ref(), decode_pgm)
}
