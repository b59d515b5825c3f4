//! Binary netpbm: P6 color images and P5 grayscale masks, maxval 255.

use std::path::Path;

use super::{ClassMap, Mask};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

struct Header {
    width: usize,
    height: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8], magic: &[u8; 2], what: &'static str) -> Result<Header> {
    let err = |offset: usize, msg: String| Error::Format { what, offset, msg };
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(err(0, format!("expected magic {}", String::from_utf8_lossy(magic))));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // Whitespace and comments before each field.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(err(pos, "truncated header".into())),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(err(pos, "expected a decimal number".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(start, "number out of range".into()))?;
        if i < 2 && *field == 0 {
            return Err(err(start, "zero image extent".into()));
        }
    }
    if fields[2] != 255 {
        return Err(err(pos, format!("maxval must be 255, got {}", fields[2])));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(err(pos, "expected whitespace after maxval".into())),
    }
    Ok(Header {
        width: fields[0],
        height: fields[1],
        data_start: pos,
    })
}

fn payload<'a>(bytes: &'a [u8], h: &Header, channels: usize, what: &'static str) -> Result<&'a [u8]> {
    let need = h.width * h.height * channels;
    let have = bytes.len() - h.data_start;
    if have < need {
        return Err(Error::Format {
            what,
            offset: bytes.len(),
            msg: format!("truncated pixel data: expected {need} bytes, found {have}"),
        });
    }
    Ok(&bytes[h.data_start..h.data_start + need])
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let h = parse_header(bytes, b"P6", "ppm")?;
    let data = payload(bytes, &h, 3, "ppm")?.to_vec();
    Ok(RgbImage {
        width: h.width,
        height: h.height,
        data,
    })
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let h = parse_header(bytes, b"P5", "pgm")?;
    let data = payload(bytes, &h, 1, "pgm")?.to_vec();
    Ok(GrayImage {
        width: h.width,
        height: h.height,
        data,
    })
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

/// Reads a P6 file as a `3 x H x W` tensor scaled to `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let img = decode_ppm(&std::fs::read(path)?)?;
    let (h, w) = (img.height, img.width);
    let mut data = vec![0.0; 3 * h * w];
    for p in 0..h * w {
        for c in 0..3 {
            data[c * h * w + p] = f64::from(img.data[p * 3 + c]) / 255.0;
        }
    }
    Tensor::new(&[3, h, w], data)
}

/// Writes a `3 x H x W` (or `1 x H x W`, replicated) tensor as P6,
/// quantizing `round(255 v)` after clamping to `[0, 1]`.
pub fn save_image(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    let s = image.shape();
    if s.len() != 3 || (s[0] != 3 && s[0] != 1) {
        return Err(Error::BadRank {
            op: "save_image",
            expected: "3 x H x W or 1 x H x W image",
            got: s.into(),
        });
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let src = image.data();
    let mut data = vec![0u8; 3 * h * w];
    for p in 0..h * w {
        for ch in 0..3 {
            let v = src[(ch % c) * h * w + p];
            data[p * 3 + ch] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    std::fs::write(
        path,
        encode_ppm(&RgbImage {
            width: w,
            height: h,
            data,
        }),
    )?;
    Ok(())
}

/// Reads a mask: P5 files hold class indices directly (passed through
/// `class_map` label remapping when given), P6 files are palette masks
/// resolved through `class_map`.
pub fn load_mask(path: impl AsRef<Path>, class_map: Option<&ClassMap>) -> Result<Mask> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(b"P6") {
        let img = decode_ppm(&bytes)?;
        let cm = class_map.ok_or_else(|| Error::Dataset("color mask needs a palette".into()))?;
        let labels = img
            .data
            .chunks_exact(3)
            .map(|px| cm.resolve_color([px[0], px[1], px[2]]))
            .collect::<Result<Vec<u8>>>()?;
        return Mask::new(img.height, img.width, labels);
    }
    let img = decode_pgm(&bytes)?;
    let mask = Mask::new(img.height, img.width, img.data)?;
    match class_map {
        Some(cm) if cm.has_labels() => cm.remap(&mask),
        _ => Ok(mask),
    }
}

pub fn save_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    std::fs::write(
        path,
        encode_pgm(&GrayImage {
            width: mask.width,
            height: mask.height,
            data: mask.labels.clone(),
        }),
    )?;
    Ok(())
}
