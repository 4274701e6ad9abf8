//! Binary portable graymap (P5) and pixmap (P6), 8-bit only.

use std::path::Path;

use super::{to_gray, ColorImage, ImageGray};
use crate::{write_atomic, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Pnm {
    Gray(ImageGray),
    Color(ColorImage),
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 {
        return Err(Error::Format("file too short for a PNM header".into()));
    }
    let magic = [bytes[0], bytes[1]];
    if &magic != b"P5" && &magic != b"P6" {
        return Err(Error::Format(format!(
            "unsupported magic {:?} (expected P5 or P6)",
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::Format("truncated PNM header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("malformed PNM header field".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| Error::Format("PNM header number out of range".into()))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Format("missing whitespace after PNM header".into()));
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("maxval {maxval} not supported (1..=255)")));
    }
    Ok(Header {
        magic,
        width,
        height,
        maxval,
        offset: pos + 1,
    })
}

pub fn decode_pnm(bytes: &[u8]) -> Result<Pnm> {
    let h = parse_header(bytes)?;
    let channels = if &h.magic == b"P5" { 1 } else { 3 };
    let n = h.width * h.height * channels;
    let body = &bytes[h.offset..];
    if body.len() < n {
        return Err(Error::Format(format!(
            "pixel data has {} bytes, header promises {n}",
            body.len()
        )));
    }
    let scale = h.maxval as f64;
    let values: Vec<f64> = body[..n].iter().map(|&b| (b as f64 / scale).min(1.0)).collect();
    if channels == 1 {
        Ok(Pnm::Gray(ImageGray::new(h.height, h.width, values)?))
    } else {
        Ok(Pnm::Color(ColorImage {
            height: h.height,
            width: h.width,
            channels: 3,
            data: values,
        }))
    }
}

pub fn read_pnm(path: &Path) -> Result<Pnm> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Reads a P5 graymap, or a P6 pixmap converted to luma.
pub fn read_graymap(path: &Path) -> Result<ImageGray> {
    match read_pnm(path)? {
        Pnm::Gray(g) => Ok(g),
        Pnm::Color(c) => to_gray(&c),
    }
}

/// `round_half_up(v · 255)`.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn encode_pgm(image: &ImageGray) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.pixels().iter().map(|&v| quantize(v)));
    out
}

/// Writes a P5 graymap through a temporary file and a rename.
pub fn write_graymap(path: &Path, image: &ImageGray) -> Result<()> {
    write_atomic(path, &encode_pgm(image))
}
