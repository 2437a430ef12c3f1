//! Binary PPM (P6) and PGM (P5) with 8-bit samples.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn header(magic: &str, width: usize, height: usize) -> Vec<u8> {
    format!("{magic}\n{width} {height}\n255\n").into_bytes()
}

/// Encodes a `[3, H, W]` image with values in `[0, 1]`.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = image.dims3("ppm")?;
    if c != 3 {
        return Err(Error::Image {
            format: "ppm",
            message: format!("expected 3 channels, got {c}"),
        });
    }
    let plane = h * w;
    let data = image.data();
    let mut out = header("P6", w, h);
    out.reserve(3 * plane);
    for i in 0..plane {
        for ch in 0..3 {
            out.push(quantize(data[ch * plane + i]));
        }
    }
    Ok(out)
}

/// Encodes an `[H, W]` map with values in `[0, 1]`.
pub fn encode_pgm(map: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = map.dims2("pgm")?;
    let mut out = header("P5", w, h);
    out.extend(map.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

struct Header {
    width: usize,
    height: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8], magic: &[u8; 2], format: &'static str) -> Result<Header> {
    let bad = |message: String| Error::Image { format, message };
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(bad(format!(
            "missing `{}` magic",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Whitespace and `#` comments may separate header tokens.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(bad("malformed header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("header value out of range".into()))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("malformed header".into()));
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(bad(format!("invalid dimensions {width}x{height}")));
    }
    if maxval != 255 {
        return Err(bad(format!("unsupported maxval {maxval}")));
    }
    Ok(Header {
        width,
        height,
        data_start: pos + 1,
    })
}

fn payload<'a>(bytes: &'a [u8], header: &Header, channels: usize, format: &'static str) -> Result<&'a [u8]> {
    let need = header.width * header.height * channels;
    bytes
        .get(header.data_start..header.data_start + need)
        .ok_or_else(|| Error::Image {
            format,
            message: format!("truncated pixel data (expected {need} bytes)"),
        })
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let header = parse_header(bytes, b"P6", "ppm")?;
    let pixels = payload(bytes, &header, 3, "ppm")?;
    let plane = header.width * header.height;
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in pixels.chunks_exact(3).enumerate() {
        for ch in 0..3 {
            data[ch * plane + i] = px[ch] as f32 / 255.0;
        }
    }
    Tensor::new(vec![3, header.height, header.width], data)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Tensor> {
    let header = parse_header(bytes, b"P5", "pgm")?;
    let pixels = payload(bytes, &header, 1, "pgm")?;
    Tensor::new(
        vec![header.height, header.width],
        pixels.iter().map(|&b| b as f32 / 255.0).collect(),
    )
}

pub fn write_ppm(image: &Tensor, path: &Path) -> Result<()> {
    fs::write(path, encode_ppm(image)?).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<Tensor> {
    decode_ppm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_pgm(map: &Tensor, path: &Path) -> Result<()> {
    fs::write(path, encode_pgm(map)?).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<Tensor> {
    decode_pgm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
