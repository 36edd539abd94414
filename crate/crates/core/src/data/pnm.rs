//! Binary PGM (P5) and PPM (P6) images with maxval 255.
//!
//! PGM doubles as the mask format: each byte is a class index and 255 is
//! the ignore sentinel.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Mask value that is never scored.
pub const IGNORE_INDEX: u8 = 255;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// A segmentation mask is a gray image of class indices.
pub type Mask = GrayImage;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Input(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let (w, h, start) = parse_header(bytes, b"P5", origin)?;
        let pixels = body(bytes, start, w * h, origin)?;
        Self::new(w, h, pixels)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != 3 * width * height {
            return Err(Error::Input(format!(
                "{} bytes for a {width}x{height} RGB image",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let (w, h, start) = parse_header(bytes, b"P6", origin)?;
        let pixels = body(bytes, start, 3 * w * h, origin)?;
        Self::new(w, h, pixels)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

fn format_err(origin: &str, offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        path: origin.to_owned(),
        offset: offset as u64,
        msg: msg.into(),
    }
}

fn body(bytes: &[u8], start: usize, n: usize, origin: &str) -> Result<Vec<u8>> {
    match bytes.len().checked_sub(start) {
        Some(left) if left >= n => Ok(bytes[start..start + n].to_vec()),
        _ => Err(format_err(origin, start, format!("truncated raster: need {n} bytes"))),
    }
}

/// Returns `(width, height, raster_offset)`. Accepts `#` comments and any
/// whitespace between header fields; maxval must be 255.
fn parse_header(bytes: &[u8], magic: &[u8; 2], origin: &str) -> Result<(usize, usize, usize)> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(format_err(
            origin,
            0,
            format!("expected magic {}", String::from_utf8_lossy(magic)),
        ));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
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
            return Err(format_err(origin, pos, "expected a header number"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| format_err(origin, start, "header number out of range"))?;
    }
    if fields[2] != 255 {
        return Err(format_err(origin, pos, format!("maxval {} is not 255", fields[2])));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => Ok((fields[0], fields[1], pos + 1)),
        _ => Err(format_err(origin, pos, "missing whitespace after maxval")),
    }
}
