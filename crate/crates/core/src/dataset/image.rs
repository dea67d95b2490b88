//! Binary PGM (P5) / PPM (P6) and PTNS image files.

use std::fs;
use std::path::Path;

use super::{DatasetError, Result};
use crate::tensor::{read_ptns, write_ptns, Tensor, PTNS_MAGIC};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    /// 8-bit grayscale, `P5`.
    Pgm,
    /// 8-bit RGB, `P6`.
    Ppm,
    /// Raw `f64` tensor.
    Ptns,
}

impl ImageFormat {
    pub fn from_extension(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "pgm" => Some(Self::Pgm),
            "ppm" => Some(Self::Ppm),
            "ptns" => Some(Self::Ptns),
            _ => None,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Self::Pgm => "pgm",
            Self::Ppm => "ppm",
            Self::Ptns => "ptns",
        }
    }
}

fn image_error(path: &Path, message: impl Into<String>) -> DatasetError {
    DatasetError::Image {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Loads an `h×w×c` image with values in `[0, 1]`. The format is sniffed
/// from the file's magic bytes.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.starts_with(PTNS_MAGIC) {
        let t = read_ptns(&bytes[..]).map_err(|e| image_error(path, e.to_string()))?;
        if t.rank() != 3 || !(t.shape()[2] == 1 || t.shape()[2] == 3) {
            return Err(image_error(path, format!("expected h×w×(1|3) tensor, got {:?}", t.shape())));
        }
        if t.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(image_error(path, "pixel values outside [0, 1]"));
        }
        return Ok(t);
    }
    decode_pnm(&bytes).map_err(|m| image_error(path, m))
}

fn decode_pnm(bytes: &[u8]) -> std::result::Result<Tensor, String> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err("unsupported format (expected P5, P6 or PTNS)".into()),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        *field = next_header_number(bytes, &mut pos)?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err("zero image dimension".into());
    }
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported maxval {maxval} (8-bit only)"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err("truncated header".into()),
    }
    let n = width * height * channels;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| format!("truncated raster: need {n} bytes, have {}", bytes.len().saturating_sub(pos)))?;
    let scale = maxval as f64;
    let data = raster.iter().map(|&b| (b as f64 / scale).min(1.0)).collect();
    Tensor::new(vec![height, width, channels], data).map_err(|e| e.to_string())
}

fn next_header_number(bytes: &[u8], pos: &mut usize) -> std::result::Result<usize, String> {
    loop {
        match bytes.get(*pos) {
            None => return Err("truncated header".into()),
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    if start == *pos {
        return Err("malformed header".into());
    }
    std::str::from_utf8(&bytes[start..*pos])
        .expect("ascii digits")
        .parse()
        .map_err(|e| format!("header number: {e}"))
}

/// Writes `pixels` (`h×w×c`, values in `[0, 1]`). PGM/PPM quantise to
/// 8 bits; PTNS is lossless.
pub fn save_image(pixels: &Tensor, path: impl AsRef<Path>, format: ImageFormat) -> Result<()> {
    let path = path.as_ref();
    let shape = pixels.shape();
    if shape.len() != 3 {
        return Err(image_error(path, format!("expected h×w×c tensor, got {shape:?}")));
    }
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    let bytes = match format {
        ImageFormat::Ptns => {
            let mut buf = Vec::new();
            write_ptns(pixels, &mut buf)?;
            buf
        }
        ImageFormat::Pgm | ImageFormat::Ppm => {
            let (magic, want) = if format == ImageFormat::Pgm { ("P5", 1) } else { ("P6", 3) };
            if c != want {
                return Err(image_error(path, format!("{magic} needs {want} channel(s), tensor has {c}")));
            }
            let mut buf = format!("{magic}\n{w} {h}\n255\n").into_bytes();
            buf.extend(pixels.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
            buf
        }
    };
    fs::write(path, bytes).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}
