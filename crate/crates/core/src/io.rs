//! Image file formats: binary PGM (P5, maxval 255), 8-bit grayscale PNG and
//! the lossless `f32-raw` container.
//!
//! `f32-raw` layout, all little-endian:
//!
//! ```text
//! b"WSG1\n" | u32 height | u32 width | height*width f32, row-major
//! ```

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, MAX_SIDE};

pub const F32_RAW_MAGIC: &[u8; 5] = b"WSG1\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImageFormat {
    Pgm8,
    Png8Gray,
    F32Raw,
}

impl ImageFormat {
    /// Guess from the file extension (`pgm`, `png`, `f32`/`raw`).
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "pgm" => Some(Self::Pgm8),
            "png" => Some(Self::Png8Gray),
            "f32" | "raw" => Some(Self::F32Raw),
            _ => None,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Self::Pgm8 => "pgm",
            Self::Png8Gray => "png",
            Self::F32Raw => "f32",
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::Pgm8 => "pgm8",
            Self::Png8Gray => "png8-gray",
            Self::F32Raw => "f32-raw",
        }
    }
}

impl FromStr for ImageFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pgm8" | "pgm" => Ok(Self::Pgm8),
            "png8-gray" | "png" => Ok(Self::Png8Gray),
            "f32-raw" | "f32" => Ok(Self::F32Raw),
            other => Err(Error::invalid(format!("unknown image format `{other}`"))),
        }
    }
}

/// Quantize `[0,1]` to a byte: clamp, then round half up.
pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn load_image(path: impl AsRef<Path>, format: ImageFormat) -> Result<ImageGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |reason: String| Error::Format {
        format: format.name(),
        path: path.to_path_buf(),
        reason,
    };
    match format {
        ImageFormat::F32Raw => decode_f32_raw(&bytes).map_err(fail),
        ImageFormat::Pgm8 => decode_pgm(&bytes).map_err(fail),
        ImageFormat::Png8Gray => {
            let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
                .map_err(|e| fail(e.to_string()))?
                .into_luma8();
            let (w, h) = (img.width() as usize, img.height() as usize);
            check_side(h, w).map_err(fail)?;
            let data = img.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
            ImageGrid::new(h, w, data).map_err(|e| fail(e.to_string()))
        }
    }
}

pub fn save_image(grid: &ImageGrid, path: impl AsRef<Path>, format: ImageFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        ImageFormat::F32Raw => encode_f32_raw(grid),
        ImageFormat::Pgm8 => {
            let mut out = format!("P5\n{} {}\n255\n", grid.width(), grid.height()).into_bytes();
            out.extend(grid.data().iter().map(|&v| quantize_u8(v)));
            out
        }
        ImageFormat::Png8Gray => {
            let pixels: Vec<u8> = grid.data().iter().map(|&v| quantize_u8(v)).collect();
            let img = image::GrayImage::from_raw(grid.width() as u32, grid.height() as u32, pixels)
                .expect("buffer length matches dims");
            let mut buf = std::io::Cursor::new(Vec::new());
            img.write_to(&mut buf, image::ImageFormat::Png)
                .map_err(|e| Error::Format {
                    format: format.name(),
                    path: path.to_path_buf(),
                    reason: e.to_string(),
                })?;
            buf.into_inner()
        }
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_f32_raw(grid: &ImageGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(13 + 4 * grid.len());
    out.extend_from_slice(F32_RAW_MAGIC);
    out.extend_from_slice(&(grid.height() as u32).to_le_bytes());
    out.extend_from_slice(&(grid.width() as u32).to_le_bytes());
    for &v in grid.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_f32_raw(bytes: &[u8]) -> std::result::Result<ImageGrid, String> {
    if bytes.len() < 13 || &bytes[..5] != F32_RAW_MAGIC {
        return Err("missing WSG1 magic".into());
    }
    let h = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    check_side(h, w)?;
    let payload = &bytes[13..];
    if payload.len() != 4 * h * w {
        return Err(format!(
            "payload is {} bytes, header declares {h}x{w} floats",
            payload.len()
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    ImageGrid::new(h, w, data).map_err(|e| e.to_string())
}

fn check_side(h: usize, w: usize) -> std::result::Result<(), String> {
    if h == 0 || w == 0 {
        return Err(format!("empty dimensions {h}x{w}"));
    }
    if h > MAX_SIDE || w > MAX_SIDE {
        return Err(format!("dimensions {h}x{w} exceed {MAX_SIDE} per side"));
    }
    Ok(())
}

fn decode_pgm(bytes: &[u8]) -> std::result::Result<ImageGrid, String> {
    let mut pos = 0usize;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // skip whitespace and comments
        while pos < bytes.len() {
            match bytes[pos] {
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(format!("expected P5 magic, found `{}`", fields[0]));
    }
    let parse = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| format!("bad {what} `{s}`"))
    };
    let w = parse(&fields[1], "width")?;
    let h = parse(&fields[2], "height")?;
    let maxval = parse(&fields[3], "maxval")?;
    if maxval != 255 {
        return Err(format!("only maxval 255 is supported, found {maxval}"));
    }
    check_side(h, w)?;
    // exactly one whitespace byte separates header from raster
    pos += 1;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() < h * w {
        return Err(format!("raster has {} bytes, need {}", raster.len(), h * w));
    }
    let data = raster[..h * w].iter().map(|&b| b as f64 / 255.0).collect();
    ImageGrid::new(h, w, data).map_err(|e| e.to_string())
}
