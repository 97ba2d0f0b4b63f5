//! Grayscale images and the two on-disk formats: binary PGM (P5) and the
//! IMGF raw float32 tensor file.
//!
//! IMGF layout, all little-endian:
//! 8-byte header (magic `IMGF`, u32 dimension count), then one u32 per
//! dimension, then the f32 payload in row-major order.

use std::path::Path;

use crate::data::DataError;

const IMGF_MAGIC: &[u8; 4] = b"IMGF";

/// Single-channel image with pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self, DataError> {
        if pixels.len() != height * width {
            return Err(DataError::Image {
                path: "<memory>".into(),
                detail: format!(
                    "pixel count {} does not match {height}x{width}",
                    pixels.len()
                ),
            });
        }
        if !pixels.iter().all(|p| p.is_finite() && (0.0..=1.0).contains(p)) {
            return Err(DataError::Image {
                path: "<memory>".into(),
                detail: "pixels must be finite and in [0, 1]".into(),
            });
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixels: vec![0.0; height * width],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.pixels[row * self.width + col] = value;
    }
}

/// Loads an image, dispatching on the file extension (`.pgm` or `.imgf`).
pub fn load_image(path: &Path) -> Result<Image, DataError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => load_pgm(path),
        Some("imgf") => load_imgf(path),
        other => Err(DataError::Image {
            path: path.into(),
            detail: format!("unsupported image extension {other:?} (expected pgm or imgf)"),
        }),
    }
}

pub fn load_pgm(path: &Path) -> Result<Image, DataError> {
    let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
    let err = |detail: &str| DataError::Image {
        path: path.into(),
        detail: detail.into(),
    };
    let mut pos = 0usize;
    let magic = header_token(&bytes, &mut pos).ok_or_else(|| err("missing magic"))?;
    if magic != b"P5" {
        return Err(err("not a binary PGM (expected magic P5)"));
    }
    let width: usize = parse_header_int(&bytes, &mut pos).ok_or_else(|| err("missing width"))?;
    let height: usize = parse_header_int(&bytes, &mut pos).ok_or_else(|| err("missing height"))?;
    let maxval: usize = parse_header_int(&bytes, &mut pos).ok_or_else(|| err("missing maxval"))?;
    if maxval == 0 || maxval > 255 {
        return Err(err("maxval must be in 1..=255"));
    }
    // exactly one whitespace byte separates the header from the raster
    let raster = &bytes[pos..];
    if raster.len() != width * height {
        return Err(err(&format!(
            "raster has {} bytes, expected {}",
            raster.len(),
            width * height
        )));
    }
    let pixels = raster.iter().map(|&b| b as f64 / maxval as f64).collect();
    Image::new(height, width, pixels)
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    // skip whitespace and '#' comment lines
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if *pos > start {
        let tok = &bytes[start..*pos];
        // consume the single whitespace byte that terminates the token
        if *pos < bytes.len() {
            *pos += 1;
        }
        Some(tok)
    } else {
        None
    }
}

fn parse_header_int(bytes: &[u8], pos: &mut usize) -> Option<usize> {
    let tok = header_token(bytes, pos)?;
    std::str::from_utf8(tok).ok()?.parse().ok()
}

pub fn write_pgm(path: &Path, image: &Image) -> Result<(), DataError> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(image.pixels.iter().map(|&p| (p * 255.0).round() as u8));
    std::fs::write(path, out).map_err(|e| DataError::io(path, e))
}

pub fn load_imgf(path: &Path) -> Result<Image, DataError> {
    let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
    let err = |detail: String| DataError::Image {
        path: path.into(),
        detail,
    };
    if bytes.len() < 8 || &bytes[0..4] != IMGF_MAGIC {
        return Err(err("missing IMGF header".into()));
    }
    let ndims = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if ndims != 2 {
        return Err(err(format!("expected 2 dimensions for an image, found {ndims}")));
    }
    let dims_end = 8 + 4 * ndims;
    if bytes.len() < dims_end {
        return Err(err("truncated dimension list".into()));
    }
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let expected = dims_end + 4 * height * width;
    if bytes.len() != expected {
        return Err(err(format!(
            "payload has {} bytes, expected {}",
            bytes.len() - dims_end,
            expected - dims_end
        )));
    }
    let pixels = bytes[dims_end..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Image::new(height, width, pixels)
}

pub fn write_imgf(path: &Path, image: &Image) -> Result<(), DataError> {
    let mut out = Vec::with_capacity(16 + 4 * image.pixels.len());
    out.extend_from_slice(IMGF_MAGIC);
    out.extend_from_slice(&2u32.to_le_bytes());
    out.extend_from_slice(&(image.height as u32).to_le_bytes());
    out.extend_from_slice(&(image.width as u32).to_le_bytes());
    for &p in &image.pixels {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    std::fs::write(path, out).map_err(|e| DataError::io(path, e))
}
