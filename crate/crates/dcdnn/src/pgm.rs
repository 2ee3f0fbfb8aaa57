//! 8-bit grayscale input: binary PGM (P5), PNG, and text lists of images.

use std::fs;
use std::path::{Path, PathBuf};

use dcdnn_core::dataset::Plane;

use crate::error::{io_at, Error, Result};

const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";

/// Next header token of a PNM file, skipping whitespace and `#` comments.
fn token<'a>(data: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < data.len() && data[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < data.len() && data[*pos] == b'#' {
            while *pos < data.len() && data[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < data.len() && !data[*pos].is_ascii_whitespace() && data[*pos] != b'#' {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("truncated PGM header".into()));
    }
    Ok(&data[start..*pos])
}

fn number(data: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = token(data, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("bad PGM {what} {:?}", String::from_utf8_lossy(tok))))
}

pub fn decode_pgm(data: &[u8]) -> Result<Plane> {
    if data.is_empty() {
        return Err(Error::Format("empty file".into()));
    }
    let mut pos = 0;
    let magic = token(data, &mut pos)?;
    if magic != b"P5" {
        return Err(Error::Format(format!(
            "not a binary PGM (magic {:?})",
            String::from_utf8_lossy(magic)
        )));
    }
    let width = number(data, &mut pos, "width")?;
    let height = number(data, &mut pos, "height")?;
    let maxval = number(data, &mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("PGM has zero size {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported PGM maxval {maxval}, only 8-bit samples are accepted")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= data.len() || !data[pos].is_ascii_whitespace() {
        return Err(Error::Format("truncated PGM header".into()));
    }
    pos += 1;
    let need = width * height;
    let raster = &data[pos..];
    if raster.len() < need {
        return Err(Error::Format(format!("truncated PGM raster: {} of {need} bytes", raster.len())));
    }
    Ok(Plane::new(width, height, raster[..need].to_vec())?)
}

pub fn encode_pgm(plane: &Plane) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", plane.width, plane.height).into_bytes();
    out.extend_from_slice(&plane.samples);
    out
}

pub fn decode_png(data: &[u8]) -> Result<Plane> {
    let img = image::load_from_memory_with_format(data, image::ImageFormat::Png)
        .map_err(|e| Error::Format(format!("PNG: {e}")))?;
    if img.color().bytes_per_pixel() / img.color().channel_count() != 1 {
        return Err(Error::Format(format!("unsupported PNG sample depth ({:?})", img.color())));
    }
    let gray = img.into_luma8();
    let (w, h) = gray.dimensions();
    Ok(Plane::new(w as usize, h as usize, gray.into_raw())?)
}

/// Decodes a PGM or PNG by content.
pub fn decode_plane(data: &[u8]) -> Result<Plane> {
    if data.starts_with(PNG_MAGIC) {
        decode_png(data)
    } else {
        decode_pgm(data)
    }
}

pub fn load_plane(path: &Path) -> Result<Plane> {
    let data = fs::read(path).map_err(io_at(path))?;
    decode_plane(&data).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        e => e,
    })
}

pub fn save_pgm(plane: &Plane, path: &Path) -> Result<()> {
    fs::write(path, encode_pgm(plane)).map_err(io_at(path))
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("pgm" | "png")
    )
}

/// Expands inputs into image paths: directories contribute their PGM/PNG
/// files in name order, `.txt`/`.lst` files list one path per line
/// (relative to the list), anything else is taken as an image.
pub fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(input)
                .map_err(io_at(input))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && is_image(p))
                .collect();
            files.sort();
            out.extend(files);
        } else if matches!(input.extension().and_then(|e| e.to_str()), Some("txt" | "lst")) {
            let text = fs::read_to_string(input).map_err(io_at(input))?;
            let base = input.parent().unwrap_or(Path::new("."));
            for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
                out.push(base.join(line));
            }
        } else {
            out.push(input.clone());
        }
    }
    Ok(out)
}
