//! File formats: PGM/PPM images, JSON annotations, the IADM density-map
//! binary, CSV export, and heatmap rendering.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{AnnotatedImage, DensityMap};

const DENSITY_MAGIC: &[u8; 4] = b"IADM";
pub const DENSITY_FORMAT_VERSION: u32 = 1;

fn clamp_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Writes an 8-bit binary PGM (P5) from [0,1] grayscale values.
pub fn save_pgm(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::Data(format!(
            "pgm buffer length {} does not match {width}x{height}",
            values.len()
        )));
    }
    let mut out = Vec::with_capacity(values.len() + 32);
    write!(&mut out, "P5\n{width} {height}\n255\n")?;
    out.extend(values.iter().map(|&v| clamp_u8(v)));
    fs::write(path, out)?;
    Ok(())
}

/// Writes an 8-bit binary PPM (P6) from interleaved [0,1] RGB values.
pub fn save_ppm(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    if values.len() != width * height * 3 {
        return Err(Error::Data(format!(
            "ppm buffer length {} does not match {width}x{height}x3",
            values.len()
        )));
    }
    let mut out = Vec::with_capacity(values.len() + 32);
    write!(&mut out, "P6\n{width} {height}\n255\n")?;
    out.extend(values.iter().map(|&v| clamp_u8(v)));
    fs::write(path, out)?;
    Ok(())
}

struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> ByteCursor<'a> {
    fn parse_err(&self, msg: &str) -> Error {
        Error::Parse(format!("{}: {msg} at byte {}", self.path, self.pos))
    }

    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn read_uint(&mut self) -> Result<usize> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.parse_err("expected an integer"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.parse_err("invalid integer"))
    }
}

/// Loads an 8-bit PGM (P5) or PPM (P6) image, scaling samples to [0,1].
/// Returns (width, height, channels, pixels).
pub fn load_image(path: &Path) -> Result<(usize, usize, usize, Vec<f64>)> {
    let bytes = fs::read(path)?;
    let mut cur = ByteCursor {
        bytes: &bytes,
        pos: 0,
        path: path.display().to_string(),
    };
    if bytes.len() < 2 {
        return Err(cur.parse_err("file too short for a PNM header"));
    }
    let channels = match &bytes[0..2] {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err(cur.parse_err("expected P5 or P6 magic")),
    };
    cur.pos = 2;
    let width = cur.read_uint()?;
    let height = cur.read_uint()?;
    let maxval = cur.read_uint()?;
    if maxval == 0 || maxval > 255 {
        return Err(cur.parse_err("only 8-bit images (maxval 1..=255) are supported"));
    }
    // exactly one whitespace byte separates the header from the raster
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return Err(cur.parse_err("missing raster separator"));
    }
    cur.pos += 1;
    let need = width * height * channels;
    let raster = &bytes[cur.pos..];
    if raster.len() < need {
        return Err(cur.parse_err(&format!(
            "raster has {} bytes, expected {need}",
            raster.len()
        )));
    }
    let scale = 1.0 / maxval as f64;
    let pixels = raster[..need].iter().map(|&b| b as f64 * scale).collect();
    Ok((width, height, channels, pixels))
}

#[derive(Serialize, Deserialize)]
struct AnnotationRecord {
    id: String,
    image: String,
    points: Vec<[f64; 2]>,
}

/// Writes every image (PGM for grayscale, PPM for color) plus an
/// `annotations.json` into `dir`; returns the paths written.
pub fn save_dataset(dir: &Path, images: &[AnnotatedImage]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut records = Vec::with_capacity(images.len());
    for img in images {
        let file = if img.channels == 1 {
            let f = format!("{}.pgm", img.id);
            save_pgm(&dir.join(&f), img.width, img.height, &img.pixels)?;
            f
        } else {
            let f = format!("{}.ppm", img.id);
            save_ppm(&dir.join(&f), img.width, img.height, &img.pixels)?;
            f
        };
        written.push(dir.join(&file));
        records.push(AnnotationRecord {
            id: img.id.clone(),
            image: file,
            points: img.points.iter().map(|&(x, y)| [x, y]).collect(),
        });
    }
    let ann = dir.join("annotations.json");
    let json = serde_json::to_string_pretty(&records)
        .map_err(|e| Error::Data(format!("annotation encoding failed: {e}")))?;
    fs::write(&ann, json)?;
    written.push(ann);
    Ok(written)
}

/// Loads a dataset from an annotations JSON file: one record per image with
/// `{"id", "image", "points": [[x, y], ...]}`, image paths relative to the
/// JSON file. Points are validated against the image extents.
pub fn load_annotations(path: &Path) -> Result<Vec<AnnotatedImage>> {
    let text = fs::read_to_string(path)?;
    let records: Vec<AnnotationRecord> = serde_json::from_str(&text).map_err(|e| {
        Error::Parse(format!(
            "{}: {} (line {}, column {})",
            path.display(),
            e,
            e.line(),
            e.column()
        ))
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut images = Vec::with_capacity(records.len());
    for rec in records {
        let (w, h, c, pixels) = load_image(&base.join(&rec.image))?;
        let points = rec.points.iter().map(|p| (p[0], p[1])).collect();
        images.push(AnnotatedImage::new(rec.id, w, h, c, pixels, points)?);
    }
    Ok(images)
}

/// Writes a density map: magic "IADM", u32 version, u32 H, u32 W, u32
/// scale, then H·W little-endian f32 values row-major.
pub fn save_density(path: &Path, d: &DensityMap) -> Result<()> {
    let mut out = Vec::with_capacity(20 + d.values.len() * 4);
    out.extend_from_slice(DENSITY_MAGIC);
    out.extend_from_slice(&DENSITY_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(d.height as u32).to_le_bytes());
    out.extend_from_slice(&(d.width as u32).to_le_bytes());
    out.extend_from_slice(&d.scale.to_le_bytes());
    for &v in &d.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_density(path: &Path) -> Result<DensityMap> {
    let bytes = fs::read(path)?;
    let err = |msg: &str, at: usize| Error::Parse(format!("{}: {msg} at byte {at}", path.display()));
    if bytes.len() < 20 {
        return Err(err("file too short for an IADM header", bytes.len()));
    }
    if &bytes[0..4] != DENSITY_MAGIC {
        return Err(err("bad magic, expected IADM", 0));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != DENSITY_FORMAT_VERSION {
        return Err(err(&format!("unsupported version {version}"), 4));
    }
    let height = u32_at(8) as usize;
    let width = u32_at(12) as usize;
    let scale = u32_at(16);
    let need = 20 + height * width * 4;
    if bytes.len() != need {
        return Err(err(
            &format!("expected {need} bytes for {height}x{width}"),
            bytes.len().min(need),
        ));
    }
    let values = bytes[20..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(DensityMap {
        height,
        width,
        scale,
        values,
    })
}

/// CSV export: one row per map row, plain decimal values.
pub fn save_density_csv(path: &Path, d: &DensityMap) -> Result<()> {
    let mut out = String::new();
    for row in d.values.chunks(d.width) {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Renders a density map to 8-bit grayscale, linearly scaled so the map
/// maximum maps to 255; an all-zero map renders black.
pub fn render_heatmap(d: &DensityMap) -> Vec<u8> {
    let max = d.values.iter().cloned().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return vec![0; d.values.len()];
    }
    d.values
        .iter()
        .map(|&v| ((v / max) * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

pub fn save_heatmap(path: &Path, d: &DensityMap) -> Result<()> {
    let gray = render_heatmap(d);
    let mut out = Vec::with_capacity(gray.len() + 32);
    write!(&mut out, "P5\n{} {}\n255\n", d.width, d.height)?;
    out.extend_from_slice(&gray);
    fs::write(path, out)?;
    Ok(())
}
