//! `.hsc` cubes, endmember CSV files and abundance exports.
//!
//! A `.hsc` file is one JSON header line followed by `B·H·W` little-endian
//! `f32` samples in band-sequential order.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{AbundanceField, EndmemberMatrix, HyperCube};
use crate::error::{Result, UnmixError};

#[derive(Serialize, Deserialize)]
struct CubeHeader {
    height: usize,
    width: usize,
    bands: usize,
    dtype: String,
    order: String,
}

fn format_err(path: &Path, field: &str, reason: impl Into<String>) -> UnmixError {
    UnmixError::Format {
        path: path.to_path_buf(),
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn f32_bytes(values: impl Iterator<Item = f64>) -> Vec<u8> {
    values.flat_map(|v| (v as f32).to_le_bytes()).collect()
}

fn read_f32_payload(path: &Path, bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 4 != 0 {
        return Err(format_err(
            path,
            "payload",
            "length is not a multiple of 4 bytes",
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Writes a cube as `.hsc`. Samples are narrowed to `f32`.
pub fn save_cube(cube: &HyperCube, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = CubeHeader {
        height: cube.height(),
        width: cube.width(),
        bands: cube.bands(),
        dtype: "f32le".into(),
        order: "bsq".into(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.extend(f32_bytes(cube.data().iter().copied()));
    fs::write(path, out).map_err(|e| UnmixError::io(path, e))
}

fn header_usize(path: &Path, obj: &serde_json::Map<String, Value>, field: &str) -> Result<usize> {
    obj.get(field)
        .ok_or_else(|| format_err(path, field, "missing"))?
        .as_u64()
        .map(|v| v as usize)
        .ok_or_else(|| format_err(path, field, "expected a non-negative integer"))
}

fn header_str<'a>(
    path: &Path,
    obj: &'a serde_json::Map<String, Value>,
    field: &str,
) -> Result<&'a str> {
    obj.get(field)
        .ok_or_else(|| format_err(path, field, "missing"))?
        .as_str()
        .ok_or_else(|| format_err(path, field, "expected a string"))
}

pub fn load_cube(path: impl AsRef<Path>) -> Result<HyperCube> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| UnmixError::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut line = Vec::new();
    reader
        .read_until(b'\n', &mut line)
        .map_err(|e| UnmixError::io(path, e))?;
    if line.last() != Some(&b'\n') {
        return Err(format_err(
            path,
            "header",
            "no newline-terminated header line",
        ));
    }
    let header: Value = serde_json::from_slice(&line[..line.len() - 1])
        .map_err(|e| format_err(path, "header", e.to_string()))?;
    let obj = header
        .as_object()
        .ok_or_else(|| format_err(path, "header", "expected a JSON object"))?;
    let height = header_usize(path, obj, "height")?;
    let width = header_usize(path, obj, "width")?;
    let bands = header_usize(path, obj, "bands")?;
    let dtype = header_str(path, obj, "dtype")?;
    if dtype != "f32le" {
        return Err(format_err(
            path,
            "dtype",
            format!("unsupported value {dtype:?}"),
        ));
    }
    let order = header_str(path, obj, "order")?;
    if order != "bsq" {
        return Err(format_err(
            path,
            "order",
            format!("unsupported value {order:?}"),
        ));
    }
    let mut payload = Vec::new();
    reader
        .read_to_end(&mut payload)
        .map_err(|e| UnmixError::io(path, e))?;
    let values = read_f32_payload(path, &payload)?;
    let expected = height * width * bands;
    if values.len() != expected {
        return Err(UnmixError::SizeMismatch {
            path: path.to_path_buf(),
            expected,
            found: values.len(),
        });
    }
    HyperCube::new(height, width, bands, values)
}

/// Writes `B` rows of `R` comma-separated values under a `#` header row.
pub fn save_endmembers_csv(m: &EndmemberMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("# ");
    out.push_str(
        &(0..m.count())
            .map(|r| format!("endmember_{r}"))
            .collect::<Vec<_>>()
            .join(","),
    );
    out.push('\n');
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    for row in m.matrix().row_iter() {
        writer
            .write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| format_err(path, "row", e.to_string()))?;
    }
    let body = writer
        .into_inner()
        .map_err(|e| format_err(path, "row", e.to_string()))?;
    out.push_str(std::str::from_utf8(&body).expect("csv output is utf-8"));
    fs::write(path, out).map_err(|e| UnmixError::io(path, e))
}

pub fn load_endmembers_csv(path: impl AsRef<Path>) -> Result<EndmemberMatrix> {
    let path = path.as_ref();
    let text = fs::read(path).map_err(|e| UnmixError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_slice());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| format_err(path, &format!("row {}", i + 1), e.to_string()))?;
        let row = record
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| format_err(path, &format!("row {}", i + 1), e.to_string()))?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(format_err(path, "rows", "no data rows"));
    }
    let r = rows[0].len();
    let b = rows.len();
    let m = DMatrix::from_fn(b, r, |i, j| rows[i][j]);
    EndmemberMatrix::new(m)
}

/// Channel-major `f32le` dump of an abundance field (`R` row-major images).
pub fn save_abundance_raw(field: &AbundanceField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, f32_bytes(field.to_channels().into_iter())).map_err(|e| UnmixError::io(path, e))
}

pub fn load_abundance_raw(
    path: impl AsRef<Path>,
    height: usize,
    width: usize,
    count: usize,
) -> Result<AbundanceField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| UnmixError::io(path, e))?;
    let values = read_f32_payload(path, &bytes)?;
    let expected = height * width * count;
    if values.len() != expected {
        return Err(UnmixError::SizeMismatch {
            path: path.to_path_buf(),
            expected,
            found: values.len(),
        });
    }
    AbundanceField::from_channels(height, width, count, &values)
}

/// `[0, 1] → [0, 255]` with clamping and round-half-up.
pub(crate) fn to_gray(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub(crate) fn write_pgm(path: &Path, pixels: &[u8], width: usize, height: usize) -> Result<()> {
    let mut buf = Vec::new();
    PnmEncoder::new(&mut buf)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(pixels, width as u32, height as u32, ExtendedColorType::L8)
        .map_err(|e| format_err(path, "image", e.to_string()))?;
    let mut f = fs::File::create(path).map_err(|e| UnmixError::io(path, e))?;
    f.write_all(&buf).map_err(|e| UnmixError::io(path, e))
}

/// A single `[0, 1]`-scaled image as an 8-bit PGM plus an `f32le` raw file
/// at the same stem.
pub fn save_gray_image(
    values: &[f64],
    height: usize,
    width: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    if values.len() != height * width {
        return Err(UnmixError::Shape(format!(
            "{} values for a {height}×{width} image",
            values.len()
        )));
    }
    let gray: Vec<u8> = values.iter().map(|&v| to_gray(v)).collect();
    write_pgm(&path.with_extension("pgm"), &gray, width, height)?;
    let raw = path.with_extension("raw");
    fs::write(&raw, f32_bytes(values.iter().copied())).map_err(|e| UnmixError::io(&raw, e))
}

/// One 8-bit PGM per channel plus an `f32le` raw companion. Returns the
/// written paths in channel order (`.pgm` then `.raw`).
pub fn export_abundance_maps(
    field: &AbundanceField,
    dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| UnmixError::io(dir, e))?;
    let mut written = Vec::new();
    for r in 0..field.count() {
        let channel = field.channel(r);
        let gray: Vec<u8> = channel.iter().map(|&v| to_gray(v)).collect();
        let pgm = dir.join(format!("abundance_{r}.pgm"));
        write_pgm(&pgm, &gray, field.width(), field.height())?;
        let raw = dir.join(format!("abundance_{r}.raw"));
        fs::write(&raw, f32_bytes(channel.into_iter())).map_err(|e| UnmixError::io(&raw, e))?;
        written.push(pgm);
        written.push(raw);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_scaling_endpoints_and_half() {
        assert_eq!(to_gray(0.0), 0);
        assert_eq!(to_gray(1.0), 255);
        assert_eq!(to_gray(0.5), 128);
        assert_eq!(to_gray(-3.0), 0);
        assert_eq!(to_gray(7.0), 255);
    }
}
