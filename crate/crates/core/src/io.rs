//! File formats.
//!
//! The native format is a text header of `key = value` lines next to a raw
//! little-endian `f64` payload:
//!
//! ```text
//! kind = image
//! nx = 64
//! ny = 64
//! pixel_size = 1
//! dtype = f64le
//! data = phantom.raw
//! ```
//!
//! Images are stored row-major (row 0 first), sinograms distance-major
//! (`r * n_angle + t`). `data` is relative to the header's directory.
//! CSV files hold one image row or one distance bin per line.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::projector::{Image, ImageGrid, Sinogram, SinogramGeometry};

const DTYPE: &str = "f64le";

fn payload_path(header: &Path) -> PathBuf {
    header.with_extension("raw")
}

fn write_payload(path: &Path, values: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_payload(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 8 {
        return Err(Error::format(
            path,
            format!("payload has {} bytes, expected {}", bytes.len(), expected * 8),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

fn write_header(path: &Path, fields: &[(&str, String)]) -> Result<()> {
    let data = payload_path(path);
    let name = data
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::format(path, "header path has no usable file name"))?;
    let mut text = String::new();
    for (k, v) in fields {
        text.push_str(&format!("{k} = {v}\n"));
    }
    text.push_str(&format!("dtype = {DTYPE}\ndata = {name}\n"));
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

struct Header {
    path: PathBuf,
    fields: HashMap<String, String>,
}

impl Header {
    fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut fields = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(path, format!("line {} is not key = value", i + 1)))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        let header = Self {
            path: path.to_path_buf(),
            fields,
        };
        let dtype = header.get("dtype")?;
        if dtype != DTYPE {
            return Err(Error::format(path, format!("unsupported dtype '{dtype}'")));
        }
        Ok(header)
    }

    fn get(&self, key: &str) -> Result<&str> {
        self.fields
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::format(&self.path, format!("missing key '{key}'")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| Error::format(&self.path, format!("bad value '{v}' for '{key}'")))
    }

    fn expect_kind(&self, kind: &str) -> Result<()> {
        let found = self.get("kind")?;
        if found != kind {
            return Err(Error::format(&self.path, format!("expected a {kind}, found a {found}")));
        }
        Ok(())
    }

    fn payload(&self) -> PathBuf {
        let data = self.fields.get("data").map(PathBuf::from).unwrap_or_else(|| payload_path(&self.path));
        match self.path.parent() {
            Some(dir) if data.is_relative() => dir.join(data),
            _ => data,
        }
    }
}

fn check_finite(path: &Path, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::format(path, format!("non-finite value at index {i}"))),
        None => Ok(()),
    }
}

/// Writes `header` and its `.raw` payload.
pub fn write_image(header: &Path, img: &Image) -> Result<()> {
    write_header(
        header,
        &[
            ("kind", "image".into()),
            ("nx", img.grid.nx.to_string()),
            ("ny", img.grid.ny.to_string()),
            ("pixel_size", img.grid.pixel_size.to_string()),
        ],
    )?;
    write_payload(&payload_path(header), &img.values)
}

pub fn read_image(header: &Path) -> Result<Image> {
    let h = Header::read(header)?;
    h.expect_kind("image")?;
    let grid = ImageGrid::new(h.parse("nx")?, h.parse("ny")?, h.parse("pixel_size")?)
        .map_err(|e| Error::format(header, e.to_string()))?;
    let payload = h.payload();
    let values = read_payload(&payload, grid.len())?;
    check_finite(&payload, &values)?;
    Image::new(grid, values)
}

pub fn write_sinogram(header: &Path, sino: &Sinogram) -> Result<()> {
    let g = sino.geometry;
    write_header(
        header,
        &[
            ("kind", "sinogram".into()),
            ("n_dist", g.n_dist.to_string()),
            ("n_angle", g.n_angle.to_string()),
            ("bin_size", g.bin_size.to_string()),
        ],
    )?;
    write_payload(&payload_path(header), &sino.values)
}

pub fn read_sinogram(header: &Path) -> Result<Sinogram> {
    let h = Header::read(header)?;
    h.expect_kind("sinogram")?;
    let geom = SinogramGeometry::new(h.parse("n_dist")?, h.parse("n_angle")?, h.parse("bin_size")?)
        .map_err(|e| Error::format(header, e.to_string()))?;
    let payload = h.payload();
    let values = read_payload(&payload, geom.len())?;
    check_finite(&payload, &values)?;
    Sinogram::new(geom, values)
}

fn write_rows(path: &Path, values: &[f64], width: usize) -> Result<()> {
    let mut text = String::with_capacity(values.len() * 12);
    for row in values.chunks(width) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        text.push_str(&line.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_rows(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut values = vec![];
    let mut width = None;
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::format(path, format!("line {}: bad number '{}'", i + 1, s.trim())))
            })
            .collect::<Result<_>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::format(path, format!("line {} has {} columns, expected {w}", i + 1, row.len())))
            }
            _ => {}
        }
        values.extend(row);
        rows += 1;
    }
    let width = width.ok_or_else(|| Error::format(path, "empty file"))?;
    check_finite(path, &values)?;
    Ok((values, rows, width))
}

/// One line per image row.
pub fn write_image_csv(path: &Path, img: &Image) -> Result<()> {
    write_rows(path, &img.values, img.grid.nx)
}

pub fn read_image_csv(path: &Path, pixel_size: f64) -> Result<Image> {
    let (values, ny, nx) = read_rows(path)?;
    Image::new(ImageGrid::new(nx, ny, pixel_size)?, values)
}

/// One line per distance bin, one column per angle.
pub fn write_sinogram_csv(path: &Path, sino: &Sinogram) -> Result<()> {
    write_rows(path, &sino.values, sino.geometry.n_angle)
}

pub fn read_sinogram_csv(path: &Path, bin_size: f64) -> Result<Sinogram> {
    let (values, n_dist, n_angle) = read_rows(path)?;
    Sinogram::new(SinogramGeometry::new(n_dist, n_angle, bin_size)?, values)
}

fn is_csv(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Dispatches on the extension: `.csv` or a native header.
pub fn load_image(path: &Path, pixel_size: f64) -> Result<Image> {
    if is_csv(path) {
        read_image_csv(path, pixel_size)
    } else {
        read_image(path)
    }
}

pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    if is_csv(path) {
        write_image_csv(path, img)
    } else {
        write_image(path, img)
    }
}

pub fn load_sinogram(path: &Path, bin_size: f64) -> Result<Sinogram> {
    if is_csv(path) {
        read_sinogram_csv(path, bin_size)
    } else {
        read_sinogram(path)
    }
}

pub fn save_sinogram(path: &Path, sino: &Sinogram) -> Result<()> {
    if is_csv(path) {
        write_sinogram_csv(path, sino)
    } else {
        write_sinogram(path, sino)
    }
}
