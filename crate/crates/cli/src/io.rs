//! Cube container I/O and false-color export.
//!
//! A cube file is a single self-describing container in the ENVI style: a
//! text header block (key = value lines, "ENVI" magic, padded with newlines
//! to `header offset` bytes) followed by the raw payload, little-endian
//! 32-bit reals in band-sequential order. Only this minimal key subset is
//! supported:
//!
//! ```text
//! ENVI
//! samples = <width>
//! lines = <height>
//! bands = <count>
//! header offset = <bytes>
//! data type = 4
//! interleave = bsq
//! byte order = 0
//! data min = <f32>      (optional; normalization record)
//! data max = <f32>      (optional)
//! ```
//!
//! Values are normalized into [0,1] on read using the declared min/max when
//! present (computed otherwise), and the pair is carried along so writing
//! restores the original payload bit-exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use hsprior_core::{HyperCube, Mask, NdArray};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: missing ENVI magic line")]
    BadMagic { path: String },
    #[error("{path}: bad header key `{key}`")]
    BadHeaderKey { path: String, key: String },
    #[error("{path}: header key `{key}` has unparseable value `{value}`")]
    BadHeaderValue {
        path: String,
        key: String,
        value: String,
    },
    #[error("{path}: header is missing required key `{key}`")]
    MissingHeaderKey { path: String, key: String },
    #[error("{path}: unsupported {what} (expected {expected}, got {got})")]
    Unsupported {
        path: String,
        what: &'static str,
        expected: String,
        got: String,
    },
    #[error("{path}: payload length mismatch (expected {expected} bytes, got {got})")]
    PayloadMismatch {
        path: String,
        expected: usize,
        got: usize,
    },
    #[error("refusing to overwrite existing file {path} (pass --overwrite)")]
    WouldOverwrite { path: String },
    #[error("empty output path")]
    EmptyPath,
    #[error("band index {index} out of range for {bands} bands")]
    BandOutOfRange { index: usize, bands: usize },
    #[error(transparent)]
    Core(#[from] hsprior_core::Error),
}

pub type Result<T> = std::result::Result<T, IoError>;

/// Original payload value range, kept for inverse mapping on write.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueRange {
    pub min: f32,
    pub max: f32,
}

impl ValueRange {
    /// The identity mapping for cubes born normalized.
    pub fn unit() -> Self {
        ValueRange { min: 0.0, max: 1.0 }
    }
}

/// A cube together with its denormalization record.
#[derive(Debug, Clone)]
pub struct LoadedCube {
    pub cube: HyperCube,
    pub range: ValueRange,
}

const MAGIC: &str = "ENVI";
const DATA_TYPE_F32: u32 = 4;

fn io_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::Io {
        path: path.display().to_string(),
        source,
    }
}

struct Header {
    samples: usize,
    lines: usize,
    bands: usize,
    offset: usize,
    declared_range: Option<ValueRange>,
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<Header> {
    let p = || path.display().to_string();
    // The header block is pure ASCII; scan up to the first 64 KiB.
    let probe = &bytes[..bytes.len().min(65536)];
    let text = String::from_utf8_lossy(probe);
    let mut lines_iter = text.lines();
    if lines_iter.next().map(str::trim) != Some(MAGIC) {
        return Err(IoError::BadMagic { path: p() });
    }

    let mut samples = None;
    let mut lines_v = None;
    let mut bands = None;
    let mut offset = None;
    let mut data_type = None;
    let mut interleave = None;
    let mut byte_order = None;
    let mut dmin = None;
    let mut dmax = None;

    for raw in lines_iter {
        let line = raw.trim_end_matches('\0').trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            // reached binary payload rendered as garbage; stop at the
            // first non key=value line
            break;
        };
        let key = key.trim();
        let value = value.trim();
        let parse_usize = |v: &str| -> Result<usize> {
            v.parse().map_err(|_| IoError::BadHeaderValue {
                path: p(),
                key: key.to_string(),
                value: v.to_string(),
            })
        };
        match key {
            "samples" => samples = Some(parse_usize(value)?),
            "lines" => lines_v = Some(parse_usize(value)?),
            "bands" => bands = Some(parse_usize(value)?),
            "header offset" => offset = Some(parse_usize(value)?),
            "data type" => data_type = Some(parse_usize(value)?),
            "interleave" => interleave = Some(value.to_string()),
            "byte order" => byte_order = Some(parse_usize(value)?),
            "data min" => {
                dmin = Some(value.parse::<f32>().map_err(|_| IoError::BadHeaderValue {
                    path: p(),
                    key: key.to_string(),
                    value: value.to_string(),
                })?)
            }
            "data max" => {
                dmax = Some(value.parse::<f32>().map_err(|_| IoError::BadHeaderValue {
                    path: p(),
                    key: key.to_string(),
                    value: value.to_string(),
                })?)
            }
            other => {
                return Err(IoError::BadHeaderKey {
                    path: p(),
                    key: other.to_string(),
                })
            }
        }
        if samples.is_some()
            && lines_v.is_some()
            && bands.is_some()
            && offset.is_some()
            && data_type.is_some()
            && interleave.is_some()
            && byte_order.is_some()
            && dmin.is_some()
            && dmax.is_some()
        {
            break;
        }
    }

    let require = |name: &'static str, v: Option<usize>| {
        v.ok_or_else(|| IoError::MissingHeaderKey {
            path: p(),
            key: name.to_string(),
        })
    };
    let samples = require("samples", samples)?;
    let lines_v = require("lines", lines_v)?;
    let bands = require("bands", bands)?;
    let offset = require("header offset", offset)?;
    let data_type = require("data type", data_type)?;
    let byte_order = require("byte order", byte_order)?;
    let interleave = interleave.ok_or_else(|| IoError::MissingHeaderKey {
        path: p(),
        key: "interleave".to_string(),
    })?;

    if data_type != DATA_TYPE_F32 as usize {
        return Err(IoError::Unsupported {
            path: p(),
            what: "data type",
            expected: DATA_TYPE_F32.to_string(),
            got: data_type.to_string(),
        });
    }
    if interleave != "bsq" {
        return Err(IoError::Unsupported {
            path: p(),
            what: "interleave",
            expected: "bsq".to_string(),
            got: interleave,
        });
    }
    if byte_order != 0 {
        return Err(IoError::Unsupported {
            path: p(),
            what: "byte order",
            expected: "0".to_string(),
            got: byte_order.to_string(),
        });
    }
    let declared_range = match (dmin, dmax) {
        (Some(min), Some(max)) => Some(ValueRange { min, max }),
        (None, None) => None,
        _ => {
            return Err(IoError::MissingHeaderKey {
                path: p(),
                key: "data min/data max (must appear together)".to_string(),
            })
        }
    };
    Ok(Header {
        samples,
        lines: lines_v,
        bands,
        offset,
        declared_range,
    })
}

/// Reads a cube file, normalizing values into [0,1].
pub fn read_cube(path: &Path) -> Result<LoadedCube> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let header = parse_header(path, &bytes)?;
    let n = header.samples * header.lines * header.bands;
    let expected = n * 4;
    let got = bytes.len().saturating_sub(header.offset);
    if got != expected {
        return Err(IoError::PayloadMismatch {
            path: path.display().to_string(),
            expected,
            got,
        });
    }

    let payload = &bytes[header.offset..];
    let mut raw = Vec::with_capacity(n);
    for chunk in payload.chunks_exact(4) {
        raw.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
    }
    if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
        return Err(IoError::Core(hsprior_core::Error::NonFinite {
            context: format!("{}: payload at flat index {i}", path.display()),
        }));
    }

    let range = header.declared_range.unwrap_or_else(|| {
        let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
        for &v in &raw {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        ValueRange { min: lo, max: hi }
    });

    let data: Vec<f64> = if range.max > range.min {
        let (m, span) = (range.min as f64, (range.max - range.min) as f64);
        raw.iter().map(|&v| (v as f64 - m) / span).collect()
    } else {
        vec![0.0; n]
    };
    let arr = NdArray::from_vec(&[header.bands, header.lines, header.samples], data)
        .map_err(IoError::Core)?;
    // A declared range narrower than the data pushes values out of [0,1]
    // and is rejected by the cube constructor.
    let cube = HyperCube::new(arr).map_err(IoError::Core)?;
    Ok(LoadedCube { cube, range })
}

fn render_header(cube: &HyperCube, range: ValueRange) -> Vec<u8> {
    let body = |offset: usize| {
        format!(
            "{MAGIC}\nsamples = {}\nlines = {}\nbands = {}\nheader offset = {}\ndata type = {}\ninterleave = bsq\nbyte order = 0\ndata min = {}\ndata max = {}\n",
            cube.width(),
            cube.height(),
            cube.bands(),
            offset,
            DATA_TYPE_F32,
            range.min,
            range.max,
        )
    };
    let mut offset = 512usize;
    while body(offset).len() > offset {
        offset *= 2;
    }
    let mut header = body(offset).into_bytes();
    header.resize(offset, b'\n');
    header
}

/// Writes a cube file; the payload is the denormalized values as 32-bit
/// little-endian reals. Writes go to a sibling temp file first, then rename.
pub fn write_cube(
    path: &Path,
    cube: &HyperCube,
    range: ValueRange,
    overwrite: bool,
) -> Result<()> {
    if path.as_os_str().is_empty() {
        return Err(IoError::EmptyPath);
    }
    if !overwrite && path.exists() {
        return Err(IoError::WouldOverwrite {
            path: path.display().to_string(),
        });
    }
    let mut bytes = render_header(cube, range);
    bytes.reserve(cube.as_array().numel() * 4);
    let span = (range.max - range.min) as f64;
    for &v in cube.as_array().data() {
        let raw = if range.max > range.min {
            (v * span + range.min as f64) as f32
        } else {
            range.min
        };
        bytes.extend_from_slice(&raw.to_le_bytes());
    }
    atomic_write(path, &bytes)
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp-write");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
        f.write_all(bytes).map_err(|e| io_err(&tmp, e))?;
        f.sync_all().map_err(|e| io_err(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

/// Reads a mask file: the same container with values restricted to {0,1}.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let loaded = read_cube(path)?;
    Mask::new(loaded.cube.into_array()).map_err(IoError::Core)
}

/// Writes a mask using the cube container with a declared unit range, so
/// constant masks survive the round trip.
pub fn write_mask(path: &Path, mask: &Mask, overwrite: bool) -> Result<()> {
    let cube = HyperCube::new(mask.as_array().clone()).map_err(IoError::Core)?;
    write_cube(path, &cube, ValueRange::unit(), overwrite)
}

/// Exports three bands as a binary 8-bit pixmap (P6), each band min-max
/// stretched independently; constant bands render mid-gray.
pub fn export_falsecolor(
    cube: &HyperCube,
    bands: [usize; 3],
    path: &Path,
    overwrite: bool,
) -> Result<()> {
    if path.as_os_str().is_empty() {
        return Err(IoError::EmptyPath);
    }
    if !overwrite && path.exists() {
        return Err(IoError::WouldOverwrite {
            path: path.display().to_string(),
        });
    }
    for &b in &bands {
        if b >= cube.bands() {
            return Err(IoError::BandOutOfRange {
                index: b,
                bands: cube.bands(),
            });
        }
    }
    let (h, w) = (cube.height(), cube.width());
    let mut stretched: Vec<Vec<u8>> = Vec::with_capacity(3);
    for &b in &bands {
        let plane = cube.band(b);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in plane {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let bytes: Vec<u8> = if hi > lo {
            plane
                .iter()
                .map(|&v| ((v - lo) / (hi - lo) * 255.0).round() as u8)
                .collect()
        } else {
            vec![128; plane.len()]
        };
        stretched.push(bytes);
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for i in 0..h * w {
        out.push(stretched[0][i]);
        out.push(stretched[1][i]);
        out.push(stretched[2][i]);
    }
    atomic_write(path, &out)
}
