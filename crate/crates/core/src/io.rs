//! On-disk field format: `<stem>.bin` holds little-endian `f64` samples
//! (interleaved re/im for complex fields) in grid order, `<stem>.json` holds
//! the header.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ComplexField, Grid2D, GridField, RealField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Real,
    Complex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub n: usize,
    pub half_width: f64,
    pub kind: FieldKind,
    pub label: String,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}

fn write_raw(stem: &Path, header: &FieldHeader, data: &[f64]) -> Result<()> {
    let (bin, json) = paths(stem);
    if let Some(dir) = bin.parent() {
        fs::create_dir_all(dir)?;
    }
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(bin, bytes)?;
    fs::write(json, serde_json::to_string_pretty(header)?)?;
    Ok(())
}

fn read_raw(stem: &Path, kind: FieldKind) -> Result<(Grid2D, FieldHeader, Vec<f64>)> {
    let (bin, json) = paths(stem);
    let header: FieldHeader = serde_json::from_str(&fs::read_to_string(json)?)?;
    if header.kind != kind {
        return Err(Error::Format(format!(
            "{}: expected a {:?} field, header says {:?}",
            stem.display(),
            kind,
            header.kind
        )));
    }
    let grid = Grid2D::new(header.half_width, header.n)?;
    let bytes = fs::read(bin)?;
    let per = if kind == FieldKind::Complex { 2 } else { 1 };
    let expected = grid.len() * per * 8;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{}: {} bytes, expected {}",
            stem.display(),
            bytes.len(),
            expected
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((grid, header, data))
}

pub fn write_real(stem: &Path, field: &RealField, label: &str) -> Result<()> {
    let grid = field.grid();
    let header = FieldHeader {
        n: grid.n(),
        half_width: grid.half_width(),
        kind: FieldKind::Real,
        label: label.to_string(),
    };
    write_raw(stem, &header, field.values())
}

pub fn write_complex(stem: &Path, field: &ComplexField, label: &str) -> Result<()> {
    let grid = field.grid();
    let header = FieldHeader {
        n: grid.n(),
        half_width: grid.half_width(),
        kind: FieldKind::Complex,
        label: label.to_string(),
    };
    let data: Vec<f64> = field.values().iter().flat_map(|c| [c.re, c.im]).collect();
    write_raw(stem, &header, &data)
}

pub fn read_real(stem: &Path) -> Result<(RealField, FieldHeader)> {
    let (grid, header, data) = read_raw(stem, FieldKind::Real)?;
    Ok((RealField::new(&grid, data)?, header))
}

pub fn read_complex(stem: &Path) -> Result<(ComplexField, FieldHeader)> {
    let (grid, header, data) = read_raw(stem, FieldKind::Complex)?;
    let values = data.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
    Ok((ComplexField::new(&grid, values)?, header))
}

/// Reads just the header of a stored field.
pub fn read_header(stem: &Path) -> Result<FieldHeader> {
    let (_, json) = paths(stem);
    Ok(serde_json::from_str(&fs::read_to_string(json)?)?)
}


/// Serde adapter for `f64` that writes non-finite values as `"inf"`,
/// `"-inf"` or `"nan"`, so diagnostics of an aborted run stay loadable.
pub mod lenient_f64 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        match *v {
            v if v.is_nan() => Repr::Text("nan".into()),
            v if v == f64::INFINITY => Repr::Text("inf".into()),
            v if v == f64::NEG_INFINITY => Repr::Text("-inf".into()),
            v => Repr::Num(v),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "nan" => Ok(f64::NAN),
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                _ => Err(serde::de::Error::custom(format!("bad number {t:?}"))),
            },
        }
    }
}
