//! Read-only NIfTI-1 ingestion (`.nii`, optionally gzip-compressed).

use std::collections::BTreeSet;
use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use serde::Serialize;
use vpreg_core::{Domain, LabelVolume, ScalarField};

use super::{fs_err, IoError, IoResult};

const HEADER_LEN: usize = 348;
const MAX_LABELS: usize = 4096;

/// Header fields kept alongside the data; orientation is recorded, not applied.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NiftiInfo {
    pub dims: Vec<usize>,
    pub datatype: i16,
    pub pixdim: Vec<f64>,
    pub scl_slope: f64,
    pub scl_inter: f64,
    pub qform_code: i16,
    pub sform_code: i16,
    /// Rows of the sform affine.
    pub srow: [[f64; 4]; 3],
}

struct Raw {
    info: NiftiInfo,
    values: Vec<f64>,
    integer: bool,
}

fn i16_at(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn i32_at(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

fn f32_at(b: &[u8], off: usize) -> f64 {
    f32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]]) as f64
}

fn load_bytes(path: &Path) -> IoResult<Vec<u8>> {
    let raw = fs::read(path).map_err(fs_err(path))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(fs_err(path))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn parse(bytes: &[u8]) -> IoResult<Raw> {
    if bytes.len() < HEADER_LEN {
        return Err(IoError::BadMagic(format!("file of {} bytes", bytes.len())));
    }
    let magic = &bytes[344..348];
    if magic != b"n+1\0" {
        return Err(IoError::BadMagic(String::from_utf8_lossy(magic).into_owned()));
    }
    let sizeof_hdr = i32_at(bytes, 0);
    if sizeof_hdr != HEADER_LEN as i32 {
        if sizeof_hdr.swap_bytes() == HEADER_LEN as i32 {
            return Err(IoError::BigEndian);
        }
        return Err(IoError::BadMagic(format!("sizeof_hdr {sizeof_hdr}")));
    }
    let ndim = i16_at(bytes, 40);
    if !(1..=7).contains(&ndim) {
        return Err(IoError::DimOverflow(format!("dim[0] = {ndim}")));
    }
    let raw_dims: Vec<i16> = (1..=ndim as usize).map(|i| i16_at(bytes, 40 + 2 * i)).collect();
    if raw_dims.iter().any(|&d| d < 1) {
        return Err(IoError::DimOverflow(format!("dims {raw_dims:?}")));
    }
    let mut dims: Vec<usize> = raw_dims.iter().map(|&d| d as usize).collect();
    while dims.len() > 3 && dims.last() == Some(&1) {
        dims.pop();
    }
    if dims.len() > 3 {
        return Err(IoError::DimOverflow(format!("{} spatial axes", dims.len())));
    }
    if dims.len() == 3 && dims[2] == 1 {
        dims.pop();
    }
    let datatype = i16_at(bytes, 70);
    let (size, integer) = match datatype {
        2 => (1, true),
        4 | 8 => (datatype as usize / 2, true),
        16 => (4, false),
        64 => (8, false),
        other => return Err(IoError::UnsupportedDatatype(other)),
    };
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| IoError::DimOverflow(format!("{dims:?}")))?;
    let vox_offset = f32_at(bytes, 108);
    if !(vox_offset >= HEADER_LEN as f64) || vox_offset.fract() != 0.0 {
        return Err(IoError::InvalidHeader(format!("vox_offset {vox_offset}")));
    }
    let start = vox_offset as usize;
    let need = n
        .checked_mul(size)
        .and_then(|b| b.checked_add(start))
        .ok_or_else(|| IoError::DimOverflow(format!("{dims:?}")))?;
    if bytes.len() < need {
        return Err(IoError::SizeMismatch {
            path: "<nifti body>".into(),
            expected: need - start,
            actual: bytes.len().saturating_sub(start),
        });
    }
    let body = &bytes[start..need];
    let values: Vec<f64> = match datatype {
        2 => body.iter().map(|&v| v as f64).collect(),
        4 => body.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]]) as f64).collect(),
        8 => body.chunks_exact(4).map(|c| i32_at(c, 0) as f64).collect(),
        16 => body.chunks_exact(4).map(|c| f32_at(c, 0)).collect(),
        _ => body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    };
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(IoError::NonFiniteData { index });
    }
    let pixdim = (1..=dims.len()).map(|i| f32_at(bytes, 76 + 4 * i)).collect();
    let mut srow = [[0.0; 4]; 3];
    for (r, row) in srow.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = f32_at(bytes, 280 + 16 * r + 4 * c);
        }
    }
    Ok(Raw {
        info: NiftiInfo {
            dims,
            datatype,
            pixdim,
            scl_slope: f32_at(bytes, 112),
            scl_inter: f32_at(bytes, 116),
            qform_code: i16_at(bytes, 252),
            sform_code: i16_at(bytes, 254),
            srow,
        },
        values,
        integer,
    })
}

/// Intensity volume; `scl_slope`/`scl_inter` are applied when the slope is
/// non-zero.
pub fn read_nifti(path: &Path) -> IoResult<(ScalarField, NiftiInfo)> {
    let raw = parse(&load_bytes(path)?)?;
    let domain = Domain::new(&raw.info.dims)?;
    let (a, b) = (raw.info.scl_slope, raw.info.scl_inter);
    let values = if a != 0.0 && (a, b) != (1.0, 0.0) {
        raw.values.iter().map(|v| a * v + b).collect()
    } else {
        raw.values
    };
    Ok((ScalarField::from_vec(domain, values)?, raw.info))
}

/// Integer volume read as labels (at most 4096 distinct non-negative values).
pub fn read_nifti_labels(path: &Path) -> IoResult<(LabelVolume, NiftiInfo)> {
    let raw = parse(&load_bytes(path)?)?;
    if !raw.integer {
        return Err(IoError::UnsupportedDatatype(raw.info.datatype));
    }
    let distinct: BTreeSet<i64> = raw.values.iter().map(|&v| v as i64).collect();
    if distinct.len() > MAX_LABELS {
        return Err(IoError::TooManyLabels(distinct.len()));
    }
    if let Some(&neg) = distinct.iter().find(|&&v| v < 0) {
        return Err(IoError::InvalidHeader(format!("negative label {neg}")));
    }
    let domain = Domain::new(&raw.info.dims)?;
    let labels = raw.values.iter().map(|&v| v as u32).collect();
    Ok((LabelVolume::from_vec(domain, labels)?, raw.info))
}
