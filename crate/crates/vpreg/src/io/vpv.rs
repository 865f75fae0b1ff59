//! Native volume format: a JSON header `<base>.vpv.json` next to a raw
//! little-endian payload `<base>.vpv.raw`, x fastest, component-major.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vpreg_core::{Domain, LabelVolume, ScalarField, Transform, VectorField};

use super::{fs_err, IoError, IoResult};

pub const FORMAT: &str = "vpv";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Scalar,
    Vector,
    Label,
    Transform,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::Scalar => "scalar",
            Kind::Vector => "vector",
            Kind::Label => "label",
            Kind::Transform => "transform",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
    I32,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 | Dtype::I32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub format: String,
    pub version: u32,
    pub dims: Vec<usize>,
    pub kind: String,
    pub components: usize,
    pub dtype: Dtype,
    #[serde(default)]
    pub spacing: Option<Vec<f64>>,
    pub byte_order: String,
}

impl VolumeHeader {
    pub fn new(dims: &[usize], kind: Kind, components: usize, dtype: Dtype) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            dims: dims.to_vec(),
            kind: kind.to_string(),
            components,
            dtype,
            spacing: None,
            byte_order: "little".into(),
        }
    }

    pub fn kind(&self) -> IoResult<Kind> {
        match self.kind.as_str() {
            "scalar" => Ok(Kind::Scalar),
            "vector" => Ok(Kind::Vector),
            "label" => Ok(Kind::Label),
            "transform" => Ok(Kind::Transform),
            other => Err(IoError::UnknownKind(other.into())),
        }
    }

    pub fn payload_len(&self) -> usize {
        self.dims.iter().product::<usize>() * self.components * self.dtype.size()
    }

    fn check(&self) -> IoResult<Kind> {
        if self.format != FORMAT {
            return Err(IoError::InvalidHeader(format!("format {:?}", self.format)));
        }
        if self.byte_order != "little" {
            return Err(IoError::InvalidHeader(format!("byte order {:?}", self.byte_order)));
        }
        let kind = self.kind()?;
        let d = self.dims.len();
        let (comps_ok, dtype_ok) = match kind {
            Kind::Scalar => (self.components == 1, self.dtype != Dtype::I32),
            Kind::Label => (self.components == 1, self.dtype == Dtype::I32),
            Kind::Vector => ((1..=3).contains(&self.components), self.dtype != Dtype::I32),
            Kind::Transform => (self.components == d, self.dtype != Dtype::I32),
        };
        if !comps_ok {
            return Err(IoError::InvalidHeader(format!(
                "{kind} volume with {} components",
                self.components
            )));
        }
        if !dtype_ok {
            return Err(IoError::InvalidHeader(format!("{kind} volume with dtype {:?}", self.dtype)));
        }
        Ok(kind)
    }
}

/// A typed volume.
#[derive(Debug, Clone, PartialEq)]
pub enum Volume {
    Scalar(ScalarField),
    Vector(VectorField),
    Labels(LabelVolume),
    Transform(Transform),
}

impl Volume {
    pub fn kind(&self) -> Kind {
        match self {
            Volume::Scalar(_) => Kind::Scalar,
            Volume::Vector(_) => Kind::Vector,
            Volume::Labels(_) => Kind::Label,
            Volume::Transform(_) => Kind::Transform,
        }
    }

    pub fn domain(&self) -> &Domain {
        match self {
            Volume::Scalar(s) => s.domain(),
            Volume::Vector(v) => v.domain(),
            Volume::Labels(l) => l.domain(),
            Volume::Transform(t) => t.domain(),
        }
    }
}

impl From<ScalarField> for Volume {
    fn from(s: ScalarField) -> Self {
        Volume::Scalar(s)
    }
}

impl From<VectorField> for Volume {
    fn from(v: VectorField) -> Self {
        Volume::Vector(v)
    }
}

impl From<LabelVolume> for Volume {
    fn from(l: LabelVolume) -> Self {
        Volume::Labels(l)
    }
}

impl From<Transform> for Volume {
    fn from(t: Transform) -> Self {
        Volume::Transform(t)
    }
}

/// Header and payload paths for `path`, which may name either file or the
/// common base.
pub fn vpv_paths(path: &Path) -> (PathBuf, PathBuf) {
    let s = path.to_string_lossy();
    let base = [".vpv.json", ".vpv.raw", ".vpv"]
        .iter()
        .find_map(|ext| s.strip_suffix(ext))
        .unwrap_or(&s)
        .to_string();
    (
        PathBuf::from(format!("{base}.vpv.json")),
        PathBuf::from(format!("{base}.vpv.raw")),
    )
}

pub fn read_volume(path: &Path) -> IoResult<Volume> {
    let (hp, rp) = vpv_paths(path);
    if !hp.exists() {
        return Err(IoError::MissingHeader(hp));
    }
    let header: VolumeHeader = serde_json::from_slice(&fs::read(&hp).map_err(fs_err(&hp))?)?;
    let kind = header.check()?;
    let payload = fs::read(&rp).map_err(fs_err(&rp))?;
    let expected = header.payload_len();
    if payload.len() != expected {
        return Err(IoError::SizeMismatch {
            path: rp,
            expected,
            actual: payload.len(),
        });
    }
    let domain = Domain::new(&header.dims)?;
    let n = domain.len();
    if kind == Kind::Label {
        let mut labels = Vec::with_capacity(n);
        for c in payload.chunks_exact(4) {
            let v = i32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let v = u32::try_from(v)
                .map_err(|_| IoError::InvalidHeader(format!("negative label {v}")))?;
            labels.push(v);
        }
        return Ok(Volume::Labels(LabelVolume::from_vec(domain, labels)?));
    }
    let values = decode_floats(&payload, header.dtype)?;
    let comps: Vec<ScalarField> = values
        .chunks_exact(n)
        .map(|c| ScalarField::from_vec(domain, c.to_vec()))
        .collect::<Result<_, _>>()?;
    Ok(match kind {
        Kind::Scalar => Volume::Scalar(comps.into_iter().next().expect("one component")),
        Kind::Vector => Volume::Vector(VectorField::from_components(comps)?),
        Kind::Transform => {
            let coords = VectorField::from_components(comps)?;
            match Transform::from_coords(coords.clone()) {
                Ok(t) => Volume::Transform(t),
                Err(vpreg_core::Error::BoundaryNotIdentity { .. }) => {
                    log::warn!("{}: boundary is not the identity; re-pinned", hp.display());
                    Volume::Transform(Transform::from_coords_pinned(coords))
                }
                Err(e) => return Err(e.into()),
            }
        }
        Kind::Label => unreachable!("labels decoded above"),
    })
}

fn decode_floats(payload: &[u8], dtype: Dtype) -> IoResult<Vec<f64>> {
    let values: Vec<f64> = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
        Dtype::I32 => unreachable!("rejected by the header check"),
    };
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(IoError::NonFiniteData { index });
    }
    Ok(values)
}

/// Writes `value` with `f64` samples (labels as `i32`).
pub fn write_volume(value: &Volume, path: &Path) -> IoResult<()> {
    write_volume_as(value, path, Dtype::F64)
}

/// Writes `value` with the given float sample type; labels are always `i32`.
pub fn write_volume_as(value: &Volume, path: &Path, dtype: Dtype) -> IoResult<()> {
    let domain = *value.domain();
    let (comps, kind): (Vec<&ScalarField>, Kind) = match value {
        Volume::Scalar(s) => (vec![s], Kind::Scalar),
        Volume::Vector(v) => (v.components().iter().collect(), Kind::Vector),
        Volume::Transform(t) => (t.coords().components().iter().collect(), Kind::Transform),
        Volume::Labels(_) => (Vec::new(), Kind::Label),
    };
    let mut payload = Vec::new();
    let header = if let Volume::Labels(l) = value {
        for &v in l.labels() {
            let v = i32::try_from(v)
                .map_err(|_| IoError::InvalidHeader(format!("label {v} exceeds i32")))?;
            payload.extend_from_slice(&v.to_le_bytes());
        }
        VolumeHeader::new(domain.dims(), kind, 1, Dtype::I32)
    } else {
        if dtype == Dtype::I32 {
            return Err(IoError::InvalidHeader("float fields need dtype f32 or f64".into()));
        }
        for c in &comps {
            for &v in c.values() {
                match dtype {
                    Dtype::F32 => payload.extend_from_slice(&(v as f32).to_le_bytes()),
                    _ => payload.extend_from_slice(&v.to_le_bytes()),
                }
            }
        }
        VolumeHeader::new(domain.dims(), kind, comps.len(), dtype)
    };
    let (hp, rp) = vpv_paths(path);
    if let Some(dir) = hp.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(fs_err(dir))?;
    }
    let mut json = serde_json::to_vec_pretty(&header)?;
    json.push(b'\n');
    fs::write(&hp, json).map_err(fs_err(&hp))?;
    fs::write(&rp, payload).map_err(fs_err(&rp))?;
    Ok(())
}
