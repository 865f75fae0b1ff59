//! Volume files, NIfTI ingestion and report serialization.

mod nifti;
mod report;
mod vpv;

pub use nifti::{read_nifti, read_nifti_labels, NiftiInfo};
pub use report::{
    inverse_table, quality_table, read_record_json, write_dice_table, write_inverse_table,
    write_quality_table, write_record_rows, write_report, write_trace, Format, Report,
};
pub use vpv::{read_volume, vpv_paths, write_volume, write_volume_as, Dtype, Kind, Volume, VolumeHeader};

use std::path::{Path, PathBuf};

use vpreg_core::{LabelVolume, ScalarField, Transform};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("missing header {0}")]
    MissingHeader(PathBuf),
    #[error("payload of {path} has {actual} bytes, header implies {expected}")]
    SizeMismatch {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("unknown volume kind {0:?}")]
    UnknownKind(String),
    #[error("non-finite value at flat index {index}")]
    NonFiniteData { index: usize },
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("expected a {expected} volume, found {found}")]
    WrongKind { expected: Kind, found: Kind },
    #[error("not a NIfTI-1 file (magic {0:?})")]
    BadMagic(String),
    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("unsupported dimensions: {0}")]
    DimOverflow(String),
    #[error("big-endian NIfTI files are not supported")]
    BigEndian,
    #[error("too many distinct labels ({0}, limit 4096)")]
    TooManyLabels(usize),
    #[error("{path}: {source}")]
    Fs {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Core(#[from] vpreg_core::Error),
}

pub type IoResult<T> = std::result::Result<T, IoError>;

pub(crate) fn fs_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Fs {
        path: path.to_path_buf(),
        source,
    }
}

fn is_nifti(path: &Path) -> bool {
    let s = path.to_string_lossy();
    s.ends_with(".nii") || s.ends_with(".nii.gz")
}

/// Scalar image from a native volume or a NIfTI file.
pub fn read_image(path: &Path) -> IoResult<ScalarField> {
    if is_nifti(path) {
        return Ok(read_nifti(path)?.0);
    }
    match read_volume(path)? {
        Volume::Scalar(s) => Ok(s),
        other => Err(IoError::WrongKind {
            expected: Kind::Scalar,
            found: other.kind(),
        }),
    }
}

/// Label volume from a native volume or an integer NIfTI file.
pub fn read_labels(path: &Path) -> IoResult<LabelVolume> {
    if is_nifti(path) {
        return Ok(read_nifti_labels(path)?.0);
    }
    match read_volume(path)? {
        Volume::Labels(l) => Ok(l),
        other => Err(IoError::WrongKind {
            expected: Kind::Label,
            found: other.kind(),
        }),
    }
}

pub fn read_transform(path: &Path) -> IoResult<Transform> {
    match read_volume(path)? {
        Volume::Transform(t) => Ok(t),
        other => Err(IoError::WrongKind {
            expected: Kind::Transform,
            found: other.kind(),
        }),
    }
}
