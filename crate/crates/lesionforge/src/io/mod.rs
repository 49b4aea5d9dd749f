//! Bit-exact file I/O for volumes and label maps.

pub mod nifti;
pub mod rawjson;

use std::path::Path;

use crate::error::Result;
use crate::volume::Volume3;

/// On-disk volume encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeFormat {
    Nifti1,
    RawJson,
}

pub fn load_volume(path: &Path, format: VolumeFormat) -> Result<Volume3> {
    match format {
        VolumeFormat::Nifti1 => nifti::load(path),
        VolumeFormat::RawJson => rawjson::load_volume(path),
    }
}

pub fn save_volume(v: &Volume3, path: &Path, format: VolumeFormat) -> Result<()> {
    match format {
        VolumeFormat::Nifti1 => nifti::save(v, path),
        VolumeFormat::RawJson => rawjson::save_volume(v, path),
    }
}

/// Pick a format from the file extension: `.bin`/`.json` mean rawjson,
/// anything else is NIfTI-1.
pub fn format_for_path(path: &Path) -> VolumeFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("bin") | Some("json") => VolumeFormat::RawJson,
        _ => VolumeFormat::Nifti1,
    }
}
