//! rawjson format: a little-endian float32 payload (`<name>.bin`) next to
//! a JSON sidecar (`<name>.json`).
//!
//! Volumes use `{"dims":[nx,ny,nz],"spacing":[sx,sy,sz]}`; generic tensors
//! (embedding matrices, feature maps) use `{"shape":[...]}` with the
//! innermost three axes in the crate's x-fastest voxel order.

use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Volume3;

#[derive(Debug, Serialize, Deserialize)]
struct VolumeMeta {
    dims: [usize; 3],
    spacing: [f32; 3],
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    shape: Vec<usize>,
}

/// A dense float32 tensor with explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl RawTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n = checked_len(&shape)?;
        if data.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "payload has {} values, shape {:?} needs {}",
                data.len(),
                shape,
                n
            )));
        }
        Ok(RawTensor { shape, data })
    }
}

fn checked_len(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::DimensionMismatch("empty shape".to_string()));
    }
    let mut n: usize = 1;
    for &d in shape {
        if d == 0 {
            return Err(Error::DimensionMismatch(format!("zero-length axis in {shape:?}")));
        }
        n = n
            .checked_mul(d)
            .ok_or_else(|| Error::DimensionMismatch(format!("shape {shape:?} overflows")))?;
    }
    Ok(n)
}

fn decode_f32(bin: &[u8]) -> Result<Vec<f32>> {
    if !bin.len().is_multiple_of(4) {
        return Err(Error::MalformedHeader(format!(
            "payload length {} is not a multiple of 4",
            bin.len()
        )));
    }
    Ok(bin.chunks_exact(4).map(LittleEndian::read_f32).collect())
}

fn encode_f32(values: &[f32]) -> Vec<u8> {
    let mut out = vec![0u8; values.len() * 4];
    LittleEndian::write_f32_into(values, &mut out);
    out
}

/// Assemble a volume from sidecar and payload bytes.
pub fn volume_from_parts(meta: &[u8], bin: &[u8]) -> Result<Volume3> {
    let meta: VolumeMeta = serde_json::from_slice(meta)?;
    let expected = checked_len(&meta.dims)?;
    if bin.len() as u64 != expected as u64 * 4 {
        return Err(Error::DimensionMismatch(format!(
            "payload is {} bytes, dims {:?} need {}",
            bin.len(),
            meta.dims,
            expected * 4
        )));
    }
    Volume3::new(meta.dims, meta.spacing, decode_f32(bin)?)
}

/// Assemble a tensor from sidecar and payload bytes.
pub fn tensor_from_parts(meta: &[u8], bin: &[u8]) -> Result<RawTensor> {
    let meta: TensorMeta = serde_json::from_slice(meta)?;
    let expected = checked_len(&meta.shape)?;
    if bin.len() as u64 != expected as u64 * 4 {
        return Err(Error::DimensionMismatch(format!(
            "payload is {} bytes, shape {:?} needs {}",
            bin.len(),
            meta.shape,
            expected * 4
        )));
    }
    RawTensor::new(meta.shape, decode_f32(bin)?)
}

/// Derive the `.bin`/`.json` pair from a path given with either extension
/// (or none).
pub fn sibling_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("bin") | Some("json") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    (stem.with_extension("bin"), stem.with_extension("json"))
}

pub fn save_volume(v: &Volume3, path: &Path) -> Result<()> {
    let (bin, json) = sibling_paths(path);
    std::fs::write(&bin, encode_f32(v.data()))?;
    let meta = VolumeMeta {
        dims: v.dims(),
        spacing: v.spacing(),
    };
    std::fs::write(&json, serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}

pub fn load_volume(path: &Path) -> Result<Volume3> {
    let (bin, json) = sibling_paths(path);
    volume_from_parts(&std::fs::read(json)?, &std::fs::read(bin)?)
}

pub fn save_tensor(t: &RawTensor, bin_path: &Path, json_path: &Path) -> Result<()> {
    std::fs::write(bin_path, encode_f32(&t.data))?;
    let meta = TensorMeta {
        shape: t.shape.clone(),
    };
    std::fs::write(json_path, serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}

pub fn load_tensor(bin_path: &Path, json_path: &Path) -> Result<RawTensor> {
    tensor_from_parts(&std::fs::read(json_path)?, &std::fs::read(bin_path)?)
}
