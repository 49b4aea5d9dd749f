//! NIfTI-1 reader and writer.
//!
//! Little-endian single-file NIfTI-1 only: 348-byte header, 4-byte
//! extension flag, voxel payload at `vox_offset`. Datatypes 2 (uint8),
//! 4 (int16) and 16 (float32) are read; float32 is always written.
//! Byte-swapped (big-endian) files are rejected. Gzip streams are
//! detected by magic on read; writing compresses when the file name
//! ends in `.gz`.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::volume::{LabelMap3, NiftiAffine, Volume3};

pub const HEADER_SIZE: usize = 348;
pub const VOX_OFFSET: usize = 352;
pub const MAGIC: &[u8; 4] = b"n+1\0";

pub const DT_UINT8: i16 = 2;
pub const DT_INT16: i16 = 4;
pub const DT_FLOAT32: i16 = 16;

// header field offsets
const OFF_SIZEOF_HDR: usize = 0;
const OFF_DIM: usize = 40;
const OFF_DATATYPE: usize = 70;
const OFF_BITPIX: usize = 72;
const OFF_PIXDIM: usize = 76;
const OFF_VOX_OFFSET: usize = 108;
const OFF_SCL_SLOPE: usize = 112;
const OFF_QFORM_CODE: usize = 252;
const OFF_SFORM_CODE: usize = 254;
const OFF_QUATERN: usize = 256;
const OFF_SROW: usize = 280;
const OFF_MAGIC: usize = 344;

fn bitpix_for(datatype: i16) -> i16 {
    match datatype {
        DT_UINT8 => 8,
        DT_INT16 => 16,
        DT_FLOAT32 => 32,
        _ => 0,
    }
}

/// Parse an uncompressed NIfTI-1 byte stream.
pub fn volume_from_bytes(bytes: &[u8]) -> Result<Volume3> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::MalformedHeader(format!(
            "file too small for NIfTI-1 header ({} bytes)",
            bytes.len()
        )));
    }
    let sizeof_hdr = LittleEndian::read_i32(&bytes[OFF_SIZEOF_HDR..]);
    if sizeof_hdr != HEADER_SIZE as i32 {
        // 348 with swapped bytes marks a big-endian writer
        if sizeof_hdr.swap_bytes() == HEADER_SIZE as i32 {
            return Err(Error::MalformedHeader(
                "byte-swapped (big-endian) NIfTI-1 file".to_string(),
            ));
        }
        return Err(Error::MalformedHeader(format!(
            "sizeof_hdr = {sizeof_hdr}, expected 348"
        )));
    }
    if &bytes[OFF_MAGIC..OFF_MAGIC + 4] != MAGIC {
        return Err(Error::MalformedHeader("bad magic, expected n+1".to_string()));
    }

    let datatype = LittleEndian::read_i16(&bytes[OFF_DATATYPE..]);
    if !matches!(datatype, DT_UINT8 | DT_INT16 | DT_FLOAT32) {
        return Err(Error::UnsupportedDatatype(datatype));
    }
    let bitpix = LittleEndian::read_i16(&bytes[OFF_BITPIX..]);
    if bitpix != bitpix_for(datatype) {
        return Err(Error::MalformedHeader(format!(
            "bitpix {bitpix} inconsistent with datatype {datatype}"
        )));
    }

    let mut dim = [0i16; 8];
    for (i, d) in dim.iter_mut().enumerate() {
        *d = LittleEndian::read_i16(&bytes[OFF_DIM + 2 * i..]);
    }
    let ndim = dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(Error::MalformedHeader(format!("dim[0] = {ndim}")));
    }
    if ndim < 3 {
        return Err(Error::DimensionMismatch(format!(
            "volume is {ndim}-dimensional, expected 3"
        )));
    }
    // trailing singleton dims are tolerated, true 4D+ data is not
    for d in dim.iter().take(ndim as usize + 1).skip(4) {
        if *d > 1 {
            return Err(Error::DimensionMismatch(format!(
                "non-singleton dimension beyond 3 (dim = {dim:?})"
            )));
        }
    }
    if dim[1] < 1 || dim[2] < 1 || dim[3] < 1 {
        return Err(Error::MalformedHeader(format!(
            "non-positive spatial dims {:?}",
            &dim[1..4]
        )));
    }
    let dims = [dim[1] as usize, dim[2] as usize, dim[3] as usize];

    let mut spacing = [0f32; 3];
    for (i, s) in spacing.iter_mut().enumerate() {
        *s = LittleEndian::read_f32(&bytes[OFF_PIXDIM + 4 * (i + 1)..]);
    }
    if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
        return Err(Error::MalformedHeader(format!(
            "non-positive pixdim {spacing:?}"
        )));
    }

    let vox_offset_f = LittleEndian::read_f32(&bytes[OFF_VOX_OFFSET..]);
    if !vox_offset_f.is_finite() || vox_offset_f < HEADER_SIZE as f32 {
        return Err(Error::MalformedHeader(format!(
            "vox_offset = {vox_offset_f}"
        )));
    }
    let vox_offset = vox_offset_f as usize;

    let nvox = dims[0] as u64 * dims[1] as u64 * dims[2] as u64;
    let elem = (bitpix_for(datatype) / 8) as u64;
    let need = vox_offset as u64 + nvox * elem;
    if (bytes.len() as u64) < need {
        return Err(Error::MalformedHeader(format!(
            "file truncated: need {} bytes, have {}",
            need,
            bytes.len()
        )));
    }

    let payload = &bytes[vox_offset..vox_offset + (nvox * elem) as usize];
    let data: Vec<f32> = match datatype {
        DT_UINT8 => payload.iter().map(|&b| b as f32).collect(),
        DT_INT16 => payload
            .chunks_exact(2)
            .map(|c| LittleEndian::read_i16(c) as f32)
            .collect(),
        DT_FLOAT32 => payload
            .chunks_exact(4)
            .map(LittleEndian::read_f32)
            .collect(),
        _ => unreachable!(),
    };

    let qfac = LittleEndian::read_f32(&bytes[OFF_PIXDIM..]);
    let mut quatern = [0f32; 6];
    for (i, q) in quatern.iter_mut().enumerate() {
        *q = LittleEndian::read_f32(&bytes[OFF_QUATERN + 4 * i..]);
    }
    let mut srow = [[0f32; 4]; 3];
    for (r, row) in srow.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = LittleEndian::read_f32(&bytes[OFF_SROW + 16 * r + 4 * c..]);
        }
    }
    let affine = NiftiAffine {
        qform_code: LittleEndian::read_i16(&bytes[OFF_QFORM_CODE..]),
        sform_code: LittleEndian::read_i16(&bytes[OFF_SFORM_CODE..]),
        quatern,
        srow,
        qfac,
    };

    let mut v = Volume3::new(dims, spacing, data)?;
    v.affine = Some(affine);
    Ok(v)
}

fn write_header(v: &Volume3, datatype: i16) -> Vec<u8> {
    let mut h = vec![0u8; VOX_OFFSET];
    LittleEndian::write_i32(&mut h[OFF_SIZEOF_HDR..], HEADER_SIZE as i32);
    h[38] = b'r'; // regular
    let dims = v.dims();
    let dim: [i16; 8] = [3, dims[0] as i16, dims[1] as i16, dims[2] as i16, 1, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        LittleEndian::write_i16(&mut h[OFF_DIM + 2 * i..], *d);
    }
    LittleEndian::write_i16(&mut h[OFF_DATATYPE..], datatype);
    LittleEndian::write_i16(&mut h[OFF_BITPIX..], bitpix_for(datatype));
    let affine = v
        .affine
        .clone()
        .unwrap_or_else(|| NiftiAffine::from_spacing(v.spacing()));
    let spacing = v.spacing();
    let pixdim: [f32; 8] = [
        affine.qfac,
        spacing[0],
        spacing[1],
        spacing[2],
        0.0,
        0.0,
        0.0,
        0.0,
    ];
    for (i, p) in pixdim.iter().enumerate() {
        LittleEndian::write_f32(&mut h[OFF_PIXDIM + 4 * i..], *p);
    }
    LittleEndian::write_f32(&mut h[OFF_VOX_OFFSET..], VOX_OFFSET as f32);
    LittleEndian::write_f32(&mut h[OFF_SCL_SLOPE..], 1.0);
    LittleEndian::write_i16(&mut h[OFF_QFORM_CODE..], affine.qform_code);
    LittleEndian::write_i16(&mut h[OFF_SFORM_CODE..], affine.sform_code);
    for (i, q) in affine.quatern.iter().enumerate() {
        LittleEndian::write_f32(&mut h[OFF_QUATERN + 4 * i..], *q);
    }
    for (r, row) in affine.srow.iter().enumerate() {
        for (c, val) in row.iter().enumerate() {
            LittleEndian::write_f32(&mut h[OFF_SROW + 16 * r + 4 * c..], *val);
        }
    }
    h[OFF_MAGIC..OFF_MAGIC + 4].copy_from_slice(MAGIC);
    // bytes 348..352 stay zero: no extensions
    h
}

/// Serialize as uncompressed NIfTI-1 with float32 payload.
pub fn volume_to_bytes(v: &Volume3) -> Vec<u8> {
    let mut out = write_header(v, DT_FLOAT32);
    out.reserve(v.len() * 4);
    let mut buf = [0u8; 4];
    for &val in v.data() {
        LittleEndian::write_f32(&mut buf, val);
        out.extend_from_slice(&buf);
    }
    out
}

/// Serialize a label map as uncompressed NIfTI-1 with uint8 payload.
pub fn labels_to_bytes(m: &LabelMap3) -> Vec<u8> {
    let v = Volume3::zeros(m.dims(), [1.0; 3]);
    let mut out = write_header(&v, DT_UINT8);
    out.extend_from_slice(m.data());
    out
}

fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b
}

/// Read a file, transparently gunzipping when the gzip magic is present.
pub fn read_file_auto(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path)?;
    if is_gzip(&raw) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::MalformedHeader(format!("gzip decode failed: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn write_file_auto(path: &Path, bytes: &[u8]) -> Result<()> {
    let gz = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("gz"));
    if gz {
        let file = std::fs::File::create(path)?;
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(bytes)?;
        enc.finish()?;
    } else {
        std::fs::write(path, bytes)?;
    }
    Ok(())
}

pub fn load(path: &Path) -> Result<Volume3> {
    volume_from_bytes(&read_file_auto(path)?)
}

pub fn save(v: &Volume3, path: &Path) -> Result<()> {
    write_file_auto(path, &volume_to_bytes(v))
}

/// Load a label map; voxel values must be integral 0, 1 or 2.
pub fn load_labels(path: &Path) -> Result<LabelMap3> {
    let v = load(path)?;
    let mut data = Vec::with_capacity(v.len());
    for &val in v.data() {
        if val != 0.0 && val != 1.0 && val != 2.0 {
            return Err(Error::ParamOutOfRange(format!(
                "label value {val} outside {{0,1,2}}"
            )));
        }
        data.push(val as u8);
    }
    LabelMap3::new(v.dims(), data)
}

pub fn save_labels(m: &LabelMap3, path: &Path) -> Result<()> {
    write_file_auto(path, &labels_to_bytes(m))
}
