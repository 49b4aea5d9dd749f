//! Core voxel-grid types: scalar volumes, label maps and patches.
//!
//! Linear voxel order is x-fastest everywhere: `idx = x + nx*(y + ny*z)`.
//! This matches the NIfTI on-disk layout, so volume payloads move between
//! memory and disk without reshuffling.

use crate::error::{Error, Result};

/// Background voxel.
pub const LABEL_BACKGROUND: u8 = 0;
/// Real lesion voxel.
pub const LABEL_REAL: u8 = 1;
/// Synthetic (inserted) lesion voxel.
pub const LABEL_SYNTHETIC: u8 = 2;

/// NIfTI orientation fields carried through load/save without interpretation.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiAffine {
    pub qform_code: i16,
    pub sform_code: i16,
    /// quatern_b, quatern_c, quatern_d, qoffset_x, qoffset_y, qoffset_z
    pub quatern: [f32; 6],
    /// srow_x, srow_y, srow_z
    pub srow: [[f32; 4]; 3],
    /// pixdim[0]
    pub qfac: f32,
}

impl NiftiAffine {
    /// Identity-scaled affine built from voxel spacing.
    pub fn from_spacing(spacing: [f32; 3]) -> Self {
        NiftiAffine {
            qform_code: 0,
            sform_code: 1,
            quatern: [0.0; 6],
            srow: [
                [spacing[0], 0.0, 0.0, 0.0],
                [0.0, spacing[1], 0.0, 0.0],
                [0.0, 0.0, spacing[2], 0.0],
            ],
            qfac: 1.0,
        }
    }
}

/// Dense scalar 3D voxel grid with spacing metadata.
///
/// Values are finite f32; the grid is immutable in spirit — operations
/// return new volumes rather than mutating shared state.
#[derive(Debug, Clone)]
pub struct Volume3 {
    dims: [usize; 3],
    spacing: [f32; 3],
    data: Vec<f32>,
    /// Affine echoed back on NIfTI save; never interpreted.
    pub affine: Option<NiftiAffine>,
}

impl Volume3 {
    pub fn new(dims: [usize; 3], spacing: [f32; 3], data: Vec<f32>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::DimensionMismatch(format!(
                "dims must be >= 1, got {dims:?}"
            )));
        }
        if spacing.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
            return Err(Error::ParamOutOfRange(format!(
                "spacing must be positive and finite, got {spacing:?}"
            )));
        }
        let n = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .ok_or_else(|| Error::DimensionMismatch(format!("dims {dims:?} overflow")))?;
        if data.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "data length {} does not match dims {:?} ({} voxels)",
                data.len(),
                dims,
                n
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("voxel value {bad}")));
        }
        Ok(Volume3 {
            dims,
            spacing,
            data,
            affine: None,
        })
    }

    pub fn zeros(dims: [usize; 3], spacing: [f32; 3]) -> Self {
        Volume3 {
            dims,
            spacing,
            data: vec![0.0; dims[0] * dims[1] * dims[2]],
            affine: None,
        }
    }

    pub fn filled(dims: [usize; 3], spacing: [f32; 3], value: f32) -> Self {
        Volume3 {
            dims,
            spacing,
            data: vec![value; dims[0] * dims[1] * dims[2]],
            affine: None,
        }
    }

    /// Build from a function of voxel coordinates.
    pub fn from_fn(dims: [usize; 3], spacing: [f32; 3], mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Volume3 {
            dims,
            spacing,
            data,
            affine: None,
        }
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f32) {
        let i = self.index(x, y, z);
        self.data[i] = v;
    }

    /// Observed value range (min, max).
    pub fn value_range(&self) -> (f32, f32) {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    /// Bitwise equality of dims, spacing and voxel payload.
    pub fn bit_eq(&self, other: &Volume3) -> bool {
        self.dims == other.dims
            && self
                .spacing
                .iter()
                .zip(other.spacing.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Integer 3D grid holding lesion class codes 0/1/2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap3 {
    dims: [usize; 3],
    data: Vec<u8>,
}

impl LabelMap3 {
    pub fn new(dims: [usize; 3], data: Vec<u8>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::DimensionMismatch(format!(
                "dims must be >= 1, got {dims:?}"
            )));
        }
        let n = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .ok_or_else(|| Error::DimensionMismatch(format!("dims {dims:?} overflow")))?;
        if data.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                dims
            )));
        }
        if let Some(bad) = data.iter().find(|&&v| v > 2) {
            return Err(Error::ParamOutOfRange(format!(
                "label value {bad} outside {{0,1,2}}"
            )));
        }
        Ok(LabelMap3 { dims, data })
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        LabelMap3 {
            dims,
            data: vec![0; dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        LabelMap3 { dims, data }
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: u8) {
        let i = self.index(x, y, z);
        self.data[i] = v;
    }

    /// Number of voxels with the given label.
    pub fn count(&self, label: u8) -> usize {
        self.data.iter().filter(|&&v| v == label).count()
    }

    /// Number of nonzero voxels.
    pub fn count_foreground(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// True when every value is 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v <= 1)
    }

    /// True if any nonzero voxel lies on a grid face.
    pub fn touches_boundary(&self) -> bool {
        let [nx, ny, nz] = self.dims;
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    if (x == 0 || y == 0 || z == 0 || x == nx - 1 || y == ny - 1 || z == nz - 1)
                        && self.get(x, y, z) != 0
                    {
                        return true;
                    }
                }
            }
        }
        false
    }

    /// Inclusive bounding box (lo, hi) of nonzero voxels, or None when empty.
    pub fn bounding_box(&self) -> Option<([usize; 3], [usize; 3])> {
        let [nx, ny, nz] = self.dims;
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    if self.get(x, y, z) != 0 {
                        any = true;
                        lo = [lo[0].min(x), lo[1].min(y), lo[2].min(z)];
                        hi = [hi[0].max(x), hi[1].max(y), hi[2].max(z)];
                    }
                }
            }
        }
        any.then_some((lo, hi))
    }

    /// Copy the inclusive box `[lo, hi]`.
    pub fn crop(&self, lo: [usize; 3], hi: [usize; 3]) -> Result<LabelMap3> {
        for a in 0..3 {
            if lo[a] > hi[a] || hi[a] >= self.dims[a] {
                return Err(Error::OutOfBounds(format!(
                    "crop box {lo:?}..={hi:?} in dims {:?}",
                    self.dims
                )));
            }
        }
        let dims = [hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1];
        Ok(LabelMap3::from_fn(dims, |x, y, z| {
            self.get(lo[0] + x, lo[1] + y, lo[2] + z)
        }))
    }

    /// Keep only the largest 6-connected foreground component.
    pub fn largest_component(&self) -> LabelMap3 {
        let [nx, ny, nz] = self.dims;
        let n = self.data.len();
        let mut comp = vec![u32::MAX; n];
        let mut sizes: Vec<usize> = Vec::new();
        let mut queue: Vec<usize> = Vec::new();
        for start in 0..n {
            if self.data[start] == 0 || comp[start] != u32::MAX {
                continue;
            }
            let id = sizes.len() as u32;
            let mut size = 0usize;
            comp[start] = id;
            queue.push(start);
            while let Some(i) = queue.pop() {
                size += 1;
                let x = i % nx;
                let y = (i / nx) % ny;
                let z = i / (nx * ny);
                let mut visit = |j: usize| {
                    if self.data[j] != 0 && comp[j] == u32::MAX {
                        comp[j] = id;
                        queue.push(j);
                    }
                };
                if x > 0 {
                    visit(i - 1);
                }
                if x + 1 < nx {
                    visit(i + 1);
                }
                if y > 0 {
                    visit(i - nx);
                }
                if y + 1 < ny {
                    visit(i + nx);
                }
                if z > 0 {
                    visit(i - nx * ny);
                }
                if z + 1 < nz {
                    visit(i + nx * ny);
                }
            }
            sizes.push(size);
        }
        if sizes.is_empty() {
            return self.clone();
        }
        let best = sizes
            .iter()
            .enumerate()
            .max_by_key(|&(i, &s)| (s, usize::MAX - i))
            .map(|(i, _)| i as u32)
            .unwrap();
        let data = comp
            .iter()
            .map(|&c| u8::from(c == best))
            .collect();
        LabelMap3 {
            dims: self.dims,
            data,
        }
    }
}

/// A volume fragment with its placement origin and binary mask.
///
/// The mask selects which patch voxels act on the host; mask==1 voxels
/// form the blend region when the patch feeds the Poisson solver.
#[derive(Debug, Clone)]
pub struct Patch {
    pub origin: [usize; 3],
    pub volume: Volume3,
    pub mask: LabelMap3,
}

impl Patch {
    pub fn new(origin: [usize; 3], volume: Volume3, mask: LabelMap3) -> Result<Self> {
        if volume.dims() != mask.dims() {
            return Err(Error::DimensionMismatch(format!(
                "patch volume dims {:?} != mask dims {:?}",
                volume.dims(),
                mask.dims()
            )));
        }
        if !mask.is_binary() {
            return Err(Error::ParamOutOfRange(
                "patch mask must be binary".to_string(),
            ));
        }
        Ok(Patch {
            origin,
            volume,
            mask,
        })
    }
}

/// Copy the axis-aligned box `[origin, origin+dims)` out of `host`.
pub fn extract_patch(host: &Volume3, origin: [usize; 3], dims: [usize; 3]) -> Result<Volume3> {
    let h = host.dims();
    for a in 0..3 {
        if dims[a] == 0 || origin[a] + dims[a] > h[a] {
            return Err(Error::OutOfBounds(format!(
                "patch origin {origin:?} dims {dims:?} exceeds host dims {h:?}"
            )));
        }
    }
    let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            let row = host.index(origin[0], origin[1] + y, origin[2] + z);
            data.extend_from_slice(&host.data()[row..row + dims[0]]);
        }
    }
    Volume3::new(dims, host.spacing(), data)
}

/// Return `host` with patch values written where the patch mask is 1.
pub fn insert_patch(host: &Volume3, patch: &Patch) -> Result<Volume3> {
    let h = host.dims();
    let d = patch.volume.dims();
    for a in 0..3 {
        if patch.origin[a] + d[a] > h[a] {
            return Err(Error::OutOfBounds(format!(
                "patch origin {:?} dims {:?} exceeds host dims {:?}",
                patch.origin, d, h
            )));
        }
    }
    let mut out = host.clone();
    for z in 0..d[2] {
        for y in 0..d[1] {
            for x in 0..d[0] {
                if patch.mask.get(x, y, z) == 1 {
                    out.set(
                        patch.origin[0] + x,
                        patch.origin[1] + y,
                        patch.origin[2] + z,
                        patch.volume.get(x, y, z),
                    );
                }
            }
        }
    }
    Ok(out)
}
