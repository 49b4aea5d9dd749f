//! Lesion texture synthesis: harvest host-brain intensities under a mask
//! and apply foreground intensity perturbation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{gen_lesion_mask, MaskSynthParams};
use crate::placement::{bbox_anchor, erode_box};
use crate::rng::{stage, Stream};
use crate::volume::{LabelMap3, Volume3};

/// Foreground intensity perturbation parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbParams {
    /// Multiplicative factor range, one draw per lesion.
    pub gamma_range: (f64, f64),
    /// Additive Gaussian std as a fraction of the foreground intensity std.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for PerturbParams {
    fn default() -> Self {
        PerturbParams {
            gamma_range: (0.7, 1.3),
            noise_std: 0.05,
            seed: 0,
        }
    }
}

impl PerturbParams {
    pub fn validate(&self) -> Result<()> {
        if self.gamma_range.0 <= 0.0
            || self.gamma_range.0 > self.gamma_range.1
            || !self.gamma_range.1.is_finite()
        {
            return Err(Error::ParamOutOfRange(format!(
                "gamma range {:?}",
                self.gamma_range
            )));
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return Err(Error::ParamOutOfRange(format!(
                "noise std {}",
                self.noise_std
            )));
        }
        Ok(())
    }
}

/// Copy host intensities under the lesion mask anchored at `center`.
///
/// Returns a lesion-grid-sized volume: host values where mask==1, zero
/// elsewhere. `center` is a host voxel aligned with the mask bounding-box
/// anchor.
pub fn sample_texture_at(
    host: &Volume3,
    lesion_mask: &LabelMap3,
    center: [usize; 3],
) -> Result<Volume3> {
    let ldims = lesion_mask.dims();
    let hdims = host.dims();
    let mut out = Volume3::zeros(ldims, host.spacing());
    let Some((lo, hi)) = lesion_mask.bounding_box() else {
        return Ok(out);
    };
    let anchor = bbox_anchor(lo, hi);
    for z in lo[2]..=hi[2] {
        for y in lo[1]..=hi[1] {
            for x in lo[0]..=hi[0] {
                if lesion_mask.get(x, y, z) == 0 {
                    continue;
                }
                let hx = center[0] as i64 + x as i64 - anchor[0] as i64;
                let hy = center[1] as i64 + y as i64 - anchor[1] as i64;
                let hz = center[2] as i64 + z as i64 - anchor[2] as i64;
                if hx < 0
                    || hy < 0
                    || hz < 0
                    || hx >= hdims[0] as i64
                    || hy >= hdims[1] as i64
                    || hz >= hdims[2] as i64
                {
                    return Err(Error::OutOfBounds(format!(
                        "mask voxel ({x},{y},{z}) maps outside host at center {center:?}"
                    )));
                }
                out.set(x, y, z, host.get(hx as usize, hy as usize, hz as usize));
            }
        }
    }
    Ok(out)
}

/// Harvest a texture for the mask from a random host location.
///
/// The location is drawn uniformly over host voxels where the lesion
/// bounding box fits entirely inside the brain mask.
pub fn sample_texture(
    host: &Volume3,
    brain_mask: &LabelMap3,
    lesion_mask: &LabelMap3,
    rng: &mut Stream,
) -> Result<Volume3> {
    if host.dims() != brain_mask.dims() {
        return Err(Error::DimensionMismatch(format!(
            "host dims {:?} != brain mask dims {:?}",
            host.dims(),
            brain_mask.dims()
        )));
    }
    if brain_mask.count_foreground() == 0 {
        return Err(Error::NoValidLocation("brain mask is empty".to_string()));
    }
    let Some((lo, hi)) = lesion_mask.bounding_box() else {
        return Ok(Volume3::zeros(lesion_mask.dims(), host.spacing()));
    };
    let anchor = bbox_anchor(lo, hi);
    let lo_off = [
        lo[0] as i64 - anchor[0] as i64,
        lo[1] as i64 - anchor[1] as i64,
        lo[2] as i64 - anchor[2] as i64,
    ];
    let hi_off = [
        hi[0] as i64 - anchor[0] as i64,
        hi[1] as i64 - anchor[1] as i64,
        hi[2] as i64 - anchor[2] as i64,
    ];
    let candidates = erode_box(brain_mask, lo_off, hi_off);
    let survivors: Vec<usize> = candidates
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0)
        .map(|(i, _)| i)
        .collect();
    if survivors.is_empty() {
        return Err(Error::NoValidLocation(
            "lesion bounding box fits nowhere inside the brain mask".to_string(),
        ));
    }
    let v = survivors[rng.uniform_index(survivors.len())];
    let dims = host.dims();
    let center = [v % dims[0], (v / dims[0]) % dims[1], v / (dims[0] * dims[1])];
    sample_texture_at(host, lesion_mask, center)
}

/// Scale and jitter intensities inside the mask, clamping into
/// `clamp_range` (the host's observed value range).
pub fn perturb_intensity(
    texture: &Volume3,
    mask: &LabelMap3,
    params: &PerturbParams,
    clamp_range: (f32, f32),
    rng: &mut Stream,
) -> Result<Volume3> {
    params.validate()?;
    if texture.dims() != mask.dims() {
        return Err(Error::DimensionMismatch(format!(
            "texture dims {:?} != mask dims {:?}",
            texture.dims(),
            mask.dims()
        )));
    }
    if !mask.is_binary() {
        return Err(Error::ParamOutOfRange("mask must be binary".to_string()));
    }
    for (i, &v) in texture.data().iter().enumerate() {
        if mask.data()[i] == 0 && v != 0.0 {
            return Err(Error::ParamOutOfRange(
                "texture must be zero outside the mask".to_string(),
            ));
        }
    }

    let fg: Vec<usize> = (0..texture.len()).filter(|&i| mask.data()[i] == 1).collect();
    let mut out = texture.clone();
    if fg.is_empty() {
        return Ok(out);
    }

    let gamma = rng.uniform(params.gamma_range.0, params.gamma_range.1);

    let mut noise_scale = 0.0;
    if params.noise_std > 0.0 {
        let mean = fg.iter().map(|&i| texture.data()[i] as f64).sum::<f64>() / fg.len() as f64;
        let var = fg
            .iter()
            .map(|&i| {
                let d = texture.data()[i] as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / fg.len() as f64;
        noise_scale = params.noise_std * var.sqrt();
    }

    for &i in &fg {
        let mut v = gamma * texture.data()[i] as f64;
        if noise_scale > 0.0 {
            v += noise_scale * rng.normal();
        }
        out.data_mut()[i] = (v as f32).clamp(clamp_range.0, clamp_range.1);
    }
    Ok(out)
}

/// Generate a paired (lesion image, lesion mask) on the mask grid.
pub fn gen_lesion_pair(
    host: &Volume3,
    brain_mask: &LabelMap3,
    mask_params: &MaskSynthParams,
    perturb_params: &PerturbParams,
) -> Result<(Volume3, LabelMap3)> {
    let mask = gen_lesion_mask(mask_params)?;
    let root = Stream::new(perturb_params.seed);
    let mut tex_rng = root.child(stage::TEXTURE);
    let texture = sample_texture(host, brain_mask, &mask, &mut tex_rng)?;
    let mut pert_rng = root.child(stage::PERTURB);
    let image = perturb_intensity(
        &texture,
        &mask,
        perturb_params,
        host.value_range(),
        &mut pert_rng,
    )?;
    Ok((image, mask))
}
