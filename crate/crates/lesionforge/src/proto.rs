//! Prototype consistency: class prototypes, L1 prototype difference,
//! cosine relationship loss and their weighted combination.
//!
//! Feature maps are forward-only inputs here; training frameworks consume
//! these definitions as the reference for the regularization term.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::rawjson::RawTensor;
use crate::rng::{stage, Stream};
use crate::volume::{LabelMap3, LABEL_REAL, LABEL_SYNTHETIC};

/// c-channel 3D feature grid with a batch dimension.
///
/// Layout: item-major, then channel, then x-fastest voxels.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    batch: usize,
    channels: usize,
    dims: [usize; 3],
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(batch: usize, channels: usize, dims: [usize; 3], data: Vec<f32>) -> Result<Self> {
        let nvox = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .ok_or_else(|| Error::DimensionMismatch(format!("dims {dims:?} overflow")))?;
        let need = batch
            .checked_mul(channels)
            .and_then(|v| v.checked_mul(nvox))
            .ok_or_else(|| Error::DimensionMismatch("feature map too large".to_string()))?;
        if batch == 0 || channels == 0 || nvox == 0 {
            return Err(Error::DimensionMismatch(
                "feature map axes must be >= 1".to_string(),
            ));
        }
        if data.len() != need {
            return Err(Error::DimensionMismatch(format!(
                "feature data length {} != n*c*voxels = {need}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature value {bad}")));
        }
        Ok(FeatureMap {
            batch,
            channels,
            dims,
            data,
        })
    }

    /// Interpret a rawjson tensor of shape [n, c, X, Y, Z].
    pub fn from_raw_tensor(t: &RawTensor) -> Result<Self> {
        if t.shape.len() != 5 {
            return Err(Error::DimensionMismatch(format!(
                "feature tensor must have shape [n,c,X,Y,Z], got {:?}",
                t.shape
            )));
        }
        FeatureMap::new(
            t.shape[0],
            t.shape[1],
            [t.shape[2], t.shape[3], t.shape[4]],
            t.data.clone(),
        )
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    fn nvox(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Feature value for (item, channel, linear voxel).
    #[inline]
    pub fn at(&self, item: usize, channel: usize, voxel: usize) -> f32 {
        self.data[(item * self.channels + channel) * self.nvox() + voxel]
    }
}

/// Weights and sampling size for the combined loss.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtoConfig {
    /// Feature vectors sampled per class.
    pub k: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub seed: u64,
}

impl Default for ProtoConfig {
    fn default() -> Self {
        ProtoConfig {
            k: 64,
            lambda1: 1.0,
            lambda2: 50.0,
            seed: 0,
        }
    }
}

impl ProtoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::ParamOutOfRange("k must be >= 1".to_string()));
        }
        if !(self.lambda1.is_finite() && self.lambda2.is_finite())
            || self.lambda1 < 0.0
            || self.lambda2 < 0.0
        {
            return Err(Error::ParamOutOfRange(format!(
                "lambdas must be >= 0, got ({}, {})",
                self.lambda1, self.lambda2
            )));
        }
        Ok(())
    }
}

fn class_voxels(m: &LabelMap3, label: u8) -> Vec<usize> {
    m.data()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == label)
        .map(|(i, _)| i)
        .collect()
}

fn check_item_dims(f: &FeatureMap, item: usize, m: &LabelMap3) -> Result<()> {
    if item >= f.batch {
        return Err(Error::DimensionMismatch(format!(
            "batch item {item} out of {}",
            f.batch
        )));
    }
    if m.dims() != f.dims {
        return Err(Error::DimensionMismatch(format!(
            "label dims {:?} != feature dims {:?}",
            m.dims(),
            f.dims
        )));
    }
    Ok(())
}

/// Mean feature vector over the voxels carrying `label` (1 or 2).
pub fn class_prototype(f: &FeatureMap, item: usize, m: &LabelMap3, label: u8) -> Result<Vec<f64>> {
    check_item_dims(f, item, m)?;
    if label != LABEL_REAL && label != LABEL_SYNTHETIC {
        return Err(Error::ParamOutOfRange(format!("class label {label}")));
    }
    let voxels = class_voxels(m, label);
    if voxels.is_empty() {
        return Err(Error::EmptyClass(label));
    }
    let mut p = vec![0.0f64; f.channels];
    for &v in &voxels {
        for (ch, acc) in p.iter_mut().enumerate() {
            *acc += f.at(item, ch, v) as f64;
        }
    }
    for acc in p.iter_mut() {
        *acc /= voxels.len() as f64;
    }
    Ok(p)
}

/// L1 distance between prototypes.
pub fn prototype_difference_loss(p_real: &[f64], p_syn: &[f64]) -> Result<f64> {
    if p_real.len() != p_syn.len() {
        return Err(Error::DimensionMismatch(format!(
            "prototype lengths {} vs {}",
            p_real.len(),
            p_syn.len()
        )));
    }
    Ok(p_real
        .iter()
        .zip(p_syn.iter())
        .map(|(a, b)| (a - b).abs())
        .sum())
}

/// Draw `k` feature columns uniformly with replacement from the class.
/// Column j occupies `[j*c, (j+1)*c)` of the result.
pub fn sample_class_features(
    f: &FeatureMap,
    item: usize,
    m: &LabelMap3,
    label: u8,
    k: usize,
    rng: &mut Stream,
) -> Result<Vec<f64>> {
    check_item_dims(f, item, m)?;
    if k < 1 {
        return Err(Error::ParamOutOfRange("k must be >= 1".to_string()));
    }
    let voxels = class_voxels(m, label);
    if voxels.is_empty() {
        return Err(Error::EmptyClass(label));
    }
    let c = f.channels;
    let mut out = Vec::with_capacity(c * k);
    for _ in 0..k {
        let v = voxels[rng.uniform_index(voxels.len())];
        for ch in 0..c {
            out.push(f.at(item, ch, v) as f64);
        }
    }
    Ok(out)
}

/// Guard below which a vector counts as exactly zero.
const ZERO_NORM: f64 = 1e-30;
/// Floor on the cosine denominator.
const DENOM_FLOOR: f64 = 1e-12;

fn cosine(p: &[f64], col: &[f64]) -> Result<f64> {
    let np = p.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nc = col.iter().map(|x| x * x).sum::<f64>().sqrt();
    if np < ZERO_NORM || nc < ZERO_NORM {
        return Err(Error::ZeroNormVector);
    }
    let dot: f64 = p.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
    Ok(dot / (np * nc).max(DENOM_FLOOR))
}

/// Cosine relationship loss between sampled class features.
///
/// `freal`/`fsyn` hold k columns of length c (as produced by
/// [`sample_class_features`]).
pub fn prototype_relation_loss(
    p_real: &[f64],
    p_syn: &[f64],
    freal: &[f64],
    fsyn: &[f64],
) -> Result<f64> {
    let c = p_real.len();
    if p_syn.len() != c {
        return Err(Error::DimensionMismatch(
            "prototype lengths differ".to_string(),
        ));
    }
    if c == 0 || freal.len() != fsyn.len() || !freal.len().is_multiple_of(c) || freal.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "sampled features must be k columns of {c} channels"
        )));
    }
    let k = freal.len() / c;
    let mut loss = 0.0;
    for p in [p_real, p_syn] {
        for j in 0..k {
            let col_r = &freal[j * c..(j + 1) * c];
            let col_s = &fsyn[j * c..(j + 1) * c];
            loss += (cosine(p, col_r)? - cosine(p, col_s)?).abs();
        }
    }
    Ok(loss)
}

/// Component values of the combined prototype-consistency loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtoLoss {
    pub pd: f64,
    pub prd: f64,
    pub pc: f64,
    /// Batch items carrying both classes.
    pub contributing: usize,
    pub skipped: usize,
}

/// Combined loss over a batch: `lambda1 * mean(L_pd) + lambda2 * mean(L_prd)`
/// across items that carry both classes; items missing a class are skipped.
pub fn prototype_consistency(
    f: &FeatureMap,
    labels: &[LabelMap3],
    cfg: &ProtoConfig,
) -> Result<ProtoLoss> {
    cfg.validate()?;
    if labels.len() != f.batch {
        return Err(Error::DimensionMismatch(format!(
            "{} label maps for a batch of {}",
            labels.len(),
            f.batch
        )));
    }
    let root = Stream::new(cfg.seed);
    let mut pd_sum = 0.0;
    let mut prd_sum = 0.0;
    let mut contributing = 0usize;
    for (item, m) in labels.iter().enumerate() {
        check_item_dims(f, item, m)?;
        if m.count(LABEL_REAL) == 0 || m.count(LABEL_SYNTHETIC) == 0 {
            continue;
        }
        let p_real = class_prototype(f, item, m, LABEL_REAL)?;
        let p_syn = class_prototype(f, item, m, LABEL_SYNTHETIC)?;
        pd_sum += prototype_difference_loss(&p_real, &p_syn)?;

        let mut rng_r = root.child2(stage::SAMPLE, (item as u64) << 1);
        let mut rng_s = root.child2(stage::SAMPLE, ((item as u64) << 1) | 1);
        let freal = sample_class_features(f, item, m, LABEL_REAL, cfg.k, &mut rng_r)?;
        let fsyn = sample_class_features(f, item, m, LABEL_SYNTHETIC, cfg.k, &mut rng_s)?;
        prd_sum += prototype_relation_loss(&p_real, &p_syn, &freal, &fsyn)?;
        contributing += 1;
    }
    if contributing == 0 {
        return Err(Error::NoContributingItems);
    }
    let pd = pd_sum / contributing as f64;
    let prd = prd_sum / contributing as f64;
    Ok(ProtoLoss {
        pd,
        prd,
        pc: cfg.lambda1 * pd + cfg.lambda2 * prd,
        contributing,
        skipped: labels.len() - contributing,
    })
}
