//! End-to-end augmentation: config parsing, per-item seed streams, batch
//! generation with a JSON manifest.
//!
//! The whole batch is a pure function of (config, master seed): every item
//! derives its randomness from `hash64(master, item, stage)`, so outputs
//! are bit-identical across reruns and worker counts.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, nifti};
use crate::mask::MaskSynthParams;
use crate::placement::{bbox_anchor, select_center_where, PlacementParams};
use crate::proto::ProtoConfig;
use crate::rng::{hash64, stage, Stream};
use crate::spb::{blend_detailed, BlendMode, SolverConfig};
use crate::texture::{gen_lesion_pair, PerturbParams};
use crate::volume::{extract_patch, LabelMap3, Volume3, LABEL_REAL, LABEL_SYNTHETIC};

fn default_count() -> usize {
    1
}

fn default_lesions() -> usize {
    1
}

fn default_workers() -> usize {
    1
}

fn default_mode() -> BlendMode {
    BlendMode::Spb
}

/// Batch configuration, usually read from a JSON file. Every CLI flag
/// overrides its config counterpart.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub host: PathBuf,
    pub brain_mask: PathBuf,
    pub wm_mask: PathBuf,
    #[serde(default)]
    pub existing_labels: Option<PathBuf>,
    /// Augmented pairs to generate.
    #[serde(default = "default_count")]
    pub count: usize,
    /// Lesions inserted per pair.
    #[serde(default = "default_lesions")]
    pub lesions_per_image: usize,
    #[serde(default)]
    pub mask_synth: MaskSynthParams,
    #[serde(default)]
    pub perturb: PerturbParams,
    #[serde(default = "default_mode")]
    pub mode: BlendMode,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Defaults handed to downstream loss computation; not used while
    /// generating.
    #[serde(default)]
    pub proto: ProtoConfig,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

impl PipelineConfig {
    pub fn from_json_slice(bytes: &[u8]) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_slice(bytes)
            .map_err(|e| Error::Config(format!("bad pipeline config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_slice(&bytes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.count < 1 {
            return Err(Error::Config("count must be >= 1".to_string()));
        }
        if self.lesions_per_image < 1 {
            return Err(Error::Config("lesions_per_image must be >= 1".to_string()));
        }
        if self.workers < 1 {
            return Err(Error::Config("workers must be >= 1".to_string()));
        }
        self.mask_synth
            .validate()
            .map_err(|e| Error::Config(format!("mask_synth: {e}")))?;
        self.perturb
            .validate()
            .map_err(|e| Error::Config(format!("perturb: {e}")))?;
        self.proto
            .validate()
            .map_err(|e| Error::Config(format!("proto: {e}")))?;
        Ok(())
    }
}

/// Per-lesion insertion diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LesionRecord {
    pub center: [usize; 3],
    pub voxels: usize,
    pub residual: f64,
    pub iterations: usize,
}

/// Collision redraw budget per inserted lesion.
const COLLISION_DRAWS: usize = 100;

/// Generate one augmented pair.
///
/// Inserts `lesions_per_image` synthetic lesions into `host`; textures are
/// harvested from the original host, placements avoid existing label-1
/// voxels and previously inserted lesions, and each insertion is blended
/// with the configured mode. The returned label map keeps real lesions as
/// 1 and marks inserted voxels as 2.
pub fn augment_one(
    host: &Volume3,
    brain_mask: &LabelMap3,
    wm_mask: &LabelMap3,
    existing: Option<&LabelMap3>,
    cfg: &PipelineConfig,
    item_seed: u64,
) -> Result<(Volume3, LabelMap3, Vec<LesionRecord>)> {
    let dims = host.dims();
    for (name, m) in [("brain mask", Some(brain_mask)), ("wm mask", Some(wm_mask)), ("existing labels", existing)] {
        if let Some(m) = m {
            if m.dims() != dims {
                return Err(Error::DimensionMismatch(format!(
                    "{name} dims {:?} != host dims {dims:?}",
                    m.dims()
                )));
            }
        }
    }

    let mut labels = LabelMap3::zeros(dims);
    if let Some(real) = existing {
        for (out, &v) in labels.data_mut().iter_mut().zip(real.data().iter()) {
            if v != 0 {
                *out = LABEL_REAL;
            }
        }
    }

    let item = Stream::new(item_seed);
    let mut volume = host.clone();
    let mut records = Vec::with_capacity(cfg.lesions_per_image);
    for j in 0..cfg.lesions_per_image {
        let base = item.child2(stage::ITEM, j as u64);
        let mut mask_params = cfg.mask_synth.clone();
        mask_params.seed = base.child(stage::MASK).seed();
        let mut perturb = cfg.perturb.clone();
        perturb.seed = base.child(stage::PERTURB).seed();

        let (lesion_img, lesion_mask) = gen_lesion_pair(host, brain_mask, &mask_params, &perturb)?;
        let (lo, hi) = lesion_mask
            .bounding_box()
            .expect("generated lesion masks are nonempty");
        let anchor = bbox_anchor(lo, hi);

        let mut place_rng = base.child(stage::PLACEMENT);
        let place_params = PlacementParams {
            erosion_radius: None,
            max_draws: COLLISION_DRAWS,
            seed: 0,
        };
        let labels_ref = &labels;
        let mask_ref = &lesion_mask;
        let center = select_center_where(wm_mask, &lesion_mask, &place_params, &mut place_rng, |c| {
            for z in lo[2]..=hi[2] {
                for y in lo[1]..=hi[1] {
                    for x in lo[0]..=hi[0] {
                        if mask_ref.get(x, y, z) == 0 {
                            continue;
                        }
                        let hx = c[0] + x - anchor[0];
                        let hy = c[1] + y - anchor[1];
                        let hz = c[2] + z - anchor[2];
                        if labels_ref.get(hx, hy, hz) != 0 {
                            return false;
                        }
                    }
                }
            }
            true
        })?;

        let cropped_img = extract_patch(
            &lesion_img,
            lo,
            [hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1],
        )?;
        let cropped_mask = lesion_mask.crop(lo, hi)?;
        let origin = [
            center[0] + lo[0] - anchor[0],
            center[1] + lo[1] - anchor[1],
            center[2] + lo[2] - anchor[2],
        ];
        let outcome = blend_detailed(
            &volume,
            &cropped_img,
            &cropped_mask,
            origin,
            cfg.mode,
            &cfg.solver,
        )?;
        volume = outcome.volume;
        for &i in &outcome.omega_indices {
            labels.data_mut()[i] = LABEL_SYNTHETIC;
        }
        records.push(LesionRecord {
            center,
            voxels: outcome.omega_indices.len(),
            residual: outcome.residual,
            iterations: outcome.iterations,
        });
    }
    Ok((volume, labels, records))
}

/// Input paths echoed into the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestInputs {
    pub host: String,
    pub brain_mask: String,
    pub wm_mask: String,
    pub existing_labels: Option<String>,
}

/// One manifest entry. Output paths are file names relative to the output
/// directory; per-lesion fields are parallel arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestItem {
    pub image: Option<String>,
    pub labels: Option<String>,
    pub inputs: ManifestInputs,
    pub child_seed: u64,
    pub center: Vec<[usize; 3]>,
    pub lesion_voxels: Vec<usize>,
    pub mode: String,
    pub residual: Vec<f64>,
    pub status: String,
}

/// Batch outcome: manifest entries plus success counts.
#[derive(Debug)]
pub struct BatchSummary {
    pub items: Vec<ManifestItem>,
    pub succeeded: usize,
    pub failed: usize,
    pub manifest_path: PathBuf,
}

/// Run the whole batch and write `manifest.json` into the output
/// directory. Failed items are recorded, not fatal; the caller decides
/// what a fully failed batch means.
pub fn augment_batch(cfg: &PipelineConfig) -> Result<BatchSummary> {
    cfg.validate()?;
    fn input<T>(what: &str, r: Result<T>) -> Result<T> {
        r.map_err(|e| Error::Config(format!("cannot load {what}: {e}")))
    }
    let host = input(
        "host",
        io::load_volume(&cfg.host, io::format_for_path(&cfg.host)),
    )?;
    let brain = input("brain mask", nifti::load_labels(&cfg.brain_mask))?;
    let wm = input("wm mask", nifti::load_labels(&cfg.wm_mask))?;
    let existing = match &cfg.existing_labels {
        Some(p) => Some(input("existing labels", nifti::load_labels(p))?),
        None => None,
    };
    std::fs::create_dir_all(&cfg.out_dir)?;

    let inputs = ManifestInputs {
        host: cfg.host.display().to_string(),
        brain_mask: cfg.brain_mask.display().to_string(),
        wm_mask: cfg.wm_mask.display().to_string(),
        existing_labels: cfg.existing_labels.as_ref().map(|p| p.display().to_string()),
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let items: Vec<ManifestItem> = pool.install(|| {
        (0..cfg.count)
            .into_par_iter()
            .map(|i| {
                let child_seed = hash64(&[cfg.seed, i as u64, stage::ITEM]);
                let image_name = format!("item_{i:03}.nii.gz");
                let labels_name = format!("item_{i:03}_labels.nii.gz");
                let result = augment_one(&host, &brain, &wm, existing.as_ref(), cfg, child_seed)
                    .and_then(|(volume, labels, records)| {
                        nifti::save(&volume, &cfg.out_dir.join(&image_name))?;
                        nifti::save_labels(&labels, &cfg.out_dir.join(&labels_name))?;
                        Ok(records)
                    });
                match result {
                    Ok(records) => ManifestItem {
                        image: Some(image_name),
                        labels: Some(labels_name),
                        inputs: inputs.clone(),
                        child_seed,
                        center: records.iter().map(|r| r.center).collect(),
                        lesion_voxels: records.iter().map(|r| r.voxels).collect(),
                        mode: cfg.mode.as_str().to_string(),
                        residual: records.iter().map(|r| r.residual).collect(),
                        status: "ok".to_string(),
                    },
                    Err(e) => ManifestItem {
                        image: None,
                        labels: None,
                        inputs: inputs.clone(),
                        child_seed,
                        center: Vec::new(),
                        lesion_voxels: Vec::new(),
                        mode: cfg.mode.as_str().to_string(),
                        residual: Vec::new(),
                        status: format!("failed: {e}"),
                    },
                }
            })
            .collect()
    });

    let manifest_path = cfg.out_dir.join("manifest.json");
    let json = serde_json::to_vec_pretty(&items)?;
    std::fs::write(&manifest_path, json)?;

    let succeeded = items.iter().filter(|i| i.status == "ok").count();
    Ok(BatchSummary {
        failed: items.len() - succeeded,
        succeeded,
        items,
        manifest_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn synthetic_inputs(dir: &Path) -> PipelineConfig {
        let dims = [56usize, 56, 56];
        let mut rng = Stream::new(991);
        let host = Volume3::from_fn(dims, [1.0; 3], |x, y, z| {
            80.0 + 20.0 * ((x as f32 * 0.31).sin() + (y as f32 * 0.17).cos())
                + 0.2 * z as f32
                + rng.uniform(-1.0, 1.0) as f32
        });
        let brain = LabelMap3::from_fn(dims, |x, y, z| {
            u8::from((3..53).contains(&x) && (3..53).contains(&y) && (3..53).contains(&z))
        });
        let wm = LabelMap3::from_fn(dims, |x, y, z| {
            u8::from((8..48).contains(&x) && (8..48).contains(&y) && (8..48).contains(&z))
        });
        let existing = LabelMap3::from_fn(dims, |x, y, z| {
            u8::from((4..7).contains(&x) && (4..7).contains(&y) && (4..7).contains(&z))
        });
        nifti::save(&host, &dir.join("host.nii.gz")).unwrap();
        nifti::save_labels(&brain, &dir.join("brain.nii.gz")).unwrap();
        nifti::save_labels(&wm, &dir.join("wm.nii.gz")).unwrap();
        nifti::save_labels(&existing, &dir.join("real.nii.gz")).unwrap();

        PipelineConfig {
            host: dir.join("host.nii.gz"),
            brain_mask: dir.join("brain.nii.gz"),
            wm_mask: dir.join("wm.nii.gz"),
            existing_labels: Some(dir.join("real.nii.gz")),
            count: 2,
            lesions_per_image: 1,
            mask_synth: MaskSynthParams {
                grid_dims: [28, 28, 28],
                half_axis: (3.0, 6.0),
                elastic_alpha: 4.0,
                perlin_amplitude: 1.0,
                ..Default::default()
            },
            perturb: PerturbParams::default(),
            mode: BlendMode::Spb,
            solver: SolverConfig::default(),
            proto: ProtoConfig::default(),
            out_dir: dir.join("out"),
            seed: 7,
            workers: 1,
        }
    }

    #[test]
    fn augment_one_deterministic_and_clean() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = synthetic_inputs(dir.path());
        let host = io::load_volume(&cfg.host, io::VolumeFormat::Nifti1).unwrap();
        let brain = nifti::load_labels(&cfg.brain_mask).unwrap();
        let wm = nifti::load_labels(&cfg.wm_mask).unwrap();
        let existing = nifti::load_labels(cfg.existing_labels.as_ref().unwrap()).unwrap();

        let (v1, l1, r1) = augment_one(&host, &brain, &wm, Some(&existing), &cfg, 5).unwrap();
        let (v2, l2, r2) = augment_one(&host, &brain, &wm, Some(&existing), &cfg, 5).unwrap();
        assert!(v1.bit_eq(&v2));
        assert_eq!(l1, l2);
        assert_eq!(r1.len(), r2.len());
        assert_eq!(r1[0].center, r2[0].center);

        // labels carry 0/1/2; synthetic voxels inside wm support; volume
        // untouched outside the blend region
        let mut synth = 0usize;
        for i in 0..l1.len() {
            match l1.data()[i] {
                0 | 1 => assert_eq!(v1.data()[i].to_bits(), host.data()[i].to_bits()),
                2 => {
                    synth += 1;
                    assert_eq!(wm.data()[i], 1, "synthetic voxel outside wm support");
                    assert_eq!(existing.data()[i], 0, "collision with a real lesion");
                }
                _ => unreachable!(),
            }
        }
        assert_eq!(synth, r1[0].voxels);
        assert!(v1.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn two_lesions_never_collide() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = synthetic_inputs(dir.path());
        cfg.lesions_per_image = 2;
        let host = io::load_volume(&cfg.host, io::VolumeFormat::Nifti1).unwrap();
        let brain = nifti::load_labels(&cfg.brain_mask).unwrap();
        let wm = nifti::load_labels(&cfg.wm_mask).unwrap();
        for seed in 0..5 {
            let (_, labels, records) =
                augment_one(&host, &brain, &wm, None, &cfg, seed).unwrap();
            assert_eq!(records.len(), 2);
            let total: usize = records.iter().map(|r| r.voxels).sum();
            assert_eq!(labels.count(LABEL_SYNTHETIC), total, "seed {seed}: overlap");
        }
    }

    #[test]
    fn batch_manifest_and_partial_failure() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = synthetic_inputs(dir.path());
        cfg.count = 3;
        let summary = augment_batch(&cfg).unwrap();
        assert_eq!(summary.items.len(), 3);
        assert_eq!(summary.succeeded, 3);
        let seeds: Vec<u64> = summary.items.iter().map(|i| i.child_seed).collect();
        assert_ne!(seeds[0], seeds[1]);
        assert_ne!(seeds[1], seeds[2]);
        assert!(summary.manifest_path.exists());
        for item in &summary.items {
            assert!(cfg.out_dir.join(item.image.as_ref().unwrap()).exists());
            assert!(cfg.out_dir.join(item.labels.as_ref().unwrap()).exists());
        }

        // empty wm mask: every item fails but the batch still writes a
        // manifest
        let empty_wm = LabelMap3::zeros([56, 56, 56]);
        nifti::save_labels(&empty_wm, &dir.path().join("wm_empty.nii.gz")).unwrap();
        let mut bad = cfg.clone();
        bad.wm_mask = dir.path().join("wm_empty.nii.gz");
        bad.out_dir = dir.path().join("out_bad");
        let summary = augment_batch(&bad).unwrap();
        assert_eq!(summary.succeeded, 0);
        assert_eq!(summary.failed, 3);
        for item in &summary.items {
            assert!(item.status.starts_with("failed:"), "{}", item.status);
            assert!(item.image.is_none());
        }
    }

    #[test]
    fn config_parsing_defaults_and_overrides() {
        let json = serde_json::json!({
            "host": "h.nii.gz",
            "brain_mask": "b.nii.gz",
            "wm_mask": "w.nii.gz",
            "out_dir": "out",
            "seed": 3,
            "mode": "mixed_max",
            "mask_synth": {"half_axis": [4.0, 9.0]},
            "solver": {"rel_tol": 1e-6}
        });
        let cfg = PipelineConfig::from_json_slice(json.to_string().as_bytes()).unwrap();
        assert_eq!(cfg.count, 1);
        assert_eq!(cfg.mode, BlendMode::MixedMax);
        assert_eq!(cfg.mask_synth.half_axis, (4.0, 9.0));
        assert_eq!(cfg.mask_synth.grid_dims, [64, 64, 64]);
        assert_eq!(cfg.solver.rel_tol, 1e-6);
        assert_eq!(cfg.perturb.gamma_range, (0.7, 1.3));

        assert!(PipelineConfig::from_json_slice(b"{}").is_err());
        let bad = serde_json::json!({
            "host": "h", "brain_mask": "b", "wm_mask": "w", "out_dir": "o",
            "count": 0
        });
        assert!(matches!(
            PipelineConfig::from_json_slice(bad.to_string().as_bytes()),
            Err(Error::Config(_))
        ));
    }
}
