//! Procedural binary lesion masks: overlapping ellipsoids, elastic
//! deformation, Perlin boundary roughening.

use serde::{Deserialize, Serialize};

use crate::edt::signed_distance;
use crate::error::{Error, Result};
use crate::noise::perlin3;
use crate::rng::{stage, Stream};
use crate::volume::LabelMap3;

/// Parameters for procedural mask generation.
///
/// Ranges are inclusive; lengths are in voxels.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskSynthParams {
    pub grid_dims: [usize; 3],
    /// Ellipsoid count range, integer uniform.
    pub n_ellipsoids: (u32, u32),
    /// Half-axis length range, continuous uniform, per axis i.i.d.
    pub half_axis: (f64, f64),
    /// Elastic smoothing sigma range, continuous uniform.
    pub elastic_sigma: (f64, f64),
    /// Peak displacement of the elastic warp, voxels.
    pub elastic_alpha: f64,
    /// Perlin lattice spacing, voxels.
    pub perlin_cell: f64,
    /// Iso-surface perturbation strength, voxels.
    pub perlin_amplitude: f64,
    pub seed: u64,
}

impl Default for MaskSynthParams {
    fn default() -> Self {
        MaskSynthParams {
            grid_dims: [64, 64, 64],
            n_ellipsoids: (1, 5),
            half_axis: (5.0, 15.0),
            elastic_sigma: (3.0, 6.0),
            elastic_alpha: 8.0,
            perlin_cell: 8.0,
            perlin_amplitude: 1.5,
            seed: 0,
        }
    }
}

impl MaskSynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_ellipsoids.0 < 1 || self.n_ellipsoids.0 > self.n_ellipsoids.1 {
            return Err(Error::ParamOutOfRange(format!(
                "ellipsoid count range {:?}",
                self.n_ellipsoids
            )));
        }
        if self.half_axis.0 <= 0.0
            || self.half_axis.0 > self.half_axis.1
            || !self.half_axis.1.is_finite()
        {
            return Err(Error::ParamOutOfRange(format!(
                "half-axis range {:?}",
                self.half_axis
            )));
        }
        if self.elastic_sigma.0 <= 0.0
            || self.elastic_sigma.0 > self.elastic_sigma.1
            || !self.elastic_sigma.1.is_finite()
        {
            return Err(Error::ParamOutOfRange(format!(
                "elastic sigma range {:?}",
                self.elastic_sigma
            )));
        }
        if !self.elastic_alpha.is_finite() || self.elastic_alpha < 0.0 {
            return Err(Error::ParamOutOfRange(format!(
                "elastic alpha {}",
                self.elastic_alpha
            )));
        }
        if !self.perlin_cell.is_finite() || self.perlin_cell < 2.0 {
            return Err(Error::ParamOutOfRange(format!(
                "perlin cell {}",
                self.perlin_cell
            )));
        }
        if !self.perlin_amplitude.is_finite() || self.perlin_amplitude < 0.0 {
            return Err(Error::ParamOutOfRange(format!(
                "perlin amplitude {}",
                self.perlin_amplitude
            )));
        }
        // the largest ellipsoid plus the warp must stay interior with a
        // one-voxel margin
        let need = 2.0 * (self.half_axis.1 + self.elastic_alpha) + 2.0;
        for (a, &d) in self.grid_dims.iter().enumerate() {
            if (d as f64) < need {
                return Err(Error::ParamOutOfRange(format!(
                    "grid axis {a} has {d} voxels, need at least {need} for half-axis {} + alpha {}",
                    self.half_axis.1, self.elastic_alpha
                )));
            }
        }
        Ok(())
    }
}

/// Rasterize one ellipsoid. A voxel (i,j,k) is inside iff its center
/// (i+0.5, j+0.5, k+0.5) satisfies sum(((c - center)/r)^2) <= 1.
fn rasterize_ellipsoid(dims: [usize; 3], center: [f64; 3], radii: [f64; 3]) -> Vec<usize> {
    let mut voxels = Vec::new();
    let lo: Vec<usize> = (0..3)
        .map(|a| ((center[a] - radii[a] - 0.5).floor().max(0.0)) as usize)
        .collect();
    let hi: Vec<usize> = (0..3)
        .map(|a| ((center[a] + radii[a]).ceil() as usize).min(dims[a] - 1))
        .collect();
    for k in lo[2]..=hi[2] {
        let dz = (k as f64 + 0.5 - center[2]) / radii[2];
        for j in lo[1]..=hi[1] {
            let dy = (j as f64 + 0.5 - center[1]) / radii[1];
            for i in lo[0]..=hi[0] {
                let dx = (i as f64 + 0.5 - center[0]) / radii[0];
                if dx * dx + dy * dy + dz * dz <= 1.0 {
                    voxels.push(i + dims[0] * (j + dims[1] * k));
                }
            }
        }
    }
    voxels
}

const OVERLAP_RESAMPLES: usize = 50;

/// Union of overlapping ellipsoids. The first ellipsoid sits at the grid
/// center; every later one must intersect the union built so far.
pub fn gen_ellipsoid_union(params: &MaskSynthParams, rng: &Stream) -> Result<LabelMap3> {
    params.validate()?;
    let dims = params.grid_dims;
    let n = rng
        .child(stage::ELLIPSOID)
        .uniform_int(params.n_ellipsoids.0, params.n_ellipsoids.1);

    let mut mask = LabelMap3::zeros(dims);
    // every union voxel exactly once, for uniform center proposals
    let mut union_voxels: Vec<usize> = Vec::new();

    for i in 0..n as u64 {
        let mut es = rng.child2(stage::ELLIPSOID, i + 1);
        let radii = [
            es.uniform(params.half_axis.0, params.half_axis.1),
            es.uniform(params.half_axis.0, params.half_axis.1),
            es.uniform(params.half_axis.0, params.half_axis.1),
        ];
        let clamp_center = |c: f64, a: usize| -> f64 {
            let lo = radii[a] + 1.5;
            let hi = dims[a] as f64 - radii[a] - 1.5;
            c.clamp(lo, hi)
        };

        let mut placed = false;
        for _attempt in 0..OVERLAP_RESAMPLES {
            let center = if i == 0 {
                [
                    dims[0] as f64 / 2.0,
                    dims[1] as f64 / 2.0,
                    dims[2] as f64 / 2.0,
                ]
            } else {
                // propose near the existing union so overlap is likely
                let v = union_voxels[es.uniform_index(union_voxels.len())];
                let vx = (v % dims[0]) as f64 + 0.5;
                let vy = ((v / dims[0]) % dims[1]) as f64 + 0.5;
                let vz = (v / (dims[0] * dims[1])) as f64 + 0.5;
                [
                    clamp_center(vx + es.uniform(-radii[0], radii[0]), 0),
                    clamp_center(vy + es.uniform(-radii[1], radii[1]), 1),
                    clamp_center(vz + es.uniform(-radii[2], radii[2]), 2),
                ]
            };
            let voxels = rasterize_ellipsoid(dims, center, radii);
            if voxels.is_empty() {
                continue;
            }
            let overlaps = i == 0 || voxels.iter().any(|&v| mask.data()[v] != 0);
            if overlaps {
                for &v in &voxels {
                    if mask.data()[v] == 0 {
                        mask.data_mut()[v] = 1;
                        union_voxels.push(v);
                    }
                }
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::RetryExhausted(format!(
                "ellipsoid {i} found no overlapping placement in {OVERLAP_RESAMPLES} draws"
            )));
        }
    }

    debug_assert!(!mask.touches_boundary());
    Ok(mask)
}

/// Trilinear sample of a binary mask viewed as 0/1 values; out of grid is 0.
fn sample_trilinear(mask: &LabelMap3, x: f64, y: f64, z: f64) -> f64 {
    let dims = mask.dims();
    let x0 = x.floor();
    let y0 = y.floor();
    let z0 = z.floor();
    let fx = x - x0;
    let fy = y - y0;
    let fz = z - z0;
    let mut acc = 0.0;
    for dz in 0..2i64 {
        let zz = z0 as i64 + dz;
        if zz < 0 || zz >= dims[2] as i64 {
            continue;
        }
        let wz = if dz == 0 { 1.0 - fz } else { fz };
        for dy in 0..2i64 {
            let yy = y0 as i64 + dy;
            if yy < 0 || yy >= dims[1] as i64 {
                continue;
            }
            let wy = if dy == 0 { 1.0 - fy } else { fy };
            for dx in 0..2i64 {
                let xx = x0 as i64 + dx;
                if xx < 0 || xx >= dims[0] as i64 {
                    continue;
                }
                let wx = if dx == 0 { 1.0 - fx } else { fx };
                if mask.get(xx as usize, yy as usize, zz as usize) != 0 {
                    acc += wx * wy * wz;
                }
            }
        }
    }
    acc
}

fn convolve_clamped(line: &[f64], kernel: &[f64], radius: i64, q: i64) -> f64 {
    let len = line.len() as i64;
    let mut acc = 0.0;
    for (ki, w) in kernel.iter().enumerate() {
        let t = (q + ki as i64 - radius).clamp(0, len - 1);
        acc += w * line[t as usize];
    }
    acc
}

fn convolve_line(line: &[f64], out: &mut [f64], kernel: &[f64], radius: usize) {
    let len = line.len();
    if len > 2 * radius {
        for q in radius..len - radius {
            let window = &line[q - radius..q + radius + 1];
            let mut acc = 0.0;
            for (w, v) in kernel.iter().zip(window) {
                acc += w * v;
            }
            out[q] = acc;
        }
        for q in 0..radius {
            out[q] = convolve_clamped(line, kernel, radius as i64, q as i64);
        }
        for q in len - radius..len {
            out[q] = convolve_clamped(line, kernel, radius as i64, q as i64);
        }
    } else {
        for q in 0..len {
            out[q] = convolve_clamped(line, kernel, radius as i64, q as i64);
        }
    }
}

/// Separable Gaussian smoothing with replicated borders.
fn gaussian_smooth(field: &mut [f64], dims: [usize; 3], sigma: f64) {
    let radius = (3.0 * sigma).ceil() as usize;
    let mut kernel = Vec::with_capacity(2 * radius + 1);
    let mut sum = 0.0;
    for t in -(radius as i64)..=radius as i64 {
        let w = (-0.5 * (t as f64 / sigma).powi(2)).exp();
        kernel.push(w);
        sum += w;
    }
    for w in &mut kernel {
        *w /= sum;
    }

    let [nx, ny, nz] = dims;
    let lens = [nx, ny, nz];
    let max_len = nx.max(ny).max(nz);
    let mut line = vec![0.0f64; max_len];
    let mut smoothed = vec![0.0f64; max_len];
    for axis in 0..3 {
        let len = lens[axis];
        let (oa, ob, sa, sb, stride) = match axis {
            0 => (ny, nz, nx, nx * ny, 1usize),
            1 => (nx, nz, 1, nx * ny, nx),
            _ => (nx, ny, 1, nx, nx * ny),
        };
        for b in 0..ob {
            for a in 0..oa {
                let base = a * sa + b * sb;
                for q in 0..len {
                    line[q] = field[base + q * stride];
                }
                convolve_line(&line[..len], &mut smoothed[..len], &kernel, radius);
                for q in 0..len {
                    field[base + q * stride] = smoothed[q];
                }
            }
        }
    }
}

const ELASTIC_RETRIES: usize = 10;

/// Random smooth warp of a binary mask.
///
/// A per-voxel displacement field (uniform [-1,1] per component) is
/// Gaussian-smoothed with `sigma`, normalized to unit peak vector norm and
/// scaled so the largest displacement is exactly `alpha` voxels, then
/// applied by backward warping with trilinear interpolation and a 0.5
/// threshold. Warps that change the foreground volume by more than 50% are
/// redrawn.
pub fn elastic_deform(mask: &LabelMap3, sigma: f64, alpha: f64, rng: &Stream) -> Result<LabelMap3> {
    if sigma <= 0.0 || !sigma.is_finite() {
        return Err(Error::ParamOutOfRange(format!("sigma {sigma}")));
    }
    if alpha < 0.0 || !alpha.is_finite() {
        return Err(Error::ParamOutOfRange(format!("alpha {alpha}")));
    }
    if alpha == 0.0 {
        return Ok(mask.clone());
    }
    let count_in = mask.count_foreground();
    if count_in == 0 {
        return Ok(mask.clone());
    }

    let dims = mask.dims();
    let n = mask.len();
    for attempt in 0..ELASTIC_RETRIES as u64 {
        let mut field = [vec![0.0f64; n], vec![0.0f64; n], vec![0.0f64; n]];
        for (comp, f) in field.iter_mut().enumerate() {
            let mut cs = rng.child2(attempt, comp as u64);
            for v in f.iter_mut() {
                *v = cs.uniform(-1.0, 1.0);
            }
            gaussian_smooth(f, dims, sigma);
        }
        let mut peak = 0.0f64;
        for i in 0..n {
            let m2 = field[0][i] * field[0][i] + field[1][i] * field[1][i] + field[2][i] * field[2][i];
            peak = peak.max(m2);
        }
        let peak = peak.sqrt();
        if peak == 0.0 {
            return Ok(mask.clone());
        }
        let scale = alpha / peak;

        let mut out = LabelMap3::zeros(dims);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let idx = i + dims[0] * (j + dims[1] * k);
                    let sx = i as f64 + scale * field[0][idx];
                    let sy = j as f64 + scale * field[1][idx];
                    let sz = k as f64 + scale * field[2][idx];
                    if sample_trilinear(mask, sx, sy, sz) >= 0.5 {
                        out.data_mut()[idx] = 1;
                    }
                }
            }
        }
        let count_out = out.count_foreground();
        let change = (count_out as f64 - count_in as f64).abs() / count_in as f64;
        if change <= 0.5 {
            return Ok(out);
        }
    }
    Err(Error::RetryExhausted(format!(
        "elastic warp changed mask volume by >50% in {ELASTIC_RETRIES} attempts"
    )))
}

/// Perturb the mask iso-surface with gradient noise.
///
/// The mask becomes `{x : d(x) + amplitude * p(x) > 0}` where `d` is the
/// signed Euclidean distance to the boundary surface (positive inside,
/// half a voxel short of the nearest opposite voxel) and `p` is
/// single-octave Perlin noise on a lattice of spacing `cell`.
pub fn perlin_roughen(mask: &LabelMap3, cell: f64, amplitude: f64, rng: &Stream) -> Result<LabelMap3> {
    if !cell.is_finite() || cell < 2.0 {
        return Err(Error::ParamOutOfRange(format!("perlin cell {cell}")));
    }
    if !amplitude.is_finite() || amplitude < 0.0 {
        return Err(Error::ParamOutOfRange(format!("perlin amplitude {amplitude}")));
    }
    if amplitude == 0.0 {
        return Ok(mask.clone());
    }
    let dims = mask.dims();
    let sd = signed_distance(mask.data(), dims);
    let seed = rng.child(stage::PERLIN).seed();
    let mut out = LabelMap3::zeros(dims);
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let idx = i + dims[0] * (j + dims[1] * k);
                let p = perlin3(seed, i as f64 / cell, j as f64 / cell, k as f64 / cell);
                // voxel-to-voxel distance, pulled back to the interface
                let d = sd[idx] - 0.5 * sd[idx].signum();
                if d + amplitude * p > 0.0 {
                    out.data_mut()[idx] = 1;
                }
            }
        }
    }
    Ok(out)
}

const MASK_RETRIES: usize = 10;

/// Full procedural mask pipeline: ellipsoid union, elastic warp, Perlin
/// roughening, largest 6-connected component. Grid faces are cleared so
/// the result is always strictly interior.
pub fn gen_lesion_mask(params: &MaskSynthParams) -> Result<LabelMap3> {
    params.validate()?;
    let master = Stream::new(params.seed);
    let mut last_err: Option<Error> = None;
    for attempt in 0..MASK_RETRIES as u64 {
        let s = master.child2(stage::MASK, attempt);
        let union = match gen_ellipsoid_union(params, &s.child(stage::ELLIPSOID)) {
            Ok(m) => m,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        let sigma = s
            .child(stage::ELASTIC)
            .uniform(params.elastic_sigma.0, params.elastic_sigma.1);
        let warped = match elastic_deform(&union, sigma, params.elastic_alpha, &s.child2(stage::ELASTIC, 1)) {
            Ok(m) => m,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        let mut rough = perlin_roughen(
            &warped,
            params.perlin_cell,
            params.perlin_amplitude,
            &s.child(stage::PERLIN),
        )?;
        clear_faces(&mut rough);
        let kept = rough.largest_component();
        if kept.count_foreground() > 0 {
            return Ok(kept);
        }
        last_err = Some(Error::RetryExhausted("mask became empty".to_string()));
    }
    Err(last_err.unwrap_or_else(|| {
        Error::RetryExhausted(format!("no usable mask in {MASK_RETRIES} attempts"))
    }))
}

fn clear_faces(mask: &mut LabelMap3) {
    let [nx, ny, nz] = mask.dims();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if x == 0 || y == 0 || z == 0 || x == nx - 1 || y == ny - 1 || z == nz - 1 {
                    mask.set(x, y, z, 0);
                }
            }
        }
    }
}
