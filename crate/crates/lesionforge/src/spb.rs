//! Soft Poisson Blending in 3D.
//!
//! The blend region Ω gets new intensities `f` solving the discrete
//! Poisson equation `Δf = div V` with Dirichlet values taken from the
//! host on the outer boundary. The guidance field `V` selects between
//! the host gradient and the lesion gradient per voxel; in `spb` mode
//! the host gradient wins on inner-boundary voxels where its norm
//! dominates, which removes the halo a zero-padded lesion otherwise
//! imprints on the boundary.
//!
//! Grids use forward differences; divergence is their negative adjoint,
//! so `divergence(forward_gradient(v))` is the 6-point Laplacian on
//! interior voxels. The sign convention of the right-hand side is pinned
//! by the identity `V = grad(s)  =>  f = s`, which the tests enforce.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::cholesky_solve;
use crate::volume::{LabelMap3, Volume3, LABEL_SYNTHETIC};

/// Per-voxel forward differences along each axis; zero on the far face.
#[derive(Debug, Clone)]
pub struct GuidanceField {
    dims: [usize; 3],
    pub vx: Vec<f64>,
    pub vy: Vec<f64>,
    pub vz: Vec<f64>,
}

impl GuidanceField {
    pub fn zeros(dims: [usize; 3]) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        GuidanceField {
            dims,
            vx: vec![0.0; n],
            vy: vec![0.0; n],
            vz: vec![0.0; n],
        }
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.vx.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.vx.is_empty()
    }

    /// Euclidean norm of the 3-vector at a linear voxel index.
    #[inline]
    pub fn norm_at(&self, i: usize) -> f64 {
        (self.vx[i] * self.vx[i] + self.vy[i] * self.vy[i] + self.vz[i] * self.vz[i]).sqrt()
    }
}

/// Guidance selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlendMode {
    /// Host gradient on dominant inner-boundary voxels, lesion gradient
    /// elsewhere.
    Spb,
    /// Lesion gradient everywhere in the region.
    SourceOnly,
    /// Largest-norm gradient everywhere in the region.
    MixedMax,
}

impl BlendMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            BlendMode::Spb => "spb",
            BlendMode::SourceOnly => "source_only",
            BlendMode::MixedMax => "mixed_max",
        }
    }
}

impl std::str::FromStr for BlendMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spb" => Ok(BlendMode::Spb),
            "source_only" => Ok(BlendMode::SourceOnly),
            "mixed_max" => Ok(BlendMode::MixedMax),
            other => Err(Error::Config(format!(
                "unknown blend mode '{other}' (expected spb, source_only or mixed_max)"
            ))),
        }
    }
}

/// Linear solver selection and stopping rule.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub method: SolveMethod,
    pub rel_tol: f64,
    /// `None` derives the budget from the region size.
    pub max_iter: Option<usize>,
    /// Jacobi (diagonal) preconditioning for CG.
    pub jacobi: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Cg,
    Dense,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            method: SolveMethod::Cg,
            rel_tol: 1e-8,
            max_iter: None,
            jacobi: false,
        }
    }
}

impl SolverConfig {
    fn iter_budget(&self, omega: usize) -> usize {
        match self.max_iter {
            Some(m) => m.max(1),
            None => {
                let cube_root = (omega.max(1) as f64).cbrt();
                ((1000.0 * cube_root).ceil() as usize).min(100_000)
            }
        }
    }
}

/// Maximum region size for the dense direct solver.
pub const DENSE_LIMIT: usize = 512;

/// Blend region: foreground voxel set, its inner boundary and the
/// Dirichlet values sampled from the host on outside-adjacent voxels.
#[derive(Debug, Clone)]
pub struct BlendRegion {
    omega: LabelMap3,
    /// Linear voxel indices of Ω in ascending order.
    omega_idx: Vec<usize>,
    /// Rank of each grid voxel inside `omega_idx`, u32::MAX outside Ω.
    rank: Vec<u32>,
    /// Flag per Ω element: has at least one 6-neighbor outside Ω.
    inner_boundary: Vec<bool>,
    /// Host values at outside voxels adjacent to Ω.
    dirichlet: HashMap<usize, f64>,
}

impl BlendRegion {
    /// Build from a host-sized binary mask. The mask must keep a one-voxel
    /// margin from every grid face.
    pub fn from_mask(omega: &LabelMap3, host: &Volume3) -> Result<Self> {
        if omega.dims() != host.dims() {
            return Err(Error::DimensionMismatch(format!(
                "region dims {:?} != host dims {:?}",
                omega.dims(),
                host.dims()
            )));
        }
        if !omega.is_binary() {
            return Err(Error::ParamOutOfRange(
                "blend region mask must be binary".to_string(),
            ));
        }
        if omega.touches_boundary() {
            return Err(Error::OutOfBounds(
                "blend region touches a grid face".to_string(),
            ));
        }
        let [nx, ny, nz] = omega.dims();
        let n = omega.len();
        let mut omega_idx = Vec::new();
        let mut rank = vec![u32::MAX; n];
        for (i, &v) in omega.data().iter().enumerate() {
            if v != 0 {
                rank[i] = omega_idx.len() as u32;
                omega_idx.push(i);
            }
        }
        let plane = nx * ny;
        let mut inner_boundary = vec![false; omega_idx.len()];
        let mut dirichlet = HashMap::new();
        for (r, &i) in omega_idx.iter().enumerate() {
            let x = i % nx;
            let y = (i / nx) % ny;
            let z = i / plane;
            // interiority was checked above, all six neighbors exist
            debug_assert!(x >= 1 && y >= 1 && z >= 1 && x < nx - 1 && y < ny - 1 && z < nz - 1);
            for q in [i - 1, i + 1, i - nx, i + nx, i - plane, i + plane] {
                if omega.data()[q] == 0 {
                    inner_boundary[r] = true;
                    dirichlet.insert(q, host.data()[q] as f64);
                }
            }
        }
        Ok(BlendRegion {
            omega: omega.clone(),
            omega_idx,
            rank,
            inner_boundary,
            dirichlet,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.omega_idx.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.omega_idx.is_empty()
    }

    #[inline]
    pub fn mask(&self) -> &LabelMap3 {
        &self.omega
    }

    #[inline]
    pub fn voxel_indices(&self) -> &[usize] {
        &self.omega_idx
    }

    /// Is the voxel at `omega_idx[r]` on the inner boundary?
    #[inline]
    pub fn is_inner_boundary(&self, r: usize) -> bool {
        self.inner_boundary[r]
    }

    #[inline]
    pub fn dirichlet_values(&self) -> &HashMap<usize, f64> {
        &self.dirichlet
    }
}

/// Forward differences of a volume: `v_a(p) = v(p + e_a) - v(p)`, zero
/// where `p + e_a` leaves the grid.
pub fn forward_gradient(v: &Volume3) -> Result<GuidanceField> {
    let dims = v.dims();
    if dims.iter().any(|&d| d < 2) {
        return Err(Error::DimensionMismatch(format!(
            "gradient needs at least 2 voxels per axis, got {dims:?}"
        )));
    }
    let [nx, ny, nz] = dims;
    let plane = nx * ny;
    let mut g = GuidanceField::zeros(dims);
    let data = v.data();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = x + nx * (y + ny * z);
                let here = data[i] as f64;
                if x + 1 < nx {
                    g.vx[i] = data[i + 1] as f64 - here;
                }
                if y + 1 < ny {
                    g.vy[i] = data[i + nx] as f64 - here;
                }
                if z + 1 < nz {
                    g.vz[i] = data[i + plane] as f64 - here;
                }
            }
        }
    }
    Ok(g)
}

/// Divergence with the adjoint convention for forward differences:
/// `div V(p) = sum_a V_a(p) - V_a(p - e_a)`, out-of-grid terms zero.
pub fn divergence_f64(field: &GuidanceField) -> Vec<f64> {
    let [nx, ny, nz] = field.dims;
    let plane = nx * ny;
    let mut out = vec![0.0f64; field.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = x + nx * (y + ny * z);
                let mut d = field.vx[i] + field.vy[i] + field.vz[i];
                if x > 0 {
                    d -= field.vx[i - 1];
                }
                if y > 0 {
                    d -= field.vy[i - nx];
                }
                if z > 0 {
                    d -= field.vz[i - plane];
                }
                out[i] = d;
            }
        }
    }
    out
}

/// Divergence as a volume (f32), spacing 1.
pub fn divergence(field: &GuidanceField) -> Volume3 {
    let div = divergence_f64(field);
    let mut v = Volume3::zeros(field.dims, [1.0; 3]);
    for (o, d) in v.data_mut().iter_mut().zip(div.iter()) {
        *o = *d as f32;
    }
    v
}

/// Build the guidance field for a blend.
///
/// `g` is the lesion patch pre-placed into a host-sized zero volume with
/// its foreground aligned to the region. Outside Ω the field carries the
/// host gradient; it never reaches the solve.
pub fn build_guidance(
    s: &Volume3,
    g: &Volume3,
    region: &BlendRegion,
    mode: BlendMode,
) -> Result<GuidanceField> {
    if s.dims() != g.dims() || s.dims() != region.mask().dims() {
        return Err(Error::DimensionMismatch(format!(
            "host {:?}, lesion {:?} and region {:?} dims differ",
            s.dims(),
            g.dims(),
            region.mask().dims()
        )));
    }
    let grad_s = forward_gradient(s)?;
    let grad_g = forward_gradient(g)?;
    let mut v = grad_s.clone();
    for (r, &i) in region.omega_idx.iter().enumerate() {
        let ns = grad_s.norm_at(i);
        let ng = grad_g.norm_at(i);
        let take_host = match mode {
            BlendMode::Spb => ns > ng && region.inner_boundary[r],
            BlendMode::SourceOnly => false,
            BlendMode::MixedMax => ns > ng,
        };
        if !take_host {
            v.vx[i] = grad_g.vx[i];
            v.vy[i] = grad_g.vy[i];
            v.vz[i] = grad_g.vz[i];
        }
    }
    Ok(v)
}

/// Solver diagnostics plus the raw f64 solution over Ω.
#[derive(Debug, Clone)]
pub struct SolveStats {
    /// Solution value per entry of `BlendRegion::voxel_indices`.
    pub values: Vec<f64>,
    /// Final relative residual.
    pub residual: f64,
    pub iterations: usize,
}

struct PoissonSystem {
    /// Per row: count of in-grid neighbors (the diagonal).
    diag: Vec<f64>,
    /// Per row: ranks of in-Ω neighbors, u32::MAX padding.
    neighbors: Vec<[u32; 6]>,
    rhs: Vec<f64>,
}

fn assemble(s: &Volume3, region: &BlendRegion, field: &GuidanceField) -> PoissonSystem {
    let [nx, ny, _nz] = s.dims();
    let plane = nx * ny;
    let div = divergence_f64(field);
    let n = region.len();
    let mut diag = vec![0.0f64; n];
    let mut neighbors = vec![[u32::MAX; 6]; n];
    let mut rhs = vec![0.0f64; n];
    for (r, &i) in region.omega_idx.iter().enumerate() {
        let neigh = [i - 1, i + 1, i - nx, i + nx, i - plane, i + plane];
        let mut b = -div[i];
        let mut np = 0.0;
        let mut slot = 0;
        for q in neigh {
            np += 1.0;
            let qr = region.rank[q];
            if qr != u32::MAX {
                neighbors[r][slot] = qr;
                slot += 1;
            } else {
                b += s.data()[q] as f64;
            }
        }
        diag[r] = np;
        rhs[r] = b;
    }
    PoissonSystem {
        diag,
        neighbors,
        rhs,
    }
}

fn apply(sys: &PoissonSystem, x: &[f64], y: &mut [f64]) {
    for r in 0..x.len() {
        let mut acc = sys.diag[r] * x[r];
        for &q in &sys.neighbors[r] {
            if q == u32::MAX {
                break;
            }
            acc -= x[q as usize];
        }
        y[r] = acc;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn solve_cg(sys: &PoissonSystem, x0: Vec<f64>, cfg: &SolverConfig) -> Result<SolveStats> {
    let n = sys.rhs.len();
    let max_iter = cfg.iter_budget(n);
    let b_norm = dot(&sys.rhs, &sys.rhs).sqrt();
    let denom = if b_norm > 0.0 { b_norm } else { 1.0 };

    let mut x = x0;
    let mut r = vec![0.0; n];
    apply(sys, &x, &mut r);
    for i in 0..n {
        r[i] = sys.rhs[i] - r[i];
    }
    let precond = |r: &[f64], z: &mut [f64]| {
        if cfg.jacobi {
            for i in 0..r.len() {
                z[i] = r[i] / sys.diag[i];
            }
        } else {
            z.copy_from_slice(r);
        }
    };

    let mut res = dot(&r, &r).sqrt() / denom;
    if res <= cfg.rel_tol {
        return Ok(SolveStats {
            values: x,
            residual: res,
            iterations: 0,
        });
    }

    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];

    for it in 1..=max_iter {
        apply(sys, &p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            // numerically exhausted search direction
            res = dot(&r, &r).sqrt() / denom;
            return if res <= cfg.rel_tol {
                Ok(SolveStats {
                    values: x,
                    residual: res,
                    iterations: it,
                })
            } else {
                Err(Error::NotConverged {
                    residual: res,
                    iterations: it,
                })
            };
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = dot(&r, &r).sqrt() / denom;
        if res <= cfg.rel_tol {
            return Ok(SolveStats {
                values: x,
                residual: res,
                iterations: it,
            });
        }
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NotConverged {
        residual: res,
        iterations: max_iter,
    })
}

fn solve_dense(sys: &PoissonSystem) -> Result<SolveStats> {
    let n = sys.rhs.len();
    if n > DENSE_LIMIT {
        return Err(Error::ParamOutOfRange(format!(
            "dense solve limited to {DENSE_LIMIT} voxels, region has {n}"
        )));
    }
    let mut a = vec![0.0f64; n * n];
    for r in 0..n {
        a[r * n + r] = sys.diag[r];
        for &q in &sys.neighbors[r] {
            if q == u32::MAX {
                break;
            }
            a[r * n + q as usize] = -1.0;
        }
    }
    let mut x = sys.rhs.clone();
    cholesky_solve(&a, &mut x, n)?;
    // report the true relative residual
    let mut ax = vec![0.0; n];
    apply(sys, &x, &mut ax);
    let mut rr = 0.0;
    for i in 0..n {
        let d = sys.rhs[i] - ax[i];
        rr += d * d;
    }
    let b_norm = dot(&sys.rhs, &sys.rhs).sqrt();
    let res = rr.sqrt() / if b_norm > 0.0 { b_norm } else { 1.0 };
    Ok(SolveStats {
        values: x,
        residual: res,
        iterations: 1,
    })
}

/// Solve the Dirichlet Poisson system over the region; returns per-voxel
/// f64 values and diagnostics. An empty region yields an empty solution.
pub fn solve_poisson_detailed(
    s: &Volume3,
    region: &BlendRegion,
    field: &GuidanceField,
    cfg: &SolverConfig,
) -> Result<SolveStats> {
    if s.dims() != region.mask().dims() || s.dims() != field.dims() {
        return Err(Error::DimensionMismatch(
            "host, region and guidance dims differ".to_string(),
        ));
    }
    if cfg.rel_tol <= 0.0 || !cfg.rel_tol.is_finite() {
        return Err(Error::ParamOutOfRange(format!(
            "rel_tol {} must be positive",
            cfg.rel_tol
        )));
    }
    if region.is_empty() {
        return Ok(SolveStats {
            values: Vec::new(),
            residual: 0.0,
            iterations: 0,
        });
    }
    let sys = assemble(s, region, field);
    match cfg.method {
        SolveMethod::Cg => {
            let x0: Vec<f64> = region
                .omega_idx
                .iter()
                .map(|&i| s.data()[i] as f64)
                .collect();
            solve_cg(&sys, x0, cfg)
        }
        SolveMethod::Dense => solve_dense(&sys),
    }
}

/// Solve and return the host with Ω replaced by the solution.
pub fn solve_poisson(
    s: &Volume3,
    region: &BlendRegion,
    field: &GuidanceField,
    cfg: &SolverConfig,
) -> Result<Volume3> {
    let stats = solve_poisson_detailed(s, region, field, cfg)?;
    let mut out = s.clone();
    for (r, &i) in region.omega_idx.iter().enumerate() {
        out.data_mut()[i] = stats.values[r] as f32;
    }
    Ok(out)
}

/// Everything a caller may want from one blend.
#[derive(Debug, Clone)]
pub struct BlendOutcome {
    pub volume: Volume3,
    pub labels: LabelMap3,
    /// Linear indices of Ω in the host grid.
    pub omega_indices: Vec<usize>,
    /// Raw f64 solution over Ω, parallel to `omega_indices`.
    pub omega_values: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Blend a lesion patch into a host volume.
///
/// The patch box must sit strictly inside the host with a one-voxel
/// margin. Voxels outside the placed mask stay bit-identical to the host;
/// the returned label map holds 2 on the blended region.
pub fn blend_detailed(
    host: &Volume3,
    lesion: &Volume3,
    lesion_mask: &LabelMap3,
    origin: [usize; 3],
    mode: BlendMode,
    cfg: &SolverConfig,
) -> Result<BlendOutcome> {
    let ldims = lesion.dims();
    if ldims != lesion_mask.dims() {
        return Err(Error::DimensionMismatch(format!(
            "lesion dims {:?} != mask dims {:?}",
            ldims,
            lesion_mask.dims()
        )));
    }
    if !lesion_mask.is_binary() {
        return Err(Error::ParamOutOfRange(
            "lesion mask must be binary".to_string(),
        ));
    }
    let hdims = host.dims();
    for a in 0..3 {
        if origin[a] < 1 || origin[a] + ldims[a] + 1 > hdims[a] {
            return Err(Error::OutOfBounds(format!(
                "patch at {origin:?} with dims {ldims:?} leaves no margin in host {hdims:?}"
            )));
        }
    }
    if lesion_mask.count_foreground() == 0 {
        return Err(Error::EmptyRegion);
    }

    // placed region and host-sized lesion image (whole patch box pasted,
    // exterior stays zero)
    let mut omega = LabelMap3::zeros(hdims);
    let mut g = Volume3::zeros(hdims, host.spacing());
    for z in 0..ldims[2] {
        for y in 0..ldims[1] {
            for x in 0..ldims[0] {
                let hx = origin[0] + x;
                let hy = origin[1] + y;
                let hz = origin[2] + z;
                g.set(hx, hy, hz, lesion.get(x, y, z));
                if lesion_mask.get(x, y, z) == 1 {
                    omega.set(hx, hy, hz, 1);
                }
            }
        }
    }

    let region = BlendRegion::from_mask(&omega, host)?;
    let field = build_guidance(host, &g, &region, mode)?;
    let stats = solve_poisson_detailed(host, &region, &field, cfg)?;

    let mut volume = host.clone();
    let mut labels = LabelMap3::zeros(hdims);
    for (r, &i) in region.omega_idx.iter().enumerate() {
        volume.data_mut()[i] = stats.values[r] as f32;
        labels.data_mut()[i] = LABEL_SYNTHETIC;
    }
    Ok(BlendOutcome {
        volume,
        labels,
        omega_indices: region.omega_idx.clone(),
        omega_values: stats.values,
        residual: stats.residual,
        iterations: stats.iterations,
    })
}

/// See [`blend_detailed`]; returns just the composite and its label map.
pub fn blend(
    host: &Volume3,
    lesion: &Volume3,
    lesion_mask: &LabelMap3,
    origin: [usize; 3],
    mode: BlendMode,
    cfg: &SolverConfig,
) -> Result<(Volume3, LabelMap3)> {
    let out = blend_detailed(host, lesion, lesion_mask, origin, mode, cfg)?;
    Ok((out.volume, out.labels))
}
