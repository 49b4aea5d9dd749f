//! PCA-constrained sampling over externally supplied embedding matrices.
//!
//! Real-lesion embeddings (N x d, one row per lesion) are reduced to the
//! top principal components covering the variance target; new latent
//! vectors are drawn uniformly inside the axis-aligned box of projected
//! training points and mapped back to the original space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::jacobi_eigen;
use crate::rng::Stream;

/// Slack applied when comparing cumulative explained variance against the
/// target, so ratios that should hit the target exactly (e.g. 9:1 data at
/// 0.90) are not pushed over by rounding.
const TARGET_EPS: f64 = 1e-12;

/// Fitted PCA basis plus the projected support of the training rows.
#[derive(Debug, Clone)]
pub struct LatentSet {
    n: usize,
    d: usize,
    k: usize,
    /// Training rows, N x d row-major.
    vectors: Vec<f64>,
    mean: Vec<f64>,
    /// K x d row-major, rows orthonormal.
    components: Vec<f64>,
    explained_ratio: Vec<f64>,
    proj_min: Vec<f64>,
    proj_max: Vec<f64>,
}

impl LatentSet {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Number of retained components.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Row i is component i.
    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn explained_ratio(&self) -> &[f64] {
        &self.explained_ratio
    }

    pub fn proj_min(&self) -> &[f64] {
        &self.proj_min
    }

    pub fn proj_max(&self) -> &[f64] {
        &self.proj_max
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }
}

/// Fit a PCA basis retaining the smallest component count whose cumulative
/// explained variance reaches `variance_target`.
pub fn pca_fit(rows: &[f64], n: usize, d: usize, variance_target: f64) -> Result<LatentSet> {
    if n < 2 || d < 1 {
        return Err(Error::DegenerateData(format!(
            "need at least 2 rows and 1 column, got {n} x {d}"
        )));
    }
    if rows.len() != n * d {
        return Err(Error::DimensionMismatch(format!(
            "{} values for a {n} x {d} matrix",
            rows.len()
        )));
    }
    if !variance_target.is_finite() || variance_target <= 0.0 || variance_target > 1.0 {
        return Err(Error::ParamOutOfRange(format!(
            "variance target {variance_target}"
        )));
    }
    if rows.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("embedding matrix".to_string()));
    }

    let mut mean = vec![0.0f64; d];
    for r in 0..n {
        for j in 0..d {
            mean[j] += rows[r * d + j];
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }

    // covariance, (n-1) denominator
    let mut cov = vec![0.0f64; d * d];
    for r in 0..n {
        for i in 0..d {
            let xi = rows[r * d + i] - mean[i];
            for j in i..d {
                cov[i * d + j] += xi * (rows[r * d + j] - mean[j]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / denom;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }

    let total: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    if total <= 0.0 {
        return Err(Error::DegenerateData(
            "embedding matrix has zero variance".to_string(),
        ));
    }

    let (raw_vals, vecs) = jacobi_eigen(&cov, d);

    // column-major eigenvectors -> per-eigenpair (value, vector) with the
    // sign pinned so the largest-magnitude entry is positive
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..d)
        .map(|j| {
            let val = raw_vals[j].max(0.0);
            let mut vec: Vec<f64> = (0..d).map(|i| vecs[i * d + j]).collect();
            let lead = (0..d)
                .max_by(|&a, &b| {
                    vec[a]
                        .abs()
                        .partial_cmp(&vec[b].abs())
                        .unwrap()
                        .then(b.cmp(&a))
                })
                .unwrap();
            if vec[lead] < 0.0 {
                for x in vec.iter_mut() {
                    *x = -*x;
                }
            }
            (val, vec)
        })
        .collect();
    // descending eigenvalue; exact ties fall back to the axis order of the
    // leading component
    pairs.sort_by(|a, b| {
        b.0.partial_cmp(&a.0).unwrap().then_with(|| {
            let lead = |v: &[f64]| {
                (0..v.len())
                    .max_by(|&x, &y| v[x].abs().partial_cmp(&v[y].abs()).unwrap().then(y.cmp(&x)))
                    .unwrap()
            };
            lead(&a.1).cmp(&lead(&b.1))
        })
    });

    let sum_vals: f64 = pairs.iter().map(|p| p.0).sum();
    let ratios: Vec<f64> = pairs.iter().map(|p| p.0 / sum_vals).collect();
    let mut k = d;
    let mut cum = 0.0;
    for (i, r) in ratios.iter().enumerate() {
        cum += r;
        if cum + TARGET_EPS >= variance_target {
            k = i + 1;
            break;
        }
    }

    let mut components = Vec::with_capacity(k * d);
    for pair in pairs.iter().take(k) {
        components.extend_from_slice(&pair.1);
    }
    let explained_ratio = ratios[..k].to_vec();

    let mut proj_min = vec![f64::INFINITY; k];
    let mut proj_max = vec![f64::NEG_INFINITY; k];
    for r in 0..n {
        for (c, pm) in proj_min.iter_mut().enumerate() {
            let mut z = 0.0;
            for j in 0..d {
                z += components[c * d + j] * (rows[r * d + j] - mean[j]);
            }
            *pm = pm.min(z);
            proj_max[c] = proj_max[c].max(z);
        }
    }

    Ok(LatentSet {
        n,
        d,
        k,
        vectors: rows.to_vec(),
        mean,
        components,
        explained_ratio,
        proj_min,
        proj_max,
    })
}

/// Project into the reduced space: `z = C (x - mean)`.
pub fn project(ls: &LatentSet, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != ls.d {
        return Err(Error::DimensionMismatch(format!(
            "vector length {} != {}",
            x.len(),
            ls.d
        )));
    }
    Ok((0..ls.k)
        .map(|c| {
            (0..ls.d)
                .map(|j| ls.components[c * ls.d + j] * (x[j] - ls.mean[j]))
                .sum()
        })
        .collect())
}

/// Map back to the original space: `x = mean + C^T z`.
pub fn inverse(ls: &LatentSet, z: &[f64]) -> Result<Vec<f64>> {
    if z.len() != ls.k {
        return Err(Error::DimensionMismatch(format!(
            "reduced vector length {} != {}",
            z.len(),
            ls.k
        )));
    }
    let mut x = ls.mean.clone();
    for c in 0..ls.k {
        for j in 0..ls.d {
            x[j] += ls.components[c * ls.d + j] * z[c];
        }
    }
    Ok(x)
}

/// Draw a new latent vector: componentwise uniform over the projected
/// bounding box, mapped back through the basis.
pub fn constrained_sample(ls: &LatentSet, rng: &mut Stream) -> Vec<f64> {
    let z: Vec<f64> = (0..ls.k)
        .map(|c| rng.uniform(ls.proj_min[c], ls.proj_max[c]))
        .collect();
    inverse(ls, &z).expect("dimensions fixed by construction")
}

/// Serializable fitted model (basis and box, without training rows).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatentModel {
    pub mean: Vec<f64>,
    /// One inner vec per retained component.
    pub components: Vec<Vec<f64>>,
    pub explained_ratio: Vec<f64>,
    pub proj_min: Vec<f64>,
    pub proj_max: Vec<f64>,
}

impl LatentModel {
    pub fn from_latent_set(ls: &LatentSet) -> Self {
        LatentModel {
            mean: ls.mean.clone(),
            components: (0..ls.k)
                .map(|c| ls.components[c * ls.d..(c + 1) * ls.d].to_vec())
                .collect(),
            explained_ratio: ls.explained_ratio.clone(),
            proj_min: ls.proj_min.clone(),
            proj_max: ls.proj_max.clone(),
        }
    }

    pub fn from_json_slice(bytes: &[u8]) -> Result<Self> {
        let model: LatentModel = serde_json::from_slice(bytes)?;
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.mean.len();
        let k = self.components.len();
        if d == 0 || k == 0 {
            return Err(Error::DegenerateData("empty latent model".to_string()));
        }
        if self.explained_ratio.len() != k || self.proj_min.len() != k || self.proj_max.len() != k
        {
            return Err(Error::DimensionMismatch(
                "model arrays disagree on component count".to_string(),
            ));
        }
        for row in &self.components {
            if row.len() != d {
                return Err(Error::DimensionMismatch(
                    "component length != mean length".to_string(),
                ));
            }
        }
        let finite = self.mean.iter().all(|v| v.is_finite())
            && self.components.iter().flatten().all(|v| v.is_finite())
            && self.explained_ratio.iter().all(|v| v.is_finite())
            && self.proj_min.iter().all(|v| v.is_finite())
            && self.proj_max.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("latent model".to_string()));
        }
        for c in 0..k {
            if self.proj_min[c] > self.proj_max[c] {
                return Err(Error::ParamOutOfRange(format!(
                    "projection bounds inverted on component {c}"
                )));
            }
        }
        Ok(())
    }

    /// Draw a sample in the original space.
    pub fn sample(&self, rng: &mut Stream) -> Vec<f64> {
        let d = self.mean.len();
        let mut x = self.mean.clone();
        for (c, row) in self.components.iter().enumerate() {
            let z = rng.uniform(self.proj_min[c], self.proj_max[c]);
            for j in 0..d {
                x[j] += row[j] * z;
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn orthonormality_defect(ls: &LatentSet) -> f64 {
        let mut worst = 0.0f64;
        for a in 0..ls.k {
            for b in 0..ls.k {
                let dot: f64 = (0..ls.d)
                    .map(|j| ls.components[a * ls.d + j] * ls.components[b * ls.d + j])
                    .sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - expect).abs());
            }
        }
        worst
    }

    #[test]
    fn rank_one_data_gives_single_component() {
        // points on a line through (1,2,3) with direction (2,1,-2)/3
        let dir = [2.0 / 3.0, 1.0 / 3.0, -2.0 / 3.0];
        let mut rows = Vec::new();
        for i in 0..20 {
            let t = i as f64 * 0.37 - 3.0;
            rows.extend_from_slice(&[1.0 + t * dir[0], 2.0 + t * dir[1], 3.0 + t * dir[2]]);
        }
        let ls = pca_fit(&rows, 20, 3, 0.90).unwrap();
        assert_eq!(ls.k(), 1);
        assert_eq!(ls.explained_ratio().len(), 1);
        assert!((ls.explained_ratio()[0] - 1.0).abs() < 1e-12);
        // component parallel to dir, sign pinned positive on the lead entry
        let c = ls.components();
        let dot = c[0] * dir[0] + c[1] * dir[1] + c[2] * dir[2];
        assert!((dot.abs() - 1.0).abs() < 1e-10);
        assert!(c[0] > 0.0, "lead component sign not pinned: {c:?}");
        assert!(orthonormality_defect(&ls) < 1e-10);
    }

    #[test]
    fn nine_one_variance_keeps_one_component_at_090() {
        // axis-aligned sample with variances in ratio 9:1
        let rows = vec![3.0, 0.0, -3.0, 0.0, 0.0, 1.0, 0.0, -1.0];
        let ls = pca_fit(&rows, 4, 2, 0.90).unwrap();
        assert_eq!(ls.k(), 1);
        assert!((ls.explained_ratio()[0] - 0.9).abs() < 1e-9);
        // eigen oracle: covariance is diagonal with entries 6 and 2/3
        assert!((ls.components()[0].abs() - 1.0).abs() < 1e-12);
        assert!(ls.components()[1].abs() < 1e-12);
    }

    #[test]
    fn isotropic_gaussian_needs_all_three() {
        let n = 10_000;
        let mut rng = Stream::new(1234);
        let mut rows = Vec::with_capacity(n * 3);
        for _ in 0..n * 3 {
            rows.push(rng.normal());
        }
        let ls = pca_fit(&rows, n, 3, 0.90).unwrap();
        assert_eq!(ls.k(), 3);
        for r in ls.explained_ratio() {
            assert!((r - 1.0 / 3.0).abs() < 0.02, "ratio {r}");
        }
    }

    #[test]
    fn inverse_of_project_is_identity_at_full_rank() {
        let mut rng = Stream::new(9);
        let n = 30;
        let d = 5;
        let rows: Vec<f64> = (0..n * d).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let ls = pca_fit(&rows, n, d, 1.0).unwrap();
        assert_eq!(ls.k(), d);
        for _ in 0..20 {
            let x: Vec<f64> = (0..d).map(|_| rng.uniform(-5.0, 5.0)).collect();
            let back = inverse(&ls, &project(&ls, &x).unwrap()).unwrap();
            for j in 0..d {
                assert!((back[j] - x[j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn project_of_mean_is_zero() {
        let mut rng = Stream::new(10);
        let rows: Vec<f64> = (0..40).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let ls = pca_fit(&rows, 10, 4, 0.9).unwrap();
        let z = project(&ls, ls.mean()).unwrap();
        for v in z {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn reduced_reconstruction_is_least_squares_projection() {
        use crate::linalg::cholesky_solve;
        let mut rng = Stream::new(11);
        let n = 50;
        let d = 4;
        // anisotropic data so K < d at 0.9
        let rows: Vec<f64> = (0..n)
            .flat_map(|_| {
                let a = rng.normal() * 5.0;
                let b = rng.normal() * 2.0;
                let c = rng.normal() * 0.1;
                let e = rng.normal() * 0.05;
                [a + b, a - b, c + 0.3 * a, e]
            })
            .collect();
        let ls = pca_fit(&rows, n, d, 0.90).unwrap();
        assert!(ls.k() < d);
        let k = ls.k();
        for _ in 0..10 {
            let x: Vec<f64> = (0..d).map(|_| rng.uniform(-3.0, 3.0)).collect();
            let back = inverse(&ls, &project(&ls, &x).unwrap()).unwrap();
            // normal-equations oracle: minimize ||mean + C^T z - x|| over z
            let c_mat = ls.components();
            let mut gram = vec![0.0; k * k];
            for a in 0..k {
                for b in 0..k {
                    gram[a * k + b] = (0..d).map(|j| c_mat[a * d + j] * c_mat[b * d + j]).sum();
                }
            }
            let mut rhs: Vec<f64> = (0..k)
                .map(|a| (0..d).map(|j| c_mat[a * d + j] * (x[j] - ls.mean()[j])).sum())
                .collect();
            cholesky_solve(&gram, &mut rhs, k).unwrap();
            let mut oracle = ls.mean().to_vec();
            for a in 0..k {
                for j in 0..d {
                    oracle[j] += c_mat[a * d + j] * rhs[a];
                }
            }
            for j in 0..d {
                assert!((back[j] - oracle[j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn reconstruction_error_nonincreasing_in_k() {
        let mut rng = Stream::new(13);
        let n = 60;
        let d = 6;
        let rows: Vec<f64> = (0..n)
            .flat_map(|_| {
                let mut v = vec![0.0; d];
                for (j, item) in v.iter_mut().enumerate() {
                    *item = rng.normal() * (1.0 + j as f64);
                }
                v
            })
            .collect();
        let full = pca_fit(&rows, n, d, 1.0).unwrap();
        let x: Vec<f64> = (0..d).map(|_| rng.uniform(-4.0, 4.0)).collect();
        let mut prev = f64::INFINITY;
        for k in 1..=d {
            // reconstruct with the first k components
            let mut rec = full.mean().to_vec();
            for c in 0..k {
                let z: f64 = (0..d)
                    .map(|j| full.components()[c * d + j] * (x[j] - full.mean()[j]))
                    .sum();
                for j in 0..d {
                    rec[j] += full.components()[c * d + j] * z;
                }
            }
            let err: f64 = (0..d).map(|j| (x[j] - rec[j]).powi(2)).sum::<f64>().sqrt();
            assert!(err <= prev + 1e-12, "error rose at k={k}: {err} > {prev}");
            prev = err;
        }
    }

    #[test]
    fn samples_project_into_the_box() {
        let mut rng = Stream::new(15);
        let n = 40;
        let d = 3;
        let rows: Vec<f64> = (0..n * d).map(|_| rng.uniform(-2.0, 5.0)).collect();
        let ls = pca_fit(&rows, n, d, 0.95).unwrap();
        let mut srng = Stream::new(77);
        for _ in 0..10_000 {
            let x = constrained_sample(&ls, &mut srng);
            let z = project(&ls, &x).unwrap();
            for c in 0..ls.k() {
                assert!(
                    z[c] >= ls.proj_min()[c] - 1e-9 && z[c] <= ls.proj_max()[c] + 1e-9,
                    "component {c}: {} outside [{}, {}]",
                    z[c],
                    ls.proj_min()[c],
                    ls.proj_max()[c]
                );
            }
        }
    }

    #[test]
    fn one_dimensional_uniform_sample_mean() {
        let mut rng = Stream::new(16);
        let n = 2000;
        let rows: Vec<f64> = (0..n).map(|_| rng.uniform(0.0, 10.0)).collect();
        let ls = pca_fit(&rows, n, 1, 0.90).unwrap();
        assert_eq!(ls.k(), 1);
        let mut srng = Stream::new(17);
        let mut sum = 0.0;
        for _ in 0..10_000 {
            sum += constrained_sample(&ls, &mut srng)[0];
        }
        let mean = sum / 10_000.0;
        assert!((4.5..=5.5).contains(&mean), "sample mean {mean}");
    }

    #[test]
    fn identical_rows_are_degenerate() {
        let rows = vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0];
        assert!(matches!(
            pca_fit(&rows, 3, 2, 0.9),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn non_finite_rejected() {
        let rows = vec![1.0, f64::NAN, 0.0, 1.0];
        assert!(matches!(pca_fit(&rows, 2, 2, 0.9), Err(Error::NonFinite(_))));
    }

    #[test]
    fn model_roundtrip_and_sampling() {
        let mut rng = Stream::new(19);
        let rows: Vec<f64> = (0..50 * 3).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let ls = pca_fit(&rows, 50, 3, 0.9).unwrap();
        let model = LatentModel::from_latent_set(&ls);
        let json = serde_json::to_vec(&model).unwrap();
        let back = LatentModel::from_json_slice(&json).unwrap();
        let mut a = Stream::new(5);
        let mut b = Stream::new(5);
        let sa = back.sample(&mut a);
        let sb = constrained_sample(&ls, &mut b);
        for (x, y) in sa.iter().zip(sb.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn bad_models_rejected() {
        assert!(LatentModel::from_json_slice(b"{}").is_err());
        let m = serde_json::json!({
            "mean": [0.0, 0.0],
            "components": [[1.0, 0.0]],
            "explained_ratio": [1.0],
            "proj_min": [2.0],
            "proj_max": [-2.0],
        });
        assert!(LatentModel::from_json_slice(m.to_string().as_bytes()).is_err());
    }
}
