//! Exact Euclidean distance transforms on voxel grids.
//!
//! Separable lower-envelope algorithm (Felzenszwalb & Huttenlocher),
//! applied per axis on squared distances.

/// Stand-in for infinity that survives the envelope arithmetic.
const FAR: f64 = 1.0e20;

/// 1D squared distance transform of a sampled function.
fn dt1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = -FAR;
    z[1] = FAR;
    for q in 1..n {
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[k] {
                if k == 0 {
                    // envelope restarts at q
                    v[0] = q;
                    z[0] = -FAR;
                    z[1] = FAR;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = FAR;
                break;
            }
        }
    }
    k = 0;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let diff = q as f64 - p as f64;
        d[q] = diff * diff + f[p];
    }
}

/// Squared Euclidean distance from every voxel to the nearest site.
///
/// Voxels with no site anywhere get a value >= `1e20`.
pub fn squared_distance(sites: &[bool], dims: [usize; 3]) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    let mut g: Vec<f64> = sites.iter().map(|&s| if s { 0.0 } else { FAR }).collect();

    let max_n = nx.max(ny).max(nz);
    let mut f = vec![0.0; max_n];
    let mut d = vec![0.0; max_n];
    let mut v = vec![0usize; max_n];
    let mut z = vec![0.0; max_n + 1];

    // x passes
    for zz in 0..nz {
        for yy in 0..ny {
            let row = nx * (yy + ny * zz);
            f[..nx].copy_from_slice(&g[row..row + nx]);
            dt1d(&f[..nx], &mut d[..nx], &mut v, &mut z);
            g[row..row + nx].copy_from_slice(&d[..nx]);
        }
    }
    // y passes
    for zz in 0..nz {
        for xx in 0..nx {
            for yy in 0..ny {
                f[yy] = g[xx + nx * (yy + ny * zz)];
            }
            dt1d(&f[..ny], &mut d[..ny], &mut v, &mut z);
            for yy in 0..ny {
                g[xx + nx * (yy + ny * zz)] = d[yy];
            }
        }
    }
    // z passes
    for yy in 0..ny {
        for xx in 0..nx {
            for zz in 0..nz {
                f[zz] = g[xx + nx * (yy + ny * zz)];
            }
            dt1d(&f[..nz], &mut d[..nz], &mut v, &mut z);
            for zz in 0..nz {
                g[xx + nx * (yy + ny * zz)] = d[zz];
            }
        }
    }
    g
}

/// Signed distance of a binary mask: positive inside, negative outside,
/// magnitude = Euclidean distance to the nearest voxel of the other class.
pub fn signed_distance(mask: &[u8], dims: [usize; 3]) -> Vec<f64> {
    let fg: Vec<bool> = mask.iter().map(|&m| m != 0).collect();
    let bg: Vec<bool> = mask.iter().map(|&m| m == 0).collect();
    let to_bg = squared_distance(&bg, dims);
    let to_fg = squared_distance(&fg, dims);
    mask.iter()
        .enumerate()
        .map(|(i, &m)| {
            if m != 0 {
                to_bg[i].sqrt()
            } else {
                -to_fg[i].sqrt()
            }
        })
        .collect()
}
