//! Anatomically constrained lesion placement: box erosion of a
//! white-matter mask and uniform center selection.

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::volume::LabelMap3;

/// Parameters for center selection.
#[derive(Debug, Clone)]
pub struct PlacementParams {
    /// Per-axis erosion radius; `None` derives it from the lesion
    /// bounding box so the lesion cannot cross the mask boundary.
    pub erosion_radius: Option<[usize; 3]>,
    pub max_draws: usize,
    pub seed: u64,
}

impl Default for PlacementParams {
    fn default() -> Self {
        PlacementParams {
            erosion_radius: None,
            max_draws: 1000,
            seed: 0,
        }
    }
}

/// Erode with an asymmetric box: a voxel survives iff every offset in
/// `[lo, hi]` (per axis, inclusive) lands on a foreground voxel.
///
/// Separable pass per axis; windows reaching outside the grid kill the
/// voxel.
pub fn erode_box(mask: &LabelMap3, lo: [i64; 3], hi: [i64; 3]) -> LabelMap3 {
    let dims = mask.dims();
    let [nx, ny, nz] = dims;
    let mut cur: Vec<u8> = mask.data().iter().map(|&v| u8::from(v != 0)).collect();

    let mut line = Vec::new();
    let mut prefix = Vec::new();
    for axis in 0..3 {
        let len = dims[axis];
        let (lo_a, hi_a) = (lo[axis], hi[axis]);
        debug_assert!(lo_a <= hi_a);
        let (oa, ob, sa, sb, stride) = match axis {
            0 => (ny, nz, nx, nx * ny, 1usize),
            1 => (nx, nz, 1, nx * ny, nx),
            _ => (nx, ny, 1, nx, nx * ny),
        };
        line.resize(len, 0u8);
        prefix.resize(len + 1, 0u32);
        let mut next = cur.clone();
        for b in 0..ob {
            for a in 0..oa {
                let base = a * sa + b * sb;
                for q in 0..len {
                    line[q] = cur[base + q * stride];
                }
                prefix[0] = 0;
                for q in 0..len {
                    prefix[q + 1] = prefix[q] + line[q] as u32;
                }
                for q in 0..len {
                    let w_lo = q as i64 + lo_a;
                    let w_hi = q as i64 + hi_a;
                    let keep = w_lo >= 0
                        && w_hi < len as i64
                        && prefix[w_hi as usize + 1] - prefix[w_lo as usize]
                            == (w_hi - w_lo + 1) as u32;
                    next[base + q * stride] = u8::from(keep);
                }
            }
        }
        cur = next;
    }
    LabelMap3::new(dims, cur).expect("erosion output is binary")
}

/// Symmetric box erosion with per-axis half-extents.
pub fn erode(mask: &LabelMap3, radius_xyz: [usize; 3]) -> LabelMap3 {
    let r = radius_xyz.map(|r| r as i64);
    erode_box(mask, [-r[0], -r[1], -r[2]], r)
}

/// Anchor voxel used when placing a lesion: the floor midpoint of its
/// bounding box.
pub fn bbox_anchor(lo: [usize; 3], hi: [usize; 3]) -> [usize; 3] {
    [
        (lo[0] + hi[0]) / 2,
        (lo[1] + hi[1]) / 2,
        (lo[2] + hi[2]) / 2,
    ]
}

/// Automatic erosion radius: per axis, ceil(half bounding-box extent) + 1.
pub fn auto_radius(lesion_mask: &LabelMap3) -> Result<[usize; 3]> {
    let (lo, hi) = lesion_mask
        .bounding_box()
        .ok_or_else(|| Error::NoValidLocation("lesion mask is empty".to_string()))?;
    Ok([
        (hi[0] - lo[0] + 2) / 2 + 1,
        (hi[1] - lo[1] + 2) / 2 + 1,
        (hi[2] - lo[2] + 2) / 2 + 1,
    ])
}

/// Uniform draw of a lesion center from the eroded white-matter mask.
///
/// The returned center guarantees that the lesion bounding box, anchored
/// at its midpoint, lies inside the white-matter support with a one-voxel
/// margin (hence strictly interior to the grid).
pub fn select_center(
    wm_mask: &LabelMap3,
    lesion_mask: &LabelMap3,
    params: &PlacementParams,
    rng: &mut Stream,
) -> Result<[usize; 3]> {
    select_center_where(wm_mask, lesion_mask, params, rng, |_| true)
}

/// Like [`select_center`] but redraws while `accept` returns false, up to
/// `params.max_draws` times.
pub fn select_center_where(
    wm_mask: &LabelMap3,
    lesion_mask: &LabelMap3,
    params: &PlacementParams,
    rng: &mut Stream,
    accept: impl Fn([usize; 3]) -> bool,
) -> Result<[usize; 3]> {
    if wm_mask.count_foreground() == 0 {
        return Err(Error::NoValidLocation(
            "white-matter mask is empty".to_string(),
        ));
    }
    let radius = match params.erosion_radius {
        Some(r) => r,
        None => auto_radius(lesion_mask)?,
    };
    let eroded = erode(wm_mask, radius);
    let survivors: Vec<usize> = eroded
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0)
        .map(|(i, _)| i)
        .collect();
    if survivors.is_empty() {
        return Err(Error::NoValidLocation(format!(
            "erosion by {radius:?} left no candidate voxel"
        )));
    }
    let dims = wm_mask.dims();
    for _ in 0..params.max_draws.max(1) {
        let v = survivors[rng.uniform_index(survivors.len())];
        let center = [v % dims[0], (v / dims[0]) % dims[1], v / (dims[0] * dims[1])];
        if accept(center) {
            return Ok(center);
        }
    }
    Err(Error::RetryExhausted(format!(
        "no accepted center in {} draws",
        params.max_draws
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_mask(dims: [usize; 3], density: f64, seed: u64) -> LabelMap3 {
        let mut rng = Stream::new(seed);
        LabelMap3::from_fn(dims, |_, _, _| u8::from(rng.next_f64() < density))
    }

    #[test]
    fn zero_radius_is_identity() {
        let m = random_mask([8, 8, 8], 0.5, 1);
        assert_eq!(erode(&m, [0, 0, 0]), m);
    }

    #[test]
    fn full_grid_loses_one_shell() {
        let m = LabelMap3::from_fn([6, 6, 6], |_, _, _| 1);
        let e = erode(&m, [1, 1, 1]);
        for z in 0..6 {
            for y in 0..6 {
                for x in 0..6 {
                    let interior = (1..5).contains(&x) && (1..5).contains(&y) && (1..5).contains(&z);
                    assert_eq!(e.get(x, y, z) == 1, interior, "({x},{y},{z})");
                }
            }
        }
    }

    #[test]
    fn erode_matches_brute_force() {
        let m = random_mask([8, 8, 8], 0.7, 2);
        let r = [1i64, 2, 1];
        let e = erode(&m, [1, 2, 1]);
        for z in 0..8i64 {
            for y in 0..8i64 {
                for x in 0..8i64 {
                    let mut keep = true;
                    'scan: for dz in -r[2]..=r[2] {
                        for dy in -r[1]..=r[1] {
                            for dx in -r[0]..=r[0] {
                                let (px, py, pz) = (x + dx, y + dy, z + dz);
                                if !(0..8).contains(&px)
                                    || !(0..8).contains(&py)
                                    || !(0..8).contains(&pz)
                                    || m.get(px as usize, py as usize, pz as usize) == 0
                                {
                                    keep = false;
                                    break 'scan;
                                }
                            }
                        }
                    }
                    assert_eq!(
                        e.get(x as usize, y as usize, z as usize) == 1,
                        keep,
                        "({x},{y},{z})"
                    );
                }
            }
        }
    }

    #[test]
    fn asymmetric_box_matches_brute_force() {
        let m = random_mask([7, 6, 8], 0.75, 5);
        let lo = [-2i64, 0, -1];
        let hi = [1i64, 2, 0];
        let e = erode_box(&m, lo, hi);
        let dims = [7i64, 6, 8];
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let mut keep = true;
                    'scan: for dz in lo[2]..=hi[2] {
                        for dy in lo[1]..=hi[1] {
                            for dx in lo[0]..=hi[0] {
                                let (px, py, pz) = (x + dx, y + dy, z + dz);
                                if !(0..dims[0]).contains(&px)
                                    || !(0..dims[1]).contains(&py)
                                    || !(0..dims[2]).contains(&pz)
                                    || m.get(px as usize, py as usize, pz as usize) == 0
                                {
                                    keep = false;
                                    break 'scan;
                                }
                            }
                        }
                    }
                    assert_eq!(e.get(x as usize, y as usize, z as usize) == 1, keep);
                }
            }
        }
    }

    fn centered_lesion(dims: [usize; 3], extent: [usize; 3]) -> LabelMap3 {
        LabelMap3::from_fn(dims, |x, y, z| {
            let c = [dims[0] / 2, dims[1] / 2, dims[2] / 2];
            let inside = (0..3).all(|a| {
                let v = [x, y, z][a];
                v >= c[a] - extent[a] / 2 && v < c[a] - extent[a] / 2 + extent[a]
            });
            u8::from(inside)
        })
    }

    #[test]
    fn center_never_near_face() {
        // full grid minus faces, 3x3x3 lesion: center stays >= 2 from faces
        let wm = LabelMap3::from_fn([16, 16, 16], |x, y, z| {
            u8::from(
                x > 0 && y > 0 && z > 0 && x < 15 && y < 15 && z < 15,
            )
        });
        let lesion = centered_lesion([9, 9, 9], [3, 3, 3]);
        let params = PlacementParams::default();
        let mut rng = Stream::new(3);
        for _ in 0..1000 {
            let c = select_center(&wm, &lesion, &params, &mut rng).unwrap();
            for a in 0..3 {
                assert!(c[a] >= 2 && c[a] <= 13, "center {c:?}");
            }
        }
    }

    #[test]
    fn single_survivor_always_returned() {
        // wm is a box sized exactly to leave one survivor for radius 2
        let wm = LabelMap3::from_fn([12, 12, 12], |x, y, z| {
            u8::from((3..8).contains(&x) && (3..8).contains(&y) && (3..8).contains(&z))
        });
        let params = PlacementParams {
            erosion_radius: Some([2, 2, 2]),
            ..Default::default()
        };
        let lesion = centered_lesion([5, 5, 5], [3, 3, 3]);
        let mut rng = Stream::new(8);
        for _ in 0..50 {
            assert_eq!(
                select_center(&wm, &lesion, &params, &mut rng).unwrap(),
                [5, 5, 5]
            );
        }
    }

    #[test]
    fn empty_wm_mask_rejected() {
        let wm = LabelMap3::zeros([8, 8, 8]);
        let lesion = centered_lesion([5, 5, 5], [3, 3, 3]);
        let mut rng = Stream::new(0);
        assert!(matches!(
            select_center(&wm, &lesion, &PlacementParams::default(), &mut rng),
            Err(Error::NoValidLocation(_))
        ));
    }

    #[test]
    fn over_eroded_mask_rejected() {
        let wm = LabelMap3::from_fn([8, 8, 8], |x, _, _| u8::from(x == 4));
        let lesion = centered_lesion([5, 5, 5], [3, 3, 3]);
        let mut rng = Stream::new(0);
        assert!(matches!(
            select_center(&wm, &lesion, &PlacementParams::default(), &mut rng),
            Err(Error::NoValidLocation(_))
        ));
    }

    #[test]
    fn uniform_over_two_survivors() {
        // two disjoint 5x5x5 wm islands, each eroding to one survivor
        let wm = LabelMap3::from_fn([16, 8, 8], |x, y, z| {
            let in_a = (1..6).contains(&x) && (1..6).contains(&y) && (1..6).contains(&z);
            let in_b = (9..14).contains(&x) && (1..6).contains(&y) && (1..6).contains(&z);
            u8::from(in_a || in_b)
        });
        let params = PlacementParams {
            erosion_radius: Some([2, 2, 2]),
            ..Default::default()
        };
        let lesion = centered_lesion([5, 5, 5], [3, 3, 3]);
        let mut rng = Stream::new(17);
        let mut hits_a = 0u32;
        let n = 10_000;
        for _ in 0..n {
            let c = select_center(&wm, &lesion, &params, &mut rng).unwrap();
            assert!(c == [3, 3, 3] || c == [11, 3, 3], "unexpected center {c:?}");
            if c == [3, 3, 3] {
                hits_a += 1;
            }
        }
        let frac = hits_a as f64 / n as f64;
        assert!((0.45..=0.55).contains(&frac), "frequency {frac}");
    }

    #[test]
    fn containment_exhaustive_on_random_fixtures() {
        for seed in 0..25u64 {
            let mut rng = Stream::new(seed);
            let wm = random_mask([14, 14, 14], 0.85, seed + 1000);
            if wm.count_foreground() == 0 {
                continue;
            }
            // random small lesion blob
            let lesion = {
                let e = [
                    1 + rng.uniform_index(4),
                    1 + rng.uniform_index(4),
                    1 + rng.uniform_index(4),
                ];
                centered_lesion([9, 9, 9], e)
            };
            let mut draw_rng = Stream::new(seed + 2000);
            let params = PlacementParams::default();
            match select_center(&wm, &lesion, &params, &mut draw_rng) {
                Ok(center) => {
                    let (lo, hi) = lesion.bounding_box().unwrap();
                    let anchor = bbox_anchor(lo, hi);
                    for z in lo[2]..=hi[2] {
                        for y in lo[1]..=hi[1] {
                            for x in lo[0]..=hi[0] {
                                if lesion.get(x, y, z) == 0 {
                                    continue;
                                }
                                let hx = center[0] as i64 + x as i64 - anchor[0] as i64;
                                let hy = center[1] as i64 + y as i64 - anchor[1] as i64;
                                let hz = center[2] as i64 + z as i64 - anchor[2] as i64;
                                assert!(
                                    (1..13).contains(&hx)
                                        && (1..13).contains(&hy)
                                        && (1..13).contains(&hz),
                                    "seed {seed}: voxel escapes interior"
                                );
                                assert_eq!(
                                    wm.get(hx as usize, hy as usize, hz as usize),
                                    1,
                                    "seed {seed}: voxel outside wm support"
                                );
                            }
                        }
                    }
                }
                Err(Error::NoValidLocation(_)) => {}
                Err(e) => panic!("seed {seed}: {e}"),
            }
        }
    }
}
