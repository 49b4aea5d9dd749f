//! Classic 3D gradient (Perlin) noise.
//!
//! Corner gradients come from hashing the lattice coordinates with the
//! stream seed instead of a permutation table, so the lattice is unbounded
//! and the field is a pure function of `(seed, position)`. Values vanish
//! exactly on lattice nodes and stay within [-1, 1].

use crate::rng::hash64;

#[inline]
fn fade(t: f64) -> f64 {
    t * t * t * (t * (6.0 * t - 15.0) + 10.0)
}

#[inline]
fn lerp(t: f64, a: f64, b: f64) -> f64 {
    a + t * (b - a)
}

/// Dot product with one of the 12 cube-edge gradient directions.
#[inline]
fn grad(h: u64, x: f64, y: f64, z: f64) -> f64 {
    match h & 15 {
        0 | 12 => x + y,
        1 | 14 => y - x,
        2 => x - y,
        3 => -x - y,
        4 => x + z,
        5 => z - x,
        6 => x - z,
        7 => -x - z,
        8 => y + z,
        9 | 13 => z - y,
        10 => y - z,
        11 | 15 => -y - z,
        _ => unreachable!(),
    }
}

#[inline]
fn corner_hash(seed: u64, x: i64, y: i64, z: i64) -> u64 {
    hash64(&[seed, x as u64, y as u64, z as u64])
}

/// Single-octave gradient noise at a point in lattice units.
pub fn perlin3(seed: u64, x: f64, y: f64, z: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let z0 = z.floor();
    let xi = x0 as i64;
    let yi = y0 as i64;
    let zi = z0 as i64;
    let xf = x - x0;
    let yf = y - y0;
    let zf = z - z0;

    let u = fade(xf);
    let v = fade(yf);
    let w = fade(zf);

    let g = |dx: i64, dy: i64, dz: i64, ox: f64, oy: f64, oz: f64| {
        grad(
            corner_hash(seed, xi + dx, yi + dy, zi + dz),
            xf - ox,
            yf - oy,
            zf - oz,
        )
    };

    let raw = lerp(
        w,
        lerp(
            v,
            lerp(u, g(0, 0, 0, 0.0, 0.0, 0.0), g(1, 0, 0, 1.0, 0.0, 0.0)),
            lerp(u, g(0, 1, 0, 0.0, 1.0, 0.0), g(1, 1, 0, 1.0, 1.0, 0.0)),
        ),
        lerp(
            v,
            lerp(u, g(0, 0, 1, 0.0, 0.0, 1.0), g(1, 0, 1, 1.0, 0.0, 1.0)),
            lerp(u, g(0, 1, 1, 0.0, 1.0, 1.0), g(1, 1, 1, 1.0, 1.0, 1.0)),
        ),
    );
    // edge gradients bound |raw| by sqrt(3)/2; rescale into [-1, 1]
    (raw * (2.0 / 3.0f64.sqrt())).clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_on_lattice_nodes() {
        for seed in 0..5u64 {
            for &(x, y, z) in &[(0i64, 0, 0), (1, 2, 3), (-4, 7, 0), (100, -50, 25)] {
                let v = perlin3(seed, x as f64, y as f64, z as f64);
                assert_eq!(v, 0.0, "seed {seed} node ({x},{y},{z})");
            }
        }
    }

    #[test]
    fn bounded_and_nontrivial() {
        let mut max_abs: f64 = 0.0;
        let mut rng = crate::rng::Stream::new(11);
        for _ in 0..200_000 {
            let x = rng.uniform(-20.0, 20.0);
            let y = rng.uniform(-20.0, 20.0);
            let z = rng.uniform(-20.0, 20.0);
            let v = perlin3(3, x, y, z);
            assert!(v.is_finite());
            max_abs = max_abs.max(v.abs());
        }
        assert!(max_abs <= 1.0, "out of range: {max_abs}");
        assert!(max_abs > 0.3, "suspiciously flat: {max_abs}");
    }

    #[test]
    fn deterministic_in_seed() {
        assert_eq!(perlin3(1, 0.3, 0.7, 0.1), perlin3(1, 0.3, 0.7, 0.1));
        assert_ne!(perlin3(1, 0.3, 0.7, 0.1), perlin3(2, 0.3, 0.7, 0.1));
    }

    #[test]
    fn continuous_across_cell_borders() {
        let seed = 9;
        let eps = 1e-6;
        for &t in &[1.0f64, 2.0, 5.0] {
            let below = perlin3(seed, t - eps, 0.4, 0.6);
            let above = perlin3(seed, t + eps, 0.4, 0.6);
            assert!((below - above).abs() < 1e-4, "jump at x={t}");
        }
    }
}
