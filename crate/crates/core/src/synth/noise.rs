//! Counter-based deterministic randomness: hashing and a smooth value-noise
//! field anchored in world coordinates, so augmentations are pure functions
//! of (seed, position) regardless of evaluation order.

/// splitmix64 finalizer; good enough avalanche for procedural keys.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

pub fn hash2(seed: u64, a: u64, b: u64) -> u64 {
    mix(seed ^ mix(a).wrapping_mul(3) ^ mix(b).wrapping_mul(7))
}

pub fn hash3(seed: u64, a: u64, b: u64, c: u64) -> u64 {
    mix(hash2(seed, a, b) ^ mix(c).wrapping_mul(13))
}

/// Uniform in [0, 1).
pub fn unit_f64(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    unit_f64(hash2(seed, ix as u64, iy as u64))
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Bilinear value noise with one octave of detail, range [0, 1).
///
/// `scale` is the feature size in the same units as (x, y).
pub fn value_noise(seed: u64, x: f64, y: f64, scale: f64) -> f64 {
    let sample = |seed: u64, x: f64, y: f64| {
        let fx = x.floor();
        let fy = y.floor();
        let (ix, iy) = (fx as i64, fy as i64);
        let (tx, ty) = (smooth(x - fx), smooth(y - fy));
        let v00 = lattice(seed, ix, iy);
        let v10 = lattice(seed, ix + 1, iy);
        let v01 = lattice(seed, ix, iy + 1);
        let v11 = lattice(seed, ix + 1, iy + 1);
        let a = v00 + (v10 - v00) * tx;
        let b = v01 + (v11 - v01) * tx;
        a + (b - a) * ty
    };
    let base = sample(seed, x / scale, y / scale);
    let detail = sample(mix(seed ^ 0xabcd), 2.0 * x / scale, 2.0 * y / scale);
    (base * 0.75 + detail * 0.25).clamp(0.0, 1.0 - 1e-12)
}
