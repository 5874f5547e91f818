//! A small grayscale rasterizer: polygon fill, anti-aliased strokes, dash
//! patterns, stripe fills and per-pixel augmentation hooks.

use crate::geom::{point_segment_distance, Point2};

/// Stroke half-width in pixels; markings and the foreground mask are 2 px
/// wide.
pub const STROKE_HALF_WIDTH_PX: f64 = 1.0;
/// Anti-aliasing transition width in pixels. Kept narrow so a binarized
/// render agrees with the binary mask almost exactly.
pub const AA_WIDTH_PX: f64 = 0.25;

/// Row-major grayscale image in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Raster {
    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Blend `target` over the pixel with coverage `cov` in [0, 1].
    #[inline]
    pub fn blend(&mut self, x: usize, y: usize, target: f32, cov: f32) {
        let v = self.get(x, y);
        self.set(x, y, v + (target - v) * cov);
    }

    fn clamp_range(&self, lo: f64, hi: f64, max: usize) -> (usize, usize) {
        let a = lo.floor().max(0.0) as usize;
        let b = (hi.ceil() as i64).clamp(0, max as i64) as usize;
        (a.min(max), b)
    }

    /// Even-odd polygon fill, hard-edged (pixel-center sampling).
    pub fn fill_polygon(&mut self, ring: &[Point2], value: f32) {
        if ring.len() < 3 {
            return;
        }
        let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in ring {
            y0 = y0.min(p.y);
            y1 = y1.max(p.y);
        }
        let (ya, yb) = self.clamp_range(y0, y1, self.height);
        let n = ring.len();
        for y in ya..yb {
            let py = y as f64 + 0.5;
            // Gather crossings of the scanline.
            let mut xs: Vec<f64> = Vec::new();
            for i in 0..n {
                let a = ring[i];
                let b = ring[(i + 1) % n];
                if (a.y > py) != (b.y > py) {
                    xs.push(a.x + (py - a.y) / (b.y - a.y) * (b.x - a.x));
                }
            }
            xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
            for pair in xs.chunks(2) {
                if pair.len() < 2 {
                    break;
                }
                let (xa, xb) = self.clamp_range(pair[0] - 0.5, pair[1] - 0.5, self.width);
                for x in xa..xb {
                    self.set(x, y, value);
                }
            }
        }
    }

    /// Anti-aliased stroke along a point chain. `paint` receives pixel
    /// coordinates and coverage and decides the final blend (allowing
    /// per-pixel erasure for wear).
    pub fn stroke_chain<F: FnMut(&mut Raster, usize, usize, f32)>(
        &mut self,
        pts: &[Point2],
        half_width: f64,
        mut paint: F,
    ) {
        // Coverage is the max over segments, accumulated sparsely to avoid
        // double-blending at segment joints.
        let mut cov_map: std::collections::HashMap<(usize, usize), f32> =
            std::collections::HashMap::new();
        let reach = half_width + AA_WIDTH_PX;
        for w in pts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (xa, xb) = self.clamp_range(a.x.min(b.x) - reach - 0.5, a.x.max(b.x) + reach - 0.5, self.width);
            let (ya, yb) = self.clamp_range(a.y.min(b.y) - reach - 0.5, a.y.max(b.y) + reach - 0.5, self.height);
            for y in ya..yb {
                for x in xa..xb {
                    let p = Point2::new(x as f64 + 0.5, y as f64 + 0.5);
                    let d = point_segment_distance(p, a, b);
                    let cov = ((half_width + AA_WIDTH_PX * 0.5 - d) / AA_WIDTH_PX).clamp(0.0, 1.0);
                    if cov > 0.0 {
                        let e = cov_map.entry((x, y)).or_insert(0.0);
                        *e = e.max(cov as f32);
                    }
                }
            }
        }
        for ((x, y), cov) in cov_map {
            paint(self, x, y, cov);
        }
    }

    /// Binary stroke into a mask buffer: set pixels within `half_width`.
    pub fn stroke_mask(mask: &mut [u8], width: usize, height: usize, pts: &[Point2], half_width: f64) {
        for w in pts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let x_lo = (a.x.min(b.x) - half_width - 1.0).floor().max(0.0) as usize;
            let x_hi = ((a.x.max(b.x) + half_width + 1.0).ceil() as i64).clamp(0, width as i64) as usize;
            let y_lo = (a.y.min(b.y) - half_width - 1.0).floor().max(0.0) as usize;
            let y_hi = ((a.y.max(b.y) + half_width + 1.0).ceil() as i64).clamp(0, height as i64) as usize;
            for y in y_lo..y_hi {
                for x in x_lo..x_hi {
                    let p = Point2::new(x as f64 + 0.5, y as f64 + 0.5);
                    if point_segment_distance(p, a, b) <= half_width {
                        mask[y * width + x] = 1;
                    }
                }
            }
        }
    }

    /// Filled ellipse, hard-edged.
    pub fn fill_ellipse(&mut self, center: Point2, rx: f64, ry: f64, theta: f64, value: f32) {
        let reach = rx.max(ry);
        let (xa, xb) = self.clamp_range(center.x - reach - 0.5, center.x + reach - 0.5 + 1.0, self.width);
        let (ya, yb) = self.clamp_range(center.y - reach - 0.5, center.y + reach - 0.5 + 1.0, self.height);
        let (s, c) = theta.sin_cos();
        for y in ya..yb {
            for x in xa..xb {
                let p = Point2::new(x as f64 + 0.5 - center.x, y as f64 + 0.5 - center.y);
                let u = (c * p.x + s * p.y) / rx;
                let v = (-s * p.x + c * p.y) / ry;
                if u * u + v * v <= 1.0 {
                    self.set(x, y, value);
                }
            }
        }
    }

    /// Add clipped Gaussian noise, deterministic in `seed`.
    pub fn add_gaussian_noise(&mut self, seed: u64, sigma: f32) {
        for i in 0..self.data.len() {
            // Box-Muller from two counter-hashed uniforms.
            let u1 = super::noise::unit_f64(super::noise::hash2(seed, i as u64, 0)).max(1e-12);
            let u2 = super::noise::unit_f64(super::noise::hash2(seed, i as u64, 1));
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            self.data[i] = (self.data[i] + sigma * z as f32).clamp(0.0, 1.0);
        }
    }

    /// Quantize to 8-bit grayscale bytes (what the PNG writer stores).
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect()
    }

    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Self {
        Self {
            width,
            height,
            data: bytes.iter().map(|b| *b as f32 / 255.0).collect(),
        }
    }
}

/// Split a point chain into dash segments of `on` length separated by `off`
/// length, walking by arc length.
pub fn dash_chain(pts: &[Point2], on: f64, off: f64) -> Vec<Vec<Point2>> {
    let mut dashes = Vec::new();
    let mut current: Vec<Point2> = Vec::new();
    let mut painting = true;
    let mut remaining = on;
    for w in pts.windows(2) {
        let (mut a, b) = (w[0], w[1]);
        let mut seg_len = a.dist(b);
        while seg_len > remaining {
            let t = remaining / seg_len;
            let cut = a + (b - a).scale(t);
            if painting {
                current.push(a);
                current.push(cut);
                dashes.push(std::mem::take(&mut current));
            }
            a = cut;
            seg_len -= remaining;
            painting = !painting;
            remaining = if painting { on } else { off };
        }
        if painting {
            current.push(a);
        }
        remaining -= seg_len;
    }
    if painting {
        current.push(*pts.last().unwrap());
        if current.len() >= 2 {
            dashes.push(current);
        }
    }
    dashes
}
