//! Procedural aerial scenes: textured ground crossed by thin gray roads.

use crate::error::{domain_err, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::Sample;

/// Roads never cover more than this fraction of a scene.
pub const MAX_FOREGROUND_FRACTION: f64 = 0.35;

const GROUND_PALETTE: [[f64; 3]; 6] = [
    [0.22, 0.32, 0.16], // forest
    [0.38, 0.43, 0.22], // grass
    [0.45, 0.36, 0.24], // soil
    [0.58, 0.50, 0.36], // dry field
    [0.30, 0.26, 0.20], // dark earth
    [0.50, 0.46, 0.30], // scrub
];

/// Multi-octave value noise in `[0, 1]`, smoothstep-interpolated.
fn value_noise(size: usize, rng: &mut Rng) -> Vec<f64> {
    let mut out = vec![0.0; size * size];
    let mut amp = 1.0;
    let mut total = 0.0;
    let mut cells = 3;
    for _ in 0..4 {
        let lattice: Vec<f64> = (0..(cells + 1) * (cells + 1)).map(|_| rng.uniform()).collect();
        let at = |gx: usize, gy: usize| lattice[gy * (cells + 1) + gx];
        let scale = cells as f64 / size as f64;
        for y in 0..size {
            let fy = (y as f64 + 0.5) * scale;
            let (gy, ty) = (fy.floor() as usize, fy.fract());
            let sy = ty * ty * (3.0 - 2.0 * ty);
            for x in 0..size {
                let fx = (x as f64 + 0.5) * scale;
                let (gx, tx) = (fx.floor() as usize, fx.fract());
                let sx = tx * tx * (3.0 - 2.0 * tx);
                let top = at(gx, gy) * (1.0 - sx) + at(gx + 1, gy) * sx;
                let bottom = at(gx, gy + 1) * (1.0 - sx) + at(gx + 1, gy + 1) * sx;
                out[y * size + x] += amp * (top * (1.0 - sy) + bottom * sy);
            }
        }
        total += amp;
        amp *= 0.5;
        cells *= 2;
    }
    for v in &mut out {
        *v /= total;
    }
    out
}

/// A point on one of the four frame edges, pushed slightly outside so the
/// road visibly leaves the image.
fn edge_point(edge: u64, size: f64, rng: &mut Rng) -> (f64, f64) {
    let t = rng.range(0.1, 0.9) * size;
    match edge {
        0 => (t, -2.0),
        1 => (size + 2.0, t),
        2 => (t, size + 2.0),
        _ => (-2.0, t),
    }
}

fn bezier(p0: (f64, f64), p1: (f64, f64), p2: (f64, f64), t: f64) -> (f64, f64) {
    let u = 1.0 - t;
    (
        u * u * p0.0 + 2.0 * u * t * p1.0 + t * t * p2.0,
        u * u * p0.1 + 2.0 * u * t * p1.1 + t * t * p2.1,
    )
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

/// Marks every pixel whose center lies within `width / 2` of the polyline.
fn rasterize(polyline: &[(f64, f64)], width: f64, size: usize) -> Vec<bool> {
    let mut hit = vec![false; size * size];
    let half = width / 2.0;
    let clampi = |v: f64| v.max(0.0).min(size as f64 - 1.0) as usize;
    for seg in polyline.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let (x0, x1) = (a.0.min(b.0) - half - 1.0, a.0.max(b.0) + half + 1.0);
        let (y0, y1) = (a.1.min(b.1) - half - 1.0, a.1.max(b.1) + half + 1.0);
        if x1 < 0.0 || y1 < 0.0 || x0 > size as f64 || y0 > size as f64 {
            continue;
        }
        for y in clampi(y0)..=clampi(y1) {
            for x in clampi(x0)..=clampi(x1) {
                if segment_distance((x as f64 + 0.5, y as f64 + 0.5), a, b) < half {
                    hit[y * size + x] = true;
                }
            }
        }
    }
    hit
}

/// Generates one scene. Entirely determined by `(seed, size)`.
///
/// The ground is multi-octave value noise mapped between two jittered
/// earth tones, plus per-pixel speckle. One to four quadratic Bézier roads
/// run between two different frame edges, 2–5 px wide, painted in a
/// light gray with noise. Roads that would push the foreground past
/// [`MAX_FOREGROUND_FRACTION`] are skipped; the first road is narrowed
/// instead so every scene has some foreground.
pub fn generate_road_scene(seed: u64, size: usize) -> Result<Sample> {
    if size < 32 || !size.is_multiple_of(8) {
        return Err(domain_err!("scene size {size} must be ≥ 32 and divisible by 8"));
    }
    let mut rng = Rng::new(seed);
    let n = size * size;

    let noise = value_noise(size, &mut rng);
    let a = rng.below(GROUND_PALETTE.len() as u64) as usize;
    let b = (a + 1 + rng.below(GROUND_PALETTE.len() as u64 - 1) as usize) % GROUND_PALETTE.len();
    let tint = |c: [f64; 3], rng: &mut Rng| c.map(|v| v + rng.range(-0.05, 0.05));
    let (c0, c1) = (tint(GROUND_PALETTE[a], &mut rng), tint(GROUND_PALETTE[b], &mut rng));
    let mut rgb = vec![[0.0f64; 3]; n];
    for (px, &t) in rgb.iter_mut().zip(&noise) {
        for ch in 0..3 {
            px[ch] = c0[ch] * (1.0 - t) + c1[ch] * t + rng.normal() * 0.03;
        }
    }

    let mut mask = vec![false; n];
    let mut covered = 0usize;
    let roads = rng.int_inclusive(1, 4);
    let s = size as f64;
    for road in 0..roads {
        let e0 = rng.below(4);
        let e1 = (e0 + 1 + rng.below(3)) % 4;
        let p0 = edge_point(e0, s, &mut rng);
        let p2 = edge_point(e1, s, &mut rng);
        let p1 = (rng.range(0.2, 0.8) * s, rng.range(0.2, 0.8) * s);
        let mut width = rng.int_inclusive(2, 5);
        let gray = rng.range(0.6, 0.85);
        let steps = 4 * size;
        let polyline: Vec<_> = (0..=steps)
            .map(|i| bezier(p0, p1, p2, i as f64 / steps as f64))
            .collect();
        loop {
            let hit = rasterize(&polyline, width as f64, size);
            let added = hit.iter().zip(&mask).filter(|&(&h, &m)| h && !m).count();
            let fraction = (covered + added) as f64 / n as f64;
            if fraction <= MAX_FOREGROUND_FRACTION && (added > 0 || road > 0) {
                for i in 0..n {
                    if hit[i] && !mask[i] {
                        mask[i] = true;
                        let shade = gray + rng.normal() * 0.03;
                        rgb[i] = [0, 1, 2].map(|_| shade + rng.normal() * 0.015);
                    }
                }
                covered += added;
                break;
            }
            if road > 0 || width == 1 {
                break;
            }
            width -= 1;
        }
    }

    let mut image = Vec::with_capacity(3 * n);
    for ch in 0..3 {
        image.extend(rgb.iter().map(|px| px[ch].clamp(0.0, 1.0) as f32));
    }
    Ok(Sample {
        image: Tensor::from_vec([1, 3, size, size], image)?,
        mask: Tensor::from_vec([1, 1, size, size], mask.iter().map(|&m| m as u8 as f32).collect())?,
        seed,
    })
}
