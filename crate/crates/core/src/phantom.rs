//! Deterministic synthetic test scene.
//!
//! A photographer-on-a-field composition: a bright sky over a skyline,
//! a grassy field with fine grain, and a dark coated figure filling most
//! of the left half holding a camera on a light tripod. It has large flat
//! regions, sharp edges, corners, thin structures, texture and smooth
//! gradients. Each pixel is the mean of a 3×3 grid of point samples of
//! the formula below, so edges are anti-aliased.

use crate::image::GrayImage;

fn in_ellipse(u: f64, v: f64, cu: f64, cv: f64, au: f64, av: f64) -> bool {
    let (a, b) = ((u - cu) / au, (v - cv) / av);
    a * a + b * b <= 1.0
}

fn in_rect(u: f64, v: f64, u0: f64, u1: f64, v0: f64, v1: f64) -> bool {
    (u0..=u1).contains(&u) && (v0..=v1).contains(&v)
}

/// Distance from `(u, v)` to the segment `a → b`.
fn seg_dist(u: f64, v: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let t = (((u - a.0) * dx + (v - a.1) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    let (px, py) = (a.0 + t * dx - u, a.1 + t * dy - v);
    px.hypot(py)
}

/// Lattice value in `[-1, 1]` from an integer hash.
fn lattice(i: i64, j: i64, salt: u64) -> f64 {
    let mut h = (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (j as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ salt.wrapping_mul(0x1656_67B1_9E37_79F9);
    h ^= h >> 29;
    h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h ^= h >> 32;
    (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

/// Bilinearly interpolated lattice noise with `freq` cells per unit.
fn value_noise(u: f64, v: f64, freq: f64, salt: u64) -> f64 {
    let (x, y) = (u * freq, v * freq);
    let (i, j) = (x.floor(), y.floor());
    let (fx, fy) = (x - i, y - j);
    let (i, j) = (i as i64, j as i64);
    let a = lattice(i, j, salt) * (1.0 - fx) + lattice(i + 1, j, salt) * fx;
    let b = lattice(i, j + 1, salt) * (1.0 - fx) + lattice(i + 1, j + 1, salt) * fx;
    a * (1.0 - fy) + b * fy
}

fn sky_and_field(u: f64, v: f64) -> f64 {
    let horizon = 0.455;
    if v < horizon {
        return 0.84 - 0.12 * v + 0.015 * value_noise(u, v, 6.0, 1);
    }
    let grain = 0.26 * value_noise(u, v, 300.0, 2) + 0.05 * value_noise(u, v, 60.0, 3);
    0.53 + 0.06 * (v - horizon) + 0.03 * value_noise(u, v, 5.0, 4) + grain
}

fn skyline(u: f64, v: f64) -> Option<f64> {
    if in_rect(u, v, 0.795, 0.835, 0.24, 0.455) {
        let row = ((v - 0.26) / 0.02).fract();
        return Some(if v > 0.26 && row < 0.35 && (0.80..0.83).contains(&u) {
            0.62
        } else {
            0.90
        });
    }
    if in_ellipse(u, v, 0.72, 0.38, 0.05, 0.035) || in_rect(u, v, 0.67, 0.77, 0.38, 0.455) {
        return Some(0.88);
    }
    let blocks = [
        (0.0, 0.07, 0.38, 0.70),
        (0.60, 0.66, 0.41, 0.55),
        (0.85, 0.92, 0.395, 0.66),
        (0.92, 1.0, 0.42, 0.50),
        (0.07, 0.12, 0.41, 0.60),
        (0.66, 0.67, 0.36, 0.35),
        (0.765, 0.79, 0.33, 0.45),
        (0.835, 0.85, 0.37, 0.40),
    ];
    for (i, &(u0, u1, v0, val)) in blocks.iter().enumerate() {
        if in_rect(u, v, u0, u1, v0, 0.455) {
            let stripe = ((u - u0) / 0.012).fract() < 0.4 && v > v0 + 0.01;
            return Some(if stripe { val - 0.18 + 0.02 * i as f64 } else { val });
        }
    }
    let poles = [0.13, 0.18, 0.645, 0.88, 0.955];
    if v > 0.40 && v < 0.455 && poles.iter().any(|&p| (u - p).abs() < 0.003) {
        return Some(0.25);
    }
    None
}

fn figure(u: f64, v: f64) -> Option<f64> {
    // Head: dark hair over a mid-grey face.
    if in_ellipse(u, v, 0.43, 0.205, 0.062, 0.085) {
        if v < 0.19 || u < 0.40 {
            return Some(0.05);
        }
        return Some(if in_ellipse(u, v, 0.462, 0.23, 0.012, 0.008) {
            0.12
        } else {
            0.40
        });
    }
    // Camera body, lens and the hands holding it.
    if in_rect(u, v, 0.50, 0.62, 0.27, 0.355) {
        return Some(if in_rect(u, v, 0.52, 0.60, 0.29, 0.33) {
            0.62
        } else {
            0.76
        });
    }
    if in_rect(u, v, 0.62, 0.665, 0.285, 0.335) {
        return Some(0.55);
    }
    if in_ellipse(u, v, 0.60, 0.39, 0.045, 0.035) || in_ellipse(u, v, 0.48, 0.37, 0.04, 0.03) {
        return Some(0.09);
    }
    // Shirt collar.
    if (u - 0.345).abs() < 0.03 - 0.5 * (v - 0.30) && (0.30..0.36).contains(&v) {
        return Some(0.86);
    }
    // Coat: torso, arm reaching for the camera and a border-to-border hem.
    let torso = in_ellipse(u, v, 0.14, 0.72, 0.24, 0.46) && v > 0.29;
    let shoulder = in_ellipse(u, v, 0.26, 0.38, 0.17, 0.11);
    let arm = seg_dist(u, v, (0.30, 0.40), (0.55, 0.44)) < 0.07;
    let hem = u < 0.2 && v > 0.55;
    if torso || shoulder || arm || hem {
        let folds = [
            ((0.20, 0.45), (0.10, 0.95)),
            ((0.30, 0.50), (0.25, 0.90)),
            ((0.36, 0.43), (0.52, 0.47)),
        ];
        if folds.iter().any(|&(a, b)| seg_dist(u, v, a, b) < 0.004) {
            return Some(0.22);
        }
        return Some(0.09 + 0.04 * value_noise(u, v, 30.0, 5) + 0.07 * value_noise(u, v, 300.0, 6));
    }
    None
}

fn tripod(u: f64, v: f64) -> Option<f64> {
    let top = (0.57, 0.43);
    let legs = [(0.46, 0.96), (0.565, 0.99), (0.77, 0.93)];
    if legs.iter().any(|&b| seg_dist(u, v, top, b) < 0.0075) || seg_dist(u, v, top, (0.57, 0.70)) < 0.009 {
        // Metal tubes: light with a dark shadow line.
        return Some(if legs.iter().any(|&b| seg_dist(u, v, top, b) < 0.0022) {
            0.30
        } else {
            0.74
        });
    }
    if seg_dist(u, v, (0.60, 0.60), (0.66, 0.58)) < 0.005 {
        return Some(0.08);
    }
    None
}

/// Scene intensity at `u = col / width`, `v = row / height`.
pub fn scene(u: f64, v: f64) -> f64 {
    let back = skyline(u, v).unwrap_or_else(|| sky_and_field(u, v));
    tripod(u, v).or_else(|| figure(u, v)).unwrap_or(back).clamp(0.0, 1.0)
}

/// The scene rasterised at `height × width`.
pub fn phantom(height: usize, width: usize) -> GrayImage {
    const SUB: usize = 3;
    GrayImage::from_fn(height, width, |r, c| {
        let mut acc = 0.0;
        for i in 0..SUB {
            for j in 0..SUB {
                let v = (r as f64 + (i as f64 + 0.5) / SUB as f64 - 0.5) / height as f64;
                let u = (c as f64 + (j as f64 + 0.5) / SUB as f64 - 0.5) / width as f64;
                acc += scene(u, v);
            }
        }
        acc / (SUB * SUB) as f64
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = phantom(64, 64);
        assert_eq!(a, phantom(64, 64));
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let mean = a.data().iter().sum::<f64>() / a.len() as f64;
        assert!(mean > 0.3 && mean < 0.7);
    }

    #[test]
    fn has_dark_coat_bright_sky_and_midtone_field() {
        let a = phantom(256, 256);
        assert!(a.get(200, 20) < 0.2);
        assert!(a.get(20, 20) > 0.7);
        let field = (200..230).flat_map(|r| (190..220).map(move |c| (r, c)));
        let mean = field.map(|(r, c)| a.get(r, c)).sum::<f64>() / 900.0;
        assert!((0.45..0.65).contains(&mean));
    }
}
