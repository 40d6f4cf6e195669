//! Unit geodesic ball convolution by heat diffusion and stencil flow.
//!
//! For each output pixel a Dirac image is diffused with spatially varying
//! Finsler–Gauss stamps built from the dual metric. A stencil of points near
//! the pixel then flows along `-∇δ/‖∇δ‖`, and the convolution averages the
//! image at the flowed points. Times are in pixel units and the per-step
//! stamp uses time `dt`.
//!
//! This is slow by nature: it costs one local diffusion per output pixel, so
//! [`ugb_convolve`] refuses images above a pixel budget.

use crate::conv::{convolve, KernelWeights, MetricField, SupportProvider};
use crate::error::{Error, Result};
use crate::image::{sobel_gradient, GradientField, GrayImage, PaddingMode};
use crate::metric::{RandersParams, Vec2};
use crate::par;
use crate::sampling::{KernelSupport, PolarSamples, PolarScheme};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UgbConfig {
    pub dt: f64,
    pub t_end: f64,
    pub s0: f64,
    /// Stamp truncation radius; `None` picks [`auto_radius`] over the field.
    pub kernel_radius: Option<usize>,
    pub pixel_budget: usize,
}

impl Default for UgbConfig {
    fn default() -> Self {
        UgbConfig {
            dt: 0.01,
            t_end: 0.1,
            s0: 2.0,
            kernel_radius: None,
            pixel_budget: 128 * 128,
        }
    }
}

impl UgbConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.dt > 0.0
            && self.dt.is_finite()
            && self.t_end >= 0.0
            && self.t_end.is_finite()
            && (self.t_end == 0.0 || self.dt <= self.t_end * (1.0 + 1e-12))
            && self.s0 > 0.0
            && self.kernel_radius != Some(0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid UGB config {self:?}")))
        }
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

/// `ceil(3 √(2 t_end) √λ_max(M*))`, at least 2.
pub fn auto_radius(dual: &RandersParams, t_end: f64) -> usize {
    let (_, hi) = dual.m().eigenvalues();
    let r = (3.0 * (2.0 * t_end).sqrt() * hi.max(0.0).sqrt()).ceil();
    (r as usize).max(2)
}

/// Normalised `(2r+1)²` stamp, row-major with `dy` outer.
#[derive(Clone, Debug, PartialEq)]
pub struct Stamp {
    radius: usize,
    weights: Vec<f64>,
}

impl Stamp {
    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight at column offset `dx`, row offset `dy`.
    pub fn get(&self, dx: i64, dy: i64) -> f64 {
        let r = self.radius as i64;
        let n = 2 * r + 1;
        self.weights[((dy + r) * n + dx + r) as usize]
    }
}

/// Finsler–Gauss stamp `exp(-F*(y)²/4t) / (Z t)` where `F*` is the metric
/// of `dual` and `Z` makes the entries sum to one.
pub fn finsler_gauss_kernel(dual: &RandersParams, t: f64, radius: usize) -> Result<Stamp> {
    let mut w = Vec::new();
    fill_stamp(dual, t, radius, &mut w)?;
    Ok(Stamp { radius, weights: w })
}

fn fill_stamp(dual: &RandersParams, t: f64, radius: usize, out: &mut Vec<f64>) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!("kernel time must be positive, got {t}")));
    }
    let r = radius as i64;
    out.clear();
    // The 1/t factor cancels in the normalisation. Entries too small for
    // f64 are kept at the smallest normal value so that all are positive.
    for dy in -r..=r {
        for dx in -r..=r {
            let f = dual.eval(Vec2::new(dx as f64, dy as f64));
            out.push((-(f * f) / (4.0 * t)).exp().max(f64::MIN_POSITIVE));
        }
    }
    let z: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= z;
    }
    Ok(())
}

/// Per-pixel stamps of a field, all with the same radius.
struct StampBank {
    radius: usize,
    side: usize,
    data: Vec<f64>,
}

impl StampBank {
    fn new(dual: &MetricField, t: f64, radius: usize) -> Result<Self> {
        let side = 2 * radius + 1;
        let n = dual.height() * dual.width();
        let stamps = par::map_indexed(n, |i| {
            let mut w = Vec::with_capacity(side * side);
            fill_stamp(&dual.data()[i], t, radius, &mut w).map(|_| w)
        });
        let mut data = Vec::with_capacity(n * side * side);
        for s in stamps {
            data.extend(s?);
        }
        Ok(StampBank { radius, side, data })
    }

    #[inline]
    fn stamp(&self, pixel: usize) -> &[f64] {
        let n = self.side * self.side;
        &self.data[pixel * n..(pixel + 1) * n]
    }
}

fn resolve(i: i64, n: usize, pad: PaddingMode) -> Option<usize> {
    let n = n as i64;
    if (0..n).contains(&i) {
        return Some(i as usize);
    }
    match pad {
        PaddingMode::Periodic => Some(i.rem_euclid(n) as usize),
        PaddingMode::Zero => None,
        PaddingMode::Replicate => Some(i.clamp(0, n - 1) as usize),
    }
}

fn field_radius(dual: &MetricField, cfg: &UgbConfig) -> usize {
    cfg.kernel_radius.unwrap_or_else(|| {
        dual.data()
            .iter()
            .map(|p| auto_radius(p, cfg.t_end.max(cfg.dt)))
            .max()
            .unwrap_or(2)
    })
}

/// Diffuses a Dirac at `center = (row, col)` over the whole image.
///
/// Each step is the gather `δ'(x) = Σ_y δ(x + y) h_x(y)`, with padding
/// applied to the reads. Mass is conserved exactly for spatially uniform
/// fields under periodic padding.
pub fn diffuse_dirac(
    center: (usize, usize),
    dual_field: &MetricField,
    cfg: &UgbConfig,
    pad: PaddingMode,
) -> Result<GrayImage> {
    cfg.validate()?;
    let (h, w) = (dual_field.height(), dual_field.width());
    if center.0 >= h || center.1 >= w {
        return Err(Error::InvalidArgument(format!("centre {center:?} outside {h}x{w}")));
    }
    let bank = StampBank::new(dual_field, cfg.dt, field_radius(dual_field, cfg))?;
    let r = bank.radius as i64;
    let mut heat = vec![0.0; h * w];
    heat[center.0 * w + center.1] = 1.0;
    let mut next = vec![0.0; h * w];
    for _ in 0..cfg.steps() {
        par::for_each_row(&mut next, w, |row, out| {
            for (col, o) in out.iter_mut().enumerate() {
                let stamp = bank.stamp(row * w + col);
                let mut acc = 0.0;
                let mut k = 0;
                for dy in -r..=r {
                    let rr = resolve(row as i64 + dy, h, pad);
                    for dx in -r..=r {
                        if let (Some(rr), Some(cc)) = (rr, resolve(col as i64 + dx, w, pad)) {
                            acc += heat[rr * w + cc] * stamp[k];
                        }
                        k += 1;
                    }
                }
                *o = acc;
            }
        });
        std::mem::swap(&mut heat, &mut next);
    }
    GrayImage::new(h, w, heat)
}

/// Per-pixel unit vectors `-∇δ/‖∇δ‖`, zero where the gradient vanishes.
pub type FlowField = GradientField;

pub fn flow_field(diffused: &GrayImage, pad: PaddingMode) -> FlowField {
    let g = sobel_gradient(diffused, pad);
    let data = g.data().iter().map(|&v| flow_direction(v)).collect();
    GradientField::from_vec(g.height(), g.width(), data).expect("same shape")
}

#[inline]
fn flow_direction(g: Vec2) -> Vec2 {
    let n = g.norm();
    if n > f64::MIN_POSITIVE && n.is_finite() {
        g * (-1.0 / n)
    } else {
        Vec2::ZERO
    }
}

/// Forward Euler flow of stencil points `p` (relative to `origin`, given as
/// `(row, col)` in the grid of `grad`).
fn advect(points: &mut [Vec2], origin: (f64, f64), grad: &GradientField, pad: PaddingMode, cfg: &UgbConfig) {
    for _ in 0..cfg.steps() {
        for p in points.iter_mut() {
            let g = grad.sample(origin.0 + p.y, origin.1 + p.x, pad);
            *p += flow_direction(g) * cfg.dt;
        }
    }
}

/// Stencil `s0 · s · y*(θ)` flowed through `diffused` for `t_end`.
///
/// `dual` is the dual metric at `center`. Offsets are relative to `center`.
pub fn flow_stencil(
    center: (usize, usize),
    dual: &RandersParams,
    diffused: &GrayImage,
    cfg: &UgbConfig,
    scheme: PolarScheme,
    pad: PaddingMode,
) -> Result<KernelSupport> {
    cfg.validate()?;
    let samples = PolarSamples::new(scheme)?;
    let mut points = samples.support(dual, cfg.s0).offsets().to_vec();
    let grad = sobel_gradient(diffused, pad);
    advect(&mut points, (center.0 as f64, center.1 as f64), &grad, pad, cfg);
    KernelSupport::new(scheme.k, points)
}

/// Flowed stencil for one pixel using a local diffusion window.
///
/// The window has half-width `min(r · steps, reach + r + 1)`, where `reach`
/// bounds how far stencil points can get. Heat leaving the window is
/// dropped.
fn local_stencil(
    center: (usize, usize),
    dual_field: &MetricField,
    bank: &StampBank,
    samples: &PolarSamples,
    cfg: &UgbConfig,
    pad: PaddingMode,
    out: &mut [Vec2],
) {
    let dual = dual_field.get(center.0, center.1);
    samples.fill_offsets(dual, cfg.s0, out);
    let steps = cfg.steps();
    if steps == 0 {
        return;
    }
    let (h, w) = (dual_field.height(), dual_field.width());
    let r = bank.radius;
    let reach = out.iter().fold(0.0f64, |m, p| m.max(p.x.abs()).max(p.y.abs())) + cfg.t_end;
    let half = (r * steps).min(reach.ceil() as usize + r + 1);
    let side = 2 * half + 1;
    let (ri, hi) = (r as i64, half as i64);

    // Global pixel behind each window cell; `None` is a sink.
    let cells: Vec<Option<usize>> = (0..side * side)
        .map(|i| {
            let gr = resolve(center.0 as i64 + (i / side) as i64 - hi, h, pad);
            let gc = resolve(center.1 as i64 + (i % side) as i64 - hi, w, pad);
            gr.zip(gc).map(|(a, b)| a * w + b)
        })
        .collect();
    let mut heat = vec![0.0; side * side];
    heat[half * side + half] = 1.0;
    let mut next = vec![0.0; side * side];
    for _ in 0..steps {
        for (i, o) in next.iter_mut().enumerate() {
            let Some(g) = cells[i] else {
                *o = 0.0;
                continue;
            };
            let stamp = bank.stamp(g);
            let (wr, wc) = ((i / side) as i64, (i % side) as i64);
            let mut acc = 0.0;
            let mut k = 0;
            for dy in -ri..=ri {
                let rr = wr + dy;
                for dx in -ri..=ri {
                    let cc = wc + dx;
                    if rr >= 0 && cc >= 0 && rr <= 2 * hi && cc <= 2 * hi {
                        acc += heat[(rr * side as i64 + cc) as usize] * stamp[k];
                    }
                    k += 1;
                }
            }
            *o = acc;
        }
        std::mem::swap(&mut heat, &mut next);
    }
    let window = GrayImage::new(side, side, heat).expect("finite heat");
    let grad = sobel_gradient(&window, PaddingMode::Zero);
    advect(out, (half as f64, half as f64), &grad, PaddingMode::Zero, cfg);
}

/// Unit geodesic ball convolution of `img` under the primal `field`.
pub fn ugb_convolve(
    img: &GrayImage,
    weights: &KernelWeights,
    field: &MetricField,
    cfg: &UgbConfig,
    scheme: PolarScheme,
    pad: PaddingMode,
) -> Result<GrayImage> {
    cfg.validate()?;
    if field.height() != img.height() || field.width() != img.width() {
        return Err(Error::DimensionMismatch(
            field.height(),
            field.width(),
            img.height(),
            img.width(),
        ));
    }
    if img.len() > cfg.pixel_budget {
        return Err(Error::BudgetExceeded {
            pixels: img.len(),
            budget: cfg.pixel_budget,
        });
    }
    let dual = field.dual()?;
    let samples = PolarSamples::new(scheme)?;
    let bank = if cfg.steps() > 0 {
        StampBank::new(&dual, cfg.dt, field_radius(&dual, cfg))?
    } else {
        StampBank {
            radius: 0,
            side: 1,
            data: Vec::new(),
        }
    };
    let supports = SupportProvider::PerPixel {
        k: scheme.k,
        rule: Box::new(|r, c, out| local_stencil((r, c), &dual, &bank, &samples, cfg, pad, out)),
    };
    convolve(img, weights, &supports, pad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::metric_utb_convolve_scaled;
    use crate::metric::Sym2;

    fn iso_field(n: usize) -> MetricField {
        MetricField::constant(n, n, RandersParams::euclidean())
    }

    #[test]
    fn stamp_examples() {
        let s = finsler_gauss_kernel(&RandersParams::euclidean(), 0.5, 3).unwrap();
        assert!((s.weights().iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(s.weights().iter().all(|w| *w > 0.0));
        for (dx, dy) in [(1, 2), (3, 1), (2, 2)] {
            let v = s.get(dx, dy);
            for (a, b) in [(-dx, dy), (dx, -dy), (dy, dx), (-dy, -dx)] {
                assert!((s.get(a, b) - v).abs() < 1e-16);
            }
        }
        let right = |s: &Stamp| -> f64 {
            (-3..=3)
                .flat_map(|dy| (1..=3).map(move |dx| (dx, dy)))
                .map(|(dx, dy)| s.get(dx, dy))
                .sum()
        };
        let left = |s: &Stamp| -> f64 {
            (-3..=3)
                .flat_map(|dy| (1..=3).map(move |dx| (-dx, dy)))
                .map(|(dx, dy)| s.get(dx, dy))
                .sum()
        };
        let p = RandersParams::new(Sym2::IDENTITY, Vec2::new(-0.5, 0.0)).unwrap();
        let s = finsler_gauss_kernel(&p, 0.5, 3).unwrap();
        assert!(right(&s) > left(&s));
        let q = RandersParams::new(Sym2::IDENTITY, Vec2::new(0.5, 0.0)).unwrap();
        let s = finsler_gauss_kernel(&q, 0.5, 3).unwrap();
        assert!(right(&s) < left(&s));
        assert!(finsler_gauss_kernel(&p, 0.0, 3).is_err());
    }

    #[test]
    fn single_step_is_one_stamp() {
        let cfg = UgbConfig {
            dt: 0.1,
            t_end: 0.1,
            kernel_radius: Some(2),
            ..Default::default()
        };
        let p = RandersParams::new(Sym2::new(0.8, 0.1, 0.5), Vec2::new(0.2, 0.1)).unwrap();
        let field = MetricField::constant(9, 9, p);
        let d = diffuse_dirac((4, 4), &field, &cfg, PaddingMode::Periodic).unwrap();
        let s = finsler_gauss_kernel(&p, 0.1, 2).unwrap();
        // Gather: δ'(x) = h_x(centre - x).
        for dy in -2i64..=2 {
            for dx in -2i64..=2 {
                let v = d.get((4 + dy) as usize, (4 + dx) as usize);
                assert!((v - s.get(-dx, -dy)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn mass_and_symmetry() {
        let n = 33;
        let cfg = UgbConfig {
            dt: 0.25,
            t_end: 1.0,
            ..Default::default()
        };
        let d = diffuse_dirac((16, 16), &iso_field(n), &cfg, PaddingMode::Periodic).unwrap();
        assert!((d.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (a, b) in [(1i64, 2i64), (3, 0), (2, 2)] {
            let v = d.get((16 + b) as usize, (16 + a) as usize);
            for (x, y) in [(-a, b), (a, -b), (b, a), (-b, -a)] {
                let u = d.get((16 + y) as usize, (16 + x) as usize);
                assert!((u - v).abs() <= 0.01 * v.abs());
            }
        }
    }

    #[test]
    fn stencil_flows_outward_and_stays_round() {
        let n = 33;
        let cfg = UgbConfig::default();
        let field = iso_field(n);
        let d = diffuse_dirac((16, 16), &field, &cfg, PaddingMode::Periodic).unwrap();
        let scheme = PolarScheme::onion(5);
        let init = PolarSamples::new(scheme)
            .unwrap()
            .support(&RandersParams::euclidean(), cfg.s0);
        let flowed = flow_stencil(
            (16, 16),
            &RandersParams::euclidean(),
            &d,
            &cfg,
            scheme,
            PaddingMode::Periodic,
        )
        .unwrap();
        let mean = |s: &KernelSupport| s.offsets().iter().map(|o| o.norm()).sum::<f64>() / 25.0;
        assert!(mean(&flowed) > mean(&init));
        let outer: Vec<f64> = flowed.offsets()[9..].iter().map(|o| o.norm()).collect();
        let (lo, hi) = outer.iter().fold((f64::MAX, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
        assert!(hi / lo < 1.1);

        let zero = UgbConfig { t_end: 0.0, ..cfg };
        let s = flow_stencil(
            (16, 16),
            &RandersParams::euclidean(),
            &d,
            &zero,
            scheme,
            PaddingMode::Periodic,
        )
        .unwrap();
        assert_eq!(s, init);
    }

    #[test]
    fn flow_field_norms() {
        let cfg = UgbConfig::default();
        let d = diffuse_dirac((8, 8), &iso_field(17), &cfg, PaddingMode::Periodic).unwrap();
        for v in flow_field(&d, PaddingMode::Periodic).data() {
            let n = v.norm();
            assert!(n == 0.0 || (n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn local_window_matches_full_diffusion() {
        let n = 31;
        let p = RandersParams::new(Sym2::new(0.6, 0.1, 1.4), Vec2::new(0.1, -0.2)).unwrap();
        let field = MetricField::constant(n, n, p);
        let cfg = UgbConfig::default();
        let scheme = PolarScheme::onion(5);
        let dual = field.dual().unwrap();
        let full = diffuse_dirac((15, 15), &dual, &cfg, PaddingMode::Periodic).unwrap();
        let a = flow_stencil((15, 15), dual.get(15, 15), &full, &cfg, scheme, PaddingMode::Periodic).unwrap();
        let bank = StampBank::new(&dual, cfg.dt, field_radius(&dual, &cfg)).unwrap();
        let samples = PolarSamples::new(scheme).unwrap();
        let mut b = vec![Vec2::ZERO; 25];
        local_stencil((15, 15), &dual, &bank, &samples, &cfg, PaddingMode::Periodic, &mut b);
        for (x, y) in a.offsets().iter().zip(&b) {
            assert!((*x - *y).norm() < 1e-9, "{x:?} vs {y:?}");
        }
    }

    #[test]
    fn convolve_examples() {
        let n = 16;
        let w = KernelWeights::uniform(5).unwrap();
        let scheme = PolarScheme::onion(5);
        let cfg = UgbConfig::default();
        let img = GrayImage::filled(n, n, 0.3);
        let field = iso_field(n);
        let out = ugb_convolve(&img, &w, &field, &cfg, scheme, PaddingMode::Replicate).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.3).abs() < 1e-14));

        let img = GrayImage::from_fn(n, n, |r, c| ((r * c) as f64 * 0.1).sin());
        let field = MetricField::new(
            n,
            n,
            (0..n * n)
                .map(|i| {
                    RandersParams::new(Sym2::new(1.0 + (i % 5) as f64 * 0.2, 0.1, 0.7), Vec2::new(0.1, 0.0)).unwrap()
                })
                .collect(),
        )
        .unwrap();
        let zero = UgbConfig { t_end: 0.0, ..cfg };
        let a = ugb_convolve(&img, &w, &field, &zero, scheme, PaddingMode::Replicate).unwrap();
        let b = metric_utb_convolve_scaled(
            &img,
            &w,
            &field.dual().unwrap(),
            scheme,
            zero.s0,
            PaddingMode::Replicate,
        )
        .unwrap();
        assert_eq!(a, b);

        let big = GrayImage::filled(200, 200, 0.0);
        let r = ugb_convolve(&big, &w, &iso_field(200), &cfg, scheme, PaddingMode::Replicate);
        assert!(matches!(r, Err(Error::BudgetExceeded { .. })));
    }
}
