//! Property suites runnable from the command line.
//!
//! Each suite draws random inputs from a fixed seed and returns a one-line
//! verdict. The dual formula is injectable so that a deliberately broken
//! formula can be shown to fail the dual suite.

use std::f64::consts::TAU;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conv::{convolve, metric_utb_convolve, KernelWeights, MetricField, SupportProvider};
use crate::error::Result;
use crate::geodesic::{diffuse_dirac, UgbConfig};
use crate::heuristic::{heuristic_field, HeuristicConfig};
use crate::image::{shift_periodic, GrayImage, PaddingMode};
use crate::metric::{RandersParams, Sym2, Vec2};
use crate::params::{ParamHyper, Parameterization};
use crate::sampling::{polar_samples, utb_support, KernelSupport, PolarScheme};
use crate::train::{check_gradients, Method, Model, ParamClass, TrainConfig};

pub type DualFn = fn(&RandersParams) -> Result<RandersParams>;

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

/// Random valid metric with eigenvalues in `[0.05, 20]` and drift norm
/// below `max_drift`.
pub fn random_params(rng: &mut ChaCha8Rng, max_drift: f64) -> RandersParams {
    let a = 10f64.powf(rng.gen_range(-1.3..1.3));
    let b = 10f64.powf(rng.gen_range(-1.3..1.3));
    let m = Sym2::from_eigen(Vec2::from_angle(rng.gen_range(0.0..TAU)), a, b);
    let dir = Vec2::from_angle(rng.gen_range(0.0..TAU));
    let w = dir * (rng.gen_range(0.0..max_drift) / dir.dot(m.solve(dir)).sqrt());
    RandersParams::new(m, w).expect("valid by construction")
}

fn verdict(ok: bool, detail: String) -> (bool, String) {
    (ok, detail)
}

fn suite_ellipse() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let p = random_params(&mut rng, 0.95);
        let y = p.unit_circle_point(rng.gen_range(0.0..TAU));
        let l = p.m().quad(y);
        let r = (1.0 - p.omega().dot(y)).powi(2);
        worst = worst.max((l - r).abs());
    }
    verdict(worst < 1e-9, format!("max residual {worst:.2e}"))
}

fn suite_dual(dual: DualFn) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_sup = 0.0f64;
    let mut worst_inv = 0.0f64;
    let n = 20_000;
    for _ in 0..50 {
        let p = random_params(&mut rng, 0.8);
        let Ok(d) = dual(&p) else {
            return verdict(false, "dual construction failed".into());
        };
        let v = Vec2::from_angle(rng.gen_range(0.0..TAU));
        let sup = (0..n)
            .map(|i| p.unit_circle_point(TAU * i as f64 / n as f64).dot(v))
            .fold(f64::MIN, f64::max);
        worst_sup = worst_sup.max((d.eval(v) - sup).abs() / sup.abs());
        let Ok(dd) = dual(&d) else {
            return verdict(false, "second dual failed".into());
        };
        let e = (dd.m().m11 - p.m().m11).abs()
            + (dd.m().m12 - p.m().m12).abs()
            + (dd.m().m22 - p.m().m22).abs()
            + (dd.omega() - p.omega()).norm();
        worst_inv = worst_inv.max(e / (1.0 + p.m().trace()));
    }
    verdict(
        worst_sup < 1e-3 && worst_inv < 1e-8,
        format!("support error {worst_sup:.2e}, involution error {worst_inv:.2e}"),
    )
}

fn suite_positivity() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = ParamHyper::with_eps_omega(0.1);
    let mut worst = f64::MAX;
    for _ in 0..2000 {
        let raw: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let p = Parameterization::Cholesky5.metric(&raw, &h);
        let eps = p.positivity_floor();
        for _ in 0..10 {
            let u = Vec2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            worst = worst.min(p.eval(u) - eps * u.norm());
        }
    }
    verdict(worst >= -1e-12, format!("min slack {worst:.2e}"))
}

fn suite_onion() -> (bool, String) {
    for k in (1..=121).step_by(2) {
        match polar_samples(PolarScheme::onion(k)) {
            Ok(s) if s.len() == k * k => {}
            _ => return verdict(false, format!("wrong count at k={k}")),
        }
    }
    verdict(true, "k = 1..121".into())
}

fn smooth(n: usize) -> GrayImage {
    GrayImage::from_fn(n, n, |r, c| {
        (0.4 * r as f64).sin() * (0.3 * c as f64 + 0.5).cos() + 0.05 * r as f64
    })
}

fn suite_gradients() -> (bool, String) {
    let img = smooth(8);
    let target = img.map(|v| 0.8 * v + 0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for method in [Method::UtbRaw, Method::DeformableRaw] {
        let cfg = TrainConfig {
            method,
            k: 3,
            scheme: PolarScheme::onion(3),
            detach: false,
            hyper: ParamHyper::with_eps_omega(0.1),
            init_iota: 0.5,
            ..Default::default()
        };
        let Ok(mut model) = Model::init(&cfg, 8, 8) else {
            return verdict(false, "model init failed".into());
        };
        for v in model.raw.data.iter_mut() {
            *v += match method {
                Method::UtbRaw => rng.gen_range(-0.3..0.3),
                Method::DeformableRaw => rng.gen_range(-0.9..0.9),
            };
        }
        let classes: &[ParamClass] = match method {
            Method::UtbRaw => &[ParamClass::MetricRaw, ParamClass::OmegaRaw, ParamClass::Weights],
            Method::DeformableRaw => &[ParamClass::Offsets],
        };
        for &class in classes {
            let Ok(reports) = check_gradients(&model, &img, &target, class, 1e-6) else {
                return verdict(false, "gradient check failed to run".into());
            };
            for r in reports.iter().filter(|r| r.numeric.abs() > 1e-8) {
                worst = worst.max(r.rel_error);
            }
        }
    }
    verdict(worst < 1e-4, format!("max relative error {worst:.2e}"))
}

fn suite_equivariance() -> (bool, String) {
    let img = GrayImage::from_fn(32, 32, |r, c| {
        let (x, y) = (c as f64 - 14.0, r as f64 - 17.0);
        if x * x + 0.5 * y * y < 60.0 {
            0.8
        } else {
            0.2 + 0.01 * ((r * 7 + c * 3) % 11) as f64
        }
    });
    let cfg = HeuristicConfig {
        pad: PaddingMode::Periodic,
        eps_omega: 0.5,
        ..Default::default()
    };
    let w = KernelWeights::uniform(5).expect("odd");
    let run = |im: &GrayImage| -> Result<GrayImage> {
        let f = heuristic_field(im, &cfg)?;
        metric_utb_convolve(im, &w, &f, PolarScheme::onion(5), PaddingMode::Periodic)
    };
    let (Ok(a), Ok(b)) = (run(&img), run(&shift_periodic(&img, 3, 7))) else {
        return verdict(false, "convolution failed".into());
    };
    let a = shift_periodic(&a, 3, 7);
    let worst = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    verdict(worst < 1e-6, format!("max discrepancy {worst:.2e}"))
}

fn suite_reductions() -> (bool, String) {
    let img = smooth(12);
    let pad = PaddingMode::Replicate;
    let k = 3;
    let w = KernelWeights::new(k, (0..9).map(|i| 0.05 + 0.02 * i as f64).collect()).expect("valid");
    let reference = KernelSupport::reference_grid(k).expect("odd");
    let conv = |s: KernelSupport| convolve(&img, &w, &SupportProvider::Fixed(s), pad);
    let d = Vec2::new(0.3, -0.7);
    let checks = (|| -> Result<f64> {
        let standard = conv(reference.clone())?;
        let shifted = conv(reference.shift(d))?;
        let deformed = conv(reference.deform(&[d; 9])?)?;
        let dilated = conv(reference.dilate(1.0)?)?;
        let zero_shift = conv(reference.shift(Vec2::ZERO))?;
        let p = RandersParams::new(Sym2::new(0.7, 0.1, 0.4), Vec2::new(0.1, 0.2))?;
        let field = MetricField::constant(12, 12, p);
        let metric = metric_utb_convolve(&img, &w, &field, PolarScheme::onion(k), pad)?;
        let fixed = conv(utb_support(&p, PolarScheme::onion(k))?)?;
        let diff = |a: &GrayImage, b: &GrayImage| {
            a.data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
        };
        Ok(diff(&deformed, &shifted)
            .max(diff(&zero_shift, &standard))
            .max(diff(&dilated, &standard))
            .max(diff(&metric, &fixed)))
    })();
    match checks {
        Ok(e) => verdict(e <= 1e-12, format!("max difference {e:.2e}")),
        Err(e) => verdict(false, e.to_string()),
    }
}

fn suite_params() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for &eo in &[0.1, 1.0] {
        let h = ParamHyper::with_eps_omega(eo);
        for kind in [
            Parameterization::Cholesky5,
            Parameterization::Spectral6,
            Parameterization::Spectral7,
        ] {
            for _ in 0..3000 {
                let raw: Vec<f64> = (0..kind.channels())
                    .map(|_| rng.gen_range(-1.0..1.0) * 10f64.powf(rng.gen_range(-3.0..6.0)))
                    .collect();
                let p = kind.metric(&raw, &h);
                if !(p.omega_norm() < 1.0 - eo + 1e-12) || (eo == 1.0 && p.omega() != Vec2::ZERO) {
                    return verdict(false, format!("{kind:?} violated drift bound at {raw:?}"));
                }
            }
        }
    }
    verdict(true, "18000 random inputs".into())
}

fn suite_mass() -> (bool, String) {
    let field = MetricField::constant(31, 31, RandersParams::euclidean());
    let cfg = UgbConfig {
        dt: 0.05,
        t_end: 0.5,
        ..Default::default()
    };
    match diffuse_dirac((15, 15), &field, &cfg, PaddingMode::Periodic) {
        Ok(d) => {
            let e = (d.data().iter().sum::<f64>() - 1.0).abs();
            verdict(e < 1e-9, format!("mass error {e:.2e}"))
        }
        Err(e) => verdict(false, e.to_string()),
    }
}

/// Runs all suites with the given dual formula.
pub fn run_suites_with(dual: DualFn) -> Vec<SuiteResult> {
    type Suite = (&'static str, Box<dyn Fn() -> (bool, String)>);
    let suites: Vec<Suite> = vec![
        ("unit-circle ellipse", Box::new(suite_ellipse)),
        ("positivity floor", Box::new(suite_positivity)),
        ("dual involution", Box::new(move || suite_dual(dual))),
        ("parameterizations", Box::new(suite_params)),
        ("onion-peel counts", Box::new(suite_onion)),
        ("gradients vs finite differences", Box::new(suite_gradients)),
        ("shift equivariance", Box::new(suite_equivariance)),
        ("reduction hierarchy", Box::new(suite_reductions)),
        ("diffusion mass", Box::new(suite_mass)),
    ];
    suites
        .into_iter()
        .map(|(name, f)| {
            let t = Instant::now();
            let (passed, detail) = f();
            SuiteResult {
                name,
                passed,
                detail,
                seconds: t.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

pub fn run_suites() -> Vec<SuiteResult> {
    run_suites_with(RandersParams::dual)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn broken_dual(p: &RandersParams) -> Result<RandersParams> {
        // Drops the rank-one term of M*.
        let v = p.m().solve(p.omega());
        let alpha = 1.0 - p.omega().dot(v);
        let minv = p.m().inverse().expect("invertible");
        RandersParams::new(minv.scale(1.0 / alpha), v * (-1.0 / alpha))
    }

    #[test]
    fn all_suites_pass() {
        for r in run_suites() {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }

    #[test]
    fn broken_dual_is_caught() {
        let results = run_suites_with(broken_dual);
        let dual = results.iter().find(|r| r.name == "dual involution").unwrap();
        assert!(!dual.passed);
        assert!(results.iter().filter(|r| r.name != "dual involution").all(|r| r.passed));
    }
}
