//! Metric fields designed from image gradients.
//!
//! At each pixel the unit ball is squeezed along the Sobel gradient and
//! stretched along the edge, with anisotropy `1 + α‖∇f‖/max‖∇f‖`. The drift
//! points along the gradient (or its normal) with `M⁻¹`-norm close to
//! `1 - ε_ω`.

use crate::conv::MetricField;
use crate::error::{Error, Result};
use crate::image::{sobel_gradient, GrayImage, PaddingMode};
use crate::metric::{RandersParams, Sym2, Vec2};

/// How `ι` relates to the Euclidean radius of an isotropic unit ball.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RadiusConvention {
    /// `M = ι I`, radius `1/√ι`.
    #[default]
    Sqrt,
    /// `M = ι² I`, radius `1/ι`.
    Linear,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OmegaDirection {
    #[default]
    Grad,
    GradPerp,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeuristicConfig {
    pub iota: f64,
    pub alpha: f64,
    pub eps_omega: f64,
    pub eps: f64,
    pub radius_convention: RadiusConvention,
    pub omega_dir: OmegaDirection,
    pub pad: PaddingMode,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        HeuristicConfig {
            iota: 0.1,
            alpha: 100.0,
            eps_omega: 1.0,
            eps: 1e-6,
            radius_convention: RadiusConvention::Sqrt,
            omega_dir: OmegaDirection::Grad,
            pad: PaddingMode::Replicate,
        }
    }
}

impl HeuristicConfig {
    /// Settings for the geodesic-ball variant: `α = 10`, `ι = 1`.
    pub fn ugb(self) -> Self {
        HeuristicConfig {
            alpha: 10.0,
            iota: 1.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.iota > 0.0 && self.alpha >= 0.0 && self.eps > 0.0) {
            return Err(Error::InvalidArgument(format!("invalid heuristic config {self:?}")));
        }
        if !(self.eps_omega > 0.0 && self.eps_omega <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "eps_omega must be in (0, 1], got {}",
                self.eps_omega
            )));
        }
        Ok(())
    }

    fn scale(&self) -> f64 {
        match self.radius_convention {
            RadiusConvention::Sqrt => self.iota,
            RadiusConvention::Linear => self.iota * self.iota,
        }
    }
}

/// Metric at one pixel from its gradient `g` and the image-wide maximum
/// gradient norm.
pub fn heuristic_params(g: Vec2, max_norm: f64, cfg: &HeuristicConfig) -> RandersParams {
    let n = g.norm();
    let rel = if max_norm > 0.0 { n / max_norm } else { 0.0 };
    let t = 1.0 + cfg.alpha * rel;
    let dir = if n > 0.0 { g * (1.0 / n) } else { Vec2::new(1.0, 0.0) };
    let iota = cfg.scale();
    let m = Sym2::from_eigen(dir, iota * t, iota / t);

    let wt = match cfg.omega_dir {
        OmegaDirection::Grad => g * (1.0 / (n + cfg.eps)),
        OmegaDirection::GradPerp => g.perp() * (1.0 / (n + cfg.eps)),
    };
    let wn = wt.dot(m.solve(wt)).max(0.0).sqrt();
    let omega = wt * ((1.0 - cfg.eps_omega) / (wn + cfg.eps));
    RandersParams::new(m, omega).expect("heuristic metric is valid by construction")
}

/// Gradient-driven metric field; the gradient maximum is taken over `img`.
pub fn heuristic_field(img: &GrayImage, cfg: &HeuristicConfig) -> Result<MetricField> {
    cfg.validate()?;
    let grad = sobel_gradient(img, cfg.pad);
    let max = grad.max_norm();
    let data = grad.data().iter().map(|&g| heuristic_params(g, max, cfg)).collect();
    MetricField::new(img.height(), img.width(), data)
}

/// [`heuristic_field`] with the geodesic-ball constants.
pub fn heuristic_field_ugb(img: &GrayImage, cfg: &HeuristicConfig) -> Result<MetricField> {
    heuristic_field(img, &cfg.ugb())
}
