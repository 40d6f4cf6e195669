//! Randers metrics `F(u) = sqrt(uᵀ M u) + ωᵀ u` on the image plane.
//!
//! Tangent vectors use image axes: `x` runs along columns and `y` along rows
//! (downward). Angles are measured from the `+x` axis.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Smallest admissible eigenvalue of `M`.
pub const MIN_EIGENVALUE: f64 = 1e-12;
/// Margin kept below 1 for the `M⁻¹`-norm of the drift.
pub const OMEGA_MARGIN: f64 = 1e-12;
/// Smallest admissible `α = 1 - ‖ω‖²_{M⁻¹}` when dualizing.
pub const DUAL_ALPHA_MIN: f64 = 1e-12;

/// A 2-vector in image coordinates (`x` = column, `y` = row).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    /// Unit vector at angle `theta` from the `+x` axis.
    #[inline]
    pub fn from_angle(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Vec2 { x: c, y: s }
    }

    #[inline]
    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Counter-clockwise quarter turn `(-y, x)`.
    #[inline]
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    #[inline]
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    #[inline]
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    #[inline]
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    #[inline]
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    #[inline]
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Mul<Vec2> for f64 {
    type Output = Vec2;
    #[inline]
    fn mul(self, v: Vec2) -> Vec2 {
        v * self
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    #[inline]
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Symmetric 2×2 matrix stored as `(m11, m12, m22)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sym2 {
    pub m11: f64,
    pub m12: f64,
    pub m22: f64,
}

impl Sym2 {
    pub const IDENTITY: Sym2 = Sym2 {
        m11: 1.0,
        m12: 0.0,
        m22: 1.0,
    };

    #[inline]
    pub const fn new(m11: f64, m12: f64, m22: f64) -> Self {
        Sym2 { m11, m12, m22 }
    }

    #[inline]
    pub fn scaled_identity(s: f64) -> Self {
        Sym2::new(s, 0.0, s)
    }

    pub fn diag(a: f64, b: f64) -> Self {
        Sym2::new(a, 0.0, b)
    }

    /// `a · e eᵀ + b · e⊥ e⊥ᵀ` for a unit vector `e`.
    pub fn from_eigen(e: Vec2, a: f64, b: f64) -> Self {
        let p = e.perp();
        Sym2::new(
            a * e.x * e.x + b * p.x * p.x,
            a * e.x * e.y + b * p.x * p.y,
            a * e.y * e.y + b * p.y * p.y,
        )
    }

    /// `v vᵀ`.
    pub fn outer(v: Vec2) -> Self {
        Sym2::new(v.x * v.x, v.x * v.y, v.y * v.y)
    }

    #[inline]
    pub fn det(&self) -> f64 {
        self.m11 * self.m22 - self.m12 * self.m12
    }

    #[inline]
    pub fn trace(&self) -> f64 {
        self.m11 + self.m22
    }

    /// `uᵀ M u`.
    #[inline]
    pub fn quad(&self, u: Vec2) -> f64 {
        self.m11 * u.x * u.x + 2.0 * self.m12 * u.x * u.y + self.m22 * u.y * u.y
    }

    #[inline]
    pub fn mul_vec(&self, u: Vec2) -> Vec2 {
        Vec2::new(self.m11 * u.x + self.m12 * u.y, self.m12 * u.x + self.m22 * u.y)
    }

    pub fn inverse(&self) -> Option<Sym2> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        Some(Sym2::new(self.m22 / d, -self.m12 / d, self.m11 / d))
    }

    /// Solves `M v = u` without forming the inverse.
    #[inline]
    pub fn solve(&self, u: Vec2) -> Vec2 {
        let d = self.det();
        Vec2::new(
            (self.m22 * u.x - self.m12 * u.y) / d,
            (self.m11 * u.y - self.m12 * u.x) / d,
        )
    }

    /// Eigenvalues `(λ_min, λ_max)`.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let half_tr = 0.5 * self.trace();
        let half_diff = 0.5 * (self.m11 - self.m22);
        let r = half_diff.hypot(self.m12);
        let hi = half_tr + r;
        // det/λ_max avoids cancellation in the small eigenvalue.
        let lo = if hi > 0.0 { self.det() / hi } else { half_tr - r };
        (lo, hi)
    }

    /// Unit eigenvector of the largest eigenvalue.
    pub fn major_eigenvector(&self) -> Vec2 {
        let angle = 0.5 * (2.0 * self.m12).atan2(self.m11 - self.m22);
        Vec2::from_angle(angle)
    }

    pub fn scale(&self, s: f64) -> Sym2 {
        Sym2::new(self.m11 * s, self.m12 * s, self.m22 * s)
    }

    pub fn add(&self, o: &Sym2) -> Sym2 {
        Sym2::new(self.m11 + o.m11, self.m12 + o.m12, self.m22 + o.m22)
    }

    pub fn is_finite(&self) -> bool {
        self.m11.is_finite() && self.m12.is_finite() && self.m22.is_finite()
    }
}

/// Parameters `(M, ω)` of a Randers metric at one location.
///
/// Construction checks that `M` is positive definite and that
/// `‖ω‖_{M⁻¹} < 1`, which makes `F` positive away from the origin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RandersParams {
    m: Sym2,
    omega: Vec2,
}

impl RandersParams {
    pub fn new(m: Sym2, omega: Vec2) -> Result<Self> {
        if !m.is_finite() || !omega.is_finite() {
            return Err(Error::NonFinite("metric parameters"));
        }
        let (lo, hi) = m.eigenvalues();
        if !(m.det() > 0.0 && m.trace() > 0.0 && lo > MIN_EIGENVALUE) {
            return Err(Error::InvalidMetric(format!(
                "M = {m:?} is not positive definite (eigenvalues {lo:e}, {hi:e})"
            )));
        }
        let p = RandersParams { m, omega };
        let n = p.omega_norm();
        if !(n < 1.0 - OMEGA_MARGIN) {
            return Err(Error::InvalidMetric(format!(
                "drift norm ‖ω‖_M⁻¹ = {n} must be below 1"
            )));
        }
        Ok(p)
    }

    pub fn riemannian(m: Sym2) -> Result<Self> {
        Self::new(m, Vec2::ZERO)
    }

    pub fn euclidean() -> Self {
        RandersParams {
            m: Sym2::IDENTITY,
            omega: Vec2::ZERO,
        }
    }

    /// Isotropic metric with unit ball of Euclidean radius `radius`.
    pub fn isotropic(radius: f64) -> Result<Self> {
        Self::riemannian(Sym2::scaled_identity(1.0 / (radius * radius)))
    }

    #[inline]
    pub fn m(&self) -> Sym2 {
        self.m
    }

    #[inline]
    pub fn omega(&self) -> Vec2 {
        self.omega
    }

    /// `‖ω‖_{M⁻¹} = sqrt(ωᵀ M⁻¹ ω)`.
    pub fn omega_norm(&self) -> f64 {
        self.omega.dot(self.m.solve(self.omega)).max(0.0).sqrt()
    }

    /// `F(u)`; callers are responsible for finite input (see [`randers_eval`]).
    #[inline]
    pub fn eval(&self, u: Vec2) -> f64 {
        self.m.quad(u).max(0.0).sqrt() + self.omega.dot(u)
    }

    /// The point `u_θ / F(u_θ)` of the unit circle in direction `theta`.
    #[inline]
    pub fn unit_circle_point(&self, theta: f64) -> Vec2 {
        let u = Vec2::from_angle(theta);
        u * (1.0 / self.eval(u))
    }

    /// Parameters of the dual metric `F*(u) = max { uᵀv : F(v) ≤ 1 }`.
    pub fn dual(&self) -> Result<RandersParams> {
        let v = self.m.solve(self.omega);
        let alpha = 1.0 - self.omega.dot(v);
        if !(alpha > DUAL_ALPHA_MIN) {
            return Err(Error::DegenerateDual { alpha });
        }
        let minv = self
            .m
            .inverse()
            .ok_or_else(|| Error::InvalidMetric("singular M".into()))?;
        let m_star = minv.scale(alpha).add(&Sym2::outer(v)).scale(1.0 / (alpha * alpha));
        let omega_star = v * (-1.0 / alpha);
        RandersParams::new(m_star, omega_star)
    }

    /// A constant `ε` with `F(u) ≥ ε ‖u‖₂` for every `u`.
    ///
    /// Cauchy–Schwarz in the `M`-inner product gives
    /// `F(u) ≥ (1 - ‖ω‖_{M⁻¹}) ‖u‖_M`, and `‖u‖_M ≥ sqrt(λ_min(M)) ‖u‖₂`.
    /// For `M = I` this is exactly the bound `ε = 1 - ‖ω‖_{M⁻¹}`.
    pub fn positivity_floor(&self) -> f64 {
        let (lo, _) = self.m.eigenvalues();
        ((1.0 - self.omega_norm()) * lo.max(0.0).sqrt()).max(0.0)
    }
}

/// `F(u)` with input validation.
pub fn randers_eval(p: &RandersParams, u: Vec2) -> Result<f64> {
    if !u.is_finite() {
        return Err(Error::NonFinite("tangent vector"));
    }
    Ok(p.eval(u))
}

/// Tolerance of the cross-product convexity test.
pub const CONVEXITY_TOL: f64 = 1e-10;

/// A metric reconstructed from a sampled unit tangent ball.
///
/// The ball boundary is the closed polygon through the samples; `F(u)` is the
/// factor `λ` such that `u / λ` lies on that polygon.
#[derive(Clone, Debug)]
pub struct PolygonMetric {
    vertices: Vec<Vec2>,
    angles: Vec<f64>,
}

impl PolygonMetric {
    pub fn eval(&self, u: Vec2) -> f64 {
        if u.x == 0.0 && u.y == 0.0 {
            return 0.0;
        }
        let n = self.vertices.len();
        let a = u.y.atan2(u.x);
        // Angles are sorted ascending; find the edge whose angular span holds `a`.
        let idx = self.angles.partition_point(|&t| t <= a);
        let (i, j) = if idx == 0 || idx == n {
            (n - 1, 0)
        } else {
            (idx - 1, idx)
        };
        let p = self.vertices[i];
        let q = self.vertices[j];
        // The ray t·u meets the edge p + s(q - p) where t = (p × q) / (u × (q - p))
        // up to scale; F(u) = 1 / t with t the ray parameter.
        let e = q - p;
        let denom = u.cross(e);
        let t = p.cross(e) / denom;
        1.0 / t
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }
}

/// Builds the metric whose unit ball is the polygon through `boundary`.
///
/// The samples must be ordered around the origin, form a convex polygon and
/// strictly enclose the origin.
pub fn reconstruct_metric_from_utb(boundary: &[Vec2]) -> Result<PolygonMetric> {
    let n = boundary.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 boundary samples, got {n}"
        )));
    }
    if boundary.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("boundary sample"));
    }
    // Orientation from the signed area; reject polygons that do not wind round the origin.
    let area: f64 = (0..n).map(|i| boundary[i].cross(boundary[(i + 1) % n])).sum();
    if area == 0.0 {
        return Err(Error::OriginOutside);
    }
    let sign = area.signum();
    let scale = boundary.iter().map(|v| v.norm()).fold(0.0, f64::max);
    for i in 0..n {
        let a = boundary[i];
        let b = boundary[(i + 1) % n];
        let c = boundary[(i + 2) % n];
        // Origin strictly on the interior side of every edge.
        if sign * a.cross(b) <= CONVEXITY_TOL * scale * scale {
            return Err(Error::OriginOutside);
        }
        if sign * (b - a).cross(c - b) < -CONVEXITY_TOL * scale * scale {
            return Err(Error::NotConvex);
        }
    }
    let mut vertices: Vec<Vec2> = boundary.to_vec();
    if sign < 0.0 {
        vertices.reverse();
    }
    // Each edge subtends a positive angle, so the total winding is 2π exactly
    // when the polygon is convex around the origin; rotate to sort by angle.
    let start = (0..n)
        .min_by(|&i, &j| {
            let ai = vertices[i].y.atan2(vertices[i].x);
            let aj = vertices[j].y.atan2(vertices[j].x);
            ai.total_cmp(&aj)
        })
        .unwrap_or(0);
    vertices.rotate_left(start);
    let angles: Vec<f64> = vertices.iter().map(|v| v.y.atan2(v.x)).collect();
    if angles.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::NotConvex);
    }
    Ok(PolygonMetric { vertices, angles })
}
