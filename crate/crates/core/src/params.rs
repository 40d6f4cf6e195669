//! Maps from unconstrained raw numbers to valid Randers parameters.
//!
//! Three parameterizations are provided: a Cholesky factor plus drift
//! (5 numbers), and two spectral forms built from an unnormalized eigenvector
//! and eigenvalues (6 numbers, or 7 with a separate eigenvalue scale). All of
//! them share the drift constraint of [`constrain_omega`].
//!
//! Every map also has a Jacobian variant used by the training code. The
//! Jacobian is exact except in the two guarded regimes: the conditioning
//! shift of [`regularize`] and the saturation clamp of [`constrain_omega`],
//! whose parameter dependence is ignored.

use crate::error::{Error, Result};
use crate::metric::{RandersParams, Sym2, Vec2};

/// Absolute eigenvalue floor applied after every parameterization.
pub const EIG_FLOOR_ABS: f64 = 1e-8;
/// Relative floor `λ_min ≥ EIG_FLOOR_REL · λ_max`.
pub const EIG_FLOOR_REL: f64 = 1e-10;

/// Hyperparameters of the parameterizations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamHyper {
    pub eps_l: f64,
    pub eps_omega: f64,
    pub eps: f64,
    pub s_min: f64,
    pub s_max: f64,
}

impl Default for ParamHyper {
    fn default() -> Self {
        ParamHyper {
            eps_l: 0.01,
            eps_omega: 0.1,
            eps: 1e-6,
            s_min: 0.1,
            s_max: 1.5,
        }
    }
}

impl ParamHyper {
    pub fn with_eps_omega(eps_omega: f64) -> Self {
        ParamHyper {
            eps_omega,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.eps_l > 0.0
            && self.eps_omega > 0.0
            && self.eps_omega <= 1.0
            && self.eps > 0.0
            && self.s_min > 0.0
            && self.s_min <= self.s_max;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid hyperparameters {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RawParams5 {
    pub l11: f64,
    pub l21: f64,
    pub l22: f64,
    pub w1: f64,
    pub w2: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RawParams6 {
    pub r1: f64,
    pub r2: f64,
    pub lam1: f64,
    pub lam2: f64,
    pub w1: f64,
    pub w2: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RawParams7 {
    pub r1: f64,
    pub r2: f64,
    pub lam1: f64,
    pub lam2: f64,
    pub s: f64,
    pub w1: f64,
    pub w2: f64,
}

/// Logistic sigmoid, evaluated on the branch that cannot overflow.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn sigmoid_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

/// Derivative of the outputs `(m11, m12, m22, ω1, ω2)` with respect to the
/// raw inputs, one row per output.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jacobian {
    pub rows: [[f64; 7]; 5],
    pub inputs: usize,
}

impl Jacobian {
    fn zero(inputs: usize) -> Self {
        Jacobian {
            rows: [[0.0; 7]; 5],
            inputs,
        }
    }

    /// Pulls a gradient over `(m11, m12, m22, ω1, ω2)` back to raw inputs.
    #[inline]
    pub fn pull_back(&self, g: &[f64; 5], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate().take(self.inputs) {
            let mut acc = 0.0;
            for (i, gi) in g.iter().enumerate() {
                acc += gi * self.rows[i][j];
            }
            *o = acc;
        }
    }
}

/// Shifts `M` by a multiple of the identity when its smallest eigenvalue
/// `lo` falls below `max(EIG_FLOOR_ABS, EIG_FLOOR_REL · hi)`.
pub fn regularize(m: Sym2, lo: f64, hi: f64) -> Sym2 {
    let floor = EIG_FLOOR_ABS.max(EIG_FLOOR_REL * hi);
    if lo < floor {
        let d = floor - lo;
        Sym2::new(m.m11 + d, m.m12, m.m22 + d)
    } else {
        m
    }
}

/// Scales `omega_raw` so that its `M⁻¹`-norm is `σ̃(sqrt(ωᵀM⁻¹ω + ε))`,
/// strictly below `1 - ε_ω`.
pub fn constrain_omega(omega_raw: Vec2, m: &Sym2, h: &ParamHyper) -> Vec2 {
    constrain_omega_with_grad(omega_raw, m, h, false).0
}

/// Partial derivatives of the constrained drift: `d_omega[i][j] = ∂ω̃_i/∂ω_j`
/// and `d_m[i][k] = ∂ω̃_i/∂m_k` for `m = (m11, m12, m22)`.
struct OmegaGrad {
    d_omega: [[f64; 2]; 2],
    d_m: [[f64; 3]; 2],
}

fn constrain_omega_with_grad(omega: Vec2, m: &Sym2, h: &ParamHyper, detach: bool) -> (Vec2, OmegaGrad) {
    let scale = 1.0 - h.eps_omega;
    let v = m.solve(omega);
    let q = omega.dot(v).max(0.0);
    let n = (q + h.eps).sqrt();
    // 2(σ(n) - 1/2) = tanh(n/2), which stays accurate for small n.
    let th = (0.5 * n).tanh();
    let phi = scale * th / n;
    let mut out = omega * phi;

    let mut grad = OmegaGrad {
        d_omega: [[phi, 0.0], [0.0, phi]],
        d_m: [[0.0; 3]; 2],
    };
    if !detach {
        let sech2 = 1.0 - th * th;
        let dphi_dn = scale * (0.5 * sech2 * n - th) / (n * n);
        let dn_dw = [v.x / n, v.y / n];
        let dn_dm = [
            -v.x * v.x / (2.0 * n),
            -2.0 * v.x * v.y / (2.0 * n),
            -v.y * v.y / (2.0 * n),
        ];
        let w = [omega.x, omega.y];
        for i in 0..2 {
            for j in 0..2 {
                grad.d_omega[i][j] += w[i] * dphi_dn * dn_dw[j];
            }
            for k in 0..3 {
                grad.d_m[i][k] = w[i] * dphi_dn * dn_dm[k];
            }
        }
    }

    // In saturation the printed map reaches the bound up to rounding; pull it
    // strictly inside.
    let limit = scale.min(1.0 - 1e-9);
    let norm = out.dot(m.solve(out)).max(0.0).sqrt();
    if norm >= limit && norm > 0.0 {
        out = out * (limit * (1.0 - 1e-12) / norm);
    }
    (out, grad)
}

fn finish(m: Sym2, omega_raw: Vec2, h: &ParamHyper) -> RandersParams {
    let omega = constrain_omega(omega_raw, &m, h);
    RandersParams::new(m, omega).expect("parameterization produced an invalid metric")
}

fn cholesky_matrix(raw: &RawParams5, h: &ParamHyper) -> (Sym2, [f64; 3]) {
    let a = raw.l11 + h.eps_l;
    let b = raw.l21;
    let c = raw.l22 + h.eps_l;
    let m = Sym2::new(a * a, a * b, b * b + c * c);
    let det = (a * c) * (a * c);
    let r = (0.5 * (m.m11 - m.m22)).hypot(m.m12);
    let hi = 0.5 * m.trace() + r;
    let lo = if hi > 0.0 { det / hi } else { 0.0 };
    (regularize(m, lo, hi), [a, b, c])
}

/// Cholesky path: `L̃ = L + ε_L I`, `M̃ = L̃ L̃ᵀ`.
pub fn metric_from_5(raw: RawParams5, h: &ParamHyper) -> RandersParams {
    let (m, _) = cholesky_matrix(&raw, h);
    finish(m, Vec2::new(raw.w1, raw.w2), h)
}

/// Column `c · r̃` of the rotation, with `r̃ = r + ε` and `c = 1/(‖r̃‖ + ε)`.
///
/// Elementwise scalar addition is used for `r + ε`.
fn spectral_axis(r1: f64, r2: f64, h: &ParamHyper) -> (Vec2, [[f64; 2]; 2]) {
    let rt = Vec2::new(r1 + h.eps, r2 + h.eps);
    let rho = rt.norm();
    let den = rho + h.eps;
    let e = rt * (1.0 / den);
    // ∂e_i/∂r_j = δ_ij/den - r̃_i r̃_j / (ρ den²)
    let mut de = [[1.0 / den, 0.0], [0.0, 1.0 / den]];
    if rho > 0.0 {
        let rv = [rt.x, rt.y];
        for i in 0..2 {
            for j in 0..2 {
                de[i][j] -= rv[i] * rv[j] / (rho * den * den);
            }
        }
    }
    (e, de)
}

/// `M = λ1 e eᵀ + λ2 e⊥ e⊥ᵀ` for a (not necessarily unit) axis `e`.
fn spectral_matrix(e: Vec2, l1: f64, l2: f64) -> Sym2 {
    Sym2::new(
        l1 * e.x * e.x + l2 * e.y * e.y,
        (l1 - l2) * e.x * e.y,
        l1 * e.y * e.y + l2 * e.x * e.x,
    )
}

fn spectral_regularized(e: Vec2, l1: f64, l2: f64) -> Sym2 {
    let m = spectral_matrix(e, l1, l2);
    let n2 = e.dot(e);
    regularize(m, n2 * l1.min(l2), n2 * l1.max(l2))
}

/// Spectral path with `Λ = diag(|λ1|, |λ2|) + ε_L I`.
pub fn metric_from_6(raw: RawParams6, h: &ParamHyper) -> RandersParams {
    let (e, _) = spectral_axis(raw.r1, raw.r2, h);
    let l1 = raw.lam1.abs() + h.eps_l;
    let l2 = raw.lam2.abs() + h.eps_l;
    finish(spectral_regularized(e, l1, l2), Vec2::new(raw.w1, raw.w2), h)
}

/// Eigenvalue scale in `[s_min, s_max]`, centred at their midpoint.
pub fn eigen_scale(s: f64, h: &ParamHyper) -> f64 {
    0.5 * (h.s_min + h.s_max) + (sigmoid(s) - 0.5) * (h.s_max - h.s_min)
}

fn eigen_scale_prime(s: f64, h: &ParamHyper) -> f64 {
    sigmoid_prime(s) * (h.s_max - h.s_min)
}

/// Spectral path with separate eigenvalue scale: `λ̃_i = 2σ(λ_i) · s̃`,
/// floored at [`EIG_FLOOR_ABS`].
pub fn metric_from_7(raw: RawParams7, h: &ParamHyper) -> RandersParams {
    let (e, _) = spectral_axis(raw.r1, raw.r2, h);
    let st = eigen_scale(raw.s, h);
    let l1 = (2.0 * sigmoid(raw.lam1) * st).max(EIG_FLOOR_ABS);
    let l2 = (2.0 * sigmoid(raw.lam2) * st).max(EIG_FLOOR_ABS);
    finish(spectral_regularized(e, l1, l2), Vec2::new(raw.w1, raw.w2), h)
}

/// Which raw-number parameterization a model uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parameterization {
    Cholesky5,
    Spectral6,
    Spectral7,
}

impl Parameterization {
    pub fn channels(self) -> usize {
        match self {
            Parameterization::Cholesky5 => 5,
            Parameterization::Spectral6 => 6,
            Parameterization::Spectral7 => 7,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Parameterization::Cholesky5 => "cholesky5",
            Parameterization::Spectral6 => "spectral6",
            Parameterization::Spectral7 => "spectral7",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cholesky5" | "5" => Ok(Parameterization::Cholesky5),
            "spectral6" | "6" => Ok(Parameterization::Spectral6),
            "spectral7" | "7" => Ok(Parameterization::Spectral7),
            _ => Err(Error::InvalidArgument(format!("unknown parameterization {s:?}"))),
        }
    }

    /// Metric from a raw slice of length [`Self::channels`].
    pub fn metric(self, raw: &[f64], h: &ParamHyper) -> RandersParams {
        match self {
            Parameterization::Cholesky5 => metric_from_5(
                RawParams5 {
                    l11: raw[0],
                    l21: raw[1],
                    l22: raw[2],
                    w1: raw[3],
                    w2: raw[4],
                },
                h,
            ),
            Parameterization::Spectral6 => metric_from_6(
                RawParams6 {
                    r1: raw[0],
                    r2: raw[1],
                    lam1: raw[2],
                    lam2: raw[3],
                    w1: raw[4],
                    w2: raw[5],
                },
                h,
            ),
            Parameterization::Spectral7 => metric_from_7(
                RawParams7 {
                    r1: raw[0],
                    r2: raw[1],
                    lam1: raw[2],
                    lam2: raw[3],
                    s: raw[4],
                    w1: raw[5],
                    w2: raw[6],
                },
                h,
            ),
        }
    }

    /// Metric and its Jacobian with respect to the raw inputs.
    ///
    /// With `detach`, the scalar factor of the drift constraint is treated as
    /// a constant, so `∂ω̃/∂ω` is that factor times the identity and `ω̃` does
    /// not depend on `M`.
    pub fn metric_with_jacobian(self, raw: &[f64], h: &ParamHyper, detach: bool) -> (RandersParams, Jacobian) {
        let n = self.channels();
        let mut jac = Jacobian::zero(n);
        // dm[k][j] = ∂m_k/∂raw_j for the matrix part.
        let mut dm = [[0.0f64; 7]; 3];
        let (m, w_index) = match self {
            Parameterization::Cholesky5 => {
                let raw5 = RawParams5 {
                    l11: raw[0],
                    l21: raw[1],
                    l22: raw[2],
                    w1: raw[3],
                    w2: raw[4],
                };
                let (m, [a, b, c]) = cholesky_matrix(&raw5, h);
                dm[0][0] = 2.0 * a;
                dm[1][0] = b;
                dm[1][1] = a;
                dm[2][1] = 2.0 * b;
                dm[2][2] = 2.0 * c;
                (m, 3)
            }
            Parameterization::Spectral6 | Parameterization::Spectral7 => {
                let (e, de) = spectral_axis(raw[0], raw[1], h);
                let (l1, l2, dl1, dl2, ds) = if self == Parameterization::Spectral6 {
                    (
                        raw[2].abs() + h.eps_l,
                        raw[3].abs() + h.eps_l,
                        raw[2].signum() * (raw[2] != 0.0) as u8 as f64,
                        raw[3].signum() * (raw[3] != 0.0) as u8 as f64,
                        None,
                    )
                } else {
                    let st = eigen_scale(raw[4], h);
                    let dst = eigen_scale_prime(raw[4], h);
                    let v1 = 2.0 * sigmoid(raw[2]) * st;
                    let v2 = 2.0 * sigmoid(raw[3]) * st;
                    let floored1 = v1 < EIG_FLOOR_ABS;
                    let floored2 = v2 < EIG_FLOOR_ABS;
                    let d1 = if floored1 {
                        0.0
                    } else {
                        2.0 * sigmoid_prime(raw[2]) * st
                    };
                    let d2 = if floored2 {
                        0.0
                    } else {
                        2.0 * sigmoid_prime(raw[3]) * st
                    };
                    let s1 = if floored1 { 0.0 } else { 2.0 * sigmoid(raw[2]) * dst };
                    let s2 = if floored2 { 0.0 } else { 2.0 * sigmoid(raw[3]) * dst };
                    (v1.max(EIG_FLOOR_ABS), v2.max(EIG_FLOOR_ABS), d1, d2, Some((s1, s2)))
                };
                let m = spectral_regularized(e, l1, l2);
                // ∂M/∂e_x and ∂M/∂e_y
                let dmx = [2.0 * l1 * e.x, (l1 - l2) * e.y, 2.0 * l2 * e.x];
                let dmy = [2.0 * l2 * e.y, (l1 - l2) * e.x, 2.0 * l1 * e.y];
                let dml1 = [e.x * e.x, e.x * e.y, e.y * e.y];
                let dml2 = [e.y * e.y, -e.x * e.y, e.x * e.x];
                for k in 0..3 {
                    for j in 0..2 {
                        dm[k][j] = dmx[k] * de[0][j] + dmy[k] * de[1][j];
                    }
                    dm[k][2] = dml1[k] * dl1;
                    dm[k][3] = dml2[k] * dl2;
                    if let Some((s1, s2)) = ds {
                        dm[k][4] = dml1[k] * s1 + dml2[k] * s2;
                    }
                }
                (m, if ds.is_some() { 5 } else { 4 })
            }
        };
        let omega_raw = Vec2::new(raw[w_index], raw[w_index + 1]);
        let (omega, og) = constrain_omega_with_grad(omega_raw, &m, h, detach);
        for k in 0..3 {
            jac.rows[k][..n].copy_from_slice(&dm[k][..n]);
        }
        for i in 0..2 {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += og.d_m[i][k] * dm[k][j];
                }
                jac.rows[3 + i][j] = acc;
            }
            jac.rows[3 + i][w_index] += og.d_omega[i][0];
            jac.rows[3 + i][w_index + 1] += og.d_omega[i][1];
        }
        let p = RandersParams::new(m, omega).expect("parameterization produced an invalid metric");
        (p, jac)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn h() -> ParamHyper {
        ParamHyper::default()
    }

    #[test]
    fn cholesky_examples() {
        let p = metric_from_5(RawParams5::default(), &h());
        assert!((p.m().m11 - 1e-4).abs() < 1e-18 && (p.m().m22 - 1e-4).abs() < 1e-18);
        assert_eq!(p.m().m12, 0.0);
        assert_eq!(p.omega(), Vec2::ZERO);

        let p = metric_from_5(
            RawParams5 {
                l11: 1.0,
                l22: 1.0,
                ..Default::default()
            },
            &h(),
        );
        assert!((p.m().m11 - 1.0201).abs() < 1e-12 && (p.m().m22 - 1.0201).abs() < 1e-12);

        let raw = RawParams5 {
            l11: 1.0,
            l21: 0.5,
            l22: 1.0,
            w1: 10.0,
            w2: 0.0,
        };
        let p = metric_from_5(raw, &h());
        // Line-by-line evaluation of the 5-number algorithm.
        let (a, b, c) = (1.01, 0.5, 1.01);
        let m = Sym2::new(a * a, a * b, b * b + c * c);
        let w = Vec2::new(10.0, 0.0);
        let n = (w.dot(m.inverse().unwrap().mul_vec(w)) + 1e-6).sqrt();
        let factor = 2.0 * 0.9 * (1.0 / (1.0 + (-n).exp()) - 0.5) / n;
        let oracle = w * factor;
        assert!((p.omega() - oracle).norm() < 1e-12);
        let norm = p.omega_norm();
        assert!(norm > 0.89 && norm < 0.90, "{norm}");
    }

    #[test]
    fn spectral6_examples() {
        let p = metric_from_6(
            RawParams6 {
                r1: 1.0,
                lam1: 1.0,
                lam2: 1.0,
                ..Default::default()
            },
            &h(),
        );
        assert!((p.m().m11 - 1.01).abs() < 1e-5 && (p.m().m22 - 1.01).abs() < 1e-5);
        assert!(p.m().m12.abs() < 1e-9);

        // r = 0: r̃ = (ε, ε) and R is scaled by ‖r̃‖/(‖r̃‖ + ε) = √2/(√2 + 1).
        let p = metric_from_6(
            RawParams6 {
                lam1: 3.0,
                ..Default::default()
            },
            &h(),
        );
        let shrink = (2f64.sqrt() / (2f64.sqrt() + 1.0)).powi(2);
        let (lo, hi) = p.m().eigenvalues();
        assert!((hi - 3.01 * shrink).abs() < 1e-9);
        assert!((lo - 0.01 * shrink).abs() < 1e-9);
        let v = p.m().major_eigenvector();
        assert!((v.x.abs() - 0.5f64.sqrt()).abs() < 1e-9 && v.x * v.y > 0.0);

        let p = metric_from_6(
            RawParams6 {
                r2: 1.0,
                lam1: 4.0,
                lam2: 1.0,
                ..Default::default()
            },
            &h(),
        );
        assert!((p.m().m11 - 1.01).abs() < 1e-5 && (p.m().m22 - 4.01).abs() < 1e-5);
    }

    #[test]
    fn spectral7_examples() {
        // r = 0 shrinks the rotation by ‖r̃‖/(‖r̃‖ + ε) as in the 6-number case.
        let shrink = (2f64.sqrt() / (2f64.sqrt() + 1.0)).powi(2);
        let p = metric_from_7(RawParams7::default(), &h());
        assert!((p.m().m11 - 0.8 * shrink).abs() < 1e-9 && (p.m().m22 - 0.8 * shrink).abs() < 1e-9);
        let p = metric_from_7(
            RawParams7 {
                r1: 1.0,
                ..Default::default()
            },
            &h(),
        );
        assert!((p.m().m11 - 0.8).abs() < 1e-5 && (p.m().m22 - 0.8).abs() < 1e-5);
        assert!(p.m().m12.abs() < 1e-12);
        assert_eq!(p.omega(), Vec2::ZERO);
        assert!((eigen_scale(50.0, &h()) - 1.5).abs() < 1e-6);
        assert!((eigen_scale(-50.0, &h()) - 0.1).abs() < 1e-6);

        let p = metric_from_7(
            RawParams7 {
                r1: 1.0,
                lam1: 50.0,
                lam2: -50.0,
                ..Default::default()
            },
            &h(),
        );
        let (lo, hi) = p.m().eigenvalues();
        assert!((hi - 1.6).abs() < 1e-5);
        assert!(lo > 0.0 && lo < 1e-7);
    }

    #[test]
    fn constrain_omega_examples() {
        let hp = h();
        assert_eq!(constrain_omega(Vec2::ZERO, &Sym2::IDENTITY, &hp), Vec2::ZERO);
        let sym = ParamHyper::with_eps_omega(1.0);
        assert_eq!(constrain_omega(Vec2::new(3.0, -2.0), &Sym2::IDENTITY, &sym), Vec2::ZERO);
        let w = constrain_omega(Vec2::new(100.0, 0.0), &Sym2::IDENTITY, &hp);
        assert!((w.x - 0.9).abs() < 1e-4 && w.y == 0.0);
        let w = Vec2::new(0.3, -1.7);
        let a = constrain_omega(w, &Sym2::new(2.0, 0.3, 0.5), &hp);
        let b = constrain_omega(-w, &Sym2::new(2.0, 0.3, 0.5), &hp);
        assert_eq!(a, -b);
        assert!(a.cross(w).abs() < 1e-15 && a.dot(w) > 0.0);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) == 1.0 && sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(-800.0).is_finite());
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }

    fn random_raw(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let mag = 10f64.powf(rng.gen_range(-3.0..6.0));
                rng.gen_range(-1.0..1.0) * mag
            })
            .collect()
    }

    #[test]
    fn fuzz_outputs_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &eo in &[0.1, 0.5, 1.0] {
            let hp = ParamHyper::with_eps_omega(eo);
            for kind in [
                Parameterization::Cholesky5,
                Parameterization::Spectral6,
                Parameterization::Spectral7,
            ] {
                for _ in 0..10_000 {
                    let raw = random_raw(&mut rng, kind.channels());
                    let p = kind.metric(&raw, &hp);
                    assert!(p.omega_norm() < (1.0 - eo) * (1.0 + 1e-12) + 1e-300);
                    if eo == 1.0 {
                        assert_eq!(p.omega(), Vec2::ZERO);
                    }
                    if kind == Parameterization::Spectral7 {
                        let s = eigen_scale(raw[4], &hp);
                        assert!((hp.s_min..=hp.s_max).contains(&s));
                    }
                }
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn constrain_omega_is_odd(x in -1e3f64..1e3, y in -1e3f64..1e3, a in 0.1f64..10.0, c in 0.1f64..10.0, eo in 0.05f64..1.0) {
            let m = Sym2 { m11: a, m12: 0.3 * (a * c).sqrt(), m22: c };
            let h = ParamHyper::with_eps_omega(eo);
            let w = Vec2::new(x, y);
            let (p, q) = (constrain_omega(w, &m, &h), constrain_omega(Vec2::new(-x, -y), &m, &h));
            proptest::prop_assert_eq!(p.x, -q.x);
            proptest::prop_assert_eq!(p.y, -q.y);
        }
    }

    fn outputs(p: &RandersParams) -> [f64; 5] {
        [p.m().m11, p.m().m12, p.m().m22, p.omega().x, p.omega().y]
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let hp = ParamHyper::with_eps_omega(0.1);
        for kind in [
            Parameterization::Cholesky5,
            Parameterization::Spectral6,
            Parameterization::Spectral7,
        ] {
            for _ in 0..200 {
                let raw: Vec<f64> = (0..kind.channels()).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let (_, jac) = kind.metric_with_jacobian(&raw, &hp, false);
                for j in 0..kind.channels() {
                    let step = 1e-6;
                    let mut up = raw.clone();
                    let mut dn = raw.clone();
                    up[j] += step;
                    dn[j] -= step;
                    let fu = outputs(&kind.metric(&up, &hp));
                    let fd = outputs(&kind.metric(&dn, &hp));
                    for i in 0..5 {
                        let num = (fu[i] - fd[i]) / (2.0 * step);
                        assert!(num.is_finite());
                        let err = (num - jac.rows[i][j]).abs();
                        assert!(
                            err < 1e-6 * (1.0 + num.abs()),
                            "{kind:?} out {i} in {j}: fd {num} vs {}",
                            jac.rows[i][j]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn detached_jacobian_freezes_the_factor() {
        let hp = ParamHyper::with_eps_omega(0.1);
        let raw = [0.4, -0.2, 0.7, 0.9, -1.3];
        let (p, jac) = Parameterization::Cholesky5.metric_with_jacobian(&raw, &hp, true);
        let factor = p.omega().x / raw[3];
        assert!((jac.rows[3][3] - factor).abs() < 1e-15);
        assert!((jac.rows[4][4] - factor).abs() < 1e-15);
        assert_eq!(jac.rows[3][4], 0.0);
        for j in 0..3 {
            assert_eq!(jac.rows[3][j], 0.0);
            assert_eq!(jac.rows[4][j], 0.0);
        }
    }
}
