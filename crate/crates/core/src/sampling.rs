//! Kernel supports and polar unit-ball sampling schemes.
//!
//! Offsets are `Vec2 { x: col, y: row }` in pixels. Their order is part of
//! the contract, because weight `j` is always paired with offset `j`.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::metric::{RandersParams, Vec2};

fn check_odd(k: usize) -> Result<()> {
    if k == 0 || k % 2 == 0 {
        Err(Error::EvenKernel(k))
    } else {
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelSupport {
    k: usize,
    offsets: Vec<Vec2>,
}

impl KernelSupport {
    pub fn new(k: usize, offsets: Vec<Vec2>) -> Result<Self> {
        check_odd(k)?;
        if offsets.len() != k * k {
            return Err(Error::LengthMismatch {
                expected: k * k,
                actual: offsets.len(),
            });
        }
        if offsets.iter().any(|o| !o.is_finite()) {
            return Err(Error::NonFinite("support offsets"));
        }
        Ok(KernelSupport { k, offsets })
    }

    /// The `k × k` integer grid centred on the origin, row-major.
    pub fn reference_grid(k: usize) -> Result<Self> {
        check_odd(k)?;
        let h = (k / 2) as i64;
        let offsets = (-h..=h)
            .flat_map(|dy| (-h..=h).map(move |dx| Vec2::new(dx as f64, dy as f64)))
            .collect();
        Ok(KernelSupport { k, offsets })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn offsets(&self) -> &[Vec2] {
        &self.offsets
    }

    pub fn dilate(&self, s: f64) -> Result<Self> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidArgument(format!("dilation must be positive, got {s}")));
        }
        Ok(KernelSupport {
            k: self.k,
            offsets: self.offsets.iter().map(|&o| o * s).collect(),
        })
    }

    pub fn shift(&self, delta: Vec2) -> Self {
        KernelSupport {
            k: self.k,
            offsets: self.offsets.iter().map(|&o| o + delta).collect(),
        }
    }

    /// Adds one offset per cell.
    pub fn deform(&self, per_cell: &[Vec2]) -> Result<Self> {
        if per_cell.len() != self.offsets.len() {
            return Err(Error::LengthMismatch {
                expected: self.offsets.len(),
                actual: per_cell.len(),
            });
        }
        KernelSupport::new(
            self.k,
            self.offsets.iter().zip(per_cell).map(|(&o, &d)| o + d).collect(),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolarVariant {
    Grid,
    OnionPeel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PolarScheme {
    pub variant: PolarVariant,
    pub k: usize,
}

impl PolarScheme {
    pub fn onion(k: usize) -> Self {
        PolarScheme {
            variant: PolarVariant::OnionPeel,
            k,
        }
    }

    pub fn grid(k: usize) -> Self {
        PolarScheme {
            variant: PolarVariant::Grid,
            k,
        }
    }

    pub fn parse(name: &str, k: usize) -> Result<Self> {
        match name {
            "onion" => Ok(Self::onion(k)),
            "grid" => Ok(Self::grid(k)),
            _ => Err(Error::InvalidArgument(format!("unknown scheme {name:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.variant {
            PolarVariant::Grid => "grid",
            PolarVariant::OnionPeel => "onion",
        }
    }
}

/// `(s, θ)` pairs of a scheme, `k²` of them.
///
/// Grid: `s ∈ {0, 1/(k-1), …, 1}` outer, `θ ∈ {0, 2π/k, …}` inner, so the
/// `s = 0` row puts `k` samples at the origin. Onion peeling: the origin
/// once, then layer `l = 1..=m` with `m = (k-1)/2` at radius `l/m` and `8l`
/// angles.
pub fn polar_samples(scheme: PolarScheme) -> Result<Vec<(f64, f64)>> {
    let k = scheme.k;
    check_odd(k)?;
    let mut out = Vec::with_capacity(k * k);
    match scheme.variant {
        PolarVariant::Grid => {
            for i in 0..k {
                let s = if k == 1 { 0.0 } else { i as f64 / (k - 1) as f64 };
                for j in 0..k {
                    out.push((s, TAU * j as f64 / k as f64));
                }
            }
        }
        PolarVariant::OnionPeel => {
            let m = (k - 1) / 2;
            out.push((0.0, 0.0));
            for layer in 1..=m {
                let s = layer as f64 / m as f64;
                let n = 8 * layer;
                for a in 0..n {
                    out.push((s, TAU * a as f64 / n as f64));
                }
            }
        }
    }
    debug_assert_eq!(out.len(), k * k);
    Ok(out)
}

/// Polar samples with precomputed unit directions.
#[derive(Clone, Debug, PartialEq)]
pub struct PolarSamples {
    scheme: PolarScheme,
    pub(crate) s: Vec<f64>,
    pub(crate) dir: Vec<Vec2>,
}

impl PolarSamples {
    pub fn new(scheme: PolarScheme) -> Result<Self> {
        let pairs = polar_samples(scheme)?;
        Ok(PolarSamples {
            scheme,
            s: pairs.iter().map(|p| p.0).collect(),
            dir: pairs.iter().map(|p| Vec2::from_angle(p.1)).collect(),
        })
    }

    pub fn scheme(&self) -> PolarScheme {
        self.scheme
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    /// Offsets `s · y(θ)` for one metric, written into `out`.
    #[inline]
    pub fn fill_offsets(&self, p: &RandersParams, scale: f64, out: &mut [Vec2]) {
        for ((o, &s), &u) in out.iter_mut().zip(&self.s).zip(&self.dir) {
            *o = utb_point(p, u) * (scale * s);
        }
    }

    pub fn support(&self, p: &RandersParams, scale: f64) -> KernelSupport {
        let mut offsets = vec![Vec2::ZERO; self.len()];
        self.fill_offsets(p, scale, &mut offsets);
        KernelSupport {
            k: self.scheme.k,
            offsets,
        }
    }
}

/// Unit-circle point in the unit direction `u`.
#[inline]
pub(crate) fn utb_point(p: &RandersParams, u: Vec2) -> Vec2 {
    u * (1.0 / p.eval(u))
}

/// Support `{ s · y(θ) }` of the unit tangent ball of `p`.
pub fn utb_support(p: &RandersParams, scheme: PolarScheme) -> Result<KernelSupport> {
    Ok(PolarSamples::new(scheme)?.support(p, 1.0))
}
