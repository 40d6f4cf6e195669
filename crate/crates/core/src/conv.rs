//! Gather convolution over arbitrary per-pixel supports.
//!
//! `out(x) = Σ_j g_j · f(x + δ_j(x))` with bilinear sampling. Every output
//! pixel is computed independently, so the result does not depend on the
//! execution mode or on the number of threads.

use crate::error::{Error, Result};
use crate::image::{GrayImage, PaddingMode};
use crate::metric::{RandersParams, Vec2};
use crate::par;
use crate::params::{ParamHyper, Parameterization};
use crate::sampling::{KernelSupport, PolarSamples, PolarScheme, PolarVariant};

#[derive(Clone, Debug, PartialEq)]
pub struct KernelWeights {
    k: usize,
    weights: Vec<f64>,
}

impl KernelWeights {
    pub fn new(k: usize, weights: Vec<f64>) -> Result<Self> {
        if k % 2 == 0 {
            return Err(Error::EvenKernel(k));
        }
        if weights.len() != k * k {
            return Err(Error::LengthMismatch {
                expected: k * k,
                actual: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("kernel weights"));
        }
        Ok(KernelWeights { k, weights })
    }

    pub fn uniform(k: usize) -> Result<Self> {
        Self::new(k, vec![1.0 / (k * k) as f64; k * k])
    }

    pub fn one_hot(k: usize, index: usize) -> Result<Self> {
        let mut w = vec![0.0; k * k];
        *w.get_mut(index)
            .ok_or_else(|| Error::InvalidArgument(format!("index {index} out of range")))? = 1.0;
        Self::new(k, w)
    }

    /// Weights proportional to the area of each sample's polar cell, summing
    /// to one. Onion peeling is already area-uniform; the grid scheme is not.
    pub fn polar_area(scheme: PolarScheme) -> Result<Self> {
        let samples = PolarSamples::new(scheme)?;
        let k = scheme.k;
        if k == 1 {
            return Self::new(1, vec![1.0]);
        }
        let (step, per_ring): (f64, Box<dyn Fn(f64) -> f64>) = match scheme.variant {
            PolarVariant::Grid => (1.0 / (k - 1) as f64, Box::new(move |_| k as f64)),
            PolarVariant::OnionPeel => {
                let m = ((k - 1) / 2) as f64;
                (1.0 / m, Box::new(move |s: f64| (8.0 * (s * m).round()).max(1.0)))
            }
        };
        let raw: Vec<f64> = samples
            .s
            .iter()
            .map(|&s| {
                let ring = if s == 0.0 { 0.25 * step * step } else { 2.0 * s * step };
                ring / per_ring(s)
            })
            .collect();
        let total: f64 = raw.iter().sum();
        Self::new(k, raw.iter().map(|w| w / total).collect())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn linear_combination(a: f64, wa: &KernelWeights, b: f64, wb: &KernelWeights) -> Result<Self> {
        if wa.k != wb.k {
            return Err(Error::LengthMismatch {
                expected: wa.weights.len(),
                actual: wb.weights.len(),
            });
        }
        let w = wa.weights.iter().zip(&wb.weights).map(|(x, y)| a * x + b * y).collect();
        Self::new(wa.k, w)
    }
}

/// Per-pixel Randers parameters, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricField {
    height: usize,
    width: usize,
    data: Vec<RandersParams>,
}

impl MetricField {
    pub fn new(height: usize, width: usize, data: Vec<RandersParams>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::LengthMismatch {
                expected: height * width,
                actual: data.len(),
            });
        }
        Ok(MetricField { height, width, data })
    }

    pub fn constant(height: usize, width: usize, p: RandersParams) -> Self {
        MetricField {
            height,
            width,
            data: vec![p; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> &RandersParams {
        &self.data[row * self.width + col]
    }

    pub fn data(&self) -> &[RandersParams] {
        &self.data
    }

    /// Dual metric at every pixel.
    pub fn dual(&self) -> Result<MetricField> {
        let data = self.data.iter().map(|p| p.dual()).collect::<Result<Vec<_>>>()?;
        Ok(MetricField { data, ..*self })
    }

    pub fn from_raw(raw: &RawField, kind: Parameterization, h: &ParamHyper) -> Result<Self> {
        if raw.channels != kind.channels() {
            return Err(Error::LengthMismatch {
                expected: kind.channels(),
                actual: raw.channels,
            });
        }
        let data = (0..raw.height * raw.width)
            .map(|i| kind.metric(raw.pixel(i), h))
            .collect();
        Ok(MetricField {
            height: raw.height,
            width: raw.width,
            data,
        })
    }
}

/// Per-pixel vectors of raw numbers, pixel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RawField {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl RawField {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        RawField {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    /// Every pixel set to `values`.
    pub fn broadcast(height: usize, width: usize, values: &[f64]) -> Self {
        let mut data = Vec::with_capacity(height * width * values.len());
        for _ in 0..height * width {
            data.extend_from_slice(values);
        }
        RawField {
            height,
            width,
            channels: values.len(),
            data,
        }
    }

    #[inline]
    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }

    /// Per-cell offsets of a deformable head: channel `2j` is the column
    /// offset of cell `j`, channel `2j + 1` its row offset.
    #[inline]
    pub fn cell_offset(&self, index: usize, cell: usize) -> Vec2 {
        let p = self.pixel(index);
        Vec2::new(p[2 * cell], p[2 * cell + 1])
    }
}

/// Where the kernel reads the image at each pixel.
pub enum SupportProvider<'a> {
    /// One support shared by all pixels.
    Fixed(KernelSupport),
    /// Reference grid of size `k` plus per-pixel, per-cell offsets.
    Deformable { k: usize, offsets: &'a RawField },
    /// Arbitrary rule `(row, col, out)` writing `k²` offsets.
    PerPixel {
        k: usize,
        rule: Box<dyn Fn(usize, usize, &mut [Vec2]) + Sync + Send + 'a>,
    },
}

impl SupportProvider<'_> {
    pub fn k(&self) -> usize {
        match self {
            SupportProvider::Fixed(s) => s.k(),
            SupportProvider::Deformable { k, .. } | SupportProvider::PerPixel { k, .. } => *k,
        }
    }
}

#[inline]
fn gather(img: &GrayImage, r: usize, c: usize, w: &[f64], offsets: &[Vec2], pad: PaddingMode) -> f64 {
    let (rf, cf) = (r as f64, c as f64);
    let mut acc = 0.0;
    for (g, o) in w.iter().zip(offsets) {
        acc += g * img.sample(rf + o.y, cf + o.x, pad);
    }
    acc
}

/// Weighted gather convolution with bilinear sampling.
pub fn convolve(
    img: &GrayImage,
    weights: &KernelWeights,
    supports: &SupportProvider,
    pad: PaddingMode,
) -> Result<GrayImage> {
    let k = supports.k();
    if k != weights.k {
        return Err(Error::LengthMismatch {
            expected: weights.weights.len(),
            actual: k * k,
        });
    }
    let (h, w) = (img.height(), img.width());
    let g = weights.as_slice();
    let mut out = vec![0.0; h * w];
    match supports {
        SupportProvider::Fixed(s) => {
            let offs = s.offsets();
            par::for_each_row(&mut out, w, |r, row| {
                for (c, o) in row.iter_mut().enumerate() {
                    *o = gather(img, r, c, g, offs, pad);
                }
            });
        }
        SupportProvider::Deformable { offsets, .. } => {
            if offsets.height != h || offsets.width != w || offsets.channels != 2 * k * k {
                return Err(Error::InvalidArgument(format!(
                    "deformable offsets must be {h}x{w}x{}",
                    2 * k * k
                )));
            }
            let base = KernelSupport::reference_grid(k)?;
            par::for_each_row(&mut out, w, |r, row| {
                let mut buf = base.offsets().to_vec();
                for (c, o) in row.iter_mut().enumerate() {
                    let idx = r * w + c;
                    for (j, b) in buf.iter_mut().enumerate() {
                        *b = base.offsets()[j] + offsets.cell_offset(idx, j);
                    }
                    *o = gather(img, r, c, g, &buf, pad);
                }
            });
        }
        SupportProvider::PerPixel { rule, .. } => {
            par::for_each_row(&mut out, w, |r, row| {
                let mut buf = vec![Vec2::ZERO; k * k];
                for (c, o) in row.iter_mut().enumerate() {
                    rule(r, c, &mut buf);
                    *o = gather(img, r, c, g, &buf, pad);
                }
            });
        }
    }
    GrayImage::new(h, w, out).map_err(|_| Error::NonFinite("convolution output"))
}

/// Convolution whose support at `x` samples the unit tangent ball of
/// `field(x)`, with sample offsets multiplied by `scale`.
pub fn metric_utb_convolve_scaled(
    img: &GrayImage,
    weights: &KernelWeights,
    field: &MetricField,
    scheme: PolarScheme,
    scale: f64,
    pad: PaddingMode,
) -> Result<GrayImage> {
    if field.height != img.height() || field.width != img.width() {
        return Err(Error::DimensionMismatch(
            field.height,
            field.width,
            img.height(),
            img.width(),
        ));
    }
    let samples = PolarSamples::new(scheme)?;
    let supports = SupportProvider::PerPixel {
        k: scheme.k,
        rule: Box::new(move |r, c, out| samples.fill_offsets(field.get(r, c), scale, out)),
    };
    convolve(img, weights, &supports, pad)
}

pub fn metric_utb_convolve(
    img: &GrayImage,
    weights: &KernelWeights,
    field: &MetricField,
    scheme: PolarScheme,
    pad: PaddingMode,
) -> Result<GrayImage> {
    metric_utb_convolve_scaled(img, weights, field, scheme, 1.0, pad)
}

/// Standard `k × k` convolutions producing one raw channel each.
pub fn intermediate_head(img: &GrayImage, head: &[KernelWeights], pad: PaddingMode) -> Result<RawField> {
    let channels = head.len();
    if channels == 0 {
        return Err(Error::InvalidArgument("empty head".into()));
    }
    let maps = head
        .iter()
        .map(|w| {
            convolve(
                img,
                w,
                &SupportProvider::Fixed(KernelSupport::reference_grid(w.k())?),
                pad,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let n = img.len();
    let mut data = vec![0.0; n * channels];
    for (ch, m) in maps.iter().enumerate() {
        for (i, v) in m.data().iter().enumerate() {
            data[i * channels + ch] = *v;
        }
    }
    Ok(RawField {
        height: img.height(),
        width: img.width(),
        channels,
        data,
    })
}

/// Head initialisation for one input channel: the `l11` and `l22` channels
/// of the Cholesky path are uniform at `1/k²`, the rest at `1e-6`.
pub fn init_metric_head(kind: Parameterization, k: usize) -> Result<Vec<KernelWeights>> {
    let z = 1.0 / (k * k) as f64;
    (0..kind.channels())
        .map(|ch| {
            let v = if kind == Parameterization::Cholesky5 && (ch == 0 || ch == 2) {
                z
            } else {
                1e-6
            };
            KernelWeights::new(k, vec![v; k * k])
        })
        .collect()
}

/// Zero head for a deformable convolution: `2k²` channels.
pub fn zero_deformable_head(k: usize) -> Result<Vec<KernelWeights>> {
    (0..2 * k * k)
        .map(|_| KernelWeights::new(k, vec![0.0; k * k]))
        .collect()
}
