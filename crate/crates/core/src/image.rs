//! Grayscale images on a pixel grid.
//!
//! Positions are `(row, col)` with pixel centres at integers and rows
//! increasing downward. Vectors use `x = col`, `y = row`.

mod io;

pub use io::{read_image, write_image, BitDepth};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::metric::Vec2;
use crate::par;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PaddingMode {
    Periodic,
    Zero,
    #[default]
    Replicate,
}

impl PaddingMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "periodic" => Ok(PaddingMode::Periodic),
            "zero" => Ok(PaddingMode::Zero),
            "replicate" => Ok(PaddingMode::Replicate),
            _ => Err(Error::InvalidArgument(format!("unknown padding {s:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PaddingMode::Periodic => "periodic",
            PaddingMode::Zero => "zero",
            PaddingMode::Replicate => "replicate",
        }
    }

    /// Maps a possibly out-of-range index into `0..n`; `None` reads as zero.
    #[inline]
    fn resolve(self, i: i64, n: usize) -> Option<usize> {
        let n = n as i64;
        if (0..n).contains(&i) {
            return Some(i as usize);
        }
        match self {
            PaddingMode::Periodic => Some(i.rem_euclid(n) as usize),
            PaddingMode::Zero => None,
            PaddingMode::Replicate => Some(i.clamp(0, n - 1) as usize),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument("image dimensions must be positive".into()));
        }
        if data.len() != height * width {
            return Err(Error::LengthMismatch {
                expected: height * width,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image data"));
        }
        Ok(GrayImage { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0 && value.is_finite());
        GrayImage {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    /// Builds an image from `f(row, col)`.
    pub fn from_fn<F: Fn(usize, usize) -> f64 + Sync + Send>(height: usize, width: usize, f: F) -> Self {
        assert!(height > 0 && width > 0);
        let mut data = vec![0.0; height * width];
        par::for_each_row(&mut data, width, |r, row| {
            for (c, v) in row.iter_mut().enumerate() {
                *v = f(r, c);
            }
        });
        assert!(data.iter().all(|v| v.is_finite()), "non-finite pixel");
        GrayImage { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    fn padded(&self, row: i64, col: i64, pad: PaddingMode) -> f64 {
        match (pad.resolve(row, self.height), pad.resolve(col, self.width)) {
            (Some(r), Some(c)) => self.data[r * self.width + c],
            _ => 0.0,
        }
    }

    #[inline]
    fn corners(&self, row: f64, col: f64, pad: PaddingMode) -> ([f64; 4], f64, f64) {
        let r0 = row.floor();
        let c0 = col.floor();
        let (fr, fc) = (row - r0, col - c0);
        let (r0, c0) = (r0 as i64, c0 as i64);
        let v = [
            self.padded(r0, c0, pad),
            self.padded(r0, c0 + 1, pad),
            self.padded(r0 + 1, c0, pad),
            self.padded(r0 + 1, c0 + 1, pad),
        ];
        (v, fr, fc)
    }

    /// Bilinear value at a real position.
    #[inline]
    pub fn sample(&self, row: f64, col: f64, pad: PaddingMode) -> f64 {
        let ([a, b, c, d], fr, fc) = self.corners(row, col, pad);
        (1.0 - fr) * ((1.0 - fc) * a + fc * b) + fr * ((1.0 - fc) * c + fc * d)
    }

    /// Bilinear value and its spatial gradient `(∂/∂col, ∂/∂row)` as a
    /// vector. On cell boundaries the gradient of the cell below and to the
    /// right is returned.
    #[inline]
    pub fn sample_with_grad(&self, row: f64, col: f64, pad: PaddingMode) -> (f64, Vec2) {
        let ([a, b, c, d], fr, fc) = self.corners(row, col, pad);
        let v = (1.0 - fr) * ((1.0 - fc) * a + fc * b) + fr * ((1.0 - fc) * c + fc * d);
        let gx = (1.0 - fr) * (b - a) + fr * (d - c);
        let gy = (1.0 - fc) * (c - a) + fc * (d - b);
        (v, Vec2::new(gx, gy))
    }

    /// Elementwise `self + s * other`.
    pub fn axpy(&self, s: f64, other: &GrayImage) -> Result<GrayImage> {
        check_dims(self, other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + s * b).collect();
        GrayImage::new(self.height, self.width, data)
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> GrayImage {
        let data: Vec<f64> = self.data.iter().map(|&v| f(v)).collect();
        assert!(data.iter().all(|v| v.is_finite()), "non-finite pixel");
        GrayImage {
            height: self.height,
            width: self.width,
            data,
        }
    }

    pub fn crop(&self, row0: usize, col0: usize, height: usize, width: usize) -> Result<GrayImage> {
        if height == 0 || width == 0 || row0 + height > self.height || col0 + width > self.width {
            return Err(Error::InvalidArgument(format!(
                "crop {height}x{width} at ({row0},{col0}) outside {}x{}",
                self.height, self.width
            )));
        }
        Ok(GrayImage::from_fn(height, width, |r, c| self.get(row0 + r, col0 + c)))
    }

    /// Averages `factor × factor` blocks.
    pub fn downsample(&self, factor: usize) -> Result<GrayImage> {
        if factor == 0 || self.height % factor != 0 || self.width % factor != 0 {
            return Err(Error::InvalidArgument(format!(
                "cannot downsample {}x{} by {factor}",
                self.height, self.width
            )));
        }
        let inv = 1.0 / (factor * factor) as f64;
        Ok(GrayImage::from_fn(self.height / factor, self.width / factor, |r, c| {
            let mut s = 0.0;
            for dr in 0..factor {
                for dc in 0..factor {
                    s += self.get(r * factor + dr, c * factor + dc);
                }
            }
            s * inv
        }))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Free-function form of [`GrayImage::sample`]; `pos` is `(row, col)`.
pub fn sample_bilinear(img: &GrayImage, pos: [f64; 2], pad: PaddingMode) -> f64 {
    img.sample(pos[0], pos[1], pad)
}

fn check_dims(a: &GrayImage, b: &GrayImage) -> Result<()> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::DimensionMismatch(a.height, a.width, b.height, b.width));
    }
    Ok(())
}

/// Per-pixel vector field, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientField {
    height: usize,
    width: usize,
    data: Vec<Vec2>,
}

impl GradientField {
    pub fn from_vec(height: usize, width: usize, data: Vec<Vec2>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::LengthMismatch {
                expected: height * width,
                actual: data.len(),
            });
        }
        Ok(GradientField { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Vec2 {
        self.data[row * self.width + col]
    }

    pub fn data(&self) -> &[Vec2] {
        &self.data
    }

    pub fn max_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    /// Componentwise bilinear interpolation.
    pub fn sample(&self, row: f64, col: f64, pad: PaddingMode) -> Vec2 {
        let r0 = row.floor();
        let c0 = col.floor();
        let (fr, fc) = (row - r0, col - c0);
        let (r0, c0) = (r0 as i64, c0 as i64);
        let at = |r: i64, c: i64| match (pad.resolve(r, self.height), pad.resolve(c, self.width)) {
            (Some(r), Some(c)) => self.data[r * self.width + c],
            _ => Vec2::ZERO,
        };
        let (a, b, c, d) = (at(r0, c0), at(r0, c0 + 1), at(r0 + 1, c0), at(r0 + 1, c0 + 1));
        (a * (1.0 - fc) + b * fc) * (1.0 - fr) + (c * (1.0 - fc) + d * fc) * fr
    }
}

/// 3×3 Sobel gradient normalised by 1/8, so a unit ramp gives a unit vector.
pub fn sobel_gradient(img: &GrayImage, pad: PaddingMode) -> GradientField {
    let (h, w) = (img.height, img.width);
    let mut data = vec![Vec2::ZERO; h * w];
    par::for_each_row(&mut data, w, |r, row| {
        let r = r as i64;
        for (c, out) in row.iter_mut().enumerate() {
            let c = c as i64;
            let p = |dr: i64, dc: i64| img.padded(r + dr, c + dc, pad);
            let gx = (p(-1, 1) - p(-1, -1)) + 2.0 * (p(0, 1) - p(0, -1)) + (p(1, 1) - p(1, -1));
            let gy = (p(1, -1) - p(-1, -1)) + 2.0 * (p(1, 0) - p(-1, 0)) + (p(1, 1) - p(-1, 1));
            *out = Vec2::new(gx / 8.0, gy / 8.0);
        }
    });
    GradientField {
        height: h,
        width: w,
        data,
    }
}

/// Standard normal stream from ChaCha20 seeded by `seed`, via Box–Muller.
pub struct NormalStream {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64) -> Self {
        NormalStream {
            rng: ChaCha20Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1: f64 = 1.0 - self.rng.gen::<f64>();
        let u2: f64 = self.rng.gen::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    /// Uniform sample in `[lo, hi)`.
    pub fn next_uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.rng.gen::<f64>()
    }
}

/// Adds i.i.d. `N(0, sigma_n²)` noise in row-major order. No clamping.
pub fn add_gaussian_noise(img: &GrayImage, sigma_n: f64, seed: u64) -> GrayImage {
    assert!(sigma_n >= 0.0 && sigma_n.is_finite(), "sigma_n must be nonnegative");
    if sigma_n == 0.0 {
        return img.clone();
    }
    let mut stream = NormalStream::new(seed);
    let data = img.data.iter().map(|v| v + sigma_n * stream.next_normal()).collect();
    GrayImage {
        height: img.height,
        width: img.width,
        data,
    }
}

/// Mean squared error over all pixels.
pub fn mse(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    check_dims(a, b)?;
    let rows: Vec<f64> = par::map_indexed(a.height, |r| {
        let s = r * a.width;
        a.data[s..s + a.width]
            .iter()
            .zip(&b.data[s..s + a.width])
            .map(|(x, y)| (x - y) * (x - y))
            .sum()
    });
    Ok(rows.iter().sum::<f64>() / a.len() as f64)
}

/// `10 log10(1 / MSE)` for unit-range images; `+∞` for identical images.
pub fn psnr(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// Normalised generalisation gap `(test - train) / train`.
pub fn gen_gap(train_mse: f64, test_mse: f64) -> Result<f64> {
    if !(train_mse > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "train MSE must be positive, got {train_mse}"
        )));
    }
    Ok((test_mse - train_mse) / train_mse)
}

/// Circular shift: `out(r, c) = img(r - dr, c - dc)`.
pub fn shift_periodic(img: &GrayImage, dr: i64, dc: i64) -> GrayImage {
    let (h, w) = (img.height as i64, img.width as i64);
    GrayImage::from_fn(img.height, img.width, |r, c| {
        let sr = (r as i64 - dr).rem_euclid(h) as usize;
        let sc = (c as i64 - dc).rem_euclid(w) as usize;
        img.get(sr, sc)
    })
}
