//! Analytic gradients and gradient-descent training of kernel shapes.
//!
//! The loss is the mean squared error over all pixels. For the metric model
//! the chain is raw numbers → `(M, ω)` → unit-circle points → bilinear
//! samples; for the deformable model the raw numbers are the offsets.
//! Gradients of the bilinear interpolant are taken on the cell below and to
//! the right of each sample, which is the exact gradient away from cell
//! boundaries.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::conv::{
    convolve, init_metric_head, intermediate_head, metric_utb_convolve, KernelWeights, MetricField, RawField,
    SupportProvider,
};
use crate::error::{Error, Result};
use crate::image::{gen_gap, mse, GrayImage, PaddingMode};
use crate::metric::{RandersParams, Vec2};
use crate::par;
use crate::params::{ParamHyper, Parameterization, EIG_FLOOR_ABS};
use crate::sampling::{utb_point, KernelSupport, PolarSamples, PolarScheme};

/// Sensitivities `∂y/∂γ` of the unit-circle point in direction `theta` for
/// `γ = (m11, m12, m22, ω1, ω2)`.
pub fn d_unit_circle_d_gamma(p: &RandersParams, theta: f64) -> [Vec2; 5] {
    d_unit_point(p, Vec2::from_angle(theta))
}

#[inline]
fn d_unit_point(p: &RandersParams, u: Vec2) -> [Vec2; 5] {
    let sq = p.m().quad(u).max(0.0).sqrt();
    let f = sq + p.omega().dot(u);
    let df = [u.x * u.x / (2.0 * sq), u.x * u.y / sq, u.y * u.y / (2.0 * sq), u.x, u.y];
    let s = -1.0 / (f * f);
    df.map(|d| u * (s * d))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Per-pixel raw metric parameters.
    UtbRaw,
    /// Per-pixel, per-cell raw offsets added to the reference grid.
    DeformableRaw,
}

impl Method {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "utb" | "utb_raw" => Ok(Method::UtbRaw),
            "deformable" | "deformable_raw" => Ok(Method::DeformableRaw),
            _ => Err(Error::InvalidArgument(format!("unknown method {s:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::UtbRaw => "utb",
            Method::DeformableRaw => "deformable",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub k: usize,
    pub iterations: usize,
    pub lr: f64,
    /// Step size for the kernel weights; `None` uses `lr`.
    pub lr_weights: Option<f64>,
    pub learn_weights: bool,
    pub kind: Parameterization,
    pub hyper: ParamHyper,
    /// Treat the drift scale factor as a constant in the gradient.
    pub detach: bool,
    pub scheme: PolarScheme,
    /// Initial isotropic metric `ι I` of the metric model.
    pub init_iota: f64,
    pub pad: PaddingMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::UtbRaw,
            k: 11,
            iterations: 100,
            lr: 1e4,
            lr_weights: None,
            learn_weights: false,
            kind: Parameterization::Cholesky5,
            hyper: ParamHyper::default(),
            detach: true,
            scheme: PolarScheme::onion(11),
            init_iota: 0.1,
            pad: PaddingMode::Replicate,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lr must be nonnegative, got {}",
                self.lr
            )));
        }
        if self.scheme.k != self.k {
            return Err(Error::InvalidArgument(format!(
                "scheme size {} differs from k = {}",
                self.scheme.k, self.k
            )));
        }
        if !(self.init_iota > 0.0) {
            return Err(Error::InvalidArgument("init_iota must be positive".into()));
        }
        self.hyper.validate()
    }
}

/// Raw numbers that make the parameterization return roughly `ι I` with no
/// drift.
pub fn isotropic_raw(kind: Parameterization, iota: f64, h: &ParamHyper) -> Vec<f64> {
    match kind {
        Parameterization::Cholesky5 => {
            let l = iota.sqrt() - h.eps_l;
            vec![l, 0.0, l, 0.0, 0.0]
        }
        Parameterization::Spectral6 => {
            let l = (iota - h.eps_l).abs();
            vec![1.0, 0.0, l, l, 0.0, 0.0]
        }
        Parameterization::Spectral7 => {
            let s = crate::params::eigen_scale(0.0, h);
            let q = (iota / (2.0 * s)).clamp(EIG_FLOOR_ABS, 1.0 - 1e-12);
            let l = (q / (1.0 - q)).ln();
            vec![1.0, 0.0, l, l, 0.0, 0.0, 0.0]
        }
    }
}

/// Trainable state: per-pixel raw numbers plus shared weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub cfg: TrainConfig,
    pub raw: RawField,
    pub weights: KernelWeights,
}

impl Model {
    pub fn init(cfg: &TrainConfig, height: usize, width: usize) -> Result<Self> {
        cfg.validate()?;
        let raw = match cfg.method {
            Method::UtbRaw => RawField::broadcast(height, width, &isotropic_raw(cfg.kind, cfg.init_iota, &cfg.hyper)),
            Method::DeformableRaw => RawField::zeros(height, width, 2 * cfg.k * cfg.k),
        };
        Ok(Model {
            cfg: *cfg,
            raw,
            weights: KernelWeights::uniform(cfg.k)?,
        })
    }

    pub fn field(&self) -> Result<MetricField> {
        MetricField::from_raw(&self.raw, self.cfg.kind, &self.cfg.hyper)
    }

    pub fn forward(&self, img: &GrayImage) -> Result<GrayImage> {
        match self.cfg.method {
            Method::UtbRaw => metric_utb_convolve(img, &self.weights, &self.field()?, self.cfg.scheme, self.cfg.pad),
            Method::DeformableRaw => convolve(
                img,
                &self.weights,
                &SupportProvider::Deformable {
                    k: self.cfg.k,
                    offsets: &self.raw,
                },
                self.cfg.pad,
            ),
        }
    }
}

/// Loss value and gradients of one forward/backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub mse: f64,
    pub output: GrayImage,
    /// Same layout as [`RawField::data`].
    pub raw: Vec<f64>,
    /// `None` with fixed kernel weights.
    pub weights: Option<Vec<f64>>,
}

struct RowPass {
    out: Vec<f64>,
    raw: Vec<f64>,
    wgrad: Vec<f64>,
    sq: f64,
}

/// MSE between `model(img)` and `target` and its gradients.
pub fn conv_grads(model: &Model, img: &GrayImage, target: &GrayImage, learn_weights: bool) -> Result<Grads> {
    let (h, w) = (img.height(), img.width());
    if target.height() != h || target.width() != w {
        return Err(Error::DimensionMismatch(h, w, target.height(), target.width()));
    }
    if model.raw.height != h || model.raw.width != w {
        return Err(Error::DimensionMismatch(model.raw.height, model.raw.width, h, w));
    }
    let cfg = &model.cfg;
    let k2 = cfg.k * cfg.k;
    let ch = model.raw.channels;
    let n = (h * w) as f64;
    let g = model.weights.as_slice();
    let samples = PolarSamples::new(cfg.scheme)?;
    let reference = KernelSupport::reference_grid(cfg.k)?;

    let rows: Vec<RowPass> = par::map_indexed(h, |r| {
        let mut pass = RowPass {
            out: vec![0.0; w],
            raw: vec![0.0; w * ch],
            wgrad: if learn_weights { vec![0.0; k2] } else { Vec::new() },
            sq: 0.0,
        };
        let mut vals = vec![0.0; k2];
        let mut spatial = vec![Vec2::ZERO; k2];
        for c in 0..w {
            let idx = r * w + c;
            let (rf, cf) = (r as f64, c as f64);
            let mut out = 0.0;
            // dout/dγ for the metric model, dout/doffset otherwise.
            let mut dgamma = [0.0f64; 5];
            let mut jac = None;
            match cfg.method {
                Method::UtbRaw => {
                    let (p, j) = cfg
                        .kind
                        .metric_with_jacobian(model.raw.pixel(idx), &cfg.hyper, cfg.detach);
                    for (jj, (&s, &u)) in samples.s.iter().zip(&samples.dir).enumerate() {
                        let o = utb_point(&p, u) * s;
                        let (v, grad) = img.sample_with_grad(rf + o.y, cf + o.x, cfg.pad);
                        out += g[jj] * v;
                        vals[jj] = v;
                        if s != 0.0 {
                            let dy = d_unit_point(&p, u);
                            let f = g[jj] * s;
                            for (acc, d) in dgamma.iter_mut().zip(dy) {
                                *acc += f * d.dot(grad);
                            }
                        }
                    }
                    jac = Some(j);
                }
                Method::DeformableRaw => {
                    for jj in 0..k2 {
                        let o = reference.offsets()[jj] + model.raw.cell_offset(idx, jj);
                        let (v, grad) = img.sample_with_grad(rf + o.y, cf + o.x, cfg.pad);
                        out += g[jj] * v;
                        vals[jj] = v;
                        spatial[jj] = grad;
                    }
                }
            }
            let res = out - target.get(r, c);
            pass.out[c] = out;
            pass.sq += res * res;
            let scale = 2.0 * res / n;
            let dst = &mut pass.raw[c * ch..(c + 1) * ch];
            match jac {
                Some(j) => {
                    let gg = dgamma.map(|d| d * scale);
                    j.pull_back(&gg, dst);
                }
                None => {
                    for jj in 0..k2 {
                        let d = spatial[jj] * (g[jj] * scale);
                        dst[2 * jj] = d.x;
                        dst[2 * jj + 1] = d.y;
                    }
                }
            }
            if learn_weights {
                for (acc, v) in pass.wgrad.iter_mut().zip(&vals) {
                    *acc += scale * v;
                }
            }
        }
        pass
    });

    let mut output = Vec::with_capacity(h * w);
    let mut raw = Vec::with_capacity(h * w * ch);
    let mut wsum = if learn_weights { Some(vec![0.0; k2]) } else { None };
    let mut sq = 0.0;
    for row in rows {
        output.extend_from_slice(&row.out);
        raw.extend_from_slice(&row.raw);
        sq += row.sq;
        if let Some(ws) = wsum.as_mut() {
            for (a, b) in ws.iter_mut().zip(&row.wgrad) {
                *a += b;
            }
        }
    }
    Ok(Grads {
        mse: sq / n,
        output: GrayImage::new(h, w, output).map_err(|_| Error::NonFinite("model output"))?,
        raw,
        weights: wsum,
    })
}

/// One gradient-descent update.
pub fn apply_step(model: &mut Model, grads: &Grads) -> Result<()> {
    let lr = model.cfg.lr;
    for (p, g) in model.raw.data.iter_mut().zip(&grads.raw) {
        *p -= lr * g;
    }
    if model.cfg.learn_weights {
        if let Some(wg) = &grads.weights {
            let lw = model.cfg.lr_weights.unwrap_or(lr);
            let w: Vec<f64> = model
                .weights
                .as_slice()
                .iter()
                .zip(wg)
                .map(|(w, g)| w - lw * g)
                .collect();
            model.weights = KernelWeights::new(model.cfg.k, w)?;
        }
    }
    if model.raw.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("raw parameters after update"));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveRow {
    pub iteration: usize,
    pub train_mse: f64,
    pub test_mse: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub model: Model,
    /// One row per iteration plus the final state.
    pub curve: Vec<CurveRow>,
    pub train_mse: f64,
    pub test_mse: f64,
    pub gen_gap: f64,
}

/// Factor above the initial MSE at which training is declared diverged.
pub const DIVERGENCE_FACTOR: f64 = 1e3;

fn check_divergence(iteration: usize, value: f64, initial: f64) -> Result<()> {
    if !value.is_finite() || value > DIVERGENCE_FACTOR * initial {
        return Err(Error::Diverged {
            iteration,
            mse: value,
            initial,
        });
    }
    Ok(())
}

/// Full-batch gradient descent on one noisy image against its clean
/// version, evaluated on a second noisy realisation.
pub fn train_single_image(
    noisy_train: &GrayImage,
    noisy_test: &GrayImage,
    clean: &GrayImage,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let mut model = Model::init(cfg, clean.height(), clean.width())?;
    let mut curve = Vec::with_capacity(cfg.iterations + 1);
    let mut initial = None;
    for it in 0..=cfg.iterations {
        let grads = conv_grads(&model, noisy_train, clean, cfg.learn_weights)?;
        let init = *initial.get_or_insert(grads.mse);
        check_divergence(it, grads.mse, init)?;
        let test = mse(&model.forward(noisy_test)?, clean)?;
        curve.push(CurveRow {
            iteration: it,
            train_mse: grads.mse,
            test_mse: test,
        });
        if it < cfg.iterations {
            apply_step(&mut model, &grads)?;
        }
    }
    let last = *curve.last().expect("at least one row");
    Ok(TrainOutcome {
        model,
        curve,
        train_mse: last.train_mse,
        test_mse: last.test_mse,
        gen_gap: gen_gap(last.train_mse, last.test_mse)?,
    })
}

/// Default number of updates a learning-rate candidate is trained for.
pub const DEFAULT_PROBE_ITERS: usize = 10;

/// Train MSE after `iters` updates with learning rate `lr`.
pub fn probe_lr(noisy_train: &GrayImage, clean: &GrayImage, cfg: &TrainConfig, lr: f64, iters: usize) -> Result<f64> {
    if iters == 0 {
        return Err(Error::InvalidArgument("probe needs at least one update".into()));
    }
    let cfg = TrainConfig { lr, ..*cfg };
    let mut model = Model::init(&cfg, clean.height(), clean.width())?;
    let mut initial = None;
    for it in 0..iters {
        let g = conv_grads(&model, noisy_train, clean, cfg.learn_weights)?;
        let init = *initial.get_or_insert(g.mse);
        check_divergence(it, g.mse, init)?;
        apply_step(&mut model, &g)?;
    }
    let after = mse(&model.forward(noisy_train)?, clean)?;
    check_divergence(iters, after, initial.expect("iters > 0"))?;
    Ok(after)
}

/// Log-spaced grid `10^lo … 10^hi` with `per_decade` points per decade.
pub fn log_grid(lo_exp: i32, hi_exp: i32, per_decade: usize) -> Vec<f64> {
    assert!(hi_exp >= lo_exp && per_decade > 0);
    let n = (hi_exp - lo_exp) as usize * per_decade;
    (0..=n)
        .map(|i| 10f64.powf(lo_exp as f64 + i as f64 / per_decade as f64))
        .collect()
}

/// Default learning-rate grid of a method.
pub fn default_lr_grid(method: Method) -> Vec<f64> {
    match method {
        Method::UtbRaw => log_grid(2, 7, 2),
        Method::DeformableRaw => log_grid(3, 9, 2),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LrChoice {
    pub lr: f64,
    /// Score of every candidate in ascending `lr` order; `None` if it failed.
    pub scores: Vec<(f64, Option<f64>)>,
}

/// Picks the candidate with the lowest score; ties go to the smaller rate.
/// Candidates whose run fails or returns a non-finite score are skipped.
pub fn lr_find<F>(grid: &[f64], mut score: F) -> Result<LrChoice>
where
    F: FnMut(f64) -> Result<f64>,
{
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty learning-rate grid".into()));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut scores = Vec::with_capacity(sorted.len());
    let mut best: Option<(f64, f64)> = None;
    let mut failures = Vec::new();
    for &lr in &sorted {
        match score(lr) {
            Ok(v) if v.is_finite() => {
                scores.push((lr, Some(v)));
                if best.map_or(true, |(_, b)| v < b) {
                    best = Some((lr, v));
                }
            }
            Ok(v) => {
                failures.push(format!("lr={lr:e}: score {v}"));
                scores.push((lr, None));
            }
            Err(e) => {
                failures.push(format!("lr={lr:e}: {e}"));
                scores.push((lr, None));
            }
        }
    }
    match best {
        Some((lr, _)) => Ok(LrChoice { lr, scores }),
        None => Err(Error::AllCandidatesDiverged(failures.join("; "))),
    }
}

/// Input/target pair for dataset training.
#[derive(Clone, Debug)]
pub struct Sample {
    pub noisy: GrayImage,
    pub clean: GrayImage,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetConfig {
    pub k: usize,
    pub head_k: usize,
    pub kind: Parameterization,
    pub hyper: ParamHyper,
    pub scheme: PolarScheme,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub pad: PaddingMode,
}

/// Per-epoch mean training MSE of the intermediate-head model.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetOutcome {
    pub head: Vec<KernelWeights>,
    pub epoch_mse: Vec<f64>,
}

/// Gradient of the loss with respect to the head weights, given the
/// gradient with respect to the head outputs.
fn head_grads(img: &GrayImage, head_k: usize, raw_grad: &[f64], channels: usize, pad: PaddingMode) -> Vec<Vec<f64>> {
    let reference = KernelSupport::reference_grid(head_k).expect("odd head size");
    let (h, w) = (img.height(), img.width());
    let rows: Vec<Vec<f64>> = par::map_indexed(h, |r| {
        let mut acc = vec![0.0; channels * head_k * head_k];
        for c in 0..w {
            let gpx = &raw_grad[(r * w + c) * channels..(r * w + c + 1) * channels];
            for (i, o) in reference.offsets().iter().enumerate() {
                let v = img.sample(r as f64 + o.y, c as f64 + o.x, pad);
                for ch in 0..channels {
                    acc[ch * head_k * head_k + i] += gpx[ch] * v;
                }
            }
        }
        acc
    });
    let mut total = vec![0.0; channels * head_k * head_k];
    for row in rows {
        for (a, b) in total.iter_mut().zip(row) {
            *a += b;
        }
    }
    total.chunks(head_k * head_k).map(|c| c.to_vec()).collect()
}

/// Mini-batch gradient descent of an intermediate head that predicts the
/// metric from the image. Carries no accuracy guarantees.
pub fn train_dataset(data: &[Sample], cfg: &DatasetConfig) -> Result<DatasetOutcome> {
    if data.is_empty() || cfg.batch == 0 {
        return Err(Error::InvalidArgument("empty dataset or batch".into()));
    }
    let mut head = init_metric_head(cfg.kind, cfg.head_k)?;
    let channels = cfg.kind.channels();
    let tc = TrainConfig {
        method: Method::UtbRaw,
        k: cfg.k,
        kind: cfg.kind,
        hyper: cfg.hyper,
        detach: true,
        scheme: cfg.scheme,
        pad: cfg.pad,
        ..Default::default()
    };
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_mse = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch) {
            let mut acc: Vec<Vec<f64>> = vec![vec![0.0; cfg.head_k * cfg.head_k]; channels];
            for &i in batch {
                let s = &data[i];
                let raw = intermediate_head(&s.noisy, &head, cfg.pad)?;
                let model = Model {
                    cfg: tc,
                    raw,
                    weights: KernelWeights::uniform(cfg.k)?,
                };
                let g = conv_grads(&model, &s.noisy, &s.clean, false)?;
                total += g.mse;
                let hg = head_grads(&s.noisy, cfg.head_k, &g.raw, channels, cfg.pad);
                for (a, b) in acc.iter_mut().zip(hg) {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y / batch.len() as f64;
                    }
                }
            }
            head = head
                .iter()
                .zip(&acc)
                .map(|(w, g)| {
                    let v = w.as_slice().iter().zip(g).map(|(a, b)| a - cfg.lr * b).collect();
                    KernelWeights::new(cfg.head_k, v)
                })
                .collect::<Result<_>>()?;
        }
        epoch_mse.push(total / data.len() as f64);
    }
    Ok(DatasetOutcome { head, epoch_mse })
}

/// Analytic and central finite-difference gradient of one coordinate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradReport {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Which parameter block a finite-difference check perturbs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamClass {
    /// Raw channels feeding `M` (all but the last two channels).
    MetricRaw,
    /// The two drift channels.
    OmegaRaw,
    /// Deformable offsets.
    Offsets,
    Weights,
}

/// Compares [`conv_grads`] to central differences of step `step` for every
/// coordinate of `class`.
pub fn check_gradients(
    model: &Model,
    img: &GrayImage,
    target: &GrayImage,
    class: ParamClass,
    step: f64,
) -> Result<Vec<GradReport>> {
    let learn = class == ParamClass::Weights;
    let grads = conv_grads(model, img, target, learn)?;
    let loss = |m: &Model| -> Result<f64> { mse(&m.forward(img)?, target) };
    let ch = model.raw.channels;
    let indices: Vec<usize> = match class {
        ParamClass::Weights => (0..model.weights.as_slice().len()).collect(),
        ParamClass::Offsets => (0..model.raw.data.len()).collect(),
        ParamClass::MetricRaw => (0..model.raw.data.len()).filter(|i| i % ch < ch - 2).collect(),
        ParamClass::OmegaRaw => (0..model.raw.data.len()).filter(|i| i % ch >= ch - 2).collect(),
    };
    let mut out = Vec::with_capacity(indices.len());
    for idx in indices {
        let mut up = model.clone();
        let mut dn = model.clone();
        let analytic = if learn {
            let mut wu = model.weights.as_slice().to_vec();
            let mut wd = wu.clone();
            wu[idx] += step;
            wd[idx] -= step;
            up.weights = KernelWeights::new(model.cfg.k, wu)?;
            dn.weights = KernelWeights::new(model.cfg.k, wd)?;
            grads.weights.as_ref().expect("weights requested")[idx]
        } else {
            up.raw.data[idx] += step;
            dn.raw.data[idx] -= step;
            grads.raw[idx]
        };
        let numeric = (loss(&up)? - loss(&dn)?) / (2.0 * step);
        let rel_error = (analytic - numeric).abs() / numeric.abs().max(analytic.abs()).max(1e-300);
        out.push(GradReport {
            index: idx,
            analytic,
            numeric,
            rel_error,
        });
    }
    Ok(out)
}
