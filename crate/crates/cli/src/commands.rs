//! Command implementations. Each command first turns its settings into typed
//! configuration (usage errors) and then runs (runtime errors).

use std::fmt;
use std::fs;
use std::path::Path;
use std::time::Instant;

use finslerconv::conv::{convolve, metric_utb_convolve, KernelWeights, RawField, SupportProvider};
use finslerconv::error::Error;
use finslerconv::geodesic::{ugb_convolve, UgbConfig};
use finslerconv::heuristic::{heuristic_field, heuristic_field_ugb, HeuristicConfig, OmegaDirection, RadiusConvention};
use finslerconv::image::{
    add_gaussian_noise, mse, psnr, read_image, write_image, BitDepth, GrayImage, NormalStream, PaddingMode,
};
use finslerconv::params::{ParamHyper, Parameterization};
use finslerconv::phantom::phantom;
use finslerconv::report::{curve_csv, summary_csv, SummaryRow};
use finslerconv::sampling::{KernelSupport, PolarScheme};
use finslerconv::selftest::run_suites;
use finslerconv::train::{
    default_lr_grid, lr_find, probe_lr, train_dataset, train_single_image, DatasetConfig, Method, Sample, TrainConfig,
};

use crate::config::{Cmd, ExperimentConfig, UsageError};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<UsageError> for CliError {
    fn from(e: UsageError) -> Self {
        CliError::Usage(e.0)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Converts a library validation error raised while planning.
fn plan_err(e: Error) -> CliError {
    CliError::Usage(e.to_string())
}

pub fn run(cfg: &ExperimentConfig) -> Result<()> {
    match cfg.cmd {
        Cmd::Denoise => denoise(cfg),
        Cmd::TrainSingle => train_single(cfg),
        Cmd::Compare => compare(cfg),
        Cmd::Selftest => selftest(),
        Cmd::TrainDataset => dataset(cfg),
        Cmd::Phantom => write_phantom(cfg),
    }
}

fn odd_k(cfg: &ExperimentConfig, key: &str) -> Result<usize> {
    let k: usize = cfg.get(key)?;
    if k % 2 == 0 {
        return Err(usage(format!("{key} must be odd, got {k}")));
    }
    Ok(k)
}

fn depth(cfg: &ExperimentConfig) -> Result<BitDepth> {
    match cfg.str("depth") {
        "8" => Ok(BitDepth::Eight),
        "16" => Ok(BitDepth::Sixteen),
        d => Err(usage(format!("depth must be 8 or 16, got {d}"))),
    }
}

fn padding(cfg: &ExperimentConfig) -> Result<PaddingMode> {
    PaddingMode::parse(cfg.str("padding")).map_err(plan_err)
}

fn sigma(v: f64) -> Result<f64> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(usage(format!("noise level must be non-negative, got {v}")))
    }
}

fn load_clean(cfg: &ExperimentConfig) -> Result<GrayImage> {
    let input = cfg.str("input");
    if input.is_empty() {
        let n: usize = cfg.get("size")?;
        if n == 0 {
            return Err(usage("size must be positive"));
        }
        Ok(phantom(n, n))
    } else {
        Ok(read_image(input)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum DenoiseMethod {
    Standard,
    Dilated,
    InterpolatedStandard,
    DeformableRandom,
    UtbHeuristic,
    UgbHeuristic,
}

impl DenoiseMethod {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "standard" => Self::Standard,
            "dilated" => Self::Dilated,
            "interpolated-standard" => Self::InterpolatedStandard,
            "deformable-random" => Self::DeformableRandom,
            "utb-heuristic" => Self::UtbHeuristic,
            "ugb-heuristic" => Self::UgbHeuristic,
            _ => return Err(usage(format!("unknown denoising method {s:?}"))),
        })
    }

    fn uses_drift(self) -> bool {
        matches!(self, Self::UtbHeuristic | Self::UgbHeuristic)
    }
}

struct DenoisePlan {
    method: DenoiseMethod,
    name: String,
    k: usize,
    sigma_n: f64,
    seed: u64,
    pad: PaddingMode,
    scheme: PolarScheme,
    heuristic: HeuristicConfig,
    ugb: UgbConfig,
    dilation: f64,
    area: f64,
    offset_seed: u64,
}

fn denoise_plan(cfg: &ExperimentConfig, method: &str, k: usize, sigma_n: f64, eps_omega: f64) -> Result<DenoisePlan> {
    let pad = padding(cfg)?;
    let heuristic = HeuristicConfig {
        iota: cfg.get("iota")?,
        alpha: cfg.get("alpha")?,
        eps_omega,
        radius_convention: match cfg.str("radius_convention") {
            "sqrt" => RadiusConvention::Sqrt,
            "linear" => RadiusConvention::Linear,
            s => return Err(usage(format!("unknown radius_convention {s:?}"))),
        },
        omega_dir: match cfg.str("omega_dir") {
            "grad" => OmegaDirection::Grad,
            "grad_perp" => OmegaDirection::GradPerp,
            s => return Err(usage(format!("unknown omega_dir {s:?}"))),
        },
        pad,
        ..Default::default()
    };
    heuristic.validate().map_err(plan_err)?;
    let ugb = UgbConfig {
        dt: cfg.get("dt")?,
        t_end: cfg.get("t_end")?,
        s0: cfg.get("s0")?,
        kernel_radius: cfg.auto("ugb_radius")?,
        pixel_budget: cfg.get("pixel_budget")?,
    };
    ugb.validate().map_err(plan_err)?;
    let dilation: f64 = cfg.get("dilation")?;
    let area: f64 = cfg.get("area")?;
    if !(dilation > 0.0 && area > 0.0) {
        return Err(usage("dilation and area must be positive"));
    }
    Ok(DenoisePlan {
        method: DenoiseMethod::parse(method)?,
        name: method.to_string(),
        k,
        sigma_n: sigma(sigma_n)?,
        seed: cfg.get("seed")?,
        pad,
        scheme: PolarScheme::parse(cfg.str("scheme"), k).map_err(plan_err)?,
        heuristic,
        ugb,
        dilation,
        area,
        offset_seed: cfg.get("offset_seed")?,
    })
}

/// Per-pixel, per-cell offsets uniform in `[-k/2, k/2]²`.
fn random_offsets(h: usize, w: usize, k: usize, seed: u64) -> RawField {
    let mut s = NormalStream::new(seed);
    let half = k as f64 / 2.0;
    let mut raw = RawField::zeros(h, w, 2 * k * k);
    for v in raw.data.iter_mut() {
        *v = s.next_uniform(-half, half);
    }
    raw
}

fn apply_denoise(plan: &DenoisePlan, noisy: &GrayImage) -> Result<GrayImage> {
    let k = plan.k;
    let w = KernelWeights::uniform(k)?;
    let grid = KernelSupport::reference_grid(k)?;
    let fixed = |s: KernelSupport| convolve(noisy, &w, &SupportProvider::Fixed(s), plan.pad);
    let out = match plan.method {
        DenoiseMethod::Standard => fixed(grid)?,
        DenoiseMethod::Dilated => fixed(grid.dilate(plan.dilation)?)?,
        DenoiseMethod::InterpolatedStandard => {
            // Extreme samples sit on the centres of the outermost pixels.
            let spacing = if k > 1 { (plan.area - 1.0) / (k - 1) as f64 } else { 1.0 };
            fixed(grid.dilate(spacing)?)?
        }
        DenoiseMethod::DeformableRandom => {
            let offsets = random_offsets(noisy.height(), noisy.width(), k, plan.offset_seed);
            let support = SupportProvider::Deformable { k, offsets: &offsets };
            convolve(noisy, &w, &support, plan.pad)?
        }
        DenoiseMethod::UtbHeuristic => {
            let field = heuristic_field(noisy, &plan.heuristic)?;
            metric_utb_convolve(noisy, &w, &field, plan.scheme, plan.pad)?
        }
        DenoiseMethod::UgbHeuristic => {
            let field = heuristic_field_ugb(noisy, &plan.heuristic)?;
            ugb_convolve(noisy, &w, &field, &plan.ugb, plan.scheme, plan.pad)?
        }
    };
    Ok(out)
}

struct DenoiseResult {
    noisy: GrayImage,
    output: GrayImage,
    row: SummaryRow,
}

fn denoise_cell(plan: &DenoisePlan, clean: &GrayImage) -> Result<DenoiseResult> {
    let eps = if plan.method.uses_drift() {
        plan.heuristic.eps_omega
    } else {
        f64::NAN
    };
    let mut row = SummaryRow::new("denoise", &plan.name, plan.k, plan.sigma_n, eps);
    let noisy = add_gaussian_noise(clean, plan.sigma_n, plan.seed);
    let output = apply_denoise(plan, &noisy)?;
    row.psnr_in = psnr(&noisy, clean)?;
    row.psnr_out = psnr(&output, clean)?;
    row.mse_test = mse(&output, clean)?;
    Ok(DenoiseResult { noisy, output, row })
}

fn denoise(cfg: &ExperimentConfig) -> Result<()> {
    let k = odd_k(cfg, "k")?;
    let plan = denoise_plan(cfg, cfg.str("method"), k, cfg.get("sigma_n")?, cfg.get("eps_omega")?)?;
    let depth = depth(cfg)?;
    let clean = load_clean(cfg)?;
    let res = denoise_cell(&plan, &clean)?;
    if !cfg.str("output").is_empty() {
        write_image(cfg.str("output"), &res.output, depth)?;
    }
    if !cfg.str("noisy_output").is_empty() {
        write_image(cfg.str("noisy_output"), &res.noisy, depth)?;
    }
    println!(
        "method={} k={} sigma_n={} psnr_in={:.4} psnr_out={:.4}",
        plan.name, plan.k, plan.sigma_n, res.row.psnr_in, res.row.psnr_out
    );
    Ok(())
}

struct TrainPlan {
    cfg: TrainConfig,
    sigma_n: f64,
    seed: u64,
    test_seed: u64,
    lr: Option<f64>,
    grid: Vec<f64>,
    probe_iters: usize,
    timing: bool,
}

fn train_plan(cfg: &ExperimentConfig, method: &str, k: usize, sigma_n: f64, eps_omega: f64) -> Result<TrainPlan> {
    let method = Method::parse(method).map_err(plan_err)?;
    let lr: Option<f64> = cfg.auto("lr")?;
    let grid = match cfg.str("lr_grid") {
        "auto" => default_lr_grid(method),
        _ => cfg.list("lr_grid")?,
    };
    if grid.iter().any(|v| !(*v >= 0.0)) {
        return Err(usage("lr_grid entries must be non-negative"));
    }
    let probe_iters: usize = cfg.get("probe_iters")?;
    if probe_iters == 0 {
        return Err(usage("probe_iters must be at least 1"));
    }
    let tc = TrainConfig {
        method,
        k,
        iterations: cfg.get("iterations")?,
        lr: lr.unwrap_or(grid[0]),
        learn_weights: cfg.get("learn_weights")?,
        kind: Parameterization::parse(cfg.str("kind")).map_err(plan_err)?,
        hyper: ParamHyper::with_eps_omega(eps_omega),
        detach: cfg.get("detach")?,
        scheme: PolarScheme::parse(cfg.str("scheme"), k).map_err(plan_err)?,
        init_iota: cfg.get("init_iota")?,
        pad: padding(cfg)?,
        ..Default::default()
    };
    tc.validate().map_err(plan_err)?;
    Ok(TrainPlan {
        cfg: tc,
        sigma_n: sigma(sigma_n)?,
        seed: cfg.get("seed")?,
        test_seed: cfg.get("test_seed")?,
        lr,
        grid,
        probe_iters,
        timing: cfg.get("timing")?,
    })
}

struct TrainResult {
    row: SummaryRow,
    curve: String,
    train_out: GrayImage,
    test_out: GrayImage,
}

fn train_cell(plan: &TrainPlan, clean: &GrayImage) -> Result<TrainResult> {
    let start = Instant::now();
    let eps = match plan.cfg.method {
        Method::UtbRaw => plan.cfg.hyper.eps_omega,
        Method::DeformableRaw => f64::NAN,
    };
    let mut row = SummaryRow::new("train-single", plan.cfg.method.name(), plan.cfg.k, plan.sigma_n, eps);
    let noisy_train = add_gaussian_noise(clean, plan.sigma_n, plan.seed);
    let noisy_test = add_gaussian_noise(clean, plan.sigma_n, plan.test_seed);
    let lr = match plan.lr {
        Some(lr) => lr,
        None => {
            lr_find(&plan.grid, |lr| {
                probe_lr(&noisy_train, clean, &plan.cfg, lr, plan.probe_iters)
            })?
            .lr
        }
    };
    let cfg = TrainConfig { lr, ..plan.cfg };
    let out = train_single_image(&noisy_train, &noisy_test, clean, &cfg)?;
    row.lr = lr;
    row.mse_train = out.train_mse;
    row.mse_test = out.test_mse;
    row.gen_gap = out.gen_gap;
    row.psnr_in = psnr(&noisy_test, clean)?;
    let test_out = out.model.forward(&noisy_test)?;
    row.psnr_out = psnr(&test_out, clean)?;
    if plan.timing {
        row.seconds = start.elapsed().as_secs_f64();
    }
    Ok(TrainResult {
        row,
        curve: curve_csv(&out.curve),
        train_out: out.model.forward(&noisy_train)?,
        test_out,
    })
}

fn train_single(cfg: &ExperimentConfig) -> Result<()> {
    let k = odd_k(cfg, "k")?;
    let plan = train_plan(cfg, cfg.str("method"), k, cfg.get("sigma_n")?, cfg.get("eps_omega")?)?;
    let depth = depth(cfg)?;
    let clean = load_clean(cfg)?;
    let res = train_cell(&plan, &clean)?;
    let summary = summary_csv(std::slice::from_ref(&res.row));
    let dir = cfg.str("out_dir");
    if !dir.is_empty() {
        let dir = Path::new(dir);
        fs::create_dir_all(dir)?;
        fs::write(dir.join("curve.csv"), &res.curve)?;
        fs::write(dir.join("summary.csv"), &summary)?;
        write_image(dir.join("train_denoised.png"), &res.train_out, depth)?;
        write_image(dir.join("test_denoised.png"), &res.test_out, depth)?;
    }
    print!("{summary}");
    Ok(())
}

fn emit(cfg: &ExperimentConfig, csv: &str) -> Result<()> {
    match cfg.str("output") {
        "" => print!("{csv}"),
        path => fs::write(path, csv)?,
    }
    Ok(())
}

fn failed_row(task: &str, method: &str, k: usize, sigma_n: f64, eps: f64, e: &CliError) -> SummaryRow {
    let mut row = SummaryRow::new(task, method, k, sigma_n, eps);
    row.status = match e {
        CliError::Usage(m) | CliError::Runtime(m) => format!("failed: {m}"),
    };
    row
}

fn compare(cfg: &ExperimentConfig) -> Result<()> {
    let task = cfg.str("task");
    if task != "train" && task != "denoise" {
        return Err(usage(format!("task must be train or denoise, got {task:?}")));
    }
    let methods: Vec<String> = cfg.list("methods")?;
    let ks: Vec<usize> = cfg.list("ks")?;
    let sigmas: Vec<f64> = cfg.list("sigmas")?;
    let eps_omegas: Vec<f64> = cfg.list("eps_omegas")?;
    if let Some(k) = ks.iter().find(|k| *k % 2 == 0) {
        return Err(usage(format!("ks must be odd, got {k}")));
    }

    // Plan every cell up front so bad settings fail before any work.
    enum Plan {
        Denoise(DenoisePlan),
        Train(TrainPlan),
    }
    let mut cells = Vec::new();
    for &k in &ks {
        for &s in &sigmas {
            for m in &methods {
                let drift = if task == "train" {
                    Method::parse(m).map_err(plan_err)? == Method::UtbRaw
                } else {
                    DenoiseMethod::parse(m)?.uses_drift()
                };
                let eps_list: &[f64] = if drift { &eps_omegas } else { &eps_omegas[..1] };
                for &e in eps_list {
                    let plan = if task == "train" {
                        Plan::Train(train_plan(cfg, m, k, s, e)?)
                    } else {
                        Plan::Denoise(denoise_plan(cfg, m, k, s, e)?)
                    };
                    cells.push((m.clone(), k, s, if drift { e } else { f64::NAN }, plan));
                }
            }
        }
    }

    let clean = load_clean(cfg)?;
    let mut rows = Vec::with_capacity(cells.len());
    let mut failures = 0;
    for (m, k, s, e, plan) in &cells {
        let res = match plan {
            Plan::Train(p) => train_cell(p, &clean).map(|r| r.row),
            Plan::Denoise(p) => denoise_cell(p, &clean).map(|r| r.row),
        };
        let task_name = if task == "train" { "train-single" } else { "denoise" };
        rows.push(res.unwrap_or_else(|err| {
            failures += 1;
            eprintln!("cell {m} k={k} sigma_n={s}: {err}");
            failed_row(task_name, m, *k, *s, *e, &err)
        }));
    }
    emit(cfg, &summary_csv(&rows))?;
    if failures > 0 {
        eprintln!("{failures} of {} cells failed", rows.len());
    }
    Ok(())
}

fn selftest() -> Result<()> {
    let results = run_suites();
    let mut failed = 0;
    for r in &results {
        let verdict = if r.passed { "PASS" } else { "FAIL" };
        println!("{verdict} {:<14} {:>7.2} s  {}", r.name, r.seconds, r.detail);
        failed += usize::from(!r.passed);
    }
    if failed > 0 {
        return Err(CliError::Runtime(format!(
            "{failed} of {} suites failed",
            results.len()
        )));
    }
    println!("all {} suites passed", results.len());
    Ok(())
}

fn dataset(cfg: &ExperimentConfig) -> Result<()> {
    let k = odd_k(cfg, "k")?;
    let head_k = odd_k(cfg, "head_k")?;
    let patch: usize = cfg.get("patch")?;
    let patches: usize = cfg.get("patches")?;
    let sigma_n = sigma(cfg.get("sigma_n")?)?;
    let seed: u64 = cfg.get("seed")?;
    let lr: f64 = cfg
        .auto("lr")?
        .ok_or_else(|| usage("train-dataset needs a numeric lr"))?;
    let hyper = ParamHyper::with_eps_omega(cfg.get("eps_omega")?);
    hyper.validate().map_err(plan_err)?;
    let dc = DatasetConfig {
        k,
        head_k,
        kind: Parameterization::parse(cfg.str("kind")).map_err(plan_err)?,
        hyper,
        scheme: PolarScheme::parse(cfg.str("scheme"), k).map_err(plan_err)?,
        epochs: cfg.get("epochs")?,
        batch: cfg.get("batch")?,
        lr,
        seed,
        pad: padding(cfg)?,
    };
    if patch == 0 || patches == 0 || dc.batch == 0 {
        return Err(usage("patch, patches and batch must be positive"));
    }

    let clean = load_clean(cfg)?;
    if clean.height() < patch || clean.width() < patch {
        return Err(CliError::Runtime(format!("image is smaller than the {patch}² patch")));
    }
    let mut pos = NormalStream::new(seed);
    let mut data = Vec::with_capacity(patches);
    for i in 0..patches {
        let r = pos.next_uniform(0.0, (clean.height() - patch + 1) as f64) as usize;
        let c = pos.next_uniform(0.0, (clean.width() - patch + 1) as f64) as usize;
        let crop = clean.crop(r, c, patch, patch)?;
        let noisy = add_gaussian_noise(&crop, sigma_n, seed.wrapping_add(1 + i as u64));
        data.push(Sample { noisy, clean: crop });
    }
    let out = train_dataset(&data, &dc)?;
    let mut csv = String::from("epoch,train_mse\n");
    for (e, m) in out.epoch_mse.iter().enumerate() {
        csv.push_str(&format!("{},{m:.6e}\n", e + 1));
    }
    emit(cfg, &csv)
}

fn write_phantom(cfg: &ExperimentConfig) -> Result<()> {
    let n: usize = cfg.get("size")?;
    if n == 0 {
        return Err(usage("size must be positive"));
    }
    let depth = depth(cfg)?;
    write_image(cfg.str("output"), &phantom(n, n), depth)?;
    Ok(())
}
