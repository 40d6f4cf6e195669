//! Flat `key=value` settings shared by all commands.
//!
//! Values come from built-in defaults, then an optional `--config` file, then
//! `--key=value` options on the command line. Every command only sees the
//! keys it uses, and `--dump-config` prints them in a form that can be fed
//! back through `--config`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use clap::{Arg, ArgAction, ArgMatches, Command};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cmd {
    Denoise,
    TrainSingle,
    Compare,
    Selftest,
    TrainDataset,
    Phantom,
}

impl Cmd {
    pub const ALL: [Cmd; 6] = [
        Cmd::Denoise,
        Cmd::TrainSingle,
        Cmd::Compare,
        Cmd::Selftest,
        Cmd::TrainDataset,
        Cmd::Phantom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Cmd::Denoise => "denoise-heuristic",
            Cmd::TrainSingle => "train-single",
            Cmd::Compare => "compare",
            Cmd::Selftest => "selftest",
            Cmd::TrainDataset => "train-dataset",
            Cmd::Phantom => "phantom",
        }
    }

    fn about(self) -> &'static str {
        match self {
            Cmd::Denoise => "Denoise a noisy image with a fixed or heuristic kernel and report PSNR",
            Cmd::TrainSingle => "Fit per-pixel parameters on one noisy image and test on another",
            Cmd::Compare => "Run a grid of denoising or training cells and write one CSV row per cell",
            Cmd::Selftest => "Run the property suites and report per-suite status",
            Cmd::TrainDataset => "Train an intermediate head on noisy patches (no accuracy guarantees)",
            Cmd::Phantom => "Write the built-in synthetic test image",
        }
    }
}

/// Error that maps to exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

use Cmd::*;

const COMPUTE: &[Cmd] = &[Denoise, TrainSingle, Compare, Selftest, TrainDataset];
const IMAGES: &[Cmd] = &[Denoise, TrainSingle, Compare, TrainDataset];
const HEURISTIC: &[Cmd] = &[Denoise, Compare];
const TRAINING: &[Cmd] = &[TrainSingle, Compare];

struct Key {
    name: &'static str,
    help: &'static str,
    used_by: &'static [Cmd],
}

const KEYS: &[Key] = &[
    Key { name: "input", help: "clean grayscale PGM/PNG; empty uses the built-in phantom", used_by: IMAGES },
    Key { name: "size", help: "side length of the built-in phantom", used_by: &[Denoise, TrainSingle, Compare, TrainDataset, Phantom] },
    Key { name: "output", help: "output image (denoise, phantom) or CSV (compare, train-dataset; empty prints to stdout)", used_by: &[Denoise, Compare, TrainDataset, Phantom] },
    Key { name: "noisy_output", help: "optional path for the noisy input image", used_by: &[Denoise] },
    Key { name: "out_dir", help: "directory for curves, summary and result images; empty writes nothing", used_by: &[TrainSingle] },
    Key { name: "depth", help: "bits per sample of written images: 8 or 16", used_by: &[Denoise, TrainSingle, Phantom] },
    Key { name: "task", help: "compare grid over: denoise or train", used_by: &[Compare] },
    Key { name: "method", help: "denoise: standard, dilated, interpolated-standard, deformable-random, utb-heuristic, ugb-heuristic; train: utb, deformable", used_by: &[Denoise, TrainSingle] },
    Key { name: "methods", help: "comma-separated methods of the compare grid", used_by: &[Compare] },
    Key { name: "k", help: "odd kernel size", used_by: &[Denoise, TrainSingle, TrainDataset] },
    Key { name: "ks", help: "comma-separated kernel sizes of the compare grid", used_by: &[Compare] },
    Key { name: "sigma_n", help: "standard deviation of the added Gaussian noise", used_by: &[Denoise, TrainSingle, TrainDataset] },
    Key { name: "sigmas", help: "comma-separated noise levels of the compare grid", used_by: &[Compare] },
    Key { name: "eps_omega", help: "drift margin in (0, 1]; 1 is symmetric", used_by: &[Denoise, TrainSingle, TrainDataset] },
    Key { name: "eps_omegas", help: "comma-separated drift margins of the compare grid", used_by: &[Compare] },
    Key { name: "seed", help: "seed of the (training) noise", used_by: IMAGES },
    Key { name: "test_seed", help: "seed of the test noise", used_by: TRAINING },
    Key { name: "offset_seed", help: "seed of the deformable-random offsets", used_by: HEURISTIC },
    Key { name: "scheme", help: "polar sampling: onion or grid", used_by: &[Denoise, TrainSingle, Compare, TrainDataset] },
    Key { name: "padding", help: "boundary handling: replicate, zero or periodic", used_by: IMAGES },
    Key { name: "radius_convention", help: "isotropic ball radius: sqrt (1/√ι) or linear (1/ι)", used_by: HEURISTIC },
    Key { name: "omega_dir", help: "heuristic drift direction: grad or grad_perp", used_by: HEURISTIC },
    Key { name: "iota", help: "heuristic isotropic scale (ugb-heuristic always uses 1)", used_by: HEURISTIC },
    Key { name: "alpha", help: "heuristic anisotropy gain (ugb-heuristic always uses 10)", used_by: HEURISTIC },
    Key { name: "dilation", help: "dilation factor of the dilated method", used_by: HEURISTIC },
    Key { name: "area", help: "pixel extent covered by interpolated-standard samples", used_by: HEURISTIC },
    Key { name: "dt", help: "geodesic-ball diffusion time step", used_by: HEURISTIC },
    Key { name: "t_end", help: "geodesic-ball diffusion end time", used_by: HEURISTIC },
    Key { name: "s0", help: "initial stencil scale of the geodesic-ball method", used_by: HEURISTIC },
    Key { name: "ugb_radius", help: "geodesic-ball stamp radius in pixels, or auto", used_by: HEURISTIC },
    Key { name: "pixel_budget", help: "largest image the geodesic-ball method accepts", used_by: HEURISTIC },
    Key { name: "iterations", help: "gradient-descent iterations", used_by: TRAINING },
    Key { name: "lr", help: "learning rate, or auto to search lr_grid", used_by: &[TrainSingle, Compare, TrainDataset] },
    Key { name: "lr_grid", help: "comma-separated learning rates, or auto for the method default", used_by: TRAINING },
    Key { name: "probe_iters", help: "updates each lr_grid candidate is trained for when lr=auto", used_by: TRAINING },
    Key { name: "kind", help: "metric parameterization: cholesky5, spectral6 or spectral7", used_by: &[TrainSingle, Compare, TrainDataset] },
    Key { name: "learn_weights", help: "also learn the kernel weights", used_by: TRAINING },
    Key { name: "detach", help: "treat the drift normaliser as constant in gradients", used_by: TRAINING },
    Key { name: "init_iota", help: "isotropic scale of the initial metric", used_by: TRAINING },
    Key { name: "timing", help: "fill the seconds column of summaries (breaks byte reproducibility)", used_by: TRAINING },
    Key { name: "head_k", help: "kernel size of the intermediate head", used_by: &[TrainDataset] },
    Key { name: "patch", help: "side length of training patches", used_by: &[TrainDataset] },
    Key { name: "patches", help: "number of training patches", used_by: &[TrainDataset] },
    Key { name: "epochs", help: "training epochs", used_by: &[TrainDataset] },
    Key { name: "batch", help: "patches per batch", used_by: &[TrainDataset] },
    Key { name: "execution", help: "parallel or sequential", used_by: COMPUTE },
];

fn default_value(cmd: Cmd, key: &str, task: &str) -> &'static str {
    match (key, cmd) {
        ("size", _) => "256",
        ("depth", _) => "8",
        ("task", _) => "train",
        ("method", Denoise) => "utb-heuristic",
        ("method", _) => "utb",
        ("methods", _) if task == "denoise" => "standard,utb-heuristic",
        ("methods", _) => "utb,deformable",
        ("k", TrainDataset) => "5",
        ("k", _) => "11",
        ("ks", _) => "5,11",
        ("sigma_n", _) | ("sigmas", _) => "0.3",
        ("eps_omega", Denoise) => "1",
        ("eps_omega", _) => "0.1",
        ("eps_omegas", _) if task == "denoise" => "1",
        ("eps_omegas", _) => "0.1",
        ("seed", _) => "1",
        ("test_seed", _) => "2",
        ("offset_seed", _) => "3",
        ("scheme", _) => "onion",
        ("padding", _) => "replicate",
        ("radius_convention", _) => "sqrt",
        ("omega_dir", _) => "grad",
        ("iota", _) => "0.1",
        ("alpha", _) => "100",
        ("dilation", _) => "3",
        ("area", _) => "5",
        ("dt", _) => "0.01",
        ("t_end", _) => "0.1",
        ("s0", _) => "2",
        ("ugb_radius", _) => "auto",
        ("pixel_budget", _) => "16384",
        ("iterations", _) => "100",
        ("lr", TrainDataset) => "10",
        ("lr", _) => "auto",
        ("lr_grid", _) => "auto",
        ("probe_iters", _) => "10",
        ("kind", _) => "cholesky5",
        ("learn_weights", _) | ("timing", _) => "false",
        ("detach", _) => "true",
        ("init_iota", _) => "0.1",
        ("head_k", _) => "3",
        ("patch", _) => "32",
        ("patches", _) => "64",
        ("epochs", _) => "10",
        ("batch", _) => "32",
        ("execution", _) => "parallel",
        _ => "",
    }
}

fn keys_of(cmd: Cmd) -> impl Iterator<Item = &'static Key> {
    KEYS.iter().filter(move |k| k.used_by.contains(&cmd))
}

pub fn cli() -> Command {
    let mut app = Command::new("finslerconv")
        .about("Metric convolutions for image denoising experiments")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for cmd in Cmd::ALL {
        let mut sub = Command::new(cmd.name())
            .about(cmd.about())
            .arg(
                Arg::new("config")
                    .long("config")
                    .value_name("PATH")
                    .help("key=value file read before the options"),
            )
            .arg(
                Arg::new("dump-config")
                    .long("dump-config")
                    .action(ArgAction::SetTrue)
                    .help("print the resolved settings and exit"),
            );
        for key in keys_of(cmd) {
            let mut arg = Arg::new(key.name).long(key.name).value_name("VALUE").help(key.help);
            if key.name.contains('_') {
                arg = arg.visible_alias(key.name.replace('_', "-"));
            }
            sub = sub.arg(arg);
        }
        app = app.subcommand(sub);
    }
    app
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, UsageError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| UsageError(format!("config line {}: expected key=value, got {line:?}", n + 1)))?;
        out.push((k.trim().replace('-', "_"), v.trim().to_string()));
    }
    Ok(out)
}

/// Resolved settings of one command.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub cmd: Cmd,
    values: BTreeMap<&'static str, String>,
}

impl ExperimentConfig {
    pub fn from_matches(cmd: Cmd, m: &ArgMatches) -> Result<Self, UsageError> {
        let mut given: BTreeMap<String, String> = BTreeMap::new();
        if let Some(path) = m.get_one::<String>("config") {
            let text =
                std::fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read config {path}: {e}")))?;
            for (k, v) in parse_config_text(&text)? {
                given.insert(k, v);
            }
        }
        for key in keys_of(cmd) {
            if let Some(v) = m.get_one::<String>(key.name) {
                given.insert(key.name.to_string(), v.clone());
            }
        }
        Self::resolve(cmd, given)
    }

    /// Fills defaults and rejects keys the command does not use.
    pub fn resolve(cmd: Cmd, mut given: BTreeMap<String, String>) -> Result<Self, UsageError> {
        let task = given
            .get("task")
            .cloned()
            .unwrap_or_else(|| default_value(cmd, "task", "").into());
        let mut values = BTreeMap::new();
        for key in keys_of(cmd) {
            let v = given
                .remove(key.name)
                .unwrap_or_else(|| default_value(cmd, key.name, &task).to_string());
            values.insert(key.name, v);
        }
        if let Some(k) = given.keys().next() {
            return Err(UsageError(format!("unknown key {k:?} for {}", cmd.name())));
        }
        let cfg = ExperimentConfig { cmd, values };
        cfg.check_paths()?;
        Ok(cfg)
    }

    fn check_paths(&self) -> Result<(), UsageError> {
        if let Some(input) = self.values.get("input").filter(|s| !s.is_empty()) {
            if !Path::new(input).is_file() {
                return Err(UsageError(format!("input {input:?} does not exist")));
            }
        }
        for key in ["output", "noisy_output"] {
            if let Some(out) = self.values.get(key).filter(|s| !s.is_empty()) {
                let parent = Path::new(out).parent().filter(|p| !p.as_os_str().is_empty());
                if parent.is_some_and(|p| !p.is_dir()) {
                    return Err(UsageError(format!("directory of {key} {out:?} does not exist")));
                }
            }
        }
        if self.cmd == Phantom && self.str("output").is_empty() {
            return Err(UsageError("phantom needs --output".into()));
        }
        Ok(())
    }

    pub fn str(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("key {key} not declared for command"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, UsageError>
    where
        T::Err: fmt::Display,
    {
        let s = self.str(key);
        s.parse().map_err(|e| UsageError(format!("{key}={s}: {e}")))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, UsageError>
    where
        T::Err: fmt::Display,
    {
        let items: Result<Vec<T>, _> = self
            .str(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| UsageError(format!("{key}: {s:?}: {e}"))))
            .collect();
        let items = items?;
        if items.is_empty() {
            return Err(UsageError(format!("{key} is empty")));
        }
        Ok(items)
    }

    /// `None` for the value `auto`.
    pub fn auto<T: FromStr>(&self, key: &str) -> Result<Option<T>, UsageError>
    where
        T::Err: fmt::Display,
    {
        if self.str(key) == "auto" {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    /// Settings in declaration order, one `key=value` per line.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for key in keys_of(self.cmd) {
            s.push_str(key.name);
            s.push('=');
            s.push_str(&self.values[key.name]);
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(cmd: Cmd, pairs: &[(&str, &str)]) -> Result<ExperimentConfig, UsageError> {
        ExperimentConfig::resolve(cmd, pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect())
    }

    #[test]
    fn every_key_has_a_default_or_is_optional() {
        let optional = ["input", "output", "noisy_output", "out_dir"];
        for cmd in Cmd::ALL {
            for key in keys_of(cmd) {
                let d = default_value(cmd, key.name, "train");
                assert!(
                    !d.is_empty() || optional.contains(&key.name),
                    "{} {}",
                    cmd.name(),
                    key.name
                );
            }
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(resolve(Selftest, &[("k", "3")]).is_err());
        assert!(resolve(Denoise, &[("bogus", "1")]).is_err());
    }

    #[test]
    fn command_dependent_defaults() {
        assert_eq!(resolve(Denoise, &[]).unwrap().str("eps_omega"), "1");
        assert_eq!(resolve(TrainSingle, &[]).unwrap().str("eps_omega"), "0.1");
        let c = resolve(Compare, &[("task", "denoise")]).unwrap();
        assert_eq!(c.str("methods"), "standard,utb-heuristic");
    }

    #[test]
    fn dump_round_trips() {
        let c = resolve(TrainSingle, &[("k", "5"), ("lr", "100")]).unwrap();
        let back: BTreeMap<String, String> = parse_config_text(&c.dump()).unwrap().into_iter().collect();
        assert_eq!(ExperimentConfig::resolve(TrainSingle, back).unwrap(), c);
    }

    #[test]
    fn config_text_format() {
        let pairs = parse_config_text("# header\n\nk = 5\nsigma-n=0.1\n").unwrap();
        assert_eq!(pairs, vec![("k".into(), "5".into()), ("sigma_n".into(), "0.1".into())]);
        assert!(parse_config_text("novalue").is_err());
    }

    #[test]
    fn typed_getters() {
        let c = resolve(Compare, &[("ks", "3, 5,7")]).unwrap();
        assert_eq!(c.list::<usize>("ks").unwrap(), vec![3, 5, 7]);
        assert_eq!(c.auto::<f64>("lr").unwrap(), None);
        assert!(resolve(Compare, &[("ks", "3,x")]).unwrap().list::<usize>("ks").is_err());
    }

    #[test]
    fn clap_tree_is_consistent() {
        cli().debug_assert();
    }
}
