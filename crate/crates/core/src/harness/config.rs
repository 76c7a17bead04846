//! Experiment configuration files.
//!
//! One `key = value` pair per line; `#` starts a comment. Keys carry a
//! dotted section prefix:
//!
//! ```text
//! out_dir = runs/default
//! n_train = 40
//! noise_levels = 0, 0.5, 1, 1.5, 2
//! heads = evidential, softmax
//! eval.seed = 2024
//! phantom.dims = 32            # or 32, 32, 24
//! phantom.intensity.flair.edema = 0.9
//! train.learning_rate = 0.002
//! loss.lambda_p = 0.2
//! ```
//!
//! Missing keys keep their defaults; unknown or repeated keys are errors.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::backbone::{Head, TrainConfig};
use crate::error::{Error, Result};
use crate::phantom::{PhantomConfig, MODALITY_NAMES, TISSUE_NAMES};
use crate::volume::Dims;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub phantom: PhantomConfig,
    pub train: TrainConfig,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Noise variances of the evaluation sweep, ascending.
    pub noise_levels: Vec<f64>,
    pub heads: Vec<Head>,
    pub out_dir: PathBuf,
    /// Base seed of the evaluation noise.
    pub eval_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            phantom: PhantomConfig::default(),
            train: TrainConfig::default(),
            n_train: 40,
            n_val: 10,
            n_test: 10,
            noise_levels: vec![0.0, 0.5, 1.0, 1.5, 2.0],
            heads: vec![Head::Evidential, Head::Softmax],
            out_dir: PathBuf::from("runs/default"),
            eval_seed: 2024,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::invalid(format!("cannot parse {key} = {raw:?}")))
}

fn parse_list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

fn parse_pair(key: &str, raw: &str) -> Result<(f64, f64)> {
    match parse_list::<f64>(key, raw)?.as_slice() {
        [lo, hi] => Ok((*lo, *hi)),
        _ => Err(Error::invalid(format!("{key} needs two comma-separated numbers"))),
    }
}

fn parse_bool(key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::invalid(format!("cannot parse {key} = {raw:?} as a boolean"))),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::NotFound(format!("config file {}", path.display()))
            } else {
                Error::io(path, e)
            }
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeSet::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("line {}: expected `key = value`", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::invalid(format!("line {}: duplicate key {key}", lineno + 1)));
            }
            cfg.set(key, value)
                .map_err(|e| Error::invalid(format!("line {}: {}", lineno + 1, strip_prefix(&e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let p = &mut self.phantom;
        let t = &mut self.train;
        match key {
            "out_dir" => self.out_dir = PathBuf::from(v),
            "n_train" => self.n_train = parse_value(key, v)?,
            "n_val" => self.n_val = parse_value(key, v)?,
            "n_test" => self.n_test = parse_value(key, v)?,
            "noise_levels" => self.noise_levels = parse_list(key, v)?,
            "heads" => self.heads = parse_list(key, v)?,
            "eval.seed" => self.eval_seed = parse_value(key, v)?,
            "phantom.dims" => {
                p.dims = match parse_list::<usize>(key, v)?.as_slice() {
                    [s] => Dims::cube(*s),
                    [x, y, z] => Dims::new(*x, *y, *z),
                    _ => return Err(Error::invalid("phantom.dims needs one or three extents")),
                }
            }
            "phantom.seed" => p.seed = parse_value(key, v)?,
            "phantom.tumor_probability" => p.tumor_probability = parse_value(key, v)?,
            "phantom.outer_radius" => p.outer_radius = parse_pair(key, v)?,
            "phantom.axis_scale" => p.axis_scale = parse_pair(key, v)?,
            "phantom.core_fraction" => p.core_fraction = parse_pair(key, v)?,
            "phantom.necrotic_fraction" => p.necrotic_fraction = parse_pair(key, v)?,
            "phantom.base_noise_std" => p.base_noise_std = parse_value(key, v)?,
            "phantom.bias_amplitude" => p.bias_amplitude = parse_value(key, v)?,
            "train.learning_rate" => t.learning_rate = parse_value(key, v)?,
            "train.adam_beta1" => t.adam_beta1 = parse_value(key, v)?,
            "train.adam_beta2" => t.adam_beta2 = parse_value(key, v)?,
            "train.adam_eps" => t.adam_eps = parse_value(key, v)?,
            "train.epochs" => t.epochs = parse_value(key, v)?,
            "train.batch_size" => t.batch_size = parse_value(key, v)?,
            "train.seed" => t.seed = parse_value(key, v)?,
            "train.poly_decay" => t.poly_decay = parse_bool(key, v)?,
            "loss.lambda_p" => t.loss.lambda_p = parse_value(key, v)?,
            "loss.lambda_s" => t.loss.lambda_s = parse_value(key, v)?,
            "loss.dice_alpha" => t.loss.dice_alpha = parse_value(key, v)?,
            "loss.dice_beta" => t.loss.dice_beta = parse_value(key, v)?,
            "loss.kl_anneal" => t.loss.kl_anneal = parse_bool(key, v)?,
            _ => {
                if let Some(rest) = key.strip_prefix("phantom.intensity.") {
                    let (m, tissue) = rest
                        .split_once('.')
                        .ok_or_else(|| Error::invalid(format!("unknown key {key}")))?;
                    let mi = MODALITY_NAMES.iter().position(|&n| n == m);
                    let ti = TISSUE_NAMES.iter().position(|&n| n == tissue);
                    match (mi, ti) {
                        (Some(mi), Some(ti)) => p.intensity[mi][ti] = parse_value(key, v)?,
                        _ => return Err(Error::invalid(format!("unknown key {key}"))),
                    }
                } else {
                    return Err(Error::invalid(format!("unknown key {key}")));
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        self.train.validate()?;
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::invalid("n_train and n_test must be at least 1"));
        }
        if self.noise_levels.is_empty() {
            return Err(Error::invalid("noise_levels must not be empty"));
        }
        if self.noise_levels.iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
            return Err(Error::invalid("noise levels must be finite and nonnegative"));
        }
        if self.noise_levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("noise levels must be strictly ascending"));
        }
        if self.heads.is_empty() {
            return Err(Error::invalid("at least one head must be selected"));
        }
        let unique: BTreeSet<u8> = self.heads.iter().map(|h| h.tag()).collect();
        if unique.len() != self.heads.len() {
            return Err(Error::invalid("heads must not repeat"));
        }
        Ok(())
    }

    pub fn n_total(&self) -> usize {
        self.n_train + self.n_val + self.n_test
    }

    /// Canonical text form listing every key; parses back to `self`.
    pub fn to_text(&self) -> String {
        let p = &self.phantom;
        let t = &self.train;
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("out_dir", self.out_dir.display().to_string());
        kv("n_train", self.n_train.to_string());
        kv("n_val", self.n_val.to_string());
        kv("n_test", self.n_test.to_string());
        kv("noise_levels", list(&self.noise_levels));
        kv(
            "heads",
            self.heads.iter().map(|h| h.name()).collect::<Vec<_>>().join(", "),
        );
        kv("eval.seed", self.eval_seed.to_string());
        kv("phantom.dims", format!("{}, {}, {}", p.dims.x, p.dims.y, p.dims.z));
        kv("phantom.seed", p.seed.to_string());
        kv("phantom.tumor_probability", format!("{:?}", p.tumor_probability));
        kv("phantom.outer_radius", list(&[p.outer_radius.0, p.outer_radius.1]));
        kv("phantom.axis_scale", list(&[p.axis_scale.0, p.axis_scale.1]));
        kv("phantom.core_fraction", list(&[p.core_fraction.0, p.core_fraction.1]));
        kv("phantom.necrotic_fraction", list(&[p.necrotic_fraction.0, p.necrotic_fraction.1]));
        kv("phantom.base_noise_std", format!("{:?}", p.base_noise_std));
        kv("phantom.bias_amplitude", format!("{:?}", p.bias_amplitude));
        for (mi, m) in MODALITY_NAMES.iter().enumerate() {
            for (ti, tissue) in TISSUE_NAMES.iter().enumerate() {
                kv(&format!("phantom.intensity.{m}.{tissue}"), format!("{:?}", p.intensity[mi][ti]));
            }
        }
        kv("train.learning_rate", format!("{:?}", t.learning_rate));
        kv("train.adam_beta1", format!("{:?}", t.adam_beta1));
        kv("train.adam_beta2", format!("{:?}", t.adam_beta2));
        kv("train.adam_eps", format!("{:?}", t.adam_eps));
        kv("train.epochs", t.epochs.to_string());
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.seed", t.seed.to_string());
        kv("train.poly_decay", t.poly_decay.to_string());
        kv("loss.lambda_p", format!("{:?}", t.loss.lambda_p));
        kv("loss.lambda_s", format!("{:?}", t.loss.lambda_s));
        kv("loss.dice_alpha", format!("{:?}", t.loss.dice_alpha));
        kv("loss.dice_beta", format!("{:?}", t.loss.dice_beta));
        kv("loss.kl_anneal", t.loss.kl_anneal.to_string());
        s
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::InvalidArgument(m) => m.clone(),
        other => other.to_string(),
    }
}
