//! Experiment configuration: a flat `key = value` text format with one
//! optional `[data]` section.
//!
//! Grammar, line by line:
//!
//! ```text
//! # comment                      -- '#' starts a comment anywhere
//! key = value                    -- top-level experiment keys
//! [data]                         -- dataset keys follow
//! key = value
//! ```
//!
//! Unknown keys and sections are errors; missing keys fall back to the
//! defaults below. Top-level keys: `rounds`, `local_epochs`, `num_clients`,
//! `gamma`, `beta`, `batch_size`, `lr`, `momentum`, `weight_decay`, `seed`,
//! `eval_every`, `target_accuracy`, `method` (`fedavg` | `fedprox` |
//! `fedbalance`), `mu`, `arch`, `weak_arch`. Data keys: `source`
//! (`synthetic` | `idx`), `classes`, `per_class`, `test_per_class`, `dim`,
//! `separation`, `seed`, `image` (`CxHxW`), `train_images`, `train_labels`,
//! `test_images`, `test_labels`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::{generate_synthetic, load_idx, Dataset};
use crate::engine::ExperimentConfig;
use crate::error::{Error, Result};
use crate::methods::MethodSpec;
use crate::nn::InputShape;
use crate::registry;

/// Local objective selector as written in config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodKind {
    FedAvg,
    FedProx,
    FedBalance,
}

impl MethodKind {
    pub fn name(self) -> &'static str {
        match self {
            MethodKind::FedAvg => "fedavg",
            MethodKind::FedProx => "fedprox",
            MethodKind::FedBalance => "fedbalance",
        }
    }
}

/// Where the train/test datasets come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    Synthetic,
    Idx,
}

/// Dataset parameters, surfaced through the `[data]` section.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub classes: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub dim: usize,
    pub separation: f64,
    pub seed: u64,
    /// View flat features as a `(channels, height, width)` image.
    pub image: Option<(usize, usize, usize)>,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            classes: 10,
            per_class: 300,
            test_per_class: 50,
            dim: 784,
            separation: 2.0,
            seed: 1,
            image: Some((1, 28, 28)),
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
        }
    }
}

impl DataConfig {
    /// Materializes the train and test datasets.
    ///
    /// Synthetic data draws one pool per class (train + test samples
    /// together, so both splits share the class geometry and scaling) and
    /// splits it; IDX data loads the four files as-is.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match self.source {
            DataSource::Synthetic => {
                let pool = generate_synthetic(
                    self.classes,
                    self.per_class + self.test_per_class,
                    self.dim,
                    self.separation,
                    self.seed,
                )?;
                let block = self.per_class + self.test_per_class;
                let mut train_idx = Vec::with_capacity(self.classes * self.per_class);
                let mut test_idx = Vec::with_capacity(self.classes * self.test_per_class);
                for c in 0..self.classes {
                    let start = c * block;
                    train_idx.extend(start..start + self.per_class);
                    test_idx.extend(start + self.per_class..start + block);
                }
                let train = pool.subset(&train_idx)?;
                let test = pool.subset(&test_idx)?;
                self.apply_image_view(train, test)
            }
            DataSource::Idx => {
                let need = |field: &Option<PathBuf>, key: &str| {
                    field.clone().ok_or_else(|| {
                        Error::InvalidArgument(format!("data source idx requires `{key}`"))
                    })
                };
                let train = load_idx(
                    &need(&self.train_images, "train_images")?,
                    &need(&self.train_labels, "train_labels")?,
                )?;
                let test = load_idx(
                    &need(&self.test_images, "test_images")?,
                    &need(&self.test_labels, "test_labels")?,
                )?;
                let classes = train.num_classes().max(test.num_classes());
                let train = train.with_num_classes(classes)?;
                let test = test.with_num_classes(classes)?;
                self.apply_image_view(train, test)
            }
        }
    }

    fn apply_image_view(&self, train: Dataset, test: Dataset) -> Result<(Dataset, Dataset)> {
        match self.image {
            Some((c, h, w)) => Ok((train.as_image(c, h, w)?, test.as_image(c, h, w)?)),
            None => Ok((train, test)),
        }
    }
}

/// A parsed experiment file: every top-level knob plus the data section.
/// Resolves to an [`ExperimentConfig`] once the dataset shape is known.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub num_clients: usize,
    pub gamma: f64,
    pub beta: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub eval_every: usize,
    pub target_accuracy: Option<f64>,
    pub method: MethodKind,
    pub mu: f64,
    pub arch: String,
    pub weak_arch: String,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            rounds: 50,
            local_epochs: 10,
            num_clients: 20,
            gamma: 0.2,
            beta: 0.1,
            batch_size: 64,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-5,
            seed: 42,
            eval_every: 1,
            target_accuracy: None,
            method: MethodKind::FedAvg,
            mu: 0.5,
            arch: "cnn-small".to_string(),
            weak_arch: "mlp-weak".to_string(),
            data: DataConfig::default(),
        }
    }
}

impl RunConfig {
    /// Builds the method spec and architectures for a concrete dataset shape.
    pub fn resolve(&self, input: InputShape, num_classes: usize) -> Result<ExperimentConfig> {
        let arch = registry::build(&self.arch, input, num_classes)?;
        let method = match self.method {
            MethodKind::FedAvg => MethodSpec::FedAvg,
            MethodKind::FedProx => MethodSpec::FedProx { mu: self.mu },
            MethodKind::FedBalance => MethodSpec::FedBalance {
                weak_arch: registry::build(&self.weak_arch, input, num_classes)?,
            },
        };
        let config = ExperimentConfig {
            rounds: self.rounds,
            local_epochs: self.local_epochs,
            num_clients: self.num_clients,
            sample_fraction: self.gamma,
            beta: self.beta,
            batch_size: self.batch_size,
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            method,
            arch,
            seed: self.seed,
            eval_every: self.eval_every,
            target_accuracy: self.target_accuracy,
        };
        config.validate()?;
        Ok(config)
    }

    /// Serializes every knob (defaults applied) back to the config grammar;
    /// re-parsing the output yields an equal config.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "rounds = {}", self.rounds);
        let _ = writeln!(s, "local_epochs = {}", self.local_epochs);
        let _ = writeln!(s, "num_clients = {}", self.num_clients);
        let _ = writeln!(s, "gamma = {}", self.gamma);
        let _ = writeln!(s, "beta = {}", self.beta);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "momentum = {}", self.momentum);
        let _ = writeln!(s, "weight_decay = {}", self.weight_decay);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "eval_every = {}", self.eval_every);
        if let Some(t) = self.target_accuracy {
            let _ = writeln!(s, "target_accuracy = {t}");
        }
        let _ = writeln!(s, "method = {}", self.method.name());
        let _ = writeln!(s, "mu = {}", self.mu);
        let _ = writeln!(s, "arch = {}", self.arch);
        let _ = writeln!(s, "weak_arch = {}", self.weak_arch);
        let _ = writeln!(s, "\n[data]");
        let d = &self.data;
        let _ = writeln!(
            s,
            "source = {}",
            match d.source {
                DataSource::Synthetic => "synthetic",
                DataSource::Idx => "idx",
            }
        );
        let _ = writeln!(s, "classes = {}", d.classes);
        let _ = writeln!(s, "per_class = {}", d.per_class);
        let _ = writeln!(s, "test_per_class = {}", d.test_per_class);
        let _ = writeln!(s, "dim = {}", d.dim);
        let _ = writeln!(s, "separation = {}", d.separation);
        let _ = writeln!(s, "seed = {}", d.seed);
        if let Some((c, h, w)) = d.image {
            let _ = writeln!(s, "image = {c}x{h}x{w}");
        }
        for (key, path) in [
            ("train_images", &d.train_images),
            ("train_labels", &d.train_labels),
            ("test_images", &d.test_images),
            ("test_labels", &d.test_labels),
        ] {
            if let Some(p) = path {
                let _ = writeln!(s, "{key} = {}", p.display());
            }
        }
        s
    }
}

/// Parses a config file; missing keys fall back to defaults, unknown keys
/// are errors.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text, &path.display().to_string())
}

/// [`parse_config`] over an in-memory string; `label` names the source in
/// error messages.
pub fn parse_config_str(text: &str, label: &str) -> Result<RunConfig> {
    let mut config = RunConfig::default();
    let mut section: Option<String> = None;

    let fail = |line: usize, message: String| -> Error {
        Error::Config {
            path: label.to_string(),
            line,
            message,
        }
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| fail(line_no, format!("malformed section header `{line}`")))?
                .trim();
            if name != "data" {
                return Err(fail(line_no, format!("unknown section `[{name}]`")));
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| fail(line_no, format!("expected `key = value`, got `{line}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if value.is_empty() {
            return Err(fail(line_no, format!("key `{key}` has no value")));
        }
        match section.as_deref() {
            None => apply_experiment_key(&mut config, key, value)
                .map_err(|m| fail(line_no, m))?,
            Some("data") => {
                apply_data_key(&mut config.data, key, value).map_err(|m| fail(line_no, m))?
            }
            Some(_) => unreachable!("only [data] is accepted"),
        }
    }
    validate_domains(&config).map_err(|m| fail(0, m))?;
    Ok(config)
}

type KeyResult = std::result::Result<(), String>;

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value `{value}` for `{key}`"))
}

fn apply_experiment_key(config: &mut RunConfig, key: &str, value: &str) -> KeyResult {
    match key {
        "rounds" => config.rounds = parse_value(key, value)?,
        "local_epochs" => config.local_epochs = parse_value(key, value)?,
        "num_clients" => config.num_clients = parse_value(key, value)?,
        "gamma" => config.gamma = parse_value(key, value)?,
        "beta" => config.beta = parse_value(key, value)?,
        "batch_size" => config.batch_size = parse_value(key, value)?,
        "lr" => config.lr = parse_value(key, value)?,
        "momentum" => config.momentum = parse_value(key, value)?,
        "weight_decay" => config.weight_decay = parse_value(key, value)?,
        "seed" => config.seed = parse_value(key, value)?,
        "eval_every" => config.eval_every = parse_value(key, value)?,
        "target_accuracy" => config.target_accuracy = Some(parse_value(key, value)?),
        "mu" => config.mu = parse_value(key, value)?,
        "arch" => config.arch = value.to_string(),
        "weak_arch" => config.weak_arch = value.to_string(),
        "method" => {
            config.method = match value {
                "fedavg" => MethodKind::FedAvg,
                "fedprox" => MethodKind::FedProx,
                "fedbalance" => MethodKind::FedBalance,
                other => {
                    return Err(format!(
                        "unknown method `{other}` (expected fedavg, fedprox or fedbalance)"
                    ))
                }
            }
        }
        other => return Err(format!("unknown key `{other}`")),
    }
    Ok(())
}

fn apply_data_key(data: &mut DataConfig, key: &str, value: &str) -> KeyResult {
    match key {
        "source" => {
            data.source = match value {
                "synthetic" => DataSource::Synthetic,
                "idx" => DataSource::Idx,
                other => return Err(format!("unknown data source `{other}`")),
            }
        }
        "classes" => data.classes = parse_value(key, value)?,
        "per_class" => data.per_class = parse_value(key, value)?,
        "test_per_class" => data.test_per_class = parse_value(key, value)?,
        "dim" => data.dim = parse_value(key, value)?,
        "separation" => data.separation = parse_value(key, value)?,
        "seed" => data.seed = parse_value(key, value)?,
        "image" => {
            let parts: Vec<&str> = value.split('x').collect();
            if parts.len() != 3 {
                return Err(format!("`image` must look like CxHxW, got `{value}`"));
            }
            let dims: Vec<usize> = parts
                .iter()
                .map(|p| parse_value::<usize>(key, p.trim()))
                .collect::<std::result::Result<_, _>>()?;
            data.image = Some((dims[0], dims[1], dims[2]));
        }
        "train_images" => data.train_images = Some(PathBuf::from(value)),
        "train_labels" => data.train_labels = Some(PathBuf::from(value)),
        "test_images" => data.test_images = Some(PathBuf::from(value)),
        "test_labels" => data.test_labels = Some(PathBuf::from(value)),
        other => return Err(format!("unknown key `{other}` in [data]")),
    }
    Ok(())
}

fn validate_domains(config: &RunConfig) -> KeyResult {
    if !(config.gamma > 0.0 && config.gamma <= 1.0) {
        return Err(format!("gamma: {} is outside (0, 1]", config.gamma));
    }
    if !(config.beta.is_finite() && config.beta > 0.0) {
        return Err(format!("beta: {} must be positive", config.beta));
    }
    for (key, v) in [
        ("lr", config.lr),
        ("momentum", config.momentum),
        ("weight_decay", config.weight_decay),
        ("mu", config.mu),
    ] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(format!("{key}: {v} must be finite and non-negative"));
        }
    }
    for (key, v) in [
        ("num_clients", config.num_clients),
        ("batch_size", config.batch_size),
        ("local_epochs", config.local_epochs),
        ("eval_every", config.eval_every),
    ] {
        if v == 0 {
            return Err(format!("{key}: must be at least 1"));
        }
    }
    if config.data.classes < 2 {
        return Err("classes: need at least 2".to_string());
    }
    if config.data.per_class == 0 || config.data.dim == 0 {
        return Err("per_class and dim must be at least 1".to_string());
    }
    if !(config.data.separation.is_finite() && config.data.separation >= 0.0) {
        return Err(format!(
            "separation: {} must be finite and non-negative",
            config.data.separation
        ));
    }
    Ok(())
}
