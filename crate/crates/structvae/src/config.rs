//! Plain-text `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are an
//! error. The file format is also the format of the resolved snapshot each
//! run writes, so a snapshot can be fed straight back in with `--config`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use structvae_core::train::TrainConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("invalid value `{value}` for `{key}`: {detail}")]
    Value {
        key: String,
        value: String,
        detail: String,
    },
    #[error("`{0}` is required")]
    Missing(&'static str),
    #[error("{0}")]
    Invalid(String),
}

/// Data file that failed pre-flight validation.
#[derive(Debug, thiserror::Error)]
#[error("{key}: cannot read {}: {source}", path.display())]
pub struct MissingData {
    pub key: &'static str,
    pub path: PathBuf,
    pub source: std::io::Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub train: TrainConfig,
    /// Use only the first `n` training examples.
    pub train_limit: Option<usize>,
    /// Evaluate on only the first `n` test examples.
    pub test_limit: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            images: None,
            labels: None,
            test_images: None,
            test_labels: None,
            out: None,
            train: TrainConfig::default(),
            train_limit: None,
            test_limit: None,
        }
    }
}

pub const KEYS: [&str; 20] = [
    "images",
    "labels",
    "test_images",
    "test_labels",
    "out",
    "labels_per_class",
    "rate",
    "batch_size",
    "epochs",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "alpha",
    "estimator",
    "style_dim",
    "hidden_width",
    "seed",
    "train_limit",
    "test_limit",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.to_owned(),
        value: value.to_owned(),
        detail: e.to_string(),
    })
}

fn parse_limit(key: &str, value: &str) -> Result<Option<usize>, ConfigError> {
    if value == "none" {
        Ok(None)
    } else {
        parse_num(key, value).map(Some)
    }
}

fn show_opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_owned(), T::to_string)
}

fn show_path(v: &Option<PathBuf>) -> String {
    v.as_ref().map_or_else(String::new, |p| p.display().to_string())
}

impl RunConfig {
    /// Sets one key. Paths are taken verbatim; an empty path clears it.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let path = || (!value.is_empty()).then(|| PathBuf::from(value));
        let t = &mut self.train;
        match key {
            "images" => self.images = path(),
            "labels" => self.labels = path(),
            "test_images" => self.test_images = path(),
            "test_labels" => self.test_labels = path(),
            "out" => self.out = path(),
            "labels_per_class" => t.labels_per_class = parse_num(key, value)?,
            "rate" => t.rate = parse_num(key, value)?,
            "batch_size" => t.batch_size = parse_num(key, value)?,
            "epochs" => t.epochs = parse_num(key, value)?,
            "lr" => t.adam.lr = parse_num(key, value)?,
            "beta1" => t.adam.beta1 = parse_num(key, value)?,
            "beta2" => t.adam.beta2 = parse_num(key, value)?,
            "eps" => t.adam.eps = parse_num(key, value)?,
            "alpha" => {
                t.alpha = match value {
                    "auto" | "none" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "estimator" => {
                t.estimator = value.parse().map_err(|e: structvae_core::Error| ConfigError::Value {
                    key: key.to_owned(),
                    value: value.to_owned(),
                    detail: e.to_string(),
                })?
            }
            "style_dim" => t.style_dim = parse_num(key, value)?,
            "hidden_width" => t.hidden_width = parse_num(key, value)?,
            "seed" => t.seed = parse_num(key, value)?,
            "train_limit" => self.train_limit = parse_limit(key, value)?,
            "test_limit" => self.test_limit = parse_limit(key, value)?,
            _ => return Err(ConfigError::UnknownKey { line: 0, key: key.to_owned() }),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        Some(match key {
            "images" => show_path(&self.images),
            "labels" => show_path(&self.labels),
            "test_images" => show_path(&self.test_images),
            "test_labels" => show_path(&self.test_labels),
            "out" => show_path(&self.out),
            "labels_per_class" => t.labels_per_class.to_string(),
            // `{:?}` keeps enough digits to round-trip every f64
            "rate" => format!("{:?}", t.rate),
            "batch_size" => t.batch_size.to_string(),
            "epochs" => t.epochs.to_string(),
            "lr" => format!("{:?}", t.adam.lr),
            "beta1" => format!("{:?}", t.adam.beta1),
            "beta2" => format!("{:?}", t.adam.beta2),
            "eps" => format!("{:?}", t.adam.eps),
            "alpha" => t.alpha.map_or_else(|| "auto".to_owned(), |a| format!("{a:?}")),
            "estimator" => t.estimator.as_str().to_owned(),
            "style_dim" => t.style_dim.to_string(),
            "hidden_width" => t.hidden_width.to_string(),
            "seed" => t.seed.to_string(),
            "train_limit" => show_opt(&self.train_limit),
            "test_limit" => show_opt(&self.test_limit),
            _ => return None,
        })
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: i + 1 })?;
            let key = key.trim();
            self.set(key, value.trim()).map_err(|e| match e {
                ConfigError::UnknownKey { key, .. } => ConfigError::UnknownKey { line: i + 1, key },
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Every key in a fixed order; parsing this text reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("known key"));
        }
        out
    }

    /// Keys that determine the optimisation trajectory. The epoch budget,
    /// evaluation subset and file locations are excluded so a run can be
    /// extended or relocated and still resume.
    pub fn hyperparameter_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            if matches!(
                key,
                "images" | "labels" | "test_images" | "test_labels" | "out" | "epochs" | "test_limit"
            ) {
                continue;
            }
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("known key"));
        }
        out
    }

    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.hyperparameter_text().as_bytes()).into()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.train_limit == Some(0) || self.test_limit == Some(0) {
            return Err(ConfigError::Invalid("limits must be positive".into()));
        }
        Ok(())
    }

    /// Required path for `key`, or a config error.
    pub fn path(&self, key: &'static str) -> Result<&Path, ConfigError> {
        let p = match key {
            "images" => &self.images,
            "labels" => &self.labels,
            "test_images" => &self.test_images,
            "test_labels" => &self.test_labels,
            "out" => &self.out,
            _ => unreachable!("not a path key: {key}"),
        };
        p.as_deref().ok_or(ConfigError::Missing(key))
    }

    /// Checks that each listed data file can be opened.
    pub fn check_data(&self, keys: &[&'static str]) -> Result<(), CheckError> {
        for &key in keys {
            let path = self.path(key)?;
            if let Err(source) = fs::File::open(path) {
                return Err(CheckError::Data(MissingData {
                    key,
                    path: path.to_owned(),
                    source,
                }));
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CheckError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(MissingData),
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
