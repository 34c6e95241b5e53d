//! Flat key=value run configuration files.
//!
//! Every key is optional; command-line flags override file values. Unknown
//! keys are rejected so typos fail loudly. Blank lines and `#` comments are
//! allowed.
//!
//! ```text
//! task = denoise
//! input = noisy.hsc
//! output = restored.hsc
//! iters = 3000
//! lr = 0.01
//! seed = 7
//! arch = 2d
//! levels = 5
//! channels = 16,32,64,128,128
//! kernel_size = 3
//! skip = true
//! skip_channels = 4
//! upsample = linear
//! input_noise = 0.1
//! perturb_sigma = 0
//! sr_factor = 2
//! stop = fixed            # or patience:<window>:<min_delta>
//! ```

use std::path::PathBuf;

use hsprior_core::{StopPolicy, Task, UpsampleMode, Variant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: line {line}: expected `key = value`, got `{text}`")]
    BadLine {
        path: String,
        line: usize,
        text: String,
    },
    #[error("{path}: line {line}: unknown key `{key}`")]
    UnknownKey {
        path: String,
        line: usize,
        key: String,
    },
    #[error("{path}: line {line}: bad value `{value}` for `{key}`: {reason}")]
    BadValue {
        path: String,
        line: usize,
        key: String,
        value: String,
        reason: String,
    },
    #[error("missing required key `{key}` for this task (set it in the config or as a flag)")]
    MissingKey { key: &'static str },
}

pub type Result<T> = std::result::Result<T, ConfigError>;

/// Parsed run configuration; `None` means "not set here".
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    pub task: Option<Task>,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub history: Option<PathBuf>,
    pub iters: Option<usize>,
    pub lr: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub seed: Option<u64>,
    pub arch: Option<Variant>,
    pub levels: Option<usize>,
    pub channels: Option<Vec<usize>>,
    pub kernel_size: Option<usize>,
    pub skip: Option<Vec<bool>>,
    pub skip_channels: Option<usize>,
    pub upsample: Option<UpsampleMode>,
    pub normalize: Option<bool>,
    pub input_noise: Option<f64>,
    pub perturb_sigma: Option<f64>,
    pub sr_factor: Option<usize>,
    pub stop: Option<StopPolicy>,
}

pub fn parse_task(s: &str) -> Option<Task> {
    match s {
        "denoise" => Some(Task::Denoise),
        "inpaint" => Some(Task::Inpaint),
        "sr" | "superres" => Some(Task::Superres),
        _ => None,
    }
}

pub fn parse_variant(s: &str) -> Option<Variant> {
    match s {
        "2d" | "2D" => Some(Variant::TwoD),
        "3d" | "3D" => Some(Variant::ThreeD),
        _ => None,
    }
}

pub fn parse_upsample(s: &str) -> Option<UpsampleMode> {
    match s {
        "nearest" => Some(UpsampleMode::Nearest),
        "linear" | "bilinear" | "trilinear" => Some(UpsampleMode::Linear),
        _ => None,
    }
}

pub fn parse_stop(s: &str) -> Option<StopPolicy> {
    if s == "fixed" {
        return Some(StopPolicy::FixedIters);
    }
    let mut parts = s.split(':');
    if parts.next()? != "patience" {
        return None;
    }
    let window = parts.next()?.parse().ok()?;
    let min_delta = parts.next()?.parse().ok()?;
    if parts.next().is_some() {
        return None;
    }
    Some(StopPolicy::Patience { window, min_delta })
}

impl RunConfig {
    /// Parses a config file body. `path` is only used in error messages.
    pub fn parse(text: &str, path: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::BadLine {
                    path: path.to_string(),
                    line: line_no,
                    text: raw.to_string(),
                });
            };
            let key = key.trim();
            let value = value.trim();
            cfg.apply(key, value).map_err(|reason| match reason {
                ApplyError::Unknown => ConfigError::UnknownKey {
                    path: path.to_string(),
                    line: line_no,
                    key: key.to_string(),
                },
                ApplyError::Bad(reason) => ConfigError::BadValue {
                    path: path.to_string(),
                    line: line_no,
                    key: key.to_string(),
                    value: value.to_string(),
                    reason,
                },
            })?;
        }
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> std::result::Result<(), ApplyError> {
        fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, ApplyError> {
            v.parse()
                .map_err(|_| ApplyError::Bad("not a valid number".to_string()))
        }
        match key {
            "task" => {
                self.task =
                    Some(parse_task(value).ok_or_else(|| {
                        ApplyError::Bad("expected denoise|inpaint|sr".to_string())
                    })?)
            }
            "input" => self.input = Some(PathBuf::from(value)),
            "output" => self.output = Some(PathBuf::from(value)),
            "mask" => self.mask = Some(PathBuf::from(value)),
            "reference" => self.reference = Some(PathBuf::from(value)),
            "history" => self.history = Some(PathBuf::from(value)),
            "iters" => self.iters = Some(num(value)?),
            "lr" => self.lr = Some(num(value)?),
            "beta1" => self.beta1 = Some(num(value)?),
            "beta2" => self.beta2 = Some(num(value)?),
            "eps" => self.eps = Some(num(value)?),
            "seed" => self.seed = Some(num(value)?),
            "arch" => {
                self.arch = Some(
                    parse_variant(value)
                        .ok_or_else(|| ApplyError::Bad("expected 2d|3d".to_string()))?,
                )
            }
            "levels" => self.levels = Some(num(value)?),
            "channels" => {
                let parsed: std::result::Result<Vec<usize>, _> =
                    value.split(',').map(|v| num(v.trim())).collect();
                self.channels = Some(parsed?);
            }
            "kernel_size" => self.kernel_size = Some(num(value)?),
            "skip" => {
                let parsed: std::result::Result<Vec<bool>, ApplyError> = value
                    .split(',')
                    .map(|v| {
                        v.trim()
                            .parse()
                            .map_err(|_| ApplyError::Bad("expected true|false".to_string()))
                    })
                    .collect();
                self.skip = Some(parsed?);
            }
            "skip_channels" => self.skip_channels = Some(num(value)?),
            "upsample" => {
                self.upsample = Some(parse_upsample(value).ok_or_else(|| {
                    ApplyError::Bad("expected nearest|linear".to_string())
                })?)
            }
            "normalize" => {
                self.normalize = Some(
                    value
                        .parse()
                        .map_err(|_| ApplyError::Bad("expected true|false".to_string()))?,
                )
            }
            "input_noise" => self.input_noise = Some(num(value)?),
            "perturb_sigma" => self.perturb_sigma = Some(num(value)?),
            "sr_factor" => self.sr_factor = Some(num(value)?),
            "stop" => {
                self.stop = Some(parse_stop(value).ok_or_else(|| {
                    ApplyError::Bad("expected fixed or patience:<window>:<delta>".to_string())
                })?)
            }
            _ => return Err(ApplyError::Unknown),
        }
        Ok(())
    }

    /// Fills any unset field of `self` from `other` (flag values take
    /// precedence over file values when `self` holds the flags).
    pub fn or_else_from(mut self, other: RunConfig) -> RunConfig {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if self.$field.is_none() { self.$field = other.$field; })*
            };
        }
        take!(
            task, input, output, mask, reference, history, iters, lr, beta1, beta2, eps,
            seed, arch, levels, channels, kernel_size, skip, skip_channels, upsample,
            normalize, input_noise, perturb_sigma, sr_factor, stop
        );
        self
    }
}

enum ApplyError {
    Unknown,
    Bad(String),
}
