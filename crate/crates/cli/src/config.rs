//! Run configuration: a flat `key = value` file with `[sections]`.
//!
//! ```text
//! seed = 7
//! out = runs/default
//!
//! [data]
//! num_classes = 4
//!
//! [train]
//! epochs = 10
//! cam_mode = ccam
//! ```
//!
//! Missing keys keep their defaults. `#` starts a comment.

use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use hclnet::data::DatasetConfig;
use hclnet::fusion::{FusionConfig, FusionStrategy};
use hclnet::model::{GuidanceMode, ModelConfig, TrainConfig, DEFAULT_ERASE_THRESHOLD};
use hclnet::Error;

#[derive(Clone, Debug, PartialEq)]
pub struct DataSection {
    pub num_classes: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub height: usize,
    pub width: usize,
    pub head_min: usize,
    pub head_max: usize,
    pub body_min: usize,
    pub body_max: usize,
    pub noise: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSection {
    pub backbone_channels: Vec<usize>,
    pub head_width: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub max_grad_norm: Option<f32>,
    /// `ccam` or `threshold`.
    pub cam_mode: String,
    pub erase_threshold: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSection {
    pub strategy: FusionStrategy,
    pub block_radius: usize,
    pub single_branch: bool,
    pub bbox_tau: f32,
}

/// Everything one pipeline run needs. A single seed drives data generation,
/// weight initialization and the training shuffle.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let data = DatasetConfig::default();
        let model = ModelConfig::default();
        let train = TrainConfig::default();
        let fusion = FusionConfig::default();
        Self {
            seed: data.seed,
            out: PathBuf::from("runs/default"),
            data: DataSection {
                num_classes: data.num_classes,
                train_samples: data.train_samples,
                test_samples: data.test_samples,
                height: data.height,
                width: data.width,
                head_min: data.head_size.0,
                head_max: data.head_size.1,
                body_min: data.body_size.0,
                body_max: data.body_size.1,
                noise: data.noise,
            },
            model: ModelSection {
                backbone_channels: model.backbone_channels,
                head_width: model.head_width,
            },
            train: TrainSection {
                epochs: train.epochs,
                batch_size: train.batch_size,
                learning_rate: train.learning_rate,
                max_grad_norm: train.max_grad_norm,
                cam_mode: train.guidance.name().to_string(),
                erase_threshold: DEFAULT_ERASE_THRESHOLD,
            },
            eval: EvalSection {
                strategy: fusion.strategy,
                block_radius: fusion.block_radius,
                single_branch: false,
                bbox_tau: 0.2,
            },
        }
    }
}

/// Error from parsing a config file, with its 1-based line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for ParseError {}

fn parse_value<T: FromStr>(key: &str, raw: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    raw.parse::<T>()
        .map_err(|e| format!("invalid value `{raw}` for `{key}`: {e}"))
}

fn parse_bool(key: &str, raw: &str) -> Result<bool, String> {
    match raw {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("invalid value `{raw}` for `{key}`: expected true or false")),
    }
}

fn parse_list(key: &str, raw: &str) -> Result<Vec<usize>, String> {
    raw.split(',').map(|s| parse_value(key, s.trim())).collect()
}

fn parse_optional(key: &str, raw: &str) -> Result<Option<f32>, String> {
    if raw == "none" {
        Ok(None)
    } else {
        parse_value(key, raw).map(Some)
    }
}

impl RunConfig {
    /// Reads a config file over the defaults.
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let mut config = Self::default();
        let mut section = String::new();
        let mut seen = std::collections::HashSet::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let err = |message: String| ParseError {
                line: line_no,
                message,
            };
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| err(format!("unterminated section header `{line}`")))?
                    .trim();
                if !matches!(name, "data" | "model" | "train" | "eval") {
                    return Err(err(format!("unknown section `{name}` (valid: data, model, train, eval)")));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, found `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let qualified = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            if !seen.insert(qualified.clone()) {
                return Err(err(format!("duplicate key `{qualified}`")));
            }
            config.set(&qualified, value).map_err(err)?;
        }
        Ok(config)
    }

    /// Sets one field by its dotted name, e.g. `train.epochs`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let d = &mut self.data;
        let t = &mut self.train;
        let e = &mut self.eval;
        match key {
            "seed" => self.seed = parse_value(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "data.num_classes" => d.num_classes = parse_value(key, value)?,
            "data.train_samples" => d.train_samples = parse_value(key, value)?,
            "data.test_samples" => d.test_samples = parse_value(key, value)?,
            "data.height" => d.height = parse_value(key, value)?,
            "data.width" => d.width = parse_value(key, value)?,
            "data.head_min" => d.head_min = parse_value(key, value)?,
            "data.head_max" => d.head_max = parse_value(key, value)?,
            "data.body_min" => d.body_min = parse_value(key, value)?,
            "data.body_max" => d.body_max = parse_value(key, value)?,
            "data.noise" => d.noise = parse_value(key, value)?,
            "model.backbone_channels" => self.model.backbone_channels = parse_list(key, value)?,
            "model.head_width" => self.model.head_width = parse_value(key, value)?,
            "train.epochs" => t.epochs = parse_value(key, value)?,
            "train.batch_size" => t.batch_size = parse_value(key, value)?,
            "train.learning_rate" => t.learning_rate = parse_value(key, value)?,
            "train.max_grad_norm" => t.max_grad_norm = parse_optional(key, value)?,
            "train.cam_mode" => t.cam_mode = value.to_string(),
            "train.erase_threshold" => t.erase_threshold = parse_value(key, value)?,
            "eval.strategy" => e.strategy = parse_value(key, value)?,
            "eval.block_radius" => e.block_radius = parse_value(key, value)?,
            "eval.single_branch" => e.single_branch = parse_bool(key, value)?,
            "eval.bbox_tau" => e.bbox_tau = parse_value(key, value)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// The file form; [`RunConfig::parse`] reads it back to an equal value.
    pub fn to_file_string(&self) -> String {
        let d = &self.data;
        let t = &self.train;
        let e = &self.eval;
        let channels: Vec<String> = self.model.backbone_channels.iter().map(|c| c.to_string()).collect();
        let grad_norm = t.max_grad_norm.map_or("none".to_string(), |v| v.to_string());
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "out = {}", self.out.display());
        let _ = writeln!(s, "\n[data]");
        let _ = writeln!(s, "num_classes = {}", d.num_classes);
        let _ = writeln!(s, "train_samples = {}", d.train_samples);
        let _ = writeln!(s, "test_samples = {}", d.test_samples);
        let _ = writeln!(s, "height = {}", d.height);
        let _ = writeln!(s, "width = {}", d.width);
        let _ = writeln!(s, "head_min = {}", d.head_min);
        let _ = writeln!(s, "head_max = {}", d.head_max);
        let _ = writeln!(s, "body_min = {}", d.body_min);
        let _ = writeln!(s, "body_max = {}", d.body_max);
        let _ = writeln!(s, "noise = {}", d.noise);
        let _ = writeln!(s, "\n[model]");
        let _ = writeln!(s, "backbone_channels = {}", channels.join(", "));
        let _ = writeln!(s, "head_width = {}", self.model.head_width);
        let _ = writeln!(s, "\n[train]");
        let _ = writeln!(s, "epochs = {}", t.epochs);
        let _ = writeln!(s, "batch_size = {}", t.batch_size);
        let _ = writeln!(s, "learning_rate = {}", t.learning_rate);
        let _ = writeln!(s, "max_grad_norm = {grad_norm}");
        let _ = writeln!(s, "cam_mode = {}", t.cam_mode);
        let _ = writeln!(s, "erase_threshold = {}", t.erase_threshold);
        let _ = writeln!(s, "\n[eval]");
        let _ = writeln!(s, "strategy = {}", e.strategy);
        let _ = writeln!(s, "block_radius = {}", e.block_radius);
        let _ = writeln!(s, "single_branch = {}", e.single_branch);
        let _ = writeln!(s, "bbox_tau = {}", e.bbox_tau);
        s
    }

    pub fn dataset(&self) -> DatasetConfig {
        let d = &self.data;
        DatasetConfig {
            num_classes: d.num_classes,
            train_samples: d.train_samples,
            test_samples: d.test_samples,
            height: d.height,
            width: d.width,
            seed: self.seed,
            head_size: (d.head_min, d.head_max),
            body_size: (d.body_min, d.body_max),
            noise: d.noise,
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            num_classes: self.data.num_classes,
            input_height: self.data.height,
            input_width: self.data.width,
            backbone_channels: self.model.backbone_channels.clone(),
            head_width: self.model.head_width,
            seed: self.seed,
        }
    }

    pub fn guidance(&self) -> hclnet::Result<GuidanceMode> {
        GuidanceMode::parse(&self.train.cam_mode, self.train.erase_threshold)
    }

    pub fn train_config(&self) -> hclnet::Result<TrainConfig> {
        Ok(TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            max_grad_norm: self.train.max_grad_norm,
            guidance: self.guidance()?,
            seed: self.seed,
        })
    }

    pub fn fusion(&self) -> FusionConfig {
        FusionConfig {
            strategy: self.eval.strategy,
            block_radius: self.eval.block_radius,
        }
    }

    /// Checks every field before any work starts.
    pub fn validate(&self) -> hclnet::Result<()> {
        self.dataset().validate()?;
        self.model().validate()?;
        self.train_config()?.validate()?;
        if !(self.train.erase_threshold > 0.0 && self.train.erase_threshold < 1.0) {
            return Err(Error::InvalidConfig {
                field: "erase_threshold".into(),
                reason: "must lie in (0, 1)".into(),
            });
        }
        if !(self.eval.bbox_tau > 0.0 && self.eval.bbox_tau < 1.0) {
            return Err(Error::InvalidConfig {
                field: "bbox_tau".into(),
                reason: "must lie in (0, 1)".into(),
            });
        }
        Ok(())
    }
}
