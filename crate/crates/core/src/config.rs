//! Line-oriented `key = value` run configuration covering every training
//! and model field. `#` starts a comment; unknown keys are errors. The
//! same keys back the command-line flags, so a value can come from the
//! built-in defaults, a config file, or a flag, in that order.

use std::fmt;

use crate::experiment::{Optimizer, TrainConfig};
use crate::model::ModelConfig;
use crate::nn::Conv1dSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct RunFileConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
}

impl Default for RunFileConfig {
    /// Pipeline defaults: the desk-scale model matching the synthetic
    /// corpus. The full-scale 16 kHz architecture is selected by config
    /// when real data is ingested.
    fn default() -> Self {
        RunFileConfig { train: TrainConfig::default(), model: ModelConfig::desk_scale() }
    }
}

#[derive(Debug)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(n) => write!(f, "config line {n}: {}", self.message),
            None => write!(f, "config: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(message: String) -> ConfigError {
    ConfigError { line: None, message }
}

fn parse_list(value: &str, key: &str) -> Result<Vec<usize>, ConfigError> {
    let items: Result<Vec<usize>, _> =
        value.split(',').map(|v| v.trim().parse::<usize>()).collect();
    items.map_err(|_| err(format!("{key}: expected a comma-separated list of integers, got `{value}`")))
}

fn parse_bool(value: &str, key: &str) -> Result<bool, ConfigError> {
    match value {
        "0" | "false" => Ok(false),
        "1" | "true" => Ok(true),
        _ => Err(err(format!("{key}: expected 0/1 or true/false, got `{value}`"))),
    }
}

/// Applies one key to the config. This is the single parsing path for
/// both file lines and command-line overrides.
pub fn apply_key(cfg: &mut RunFileConfig, key: &str, value: &str) -> Result<(), ConfigError> {
    let value = value.trim();
    let parse_num = |name: &str| -> Result<usize, ConfigError> {
        value.parse().map_err(|_| err(format!("{name}: expected an integer, got `{value}`")))
    };
    let parse_f64 = |name: &str| -> Result<f64, ConfigError> {
        value.parse().map_err(|_| err(format!("{name}: expected a number, got `{value}`")))
    };
    match key {
        // training
        "epochs" => cfg.train.epochs = parse_num(key)?,
        "batch_size" => cfg.train.batch_size = parse_num(key)?,
        "learning_rate" => cfg.train.learning_rate = parse_f64(key)?,
        "finetune_learning_rate" => cfg.train.finetune_learning_rate = parse_f64(key)?,
        "optimizer" => {
            cfg.train.optimizer = Optimizer::parse(value)
                .ok_or_else(|| err(format!("optimizer: expected adam or sgd, got `{value}`")))?
        }
        "patience" => cfg.train.patience = parse_num(key)?,
        "seed" => {
            cfg.train.seed =
                value.parse().map_err(|_| err(format!("seed: expected an integer, got `{value}`")))?
        }
        "lambda" => cfg.train.lambda = parse_f64(key)?,
        "lambda_mtl" => cfg.train.lambda_mtl = parse_f64(key)?,
        "alpha" => cfg.train.alpha = parse_bool(value, key)?,
        // model
        "input_length" => cfg.model.input_length = parse_num(key)?,
        "conv_channels" => {
            let channels = parse_list(value, key)?;
            resize_layers(&mut cfg.model, channels.len());
            let mut in_ch = 1;
            for (spec, ch) in cfg.model.conv_layers.iter_mut().zip(channels) {
                spec.in_channels = in_ch;
                spec.out_channels = ch;
                in_ch = ch;
            }
        }
        "conv_kernels" => {
            let kernels = parse_list(value, key)?;
            resize_layers(&mut cfg.model, kernels.len());
            for (spec, k) in cfg.model.conv_layers.iter_mut().zip(kernels) {
                spec.kernel_size = k;
            }
        }
        "conv_strides" => {
            let strides = parse_list(value, key)?;
            resize_layers(&mut cfg.model, strides.len());
            for (spec, s) in cfg.model.conv_layers.iter_mut().zip(strides) {
                spec.stride = s;
            }
        }
        "conv_paddings" => {
            let paddings = parse_list(value, key)?;
            resize_layers(&mut cfg.model, paddings.len());
            for (spec, p) in cfg.model.conv_layers.iter_mut().zip(paddings) {
                spec.padding = p;
            }
        }
        "pool_after" => {
            let flags = parse_list(value, key)?;
            if flags.iter().any(|&f| f > 1) {
                return Err(err(format!("pool_after: entries must be 0 or 1, got `{value}`")));
            }
            cfg.model.pool_after = flags.into_iter().map(|f| f == 1).collect();
        }
        "pool_window" => cfg.model.pool_window = parse_num(key)?,
        "pool_stride" => cfg.model.pool_stride = parse_num(key)?,
        "hidden_dim" => cfg.model.hidden_dim = parse_num(key)?,
        "num_classes" => cfg.model.num_classes = parse_num(key)?,
        "sigmoid_hidden" => cfg.model.sigmoid_hidden = parse_bool(value, key)?,
        other => return Err(err(format!("unknown key `{other}`"))),
    }
    Ok(())
}

fn resize_layers(model: &mut ModelConfig, n: usize) {
    let template = Conv1dSpec { in_channels: 1, out_channels: 1, kernel_size: 1, stride: 1, padding: 0 };
    model.conv_layers.resize(n, template);
    model.pool_after.resize(n, false);
}

/// Parses config text over the given base configuration.
pub fn parse_config_over(text: &str, base: RunFileConfig) -> Result<RunFileConfig, ConfigError> {
    let mut cfg = base;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or(ConfigError { line: Some(i + 1), message: format!("expected `key = value`, got `{line}`") })?;
        apply_key(&mut cfg, key.trim(), value).map_err(|e| ConfigError {
            line: Some(i + 1),
            message: e.message,
        })?;
    }
    Ok(cfg)
}

pub fn parse_config(text: &str) -> Result<RunFileConfig, ConfigError> {
    parse_config_over(text, RunFileConfig::default())
}

/// Canonical rendering; `parse_config(render(cfg)) == cfg`.
pub fn render(cfg: &RunFileConfig) -> String {
    let mut out = String::new();
    out.push_str("# training\n");
    out.push_str(&format!("epochs = {}\n", cfg.train.epochs));
    out.push_str(&format!("batch_size = {}\n", cfg.train.batch_size));
    out.push_str(&format!("learning_rate = {}\n", cfg.train.learning_rate));
    out.push_str(&format!("finetune_learning_rate = {}\n", cfg.train.finetune_learning_rate));
    out.push_str(&format!("optimizer = {}\n", cfg.train.optimizer.as_str()));
    out.push_str(&format!("patience = {}\n", cfg.train.patience));
    out.push_str(&format!("seed = {}\n", cfg.train.seed));
    out.push_str(&format!("lambda = {}\n", cfg.train.lambda));
    out.push_str(&format!("lambda_mtl = {}\n", cfg.train.lambda_mtl));
    out.push_str(&format!("alpha = {}\n", cfg.train.alpha as u8));
    out.push_str("# model\n");
    out.push_str(&cfg.model.canonical_text());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunFileConfig::default();
        let text = render(&cfg);
        let parsed = parse_config(&text).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn overrides_apply_in_order() {
        let text = "epochs = 10\n# comment\n\nepochs = 12\nlearning_rate = 0.01\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.train.epochs, 12);
        assert_eq!(cfg.train.learning_rate, 0.01);
    }

    #[test]
    fn model_keys_rebuild_conv_chain() {
        let text = "conv_channels = 2,4,4,4,4,4,8\nconv_kernels = 4,4,3,3,3,2,2\nconv_strides = 2,2,1,1,1,1,1\ninput_length = 64\nhidden_dim = 8\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.model.conv_layers.len(), 7);
        assert_eq!(cfg.model.conv_layers[0].in_channels, 1);
        assert_eq!(cfg.model.conv_layers[1].in_channels, 2);
        assert_eq!(cfg.model.conv_layers[6].out_channels, 8);
        cfg.model.validate().unwrap();
    }

    #[test]
    fn unknown_key_is_an_error() {
        let e = parse_config("nope = 1\n").unwrap_err();
        assert!(e.message.contains("unknown key"));
        assert_eq!(e.line, Some(1));
    }

    #[test]
    fn bad_values_are_errors_with_line_numbers() {
        let e = parse_config("epochs = many\n").unwrap_err();
        assert_eq!(e.line, Some(1));
        let e = parse_config("\noptimizer = rmsprop\n").unwrap_err();
        assert_eq!(e.line, Some(2));
        assert!(parse_config("pool_after = 0,2\n").is_err());
        assert!(parse_config("epochs 12\n").is_err());
    }

    #[test]
    fn alpha_and_sigmoid_accept_bool_forms() {
        let cfg = parse_config("alpha = true\nsigmoid_hidden = 0\n").unwrap();
        assert!(cfg.train.alpha);
        assert!(!cfg.model.sigmoid_hidden);
    }
}
