//! Run configuration: preset defaults, overridden by a flat key-value
//! config file, overridden by CLI flags (handled in main).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use superae::model::ModelConfig;
use superae::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Small sizes for synthetic corpora: 64-wide model, one layer,
    /// batches of 16, vocab capped at 200.
    Desk,
    /// Full-corpus sizes: 512-wide model, two layers, batches of 64,
    /// vocab capped at 4000.
    Paper,
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(format!("unknown preset {other:?}; expected desk or paper")),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        })
    }
}

/// Everything `train` needs, with the model sizes still independent of the
/// corpus (vocab_size is fixed only once data is read).
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub preset: Preset,
    pub train: TrainConfig,
    pub embed_size: usize,
    pub hidden_size: usize,
    pub layers: usize,
    pub n_h: usize,
    pub vocab_max: usize,
    pub min_score: i32,
    /// Source/summary truncation lengths; 0 disables (desk default).
    pub max_source_len: usize,
    pub max_summary_len: usize,
}

impl RunConfig {
    pub fn preset_defaults(preset: Preset) -> Self {
        match preset {
            Preset::Desk => RunConfig {
                preset,
                train: TrainConfig::desk(),
                embed_size: 64,
                hidden_size: 64,
                layers: 1,
                n_h: 64,
                vocab_max: 200,
                min_score: 3,
                max_source_len: 0,
                max_summary_len: 0,
            },
            Preset::Paper => RunConfig {
                preset,
                train: TrainConfig::paper(),
                embed_size: 512,
                hidden_size: 512,
                layers: 2,
                n_h: 512,
                vocab_max: 4000,
                min_score: 3,
                max_source_len: 0,
                max_summary_len: 0,
            },
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            embed_size: self.embed_size,
            hidden_size: self.hidden_size,
            layers: self.layers,
            n_h: self.n_h,
        }
    }

    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String>
        where
            T::Err: fmt::Display,
        {
            value.parse().map_err(|e| format!("bad value for {key}: {e}"))
        }
        match key {
            "lr" => self.train.lr = parse(key, value)?,
            "beta1" => self.train.beta1 = parse(key, value)?,
            "beta2" => self.train.beta2 = parse(key, value)?,
            "adam_eps" => self.train.adam_eps = parse(key, value)?,
            "clip_norm" => self.train.clip_norm = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "max_steps" => self.train.max_steps = parse(key, value)?,
            "seed" => self.train.seed = parse(key, value)?,
            "adversarial" => self.train.adversarial_enabled = parse(key, value)?,
            "lambda" => self.train.lambda = parse(key, value)?,
            "ae" => self.train.ae_enabled = parse(key, value)?,
            "batch_mean" => self.train.batch_mean = parse(key, value)?,
            "validate_every" => self.train.validate_every = parse(key, value)?,
            "embed_size" => self.embed_size = parse(key, value)?,
            "hidden_size" => self.hidden_size = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "n_h" => self.n_h = parse(key, value)?,
            "vocab_max" => self.vocab_max = parse(key, value)?,
            "min_score" => self.min_score = parse(key, value)?,
            "max_source_len" => self.max_source_len = parse(key, value)?,
            "max_summary_len" => self.max_summary_len = parse(key, value)?,
            other => return Err(format!("unknown config key {other:?}")),
        }
        Ok(())
    }

    /// Layer a flat `key = value` file over the current values. `#` starts
    /// a comment; blank lines are skipped.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(format!("{}:{}: expected key = value", path.display(), lineno + 1));
            };
            self.set(key.trim(), value.trim())
                .map_err(|e| format!("{}:{}: {e}", path.display(), lineno + 1))?;
        }
        Ok(())
    }
}
