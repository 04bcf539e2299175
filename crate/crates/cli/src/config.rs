//! Layered configuration: defaults < TOML config file < command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use unipunc_core::train::TrainConfig;
use unipunc_core::{Error, ModelConfig};

use crate::error::CliError;

#[derive(Args, Debug, Clone, Default)]
pub struct ModelOverrides {
    /// Model width
    #[arg(long)]
    pub d_model: Option<usize>,
    /// Attention heads
    #[arg(long)]
    pub heads: Option<usize>,
    /// Coordinate bootstrapper layers
    #[arg(long)]
    pub layers: Option<usize>,
    /// Lexical encoder layers
    #[arg(long)]
    pub enc_layers: Option<usize>,
    /// Rows in the virtual embedding
    #[arg(long)]
    pub ve_len: Option<usize>,
    /// Channels per acoustic feature frame
    #[arg(long)]
    pub feat_dim: Option<usize>,
}

impl ModelOverrides {
    fn pairs(&self) -> Vec<(&'static str, usize)> {
        [
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("boot_layers", self.layers),
            ("enc_layers", self.enc_layers),
            ("ve_len", self.ve_len),
            ("feat_dim", self.feat_dim),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect()
    }

    fn apply(&self, m: &mut ModelConfig) {
        let fields = [
            (self.d_model, &mut m.d_model),
            (self.heads, &mut m.heads),
            (self.layers, &mut m.boot_layers),
            (self.enc_layers, &mut m.enc_layers),
            (self.ve_len, &mut m.ve_len),
            (self.feat_dim, &mut m.feat_dim),
        ];
        for (flag, field) in fields {
            if let Some(v) = flag {
                *field = v;
            }
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct TrainOverrides {
    /// TOML file with training settings; unknown keys are rejected
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Peak learning rate
    #[arg(long)]
    pub lr: Option<f64>,
    /// Warm-up steps
    #[arg(long)]
    pub warmup: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Steps between evaluations
    #[arg(long)]
    pub eval_interval: Option<u64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[command(flatten)]
    pub model: ModelOverrides,
}

impl TrainOverrides {
    pub fn resolve(&self, seed: Option<u64>) -> Result<TrainConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => read_config(path)?.0,
            None => TrainConfig::default(),
        };
        if let Some(v) = self.lr {
            cfg.base_lr = v;
        }
        if let Some(v) = self.warmup {
            cfg.warmup_steps = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.max_steps {
            cfg.max_steps = v;
        }
        if let Some(v) = self.eval_interval {
            cfg.eval_interval = v;
        }
        if let Some(v) = self.dropout {
            cfg.dropout = v;
        }
        if let Some(v) = seed {
            cfg.seed = v;
        }
        self.model.apply(&mut cfg.model);
        Ok(cfg)
    }
}

pub fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} not found: {}", path.display())))
    }
}

/// The parsed config and its raw table.
fn read_config(path: &Path) -> Result<(TrainConfig, toml::Table), CliError> {
    require_file(path, "config file")?;
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let bad = |e: &dyn std::fmt::Display| CliError::Usage(format!("{}: {e}", path.display()));
    let cfg: TrainConfig = toml::from_str(&text).map_err(|e| bad(&e))?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| bad(&e))?;
    Ok((cfg, table))
}

/// Rejects any model dimension requested through the config file or flags
/// that differs from what the checkpoint was trained with.
pub fn check_model(trained: &ModelConfig, config: Option<&Path>, flags: &ModelOverrides) -> Result<(), CliError> {
    let trained_table = toml::Table::try_from(trained).expect("model config serializes");
    let mut requested: Vec<(String, toml::Value)> = Vec::new();
    if let Some(path) = config {
        let (_, table) = read_config(path)?;
        if let Some(model) = table.get("model").and_then(toml::Value::as_table) {
            requested.extend(model.iter().map(|(k, v)| (k.clone(), v.clone())));
        }
    }
    requested.extend(
        flags
            .pairs()
            .into_iter()
            .map(|(k, v)| (k.to_string(), toml::Value::Integer(v as i64))),
    );
    for (key, want) in requested {
        let have = trained_table.get(&key);
        if have != Some(&want) {
            let have = have.map_or_else(|| "nothing".to_string(), ToString::to_string);
            return Err(Error::ConfigMismatch(format!("{key}: checkpoint has {have}, requested {want}")).into());
        }
    }
    Ok(())
}
