//! Layered run configuration: command-line flags over a TOML file over
//! built-in defaults. `LONGIPROG_SEED` replaces the default seed.
//!
//! ```toml
//! seed = 42            # shared by every section unless the section sets its own
//!
//! [data]               # generator parameters (gen-data)
//! n_eyes = 3000
//!
//! [train]              # training parameters, with nested [train.encoder] and [train.preprocess]
//! max_epochs = 80
//!
//! [eval]
//! bootstrap = 2000
//! split = "test"
//! ```

use std::path::Path;

use longiprog::datagen::{GenConfig, Split};
use longiprog::eval::DEFAULT_BOOTSTRAP;
use longiprog::train::TrainConfig;
use longiprog::{Error, Result};
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "LONGIPROG_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub bootstrap: usize,
    pub seed: u64,
    pub split: Split,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            bootstrap: DEFAULT_BOOTSTRAP,
            seed: 0,
            split: Split::Test,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    data: Option<toml::Table>,
    train: Option<toml::Table>,
    eval: Option<toml::Table>,
}

/// Parsed configuration file, sections kept raw until a command asks for one.
#[derive(Debug, Default)]
pub struct ConfigFile {
    file: FileConfig,
}

fn config_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Config(format!("{}: {e}", path.display()))
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: FileConfig = toml::from_str(&text).map_err(|e| config_err(path, e))?;
        Ok(ConfigFile { file })
    }

    /// Seed precedence: flag, then the section's own `seed`, then the
    /// file's top-level `seed`, then `LONGIPROG_SEED`, then 0.
    fn seed(&self, section: Option<&toml::Table>, flag: Option<u64>) -> Result<u64> {
        if let Some(s) = flag {
            return Ok(s);
        }
        if let Some(v) = section.and_then(|t| t.get("seed")) {
            return v
                .as_integer()
                .and_then(|i| u64::try_from(i).ok())
                .ok_or_else(|| Error::Config(format!("seed {v} is not a non-negative integer")));
        }
        if let Some(s) = self.file.seed {
            return Ok(s);
        }
        env_seed()
    }

    fn section<T: for<'de> Deserialize<'de> + Default>(table: Option<&toml::Table>, name: &str) -> Result<T> {
        match table {
            None => Ok(T::default()),
            Some(t) => t
                .clone()
                .try_into()
                .map_err(|e| Error::Config(format!("[{name}] section: {e}"))),
        }
    }

    pub fn data(&self, seed_flag: Option<u64>) -> Result<GenConfig> {
        let mut cfg: GenConfig = Self::section(self.file.data.as_ref(), "data")?;
        cfg.seed = self.seed(self.file.data.as_ref(), seed_flag)?;
        Ok(cfg)
    }

    pub fn train(&self, seed_flag: Option<u64>) -> Result<TrainConfig> {
        let mut cfg: TrainConfig = Self::section(self.file.train.as_ref(), "train")?;
        cfg.seed = self.seed(self.file.train.as_ref(), seed_flag)?;
        Ok(cfg)
    }

    pub fn eval(&self, seed_flag: Option<u64>) -> Result<EvalSettings> {
        let mut cfg: EvalSettings = Self::section(self.file.eval.as_ref(), "eval")?;
        cfg.seed = self.seed(self.file.eval.as_ref(), seed_flag)?;
        Ok(cfg)
    }
}

/// `LONGIPROG_SEED` if set, else 0.
pub fn env_seed() -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not a non-negative integer"))),
        Err(std::env::VarError::NotPresent) => Ok(0),
        Err(e) => Err(Error::Config(format!("{SEED_ENV}: {e}"))),
    }
}
