//! Run directories: `<root>/<timestamp>-<command>-<config hash>/` holding every
//! artifact of one invocation plus the effective `config.toml`.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const RUN_ROOT_ENV: &str = "CARDIODIFF_RUN_ROOT";
pub const CONFIG_FILE: &str = "config.toml";

pub struct RunDir {
    pub path: PathBuf,
}

pub fn config_hash(toml: &str) -> String {
    hex::encode(Sha256::digest(toml.as_bytes()))[..12].to_string()
}

impl RunDir {
    /// Uses `out` verbatim when given, otherwise a fresh directory under
    /// `root`, `$CARDIODIFF_RUN_ROOT` or `./runs`.
    pub fn create(out: Option<&Path>, root: Option<&Path>, command: &str, cfg: &RunConfig) -> Result<Self> {
        let toml = cfg.to_toml()?;
        let path = match out {
            Some(p) => p.to_path_buf(),
            None => {
                let root = root
                    .map(Path::to_path_buf)
                    .or_else(|| std::env::var_os(RUN_ROOT_ENV).map(PathBuf::from))
                    .unwrap_or_else(|| PathBuf::from("runs"));
                let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
                root.join(format!("{stamp}-{command}-{}", config_hash(&toml)))
            }
        };
        std::fs::create_dir_all(&path).with_context(|| format!("creating run directory {}", path.display()))?;
        std::fs::write(path.join(CONFIG_FILE), toml)?;
        Ok(Self { path })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }
}
