//! Config files: one TOML table per subcommand, plus an optional top-level `seed`.
//!
//! Values resolve as flags > file > defaults; the resolved struct is what lands in
//! the run manifest.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;

pub const OUT_ENV: &str = "HYBRIDWATCH_OUT";

#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    root: toml::Table,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config file {}", path.display()))?;
        let root: toml::Table = text.parse().with_context(|| format!("invalid TOML in {}", path.display()))?;
        Ok(Self { root })
    }

    /// The `[section]` table over `T`'s defaults, with the top-level seed filled in when
    /// the section has none.
    pub fn section<T: DeserializeOwned>(&self, section: &str) -> Result<T> {
        let mut table = match self.root.get(section) {
            Some(toml::Value::Table(t)) => t.clone(),
            Some(_) => anyhow::bail!("config key `{section}` must be a table"),
            None => toml::Table::new(),
        };
        if let Some(seed) = self.root.get("seed") {
            table.entry("seed").or_insert_with(|| seed.clone());
        }
        toml::Value::Table(table)
            .try_into()
            .with_context(|| format!("invalid `[{section}]` config"))
    }
}

/// `--out` if given, else `$HYBRIDWATCH_OUT/<command>`, else `runs/<command>`.
pub fn output_dir(flag: Option<&Path>, command: &str) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    root.join(command)
}
