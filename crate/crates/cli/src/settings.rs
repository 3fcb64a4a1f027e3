use std::fs;
use std::path::Path;

use comatch_core::train::TrainConfig;
use comatch_core::{Error, Result};

/// Explicit `key=value` settings in application order: config file lines
/// first, then command-line flags, so flags win.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pairs: Vec<(String, String)>,
}

impl Overrides {
    /// Reads a config file. Keys are validated against a scratch config so
    /// a typo fails here rather than after data loading.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut out = Overrides::default();
        let mut scratch = TrainConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected key=value", path.display(), n + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            scratch
                .set(k, v)
                .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), n + 1)))?;
            out.pairs.push((k.to_string(), v.to_string()));
        }
        Ok(out)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Overrides::default()), Overrides::from_file)
    }

    pub fn push(&mut self, key: &str, value: Option<impl ToString>) {
        if let Some(v) = value {
            self.pairs.push((key.to_string(), v.to_string()));
        }
    }

    pub fn contains(&self, key: &str) -> bool {
        self.pairs.iter().any(|(k, _)| k == key)
    }

    pub fn apply(&self, config: &mut TrainConfig) -> Result<()> {
        for (k, v) in &self.pairs {
            config.set(k, v)?;
        }
        Ok(())
    }
}

/// `base` with `overrides` applied; the model shape keys must agree with
/// `base` when `pinned` is set (a checkpoint fixes them).
pub fn resolve(base: &TrainConfig, overrides: &Overrides, pinned: bool) -> Result<TrainConfig> {
    let mut config = base.clone();
    overrides.apply(&mut config)?;
    if pinned {
        for key in ["d", "l", "variant"] {
            let (want, have) = (config.get(key), base.get(key));
            if want != have {
                return Err(Error::Mismatch(format!(
                    "{key}={} requested but the checkpoint has {key}={}",
                    want.unwrap_or_default(),
                    have.unwrap_or_default()
                )));
            }
        }
    }
    config.validate()?;
    Ok(config)
}

/// Writes the resolved settings to stderr, one `key=value` per line.
pub fn announce(config: &TrainConfig, extra: &[(&str, String)]) {
    let mut text = String::from("# resolved config\n");
    text.push_str(&config.to_lines());
    for (k, v) in extra {
        text.push_str(&format!("{k}={v}\n"));
    }
    eprint!("{text}");
}
