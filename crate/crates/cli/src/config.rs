//! Optional TOML config file. Keys are flag names with `-` replaced by `_`;
//! a flag given on the command line always wins.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

const KNOWN_KEYS: &[&str] = &[
    "images",
    "labels",
    "seed",
    "rho",
    "lambda",
    "kappa",
    "kappas",
    "pi",
    "rank_mode",
    "weight_view",
    "filters",
    "hidden",
    "epochs",
    "batch_size",
    "learning_rate",
    "train_size",
    "u_size",
    "u_train",
    "u_val",
    "clean_test",
    "adversarial_test",
    "attack_sources",
    "attack_learning_rate",
    "attack_iterations",
    "attack_optimizer",
    "attack_initial_c",
    "attack_c_steps",
    "attack_starts",
    "attack_seed",
    "steps",
    "full_scale",
];

#[derive(Debug, Default)]
pub struct Settings {
    table: toml::Table,
    origin: Option<PathBuf>,
}

pub trait FromToml: Sized {
    fn from_toml(v: &toml::Value) -> Option<Self>;
}

impl FromToml for f64 {
    fn from_toml(v: &toml::Value) -> Option<Self> {
        match v {
            toml::Value::Float(f) => Some(*f),
            toml::Value::Integer(i) => Some(*i as f64),
            _ => None,
        }
    }
}

impl FromToml for usize {
    fn from_toml(v: &toml::Value) -> Option<Self> {
        v.as_integer().and_then(|i| usize::try_from(i).ok())
    }
}

impl FromToml for u64 {
    fn from_toml(v: &toml::Value) -> Option<Self> {
        v.as_integer().and_then(|i| u64::try_from(i).ok())
    }
}

impl FromToml for bool {
    fn from_toml(v: &toml::Value) -> Option<Self> {
        v.as_bool()
    }
}

impl FromToml for String {
    fn from_toml(v: &toml::Value) -> Option<Self> {
        v.as_str().map(str::to_owned)
    }
}

impl FromToml for PathBuf {
    fn from_toml(v: &toml::Value) -> Option<Self> {
        v.as_str().map(PathBuf::from)
    }
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let table: toml::Table = text
            .parse()
            .with_context(|| format!("parsing {}", path.display()))?;
        if let Some(k) = table.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            bail!("{}: unknown key '{k}'", path.display());
        }
        Ok(Self {
            table,
            origin: Some(path.to_path_buf()),
        })
    }

    /// Flag value, else config value, else `None`.
    pub fn opt<T: FromToml>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.table.get(key) {
            None => Ok(None),
            Some(v) => T::from_toml(v).map(Some).ok_or_else(|| {
                let origin = self
                    .origin
                    .as_deref()
                    .map_or_else(String::new, |p| format!("{}: ", p.display()));
                anyhow!("{origin}key '{key}' has the wrong type")
            }),
        }
    }

    pub fn or<T: FromToml>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        Ok(self.opt(flag, key)?.unwrap_or(default))
    }

    pub fn require<T: FromToml>(&self, flag: Option<T>, key: &str) -> Result<T> {
        self.opt(flag, key)?.ok_or_else(|| {
            anyhow!(
                "missing --{} (flag or config key '{key}')",
                key.replace('_', "-")
            )
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(text: &str) -> Settings {
        Settings {
            table: text.parse().unwrap(),
            origin: None,
        }
    }

    #[test]
    fn flags_win_over_file() {
        let s = settings("rho = 0.9\nseed = 3");
        assert_eq!(s.or(Some(0.5), "rho", 0.99).unwrap(), 0.5);
        assert_eq!(s.or(None, "rho", 0.99).unwrap(), 0.9);
        assert_eq!(s.or::<u64>(None, "seed", 0).unwrap(), 3);
        assert_eq!(s.or(None, "lambda", 0.1).unwrap(), 0.1);
    }

    #[test]
    fn integers_read_as_floats() {
        let s = settings("kappa = 20");
        assert_eq!(s.or(None, "kappa", 0.0).unwrap(), 20.0);
    }

    #[test]
    fn wrong_type_is_reported() {
        let s = settings("seed = \"x\"");
        assert!(s.or::<u64>(None, "seed", 0).is_err());
        assert!(s.require::<f64>(None, "rho").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "rhoo = 0.9\n").unwrap();
        assert!(Settings::load(&p).is_err());
    }
}
