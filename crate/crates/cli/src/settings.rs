//! `key=value` settings: built-in defaults, then a config file, then flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;

#[derive(Args, Debug, Default, Clone)]
pub struct SettingArgs {
    /// Config file with one `key=value` per line (`#` starts a comment)
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override a single setting; may be repeated
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

pub type Pairs = Vec<(String, String)>;

fn split(line: &str, origin: &str) -> Result<(String, String)> {
    match line.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => bail!("{origin}: expected `key=value`, found `{line}`"),
    }
}

pub fn read_file(path: &Path) -> Result<Pairs> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config file {}", path.display()))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        out.push(split(line, &format!("{}:{}", path.display(), n + 1))?);
    }
    Ok(out)
}

impl SettingArgs {
    /// File entries followed by `--set` entries followed by `flags`, so that
    /// applying them in order gives the documented precedence.
    pub fn resolve(&self, flags: Pairs) -> Result<Pairs> {
        let mut pairs = match &self.config {
            Some(p) => read_file(p)?,
            None => Vec::new(),
        };
        for s in &self.set {
            pairs.push(split(s, "--set")?);
        }
        pairs.extend(flags);
        Ok(pairs)
    }
}

/// Collects the `Some` flags as pairs.
pub fn flags<const N: usize>(items: [(&str, Option<String>); N]) -> Pairs {
    items
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k.to_string(), v)))
        .collect()
}

pub fn apply<C>(cfg: &mut C, pairs: &Pairs, mut set: impl FnMut(&mut C, &str, &str) -> handctx::Result<()>) -> Result<()> {
    for (k, v) in pairs {
        set(cfg, k, v)?;
    }
    Ok(())
}

pub fn write_resolved(out: &Path, kv: &str) -> Result<()> {
    let path = out.join("config.txt");
    fs::write(&path, kv).with_context(|| format!("cannot write {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.txt");
        fs::write(&file, "# comment\nseed = 4\nepochs=3 # trailing\n\n").unwrap();
        let args = SettingArgs {
            config: Some(file),
            set: vec!["epochs=5".into()],
        };
        let pairs = args.resolve(flags([("seed", Some("9".into())), ("lambda", None)])).unwrap();
        let mut cfg = handctx::detector::DetectorConfig::default();
        apply(&mut cfg, &pairs, |c, k, v| c.set(k, v)).unwrap();
        assert_eq!((cfg.seed, cfg.epochs), (9, 5));
    }

    #[test]
    fn malformed_lines_are_rejected() {
        let args = SettingArgs {
            config: None,
            set: vec!["epochs".into()],
        };
        assert!(args.resolve(Vec::new()).is_err());
    }
}
