use std::fmt::Write as _;

use super::model::{prepare, PreparedScene};
use super::scene::{generate_scenes, generate_val_scenes};
use super::train::train;
use super::DetectorConfig;
use crate::attention::ContextSwitches;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub seed: u64,
    /// Validation AP after the last epoch, or the failure message.
    pub result: std::result::Result<f64, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub runs: Vec<RunOutcome>,
}

impl AblationRow {
    fn aps(&self) -> Vec<f64> {
        self.runs.iter().filter_map(|r| r.result.as_ref().ok().copied()).collect()
    }

    pub fn failed(&self) -> bool {
        self.runs.iter().any(|r| r.result.is_err())
    }

    /// Mean AP over the runs that finished.
    pub fn mean(&self) -> Option<f64> {
        let aps = self.aps();
        (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
    }

    /// Sample standard deviation over the runs that finished.
    pub fn sd(&self) -> Option<f64> {
        let aps = self.aps();
        let mean = self.mean()?;
        if aps.len() < 2 {
            return Some(0.0);
        }
        Some((aps.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (aps.len() - 1) as f64).sqrt())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(6).max(6);
        let mut s = format!("{:<width$}  {:>8}  {:>8}  runs\n", "config", "mean_ap", "sd");
        for r in &self.rows {
            let (m, sd) = match (r.mean(), r.sd()) {
                (Some(m), Some(sd)) => (format!("{m:.4}"), format!("{sd:.4}")),
                _ => ("-".into(), "-".into()),
            };
            let runs: Vec<String> = r
                .runs
                .iter()
                .map(|o| match &o.result {
                    Ok(ap) => format!("{}:{ap:.4}", o.seed),
                    Err(_) => format!("{}:failed", o.seed),
                })
                .collect();
            let flag = if r.failed() { "  [failed]" } else { "" };
            let _ = writeln!(s, "{:<width$}  {m:>8}  {sd:>8}  {}{flag}", r.name, runs.join(" "));
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("config,seed,ap,status\n");
        for r in &self.rows {
            for o in &r.runs {
                match &o.result {
                    Ok(ap) => {
                        let _ = writeln!(s, "{},{},{ap:.9},ok", r.name, o.seed);
                    }
                    Err(e) => {
                        let _ = writeln!(s, "{},{},,failed: {}", r.name, o.seed, e.replace(',', ";"));
                    }
                }
            }
        }
        s
    }
}

fn run_one(cfg: &DetectorConfig) -> Result<f64> {
    let train_set: Vec<PreparedScene> = generate_scenes(cfg.train_scenes, cfg.seed, &cfg.scene)?
        .iter()
        .map(|s| prepare(s, cfg))
        .collect();
    let val_set: Vec<PreparedScene> = generate_val_scenes(cfg.val_scenes, cfg.seed, &cfg.scene)?
        .iter()
        .map(|s| prepare(s, cfg))
        .collect();
    let out = train(cfg, &train_set, &val_set, |_| {})?;
    if let Some(e) = out.divergence_error() {
        return Err(e);
    }
    out.final_ap().ok_or_else(|| Error::Usage("no epochs were run".into()))
}

/// Trains every `(config, seed)` pair and tabulates validation AP per config.
///
/// `progress` is called after each run with the row name and outcome.
pub fn ablate(
    configs: &[(String, DetectorConfig)],
    seeds: &[u64],
    mut progress: impl FnMut(&str, &RunOutcome),
) -> Result<AblationTable> {
    if configs.len() < 2 || seeds.len() < 3 {
        return Err(Error::Usage("an ablation needs at least 2 configs and 3 seeds".into()));
    }
    for (name, cfg) in configs {
        cfg.validate().map_err(|e| Error::Config(format!("{name}: {e}")))?;
    }
    let mut rows = Vec::new();
    for (name, base) in configs {
        let mut runs = Vec::new();
        for &seed in seeds {
            let cfg = DetectorConfig { seed, ..base.clone() };
            let outcome = RunOutcome {
                seed,
                result: run_one(&cfg).map_err(|e| e.to_string()),
            };
            progress(name, &outcome);
            runs.push(outcome);
        }
        rows.push(AblationRow { name: name.clone(), runs });
    }
    Ok(AblationTable { rows })
}

/// The four context settings of `base`, full context first.
pub fn context_matrix(base: &DetectorConfig) -> Vec<(String, DetectorConfig)> {
    [(true, true), (true, false), (false, true), (false, false)]
        .into_iter()
        .map(|(similarity, semantic)| {
            let cfg = DetectorConfig {
                switches: ContextSwitches { similarity, semantic },
                ..base.clone()
            };
            (cfg.context_label().to_string(), cfg)
        })
        .collect()
}

/// One config per training-set size, each given the same number of scene
/// visits as `base` (`train_scenes × epochs`) so that larger sets are not
/// also trained for longer.
pub fn data_volume_matrix(base: &DetectorConfig, sizes: &[usize]) -> Result<Vec<(String, DetectorConfig)>> {
    let budget = base.train_scenes * base.epochs;
    sizes
        .iter()
        .map(|&n| {
            if n == 0 || budget % n != 0 {
                return Err(Error::Config(format!(
                    "train set size {n} does not divide the visit budget {budget} (train_scenes × epochs)"
                )));
            }
            let cfg = DetectorConfig {
                train_scenes: n,
                epochs: budget / n,
                ..base.clone()
            };
            Ok((format!("scenes-{n}"), cfg))
        })
        .collect()
}
