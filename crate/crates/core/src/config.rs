//! Plain-text `key = value` experiment configuration.
//!
//! Blank lines are ignored and `#` starts a comment (whole-line or trailing).
//! Every key is optional and overrides the baseline experiment; unknown or
//! repeated keys are errors.  Per-user keys (`epsilon`, `gamma_min_db`,
//! `noise_var`) take either one value, broadcast to all users, or exactly K
//! comma-separated values.

use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::channel::Scenario;
use crate::experiment::ExperimentConfig;
use crate::units::db_to_linear;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {why}")]
    Syntax { line: usize, why: String },
    #[error("key `{key}`: {why}")]
    Value { key: String, why: String },
    #[error("{0}")]
    Invalid(String),
}

const KEYS: [&str; 14] = [
    "M",
    "K",
    "epsilon",
    "gamma_min_db",
    "noise_var",
    "cell_radius_m",
    "min_dist_m",
    "shadow_std_db",
    "pathloss_exp",
    "seed",
    "trials",
    "schemes",
    "gamma_sweep_db",
    "epsilon_list",
];

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut raw: HashMap<&str, String> = HashMap::new();
    for (idx, full_line) in text.lines().enumerate() {
        let line = full_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let syntax = |why: String| ConfigError::Syntax { line: idx + 1, why };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| syntax(format!("expected `key = value`, got `{line}`")))?;
        let (key, value) = (key.trim(), value.trim());
        let canonical = KEYS
            .iter()
            .find(|&&k| k == key)
            .ok_or_else(|| syntax(format!("unknown key `{key}`")))?;
        if value.is_empty() {
            return Err(syntax(format!("key `{key}` has no value")));
        }
        if raw.insert(canonical, value.to_string()).is_some() {
            return Err(syntax(format!("duplicate key `{key}`")));
        }
    }
    build(&raw)
}

fn parse_one<T: FromStr>(raw: &HashMap<&str, String>, key: &str, default: T) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    match raw.get(key) {
        None => Ok(default),
        Some(s) => s.parse().map_err(|e: T::Err| ConfigError::Value {
            key: key.to_string(),
            why: e.to_string(),
        }),
    }
}

fn parse_list<T: FromStr>(raw: &HashMap<&str, String>, key: &str, default: &[T]) -> Result<Vec<T>, ConfigError>
where
    T: Clone,
    T::Err: std::fmt::Display,
{
    match raw.get(key) {
        None => Ok(default.to_vec()),
        Some(s) => s
            .split(',')
            .map(|item| {
                item.trim().parse().map_err(|e: T::Err| ConfigError::Value {
                    key: key.to_string(),
                    why: format!("`{}`: {e}", item.trim()),
                })
            })
            .collect(),
    }
}

/// One value broadcasts to all K users; otherwise exactly K values.
fn per_user(values: Vec<f64>, key: &str, k: usize) -> Result<Vec<f64>, ConfigError> {
    match values.len() {
        1 => Ok(vec![values[0]; k]),
        n if n == k => Ok(values),
        n => Err(ConfigError::Value {
            key: key.to_string(),
            why: format!("expected 1 or K={k} values, got {n}"),
        }),
    }
}

fn build(raw: &HashMap<&str, String>) -> Result<ExperimentConfig, ConfigError> {
    let base = ExperimentConfig::baseline();
    let m = parse_one(raw, "M", base.scenario.m)?;
    let k = parse_one(raw, "K", base.scenario.k)?;
    let gamma_db = per_user(parse_list(raw, "gamma_min_db", &[10.0])?, "gamma_min_db", k)?;
    let scenario = Scenario {
        m,
        k,
        epsilon: per_user(parse_list(raw, "epsilon", &[0.06])?, "epsilon", k)?,
        gamma_min: gamma_db.iter().map(|&db| db_to_linear(db)).collect(),
        noise_var: per_user(parse_list(raw, "noise_var", &[0.01])?, "noise_var", k)?,
        cell_radius_m: parse_one(raw, "cell_radius_m", base.scenario.cell_radius_m)?,
        min_dist_m: parse_one(raw, "min_dist_m", base.scenario.min_dist_m)?,
        shadow_std_db: parse_one(raw, "shadow_std_db", base.scenario.shadow_std_db)?,
        pathloss_exp: parse_one(raw, "pathloss_exp", base.scenario.pathloss_exp)?,
        seed: parse_one(raw, "seed", base.scenario.seed)?,
    };
    scenario
        .validate()
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;

    let cfg = ExperimentConfig {
        scenario,
        schemes: parse_list(raw, "schemes", &base.schemes)?,
        gamma_sweep_db: parse_list(raw, "gamma_sweep_db", &base.gamma_sweep_db)?,
        epsilon_list: parse_list(raw, "epsilon_list", &base.epsilon_list)?,
        trials: parse_one(raw, "trials", base.trials)?,
        ..base
    };
    for (name, ok) in [
        ("schemes", !cfg.schemes.is_empty()),
        ("gamma_sweep_db", !cfg.gamma_sweep_db.is_empty()),
        ("epsilon_list", !cfg.epsilon_list.is_empty()),
        ("trials", cfg.trials >= 1),
    ] {
        if !ok {
            return Err(ConfigError::Invalid(format!("{name} must be nonempty")));
        }
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::Scheme;

    #[test]
    fn empty_text_gives_the_baseline() {
        let cfg = parse_config_str("").unwrap();
        let base = ExperimentConfig::baseline();
        assert_eq!(cfg.scenario.m, base.scenario.m);
        assert_eq!(cfg.scenario.gamma_min, base.scenario.gamma_min);
        assert_eq!(cfg.schemes, base.schemes);
        assert_eq!(cfg.gamma_sweep_db, base.gamma_sweep_db);
        assert_eq!(cfg.epsilon_list, base.epsilon_list);
        assert_eq!(cfg.trials, base.trials);
    }

    #[test]
    fn every_key_is_applied() {
        let text = "\
# experiment shape
M = 4
K = 2          # users
epsilon = 0.03
gamma_min_db = 6, 8
noise_var = 0.02
cell_radius_m = 800
min_dist_m = 50
shadow_std_db = 6
pathloss_exp = 3.2
seed = 42
trials = 17
schemes = robust, oma
gamma_sweep_db = 1, 3, 5
epsilon_list = 0.01, 0.04
";
        let cfg = parse_config_str(text).unwrap();
        assert_eq!((cfg.scenario.m, cfg.scenario.k), (4, 2));
        assert_eq!(cfg.scenario.epsilon, vec![0.03, 0.03]);
        assert_eq!(cfg.scenario.gamma_min, vec![db_to_linear(6.0), db_to_linear(8.0)]);
        assert_eq!(cfg.scenario.noise_var, vec![0.02, 0.02]);
        assert_eq!(cfg.scenario.cell_radius_m, 800.0);
        assert_eq!(cfg.scenario.min_dist_m, 50.0);
        assert_eq!(cfg.scenario.shadow_std_db, 6.0);
        assert_eq!(cfg.scenario.pathloss_exp, 3.2);
        assert_eq!(cfg.scenario.seed, 42);
        assert_eq!(cfg.trials, 17);
        assert_eq!(cfg.schemes, vec![Scheme::Robust, Scheme::Oma]);
        assert_eq!(cfg.gamma_sweep_db, vec![1.0, 3.0, 5.0]);
        assert_eq!(cfg.epsilon_list, vec![0.01, 0.04]);
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        for (text, needle) in [
            ("bandwidth = 10", "unknown key"),
            ("M = 8\nM = 4", "duplicate key"),
            ("M eight", "expected `key = value`"),
            ("M =", "no value"),
            ("trials = soon", "trials"),
            ("schemes = robust, tdma", "unknown scheme"),
            ("K = 3\nnoise_var = 0.01, 0.02", "expected 1 or K=3"),
            ("M = 0", "antenna"),
        ] {
            let err = parse_config_str(text).unwrap_err().to_string();
            assert!(err.contains(needle), "`{text}` -> `{err}`");
        }
    }

    #[test]
    fn file_loading_reports_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "trials = 3\n").unwrap();
        assert_eq!(load_config(&path).unwrap().trials, 3);
        let err = load_config(&dir.path().join("none.cfg")).unwrap_err().to_string();
        assert!(err.contains("none.cfg"));
    }
}
