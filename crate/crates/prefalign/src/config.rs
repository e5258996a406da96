//! Run configuration: a line-based `key=value` file with typed accessors,
//! strict unknown-key rejection, and override application for CLI flags.
//! Every CLI run writes its resolved config next to its outputs.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

/// All tunables for the pipeline, with toy-scale defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub width: usize,
    pub height: usize,
    pub k: usize,
    pub noise_sigma: f64,
    pub tasks: usize,
    pub t_steps: usize,
    pub s_steps: usize,
    pub generator: String,
    pub hidden: Vec<usize>,
    pub sft_steps: usize,
    pub sft_lr: f64,
    pub n_candidates: usize,
    pub rewards: Vec<String>,
    pub selector: String,
    pub beta: f64,
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub samples_per_task: usize,
    pub seed: u64,
    pub judge_endpoint: String,
    pub judge_model: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            width: 16,
            height: 16,
            k: 4,
            noise_sigma: 0.05,
            tasks: 256,
            t_steps: 50,
            s_steps: 25,
            generator: "ddpm".into(),
            hidden: vec![768],
            sft_steps: 2000,
            sft_lr: 1e-3,
            n_candidates: 8,
            rewards: vec![
                "hps_like".into(),
                "pick_like".into(),
                "fidelity".into(),
                "brightness_negated".into(),
            ],
            selector: "ensemble".into(),
            beta: crate::dpo::DEFAULT_BETA,
            lr: crate::dpo::DEFAULT_TOY_LR,
            steps: 1000,
            batch: crate::dpo::DEFAULT_BATCH,
            samples_per_task: 1,
            seed: 7,
            judge_endpoint: "http://127.0.0.1:8080/v1/chat/completions".into(),
            judge_model: "gpt-4".into(),
        }
    }
}

fn parse_as<T: std::str::FromStr>(key: &'static str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse value `{value}` for key `{key}`")))
}

fn parse_list<T: std::str::FromStr>(key: &'static str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|p| parse_as(key, p))
        .collect::<Result<Vec<T>>>()
        .and_then(|v| {
            if v.is_empty() {
                Err(Error::Config(format!("empty list for key `{key}`")))
            } else {
                Ok(v)
            }
        })
}

impl RunConfig {
    /// Apply one `key=value` assignment. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.trim() {
            "width" => self.width = parse_as("width", value)?,
            "height" => self.height = parse_as("height", value)?,
            "k" => self.k = parse_as("k", value)?,
            "noise_sigma" => self.noise_sigma = parse_as("noise_sigma", value)?,
            "tasks" => self.tasks = parse_as("tasks", value)?,
            "t_steps" => self.t_steps = parse_as("t_steps", value)?,
            "s_steps" => self.s_steps = parse_as("s_steps", value)?,
            "generator" => self.generator = value.trim().to_string(),
            "hidden" => self.hidden = parse_list("hidden", value)?,
            "sft_steps" => self.sft_steps = parse_as("sft_steps", value)?,
            "sft_lr" => self.sft_lr = parse_as("sft_lr", value)?,
            "n_candidates" => self.n_candidates = parse_as("n_candidates", value)?,
            "rewards" => {
                self.rewards = value.split(',').map(|s| s.trim().to_string()).collect()
            }
            "selector" => self.selector = value.trim().to_string(),
            "beta" => self.beta = parse_as("beta", value)?,
            "lr" => self.lr = parse_as("lr", value)?,
            "steps" => self.steps = parse_as("steps", value)?,
            "batch" => self.batch = parse_as("batch", value)?,
            "samples_per_task" => self.samples_per_task = parse_as("samples_per_task", value)?,
            "seed" => self.seed = parse_as("seed", value)?,
            "judge_endpoint" => self.judge_endpoint = value.trim().to_string(),
            "judge_model" => self.judge_model = value.trim().to_string(),
            other => {
                return Err(Error::Config(format!("unknown config key `{other}`")));
            }
        }
        Ok(())
    }

    /// Parse a config file: one `key=value` per line, `#` comments, blank
    /// lines ignored.
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got `{line}`", i + 1))
            })?;
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    /// Apply `key=value` override strings (from CLI flags), in order.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for item in overrides {
            let (key, value) = item.split_once('=').ok_or_else(|| {
                Error::Config(format!("override `{item}` is not key=value"))
            })?;
            self.set(key, value)?;
        }
        Ok(())
    }

    /// Render the full resolved configuration, sorted by key, re-parseable
    /// by `from_file`.
    pub fn render(&self) -> String {
        let mut map = BTreeMap::new();
        map.insert("width", self.width.to_string());
        map.insert("height", self.height.to_string());
        map.insert("k", self.k.to_string());
        map.insert("noise_sigma", format!("{:e}", self.noise_sigma));
        map.insert("tasks", self.tasks.to_string());
        map.insert("t_steps", self.t_steps.to_string());
        map.insert("s_steps", self.s_steps.to_string());
        map.insert("generator", self.generator.clone());
        map.insert(
            "hidden",
            self.hidden
                .iter()
                .map(|h| h.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        map.insert("sft_steps", self.sft_steps.to_string());
        map.insert("sft_lr", format!("{:e}", self.sft_lr));
        map.insert("n_candidates", self.n_candidates.to_string());
        map.insert("rewards", self.rewards.join(","));
        map.insert("selector", self.selector.clone());
        map.insert("beta", format!("{:e}", self.beta));
        map.insert("lr", format!("{:e}", self.lr));
        map.insert("steps", self.steps.to_string());
        map.insert("batch", self.batch.to_string());
        map.insert("samples_per_task", self.samples_per_task.to_string());
        map.insert("seed", self.seed.to_string());
        map.insert("judge_endpoint", self.judge_endpoint.clone());
        map.insert("judge_model", self.judge_model.clone());
        let mut out = String::new();
        for (key, value) in map {
            out.push_str(&format!("{key}={value}\n"));
        }
        out
    }

    /// Write the resolved config, typically into the run's output directory.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_render() {
        let cfg = RunConfig::default();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        cfg.save(&path).unwrap();
        let back = RunConfig::from_file(&path).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_key_rejected() {
        let mut cfg = RunConfig::default();
        let err = cfg.set("no_such_key", "1").unwrap_err();
        assert_eq!(err.category(), "config");
        assert!(err.to_string().contains("no_such_key"));
    }

    #[test]
    fn overrides_apply_in_order() {
        let mut cfg = RunConfig::default();
        cfg.apply_overrides(&["seed=1".into(), "seed=2".into(), "hidden=32,16".into()])
            .unwrap();
        assert_eq!(cfg.seed, 2);
        assert_eq!(cfg.hidden, vec![32, 16]);
        assert!(cfg.apply_overrides(&["seed".into()]).is_err());
        assert!(cfg.apply_overrides(&["seed=notanumber".into()]).is_err());
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "# comment\n\nseed=99\nbeta=4000\n").unwrap();
        let cfg = RunConfig::from_file(&path).unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.beta, 4000.0);
        std::fs::write(&path, "seed 99\n").unwrap();
        assert!(RunConfig::from_file(&path).is_err());
    }
}
