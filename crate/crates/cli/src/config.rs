//! Plain `key = value` config files describing the synthetic benchmark tasks.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use nps_core::harness::{make_tasks, SyntheticTaskSpec};
use nps_core::{Error, Result};

/// Synthetic-task settings. Missing keys fall back to the harness defaults;
/// unknown keys are rejected so typos fail loudly.
///
/// Recognized keys: `tasks`, `base_seed`, `noise_sigma`, `train_samples`,
/// `calibration_samples`, `test_samples`. `#` starts a comment.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskConfig {
    pub tasks: usize,
    pub base_seed: u64,
    pub noise_sigma: Option<f64>,
    pub train_samples: Option<usize>,
    pub calibration_samples: Option<usize>,
    pub test_samples: Option<usize>,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            tasks: 2,
            base_seed: 42,
            noise_sigma: None,
            train_samples: None,
            calibration_samples: None,
            test_samples: None,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str, lineno: usize) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Parse(format!("config line {lineno}: key `{key}`: {e}")))
}

impl TaskConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TaskConfig::default();
        for (index, raw) in text.lines().enumerate() {
            let lineno = index + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!(
                    "config line {lineno}: expected `key = value`, got `{raw}`"
                ))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "tasks" => cfg.tasks = parse_value(key, value, lineno)?,
                "base_seed" => cfg.base_seed = parse_value(key, value, lineno)?,
                "noise_sigma" => cfg.noise_sigma = Some(parse_value(key, value, lineno)?),
                "train_samples" => cfg.train_samples = Some(parse_value(key, value, lineno)?),
                "calibration_samples" => {
                    cfg.calibration_samples = Some(parse_value(key, value, lineno)?)
                }
                "test_samples" => cfg.test_samples = Some(parse_value(key, value, lineno)?),
                _ => {
                    return Err(Error::Parse(format!(
                        "config line {lineno}: unknown key `{key}`"
                    )))
                }
            }
        }
        Ok(cfg)
    }

    /// Builds the task specs, layering any overrides onto the defaults.
    pub fn build(&self) -> Result<Vec<SyntheticTaskSpec>> {
        let mut tasks = make_tasks(self.tasks, self.base_seed)?;
        for task in &mut tasks {
            if let Some(sigma) = self.noise_sigma {
                task.noise_sigma = sigma;
            }
            if let Some(n) = self.train_samples {
                task.train_samples = n;
            }
            if let Some(n) = self.calibration_samples {
                task.calibration_samples = n;
            }
            if let Some(n) = self.test_samples {
                task.test_samples = n;
            }
        }
        Ok(tasks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_the_defaults() {
        let cfg = TaskConfig::parse("").unwrap();
        assert_eq!(cfg, TaskConfig::default());
    }

    #[test]
    fn comments_blanks_and_spacing_are_tolerated() {
        let cfg = TaskConfig::parse(
            "# benchmark setup\n\n  tasks=8\nbase_seed = 7   # rng\nnoise_sigma =0.4\n",
        )
        .unwrap();
        assert_eq!(cfg.tasks, 8);
        assert_eq!(cfg.base_seed, 7);
        assert_eq!(cfg.noise_sigma, Some(0.4));
    }

    #[test]
    fn unknown_keys_are_rejected_with_the_line_number() {
        let err = TaskConfig::parse("tasks = 2\nnoise = 0.5\n").unwrap_err();
        let text = err.to_string();
        assert!(text.contains("line 2"), "{text}");
        assert!(text.contains("unknown key"), "{text}");
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(TaskConfig::parse("tasks\n").is_err());
        assert!(TaskConfig::parse("tasks = eight\n").is_err());
    }

    #[test]
    fn build_applies_sample_and_noise_overrides() {
        let cfg = TaskConfig::parse(
            "tasks = 3\nbase_seed = 5\nnoise_sigma = 0.2\ntrain_samples = 64\n\
             calibration_samples = 32\ntest_samples = 48\n",
        )
        .unwrap();
        let tasks = cfg.build().unwrap();
        assert_eq!(tasks.len(), 3);
        for task in &tasks {
            assert_eq!(task.noise_sigma, 0.2);
            assert_eq!(task.train_samples, 64);
            assert_eq!(task.calibration_samples, 32);
            assert_eq!(task.test_samples, 48);
        }
        // Same config, same tasks.
        let again = cfg.build().unwrap();
        assert_eq!(tasks[1].cluster_centers, again[1].cluster_centers);
    }
}
