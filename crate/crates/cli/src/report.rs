//! Run manifests, JSON report emission, and the stderr summary table.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use nps_core::cmaes::GenerationRecord;
use nps_core::{Error, Result};
use serde::Serialize;

/// Provenance record attached to every report: what ran, with which flag
/// values, and how the optimizer's wall clock split between building and
/// scoring candidates.
///
/// Re-running the same subcommand with the recorded `config` flags reproduces
/// every output file byte for byte; only the timing fields vary.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// Flag values as given on the command line, keyed by flag name.
    pub config: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// Search generations recorded, counting the initial-mean evaluation.
    pub generations: u64,
    /// Mean per-generation seconds spent building candidate models.
    pub t_pruning_s: f64,
    /// Mean per-generation seconds spent scoring candidate models.
    pub t_validate_s: f64,
    /// Total optimizer seconds: the sum of both splits over all generations,
    /// so it equals generations x (t_pruning_s + t_validate_s) up to float
    /// rounding.
    pub t_total_s: f64,
    /// End-to-end seconds for the whole command, including file io.
    pub wall_s: f64,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            config: BTreeMap::new(),
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            generations: 0,
            t_pruning_s: 0.0,
            t_validate_s: 0.0,
            t_total_s: 0.0,
            wall_s: 0.0,
        }
    }

    pub fn flag(&mut self, name: &str, value: impl ToString) -> &mut Self {
        self.config.insert(name.to_string(), value.to_string());
        self
    }

    pub fn input(&mut self, path: &Path) -> &mut Self {
        self.inputs.push(path.display().to_string());
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.display().to_string());
        self
    }

    /// Folds one or more search histories into the timing split.
    pub fn record_history(&mut self, history: &[GenerationRecord]) -> &mut Self {
        if history.is_empty() {
            return self;
        }
        let prune: f64 = history.iter().map(|g| g.elapsed_prune_s).sum();
        let validate: f64 = history.iter().map(|g| g.elapsed_validate_s).sum();
        let generations = history.len() as u64;
        self.generations += generations;
        self.t_total_s += prune + validate;
        // Running means over everything recorded so far.
        let n = self.generations as f64;
        self.t_pruning_s += (prune - self.t_pruning_s * generations as f64) / n;
        self.t_validate_s += (validate - self.t_validate_s * generations as f64) / n;
        self
    }

    pub fn finish(mut self, started: Instant) -> Self {
        self.wall_s = started.elapsed().as_secs_f64();
        self
    }
}

/// The machine-readable report every subcommand emits.
#[derive(Debug, Serialize)]
pub struct Report<R: Serialize> {
    pub manifest: RunManifest,
    pub result: R,
}

/// Serializes the report to pretty JSON, writing to `out` when given and to
/// stdout otherwise.
pub fn emit<R: Serialize>(manifest: RunManifest, result: R, out: Option<&Path>) -> Result<()> {
    let report = Report { manifest, result };
    let mut json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Parse(format!("report encoding failed: {e}")))?;
    json.push('\n');
    match out {
        Some(path) => std::fs::write(path, json)?,
        None => print!("{json}"),
    }
    Ok(())
}

/// Prints an aligned table to stderr, column-padded with two-space gutters.
pub fn table(headers: &[&str], rows: &[Vec<String>]) {
    let columns = headers.len();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (i, cell) in row.iter().take(columns).enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let render = |cells: &[String]| {
        let mut line = String::new();
        for (i, cell) in cells.iter().take(columns).enumerate() {
            if i > 0 {
                line.push_str("  ");
            }
            line.push_str(cell);
            if i + 1 < columns {
                for _ in cell.len()..widths[i] {
                    line.push(' ');
                }
            }
        }
        eprintln!("{line}");
    };
    render(&headers.iter().map(|h| h.to_string()).collect::<Vec<_>>());
    render(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>());
    for row in rows {
        render(row);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(prune: f64, validate: f64) -> GenerationRecord {
        GenerationRecord {
            generation: 0,
            best_fitness: 0.0,
            mean_fitness: 0.0,
            sigma: 0.3,
            elapsed_prune_s: prune,
            elapsed_validate_s: validate,
        }
    }

    #[test]
    fn history_timing_satisfies_the_product_identity() {
        let mut manifest = RunManifest::new("search");
        manifest.record_history(&[record(0.5, 1.0), record(0.7, 1.1), record(0.3, 0.9)]);
        let product = manifest.generations as f64 * (manifest.t_pruning_s + manifest.t_validate_s);
        assert_eq!(manifest.generations, 3);
        assert!((manifest.t_total_s - product).abs() <= 1e-9 * product.abs());
        assert!((manifest.t_total_s - 4.5).abs() < 1e-12);
    }

    #[test]
    fn multiple_histories_accumulate() {
        let mut manifest = RunManifest::new("bench");
        manifest.record_history(&[record(1.0, 1.0)]);
        manifest.record_history(&[record(3.0, 1.0), record(2.0, 1.0)]);
        let product = manifest.generations as f64 * (manifest.t_pruning_s + manifest.t_validate_s);
        assert_eq!(manifest.generations, 3);
        assert!((manifest.t_total_s - 9.0).abs() < 1e-12);
        assert!((manifest.t_total_s - product).abs() <= 1e-9 * product);
    }

    #[test]
    fn empty_history_changes_nothing() {
        let mut manifest = RunManifest::new("diff");
        manifest.record_history(&[]);
        assert_eq!(manifest.generations, 0);
        assert_eq!(manifest.t_total_s, 0.0);
    }

    #[test]
    fn manifest_serializes_with_stable_field_names() {
        let manifest = RunManifest::new("diff");
        let json = serde_json::to_string(&manifest).unwrap();
        for field in [
            "command",
            "config",
            "seed",
            "inputs",
            "outputs",
            "generations",
            "t_pruning_s",
            "t_validate_s",
            "t_total_s",
            "wall_s",
        ] {
            assert!(json.contains(field), "missing field {field} in {json}");
        }
    }
}
