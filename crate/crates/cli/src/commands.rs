//! The non-benchmark subcommands: thin wrappers that load artifacts, call one
//! library operation, and report.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, ValueEnum};
use serde::Serialize;

use nps_core::cmaes::{GenerationRecord, SearchBudget};
use nps_core::harness::{AccuracyEvaluator, Split, TinyModelSpec};
use nps_core::io::{load_checkpoint, load_task_vector, save_checkpoint, save_task_vector};
use nps_core::{
    compress, dare, fuse_search, load_bundle, nps_search, prune, save_bundle, storage_report,
    task_arithmetic, ties_merge, transfer, weight_average, Checkpoint, DareConfig, Error,
    NpsSearchConfig, PrunedTaskVector, Result, SparsityRatio, TaskVector, TransferConfig,
};

use crate::config::TaskConfig;
use crate::report::{self, RunManifest};

/// Parses `name=path` task arguments.
pub fn parse_named_path(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => {
            Ok((name.to_string(), PathBuf::from(path)))
        }
        _ => Err(format!("expected `name=path`, got `{s}`")),
    }
}

/// Parses a non-negative integer count, accepting scientific notation for
/// round numbers (`1e6`).
pub fn parse_count(s: &str) -> std::result::Result<u64, String> {
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    let v: f64 = s
        .parse()
        .map_err(|_| format!("`{s}` is not a parameter count"))?;
    if v.is_finite() && (0.0..=9.007_199_254_740_992e15).contains(&v) && v.fract() == 0.0 {
        Ok(v as u64)
    } else {
        Err(format!("`{s}` is not a whole non-negative count"))
    }
}

fn write_history(path: &Path, history: &[GenerationRecord]) -> Result<()> {
    let mut text = String::new();
    for record in history {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::Parse(format!("history encoding failed: {e}")))?;
        text.push_str(&line);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn fmt_acc(x: f64) -> String {
    format!("{x:.4}")
}

fn vector_stats(values: &[f32]) -> (f64, f64, usize) {
    let mut sq = 0.0f64;
    let mut max_abs = 0.0f64;
    let mut nonzero = 0usize;
    for &v in values {
        let v = v as f64;
        sq += v * v;
        max_abs = max_abs.max(v.abs());
        if v != 0.0 {
            nonzero += 1;
        }
    }
    (sq.sqrt(), max_abs, nonzero)
}

// ---------------------------------------------------------------------------
// diff

#[derive(Debug, Args)]
pub struct DiffArgs {
    /// Fine-tuned checkpoint.
    #[arg(long)]
    pub fine_tuned: PathBuf,
    /// Pre-trained checkpoint.
    #[arg(long)]
    pub pre: PathBuf,
    /// Where to write the task vector.
    #[arg(long)]
    pub output: PathBuf,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct DiffResult {
    d: usize,
    tensors: usize,
    l2_norm: f64,
    max_abs: f64,
    nonzero: usize,
}

pub fn diff(args: &DiffArgs) -> Result<()> {
    let started = Instant::now();
    let fine_tuned = load_checkpoint(&args.fine_tuned)?;
    let pre = load_checkpoint(&args.pre)?;
    let tv = nps_core::diff(&fine_tuned, &pre)?;
    save_task_vector(&args.output, &tv)?;

    let (l2_norm, max_abs, nonzero) = vector_stats(tv.values());
    let result = DiffResult {
        d: tv.len(),
        tensors: tv.layout().specs().len(),
        l2_norm,
        max_abs,
        nonzero,
    };
    report::table(
        &["field", "value"],
        &[
            vec!["d".into(), result.d.to_string()],
            vec!["tensors".into(), result.tensors.to_string()],
            vec!["l2_norm".into(), format!("{l2_norm:.6}")],
            vec!["max_abs".into(), format!("{max_abs:.6}")],
            vec!["nonzero".into(), result.nonzero.to_string()],
        ],
    );

    let mut manifest = RunManifest::new("diff");
    manifest
        .flag("fine-tuned", args.fine_tuned.display())
        .flag("pre", args.pre.display())
        .flag("output", args.output.display())
        .input(&args.fine_tuned)
        .input(&args.pre)
        .output(&args.output);
    report::emit(manifest.finish(started), result, args.out.as_deref())
}

// ---------------------------------------------------------------------------
// prune

#[derive(Debug, Args)]
pub struct PruneArgs {
    /// Pre-trained checkpoint.
    #[arg(long)]
    pub pre: PathBuf,
    /// Fine-tuned checkpoint to diff against the base.
    #[arg(long, conflicts_with = "task_vector")]
    pub fine_tuned: Option<PathBuf>,
    /// Precomputed task vector (alternative to --fine-tuned).
    #[arg(long)]
    pub task_vector: Option<PathBuf>,
    /// Fraction of task-vector elements to keep.
    #[arg(long)]
    pub ratio: f64,
    /// Rescaling applied to the kept delta when rebuilding the model.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Where to write the rebuilt model.
    #[arg(long)]
    pub output: PathBuf,
    /// Also pack the base and the pruned vector into a one-task bundle here.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Task name recorded in the bundle.
    #[arg(long, default_value = "task")]
    pub task_name: String,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct PruneResult {
    d: usize,
    kept: usize,
    ratio: f64,
    lambda: f64,
    delta_l2_norm: f64,
}

pub fn prune_cmd(args: &PruneArgs) -> Result<()> {
    let started = Instant::now();
    let pre = load_checkpoint(&args.pre)?;
    let ratio = SparsityRatio::new(args.ratio)?;
    let tv = match (&args.fine_tuned, &args.task_vector) {
        (Some(path), None) => nps_core::diff(&load_checkpoint(path)?, &pre)?,
        (None, Some(path)) => load_task_vector(path)?,
        _ => {
            return Err(Error::InvalidArgument(
                "pass exactly one of --fine-tuned or --task-vector".into(),
            ))
        }
    };
    let (pruned, reconstructed) = prune(&pre, &tv, ratio)?;
    let model = if args.lambda == 1.0 {
        reconstructed
    } else {
        transfer(&pre, &pruned, &TransferConfig::new(args.lambda, ratio)?)?
    };
    save_checkpoint(&args.output, &model)?;
    if let Some(bundle_path) = &args.bundle {
        let bundle = compress(pre, vec![(args.task_name.clone(), pruned.clone())])?;
        save_bundle(bundle_path, &bundle)?;
    }

    let (delta_l2_norm, _, _) = vector_stats(pruned.kept_values());
    let result = PruneResult {
        d: tv.len(),
        kept: pruned.mask().count_ones(),
        ratio: args.ratio,
        lambda: args.lambda,
        delta_l2_norm,
    };
    report::table(
        &["field", "value"],
        &[
            vec!["d".into(), result.d.to_string()],
            vec!["kept".into(), result.kept.to_string()],
            vec!["ratio".into(), result.ratio.to_string()],
            vec!["lambda".into(), result.lambda.to_string()],
            vec!["delta_l2_norm".into(), format!("{delta_l2_norm:.6}")],
        ],
    );

    let mut manifest = RunManifest::new("prune");
    manifest
        .flag("pre", args.pre.display())
        .flag("ratio", args.ratio)
        .flag("lambda", args.lambda)
        .flag("task-name", &args.task_name)
        .flag("output", args.output.display())
        .input(&args.pre)
        .output(&args.output);
    if let Some(path) = &args.fine_tuned {
        manifest.flag("fine-tuned", path.display()).input(path);
    }
    if let Some(path) = &args.task_vector {
        manifest.flag("task-vector", path.display()).input(path);
    }
    if let Some(path) = &args.bundle {
        manifest.flag("bundle", path.display()).output(path);
    }
    report::emit(manifest.finish(started), result, args.out.as_deref())
}

// ---------------------------------------------------------------------------
// search

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Pre-trained checkpoint.
    #[arg(long)]
    pub pre: PathBuf,
    /// Fine-tuned checkpoint.
    #[arg(long)]
    pub fine_tuned: PathBuf,
    /// Task config file describing the synthetic benchmark tasks.
    #[arg(long)]
    pub config: PathBuf,
    /// Index of the config task whose calibration split scores candidates.
    #[arg(long, default_value_t = 0)]
    pub task: usize,
    /// Number of magnitude-rank subspaces.
    #[arg(long, default_value_t = 8)]
    pub subspaces: usize,
    /// Fraction of task-vector elements to keep.
    #[arg(long)]
    pub ratio: f64,
    /// Search generations.
    #[arg(long, default_value_t = 30)]
    pub generations: usize,
    /// Stop early after this many generations without improvement.
    #[arg(long)]
    pub stagnation: Option<usize>,
    /// Fraction of the calibration split used for fitness.
    #[arg(long, default_value_t = 1.0)]
    pub volume: f64,
    /// Initial step size of the weight search.
    #[arg(long, default_value_t = 0.3)]
    pub sigma: f64,
    /// Search seed.
    #[arg(long, env = "NPS_SEED", default_value_t = 42)]
    pub seed: u64,
    /// Where to write the searched pruned model.
    #[arg(long)]
    pub output: PathBuf,
    /// Also pack the base and the searched vector into a one-task bundle here.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Task name recorded in the bundle.
    #[arg(long, default_value = "task")]
    pub task_name: String,
    /// Write one JSON line per generation here.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct SearchResult {
    d: usize,
    kept: usize,
    subspaces: usize,
    ratio: f64,
    best_fitness: f64,
    plain_fitness: f64,
    weights: Vec<f64>,
    generations: u64,
    evaluations: usize,
}

pub fn search(args: &SearchArgs) -> Result<()> {
    let started = Instant::now();
    let pre = load_checkpoint(&args.pre)?;
    let fine_tuned = load_checkpoint(&args.fine_tuned)?;
    let ratio = SparsityRatio::new(args.ratio)?;
    let tasks = TaskConfig::load(&args.config)?.build()?;
    if args.task >= tasks.len() {
        return Err(Error::InvalidArgument(format!(
            "--task {} is out of range: the config defines {} tasks",
            args.task,
            tasks.len()
        )));
    }
    let spec = TinyModelSpec::from_layout(pre.layout())?;
    let evaluator = AccuracyEvaluator::with_volume(
        spec,
        &tasks[args.task..args.task + 1],
        Split::Calibration,
        args.volume,
    )?;

    let mut budget = SearchBudget::new(args.generations);
    if let Some(stagnation) = args.stagnation {
        budget = budget.with_stagnation(stagnation);
    }
    let mut config = NpsSearchConfig::new(args.subspaces, ratio, budget, args.seed);
    config.initial_sigma = args.sigma;

    let outcome = nps_search(&pre, &fine_tuned, &evaluator, &config).map_err(|e| e.error)?;
    save_checkpoint(&args.output, &outcome.checkpoint)?;
    if let Some(bundle_path) = &args.bundle {
        let bundle = compress(
            pre.clone(),
            vec![(args.task_name.clone(), outcome.pruned.clone())],
        )?;
        save_bundle(bundle_path, &bundle)?;
    }
    if let Some(history_path) = &args.history {
        write_history(history_path, &outcome.history)?;
    }

    // The all-ones baseline the search can never fall below.
    let tv = nps_core::diff(&fine_tuned, &pre)?;
    let (_, plain_model) = prune(&pre, &tv, ratio)?;
    let plain_fitness = evaluator.accuracy(&plain_model)?;

    let result = SearchResult {
        d: pre.len(),
        kept: outcome.pruned.mask().count_ones(),
        subspaces: args.subspaces,
        ratio: args.ratio,
        best_fitness: outcome.best_fitness,
        plain_fitness,
        weights: outcome.pruned.weights_used().as_slice().to_vec(),
        generations: outcome.history.len() as u64,
        evaluations: outcome.evaluations,
    };
    report::table(
        &["field", "value"],
        &[
            vec!["d".into(), result.d.to_string()],
            vec!["kept".into(), result.kept.to_string()],
            vec!["best_fitness".into(), fmt_acc(result.best_fitness)],
            vec!["plain_fitness".into(), fmt_acc(result.plain_fitness)],
            vec!["generations".into(), result.generations.to_string()],
            vec!["evaluations".into(), result.evaluations.to_string()],
        ],
    );

    let mut manifest = RunManifest::new("search");
    manifest
        .flag("pre", args.pre.display())
        .flag("fine-tuned", args.fine_tuned.display())
        .flag("config", args.config.display())
        .flag("task", args.task)
        .flag("subspaces", args.subspaces)
        .flag("ratio", args.ratio)
        .flag("generations", args.generations)
        .flag("volume", args.volume)
        .flag("sigma", args.sigma)
        .flag("seed", args.seed)
        .flag("task-name", &args.task_name)
        .flag("output", args.output.display())
        .input(&args.pre)
        .input(&args.fine_tuned)
        .input(&args.config)
        .output(&args.output)
        .record_history(&outcome.history);
    manifest.seed = Some(args.seed);
    if let Some(stagnation) = args.stagnation {
        manifest.flag("stagnation", stagnation);
    }
    if let Some(path) = &args.bundle {
        manifest.flag("bundle", path.display()).output(path);
    }
    if let Some(path) = &args.history {
        manifest.flag("history", path.display()).output(path);
    }
    report::emit(manifest.finish(started), result, args.out.as_deref())
}

// ---------------------------------------------------------------------------
// merge

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MergeMethod {
    /// Searched fusion of pruned task vectors.
    Nps,
    /// Element-wise mean of the fine-tuned models.
    Average,
    /// Base plus the lambda-scaled sum of task vectors.
    TaskArithmetic,
    /// Trim, elect sign, disjoint merge.
    Ties,
    /// Random delta dropping with rescale, then task arithmetic.
    Dare,
}

impl MergeMethod {
    fn name(self) -> &'static str {
        match self {
            MergeMethod::Nps => "nps",
            MergeMethod::Average => "average",
            MergeMethod::TaskArithmetic => "task-arithmetic",
            MergeMethod::Ties => "ties",
            MergeMethod::Dare => "dare",
        }
    }
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    /// Pre-trained checkpoint.
    #[arg(long)]
    pub pre: PathBuf,
    /// Fine-tuned checkpoint, one per task (repeat the flag).
    #[arg(long = "fine-tuned", required = true)]
    pub fine_tuned: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = MergeMethod::Nps)]
    pub method: MergeMethod,
    /// Keep fraction for nps pruning and ties trimming.
    #[arg(long, default_value_t = 0.05)]
    pub ratio: f64,
    /// Scaling coefficient for task-arithmetic, ties, and dare.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Delta drop probability for dare.
    #[arg(long, default_value_t = 0.9)]
    pub drop_prob: f64,
    /// Task config file; required for method=nps, used for scoring otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Search generations for method=nps.
    #[arg(long, default_value_t = 30)]
    pub generations: usize,
    /// Seed for the fusion search and dare dropping.
    #[arg(long, env = "NPS_SEED", default_value_t = 42)]
    pub seed: u64,
    /// Where to write the merged model.
    #[arg(long)]
    pub output: PathBuf,
    /// Write one JSON line per fusion-search generation here.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct MergeResult {
    method: String,
    tasks: usize,
    d: usize,
    lambda: Option<f64>,
    lambdas: Option<Vec<f64>>,
    ratio: Option<f64>,
    drop_prob: Option<f64>,
    best_fitness: Option<f64>,
    evaluations: Option<usize>,
    calibration_accuracy: Option<Vec<f64>>,
    test_accuracy: Option<Vec<f64>>,
    mean_test_accuracy: Option<f64>,
}

fn task_vectors(pre: &Checkpoint, fine_tuned: &[Checkpoint]) -> Result<Vec<TaskVector>> {
    fine_tuned
        .iter()
        .map(|ft| nps_core::diff(ft, pre))
        .collect()
}

pub fn merge(args: &MergeArgs) -> Result<()> {
    let started = Instant::now();
    let pre = load_checkpoint(&args.pre)?;
    let fine_tuned: Vec<Checkpoint> = args
        .fine_tuned
        .iter()
        .map(load_checkpoint)
        .collect::<Result<_>>()?;
    let task_config = args.config.as_deref().map(TaskConfig::load).transpose()?;
    let tasks = task_config.as_ref().map(TaskConfig::build).transpose()?;

    let mut result = MergeResult {
        method: args.method.name().to_string(),
        tasks: fine_tuned.len(),
        d: pre.len(),
        lambda: None,
        lambdas: None,
        ratio: None,
        drop_prob: None,
        best_fitness: None,
        evaluations: None,
        calibration_accuracy: None,
        test_accuracy: None,
        mean_test_accuracy: None,
    };
    let mut history: Vec<GenerationRecord> = Vec::new();

    let merged = match args.method {
        MergeMethod::Average => weight_average(&fine_tuned)?,
        MergeMethod::TaskArithmetic => {
            result.lambda = Some(args.lambda);
            task_arithmetic(&pre, &task_vectors(&pre, &fine_tuned)?, args.lambda)?
        }
        MergeMethod::Ties => {
            result.lambda = Some(args.lambda);
            result.ratio = Some(args.ratio);
            ties_merge(
                &pre,
                &task_vectors(&pre, &fine_tuned)?,
                SparsityRatio::new(args.ratio)?,
                args.lambda,
            )?
        }
        MergeMethod::Dare => {
            result.lambda = Some(args.lambda);
            result.drop_prob = Some(args.drop_prob);
            let dropped: Vec<TaskVector> = task_vectors(&pre, &fine_tuned)?
                .iter()
                .enumerate()
                .map(|(i, tv)| {
                    dare(
                        tv,
                        &DareConfig::new(args.drop_prob, args.seed.wrapping_add(i as u64))?,
                    )
                })
                .collect::<Result<_>>()?;
            task_arithmetic(&pre, &dropped, args.lambda)?
        }
        MergeMethod::Nps => {
            let tasks = tasks.as_ref().ok_or_else(|| {
                Error::InvalidArgument("--config is required for method=nps".into())
            })?;
            if tasks.len() != fine_tuned.len() {
                return Err(Error::InvalidArgument(format!(
                    "the config defines {} tasks but {} fine-tuned models were given",
                    tasks.len(),
                    fine_tuned.len()
                )));
            }
            let ratio = SparsityRatio::new(args.ratio)?;
            let pruned: Vec<PrunedTaskVector> = task_vectors(&pre, &fine_tuned)?
                .iter()
                .map(|tv| prune(&pre, tv, ratio).map(|(p, _)| p))
                .collect::<Result<_>>()?;
            let spec = TinyModelSpec::from_layout(pre.layout())?;
            let evaluator = AccuracyEvaluator::new(spec, tasks, Split::Calibration)?;
            let fusion = fuse_search(
                &pre,
                &pruned,
                &evaluator,
                &SearchBudget::new(args.generations),
                args.seed,
            )
            .map_err(|e| e.error)?;
            result.ratio = Some(args.ratio);
            result.lambdas = Some(fusion.lambdas.clone());
            result.best_fitness = Some(fusion.best_fitness);
            result.evaluations = Some(fusion.evaluations);
            history = fusion.history;
            fusion.merged
        }
    };
    save_checkpoint(&args.output, &merged)?;
    if let Some(history_path) = &args.history {
        write_history(history_path, &history)?;
    }

    // Score the merged model when the benchmark tasks are known.
    if let Some(tasks) = &tasks {
        let spec = TinyModelSpec::from_layout(pre.layout())?;
        let calibration = AccuracyEvaluator::new(spec.clone(), tasks, Split::Calibration)?;
        let test = AccuracyEvaluator::new(spec, tasks, Split::Test)?;
        let per_task = test.per_task_accuracy(&merged)?;
        result.mean_test_accuracy = Some(per_task.iter().sum::<f64>() / per_task.len() as f64);
        result.calibration_accuracy = Some(calibration.per_task_accuracy(&merged)?);
        result.test_accuracy = Some(per_task);
    }

    let mut rows = vec![
        vec!["method".into(), result.method.clone()],
        vec!["tasks".into(), result.tasks.to_string()],
        vec!["d".into(), result.d.to_string()],
    ];
    if let Some(lambdas) = &result.lambdas {
        rows.push(vec![
            "lambdas".into(),
            lambdas
                .iter()
                .map(|l| format!("{l:.4}"))
                .collect::<Vec<_>>()
                .join(", "),
        ]);
    }
    if let Some(mean) = result.mean_test_accuracy {
        rows.push(vec!["mean_test_accuracy".into(), fmt_acc(mean)]);
    }
    report::table(&["field", "value"], &rows);

    let mut manifest = RunManifest::new("merge");
    manifest
        .flag("pre", args.pre.display())
        .flag(
            "fine-tuned",
            args.fine_tuned
                .iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>()
                .join(","),
        )
        .flag("method", args.method.name())
        .flag("ratio", args.ratio)
        .flag("lambda", args.lambda)
        .flag("drop-prob", args.drop_prob)
        .flag("generations", args.generations)
        .flag("seed", args.seed)
        .flag("output", args.output.display())
        .input(&args.pre)
        .output(&args.output)
        .record_history(&history);
    manifest.seed = Some(args.seed);
    for path in &args.fine_tuned {
        manifest.input(path);
    }
    if let Some(path) = &args.config {
        manifest.flag("config", path.display()).input(path);
    }
    if let Some(path) = &args.history {
        manifest.flag("history", path.display()).output(path);
    }
    report::emit(manifest.finish(started), result, args.out.as_deref())
}

// ---------------------------------------------------------------------------
// compress

#[derive(Debug, Args)]
pub struct CompressArgs {
    /// Base checkpoint stored dense in the bundle.
    #[arg(long)]
    pub base: PathBuf,
    /// `name=path` fine-tuned checkpoint, one per task (repeat the flag).
    #[arg(long = "task", required = true, value_parser = parse_named_path)]
    pub tasks: Vec<(String, PathBuf)>,
    /// Fraction of each task vector to keep.
    #[arg(long)]
    pub ratio: f64,
    /// Where to write the bundle.
    #[arg(long)]
    pub output: PathBuf,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct CompressResult {
    tasks: usize,
    d: usize,
    ratio: f64,
    kept_per_task: Vec<usize>,
    bundle_bytes: u64,
    dense_bytes: u64,
    storage: nps_core::StorageReport,
}

pub fn compress_cmd(args: &CompressArgs) -> Result<()> {
    let started = Instant::now();
    let base = load_checkpoint(&args.base)?;
    let ratio = SparsityRatio::new(args.ratio)?;
    let mut entries = Vec::with_capacity(args.tasks.len());
    for (name, path) in &args.tasks {
        let fine_tuned = load_checkpoint(path)?;
        let tv = nps_core::diff(&fine_tuned, &base)?;
        let (pruned, _) = prune(&base, &tv, ratio)?;
        entries.push((name.clone(), pruned));
    }
    let kept_per_task: Vec<usize> = entries.iter().map(|(_, p)| p.mask().count_ones()).collect();
    let d = base.len();
    let bundle = compress(base, entries)?;
    save_bundle(&args.output, &bundle)?;
    let bundle_bytes = std::fs::metadata(&args.output)?.len();

    let storage = storage_report(args.tasks.len() as u64, d as u64, d as u64, 0, ratio)?;
    let result = CompressResult {
        tasks: args.tasks.len(),
        d,
        ratio: args.ratio,
        kept_per_task,
        bundle_bytes,
        // One dense f32 model per task plus the base.
        dense_bytes: 4 * (d as u64) * (args.tasks.len() as u64 + 1),
        storage,
    };
    report::table(
        &["field", "value"],
        &[
            vec!["tasks".into(), result.tasks.to_string()],
            vec!["d".into(), result.d.to_string()],
            vec!["bundle_bytes".into(), result.bundle_bytes.to_string()],
            vec!["dense_bytes".into(), result.dense_bytes.to_string()],
            vec![
                "bundle/dense".into(),
                format!(
                    "{:.4}",
                    result.bundle_bytes as f64 / result.dense_bytes as f64
                ),
            ],
        ],
    );

    let mut manifest = RunManifest::new("compress");
    manifest
        .flag("base", args.base.display())
        .flag(
            "task",
            args.tasks
                .iter()
                .map(|(n, p)| format!("{n}={}", p.display()))
                .collect::<Vec<_>>()
                .join(","),
        )
        .flag("ratio", args.ratio)
        .flag("output", args.output.display())
        .input(&args.base)
        .output(&args.output);
    for (_, path) in &args.tasks {
        manifest.input(path);
    }
    report::emit(manifest.finish(started), result, args.out.as_deref())
}

// ---------------------------------------------------------------------------
// reconstruct

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Bundle file.
    #[arg(long)]
    pub bundle: PathBuf,
    /// Task to rebuild.
    #[arg(long, required_unless_present = "list")]
    pub task: Option<String>,
    /// Where to write the rebuilt model.
    #[arg(long, required_unless_present = "list")]
    pub output: Option<PathBuf>,
    /// List stored task names instead of rebuilding.
    #[arg(long)]
    pub list: bool,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct ReconstructResult {
    tasks: Vec<String>,
    rebuilt: Option<String>,
    d: usize,
    kept: Option<usize>,
}

pub fn reconstruct(args: &ReconstructArgs) -> Result<()> {
    let started = Instant::now();
    let bundle = load_bundle(&args.bundle)?;
    let names: Vec<String> = bundle.task_names().map(str::to_string).collect();

    let mut result = ReconstructResult {
        tasks: names.clone(),
        rebuilt: None,
        d: bundle.base().len(),
        kept: None,
    };
    let mut manifest = RunManifest::new("reconstruct");
    manifest
        .flag("bundle", args.bundle.display())
        .flag("list", args.list)
        .input(&args.bundle);

    if args.list {
        report::table(
            &["task", "kept"],
            &names
                .iter()
                .map(|n| {
                    let kept = bundle.get(n).map(|p| p.mask().count_ones()).unwrap_or(0);
                    vec![n.clone(), kept.to_string()]
                })
                .collect::<Vec<_>>(),
        );
        return report::emit(manifest.finish(started), result, args.out.as_deref());
    }

    // Clap guarantees both are present when --list is absent.
    let task = args.task.as_deref().expect("clap enforces --task");
    let output = args.output.as_deref().expect("clap enforces --output");
    let model = bundle.reconstruct(task)?;
    save_checkpoint(output, &model)?;
    result.rebuilt = Some(task.to_string());
    result.kept = bundle.get(task).map(|p| p.mask().count_ones());
    report::table(
        &["field", "value"],
        &[
            vec!["task".into(), task.to_string()],
            vec!["d".into(), result.d.to_string()],
            vec![
                "kept".into(),
                result.kept.map(|k| k.to_string()).unwrap_or_default(),
            ],
        ],
    );
    manifest
        .flag("task", task)
        .flag("output", output.display())
        .output(output);
    report::emit(manifest.finish(started), result, args.out.as_deref())
}

// ---------------------------------------------------------------------------
// eval

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalSplit {
    Calibration,
    Test,
}

impl From<EvalSplit> for Split {
    fn from(split: EvalSplit) -> Split {
        match split {
            EvalSplit::Calibration => Split::Calibration,
            EvalSplit::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model checkpoint to score.
    #[arg(long)]
    pub model: PathBuf,
    /// Task config file describing the synthetic benchmark tasks.
    #[arg(long)]
    pub config: PathBuf,
    /// Evaluate only these task indices (repeat the flag; default all).
    #[arg(long)]
    pub task: Vec<usize>,
    #[arg(long, value_enum, default_value_t = EvalSplit::Test)]
    pub split: EvalSplit,
    /// Fraction of the split to use.
    #[arg(long, default_value_t = 1.0)]
    pub volume: f64,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct EvalResult {
    split: String,
    volume: f64,
    task_ids: Vec<usize>,
    accuracy: Vec<f64>,
    mean_accuracy: f64,
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let started = Instant::now();
    let model = load_checkpoint(&args.model)?;
    let spec = TinyModelSpec::from_layout(model.layout())?;
    let tasks = TaskConfig::load(&args.config)?.build()?;

    let selected = if args.task.is_empty() {
        tasks.clone()
    } else {
        let mut picked = Vec::with_capacity(args.task.len());
        for &index in &args.task {
            let task = tasks.get(index).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "--task {index} is out of range: the config defines {} tasks",
                    tasks.len()
                ))
            })?;
            picked.push(task.clone());
        }
        picked
    };
    let task_ids: Vec<usize> = selected.iter().map(|t| t.task_id).collect();

    let evaluator =
        AccuracyEvaluator::with_volume(spec, &selected, args.split.into(), args.volume)?;
    let accuracy = evaluator.per_task_accuracy(&model)?;
    let mean_accuracy = accuracy.iter().sum::<f64>() / accuracy.len() as f64;

    let split_name = match args.split {
        EvalSplit::Calibration => "calibration",
        EvalSplit::Test => "test",
    };
    let mut rows: Vec<Vec<String>> = task_ids
        .iter()
        .zip(&accuracy)
        .map(|(id, acc)| vec![format!("task {id}"), fmt_acc(*acc)])
        .collect();
    rows.push(vec!["mean".into(), fmt_acc(mean_accuracy)]);
    report::table(&["task", split_name], &rows);

    let result = EvalResult {
        split: split_name.to_string(),
        volume: args.volume,
        task_ids,
        accuracy,
        mean_accuracy,
    };
    let mut manifest = RunManifest::new("eval");
    manifest
        .flag("model", args.model.display())
        .flag("config", args.config.display())
        .flag("split", split_name)
        .flag("volume", args.volume)
        .input(&args.model)
        .input(&args.config);
    if !args.task.is_empty() {
        manifest.flag(
            "task",
            args.task
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
    }
    report::emit(manifest.finish(started), result, args.out.as_deref())
}

// ---------------------------------------------------------------------------
// storage-report

#[derive(Debug, Args)]
pub struct StorageReportArgs {
    /// Number of task checkpoints retained.
    #[arg(long, value_parser = parse_count)]
    pub n: u64,
    /// Total parameters per model.
    #[arg(long, value_parser = parse_count)]
    pub p: u64,
    /// Tunable parameters per model.
    #[arg(long = "p-prime", value_parser = parse_count)]
    pub p_prime: u64,
    /// Frozen parameters per model.
    #[arg(long, value_parser = parse_count, default_value = "0")]
    pub f: u64,
    /// Keep fraction of the sparse scheme.
    #[arg(long)]
    pub ratio: f64,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn storage_report_cmd(args: &StorageReportArgs) -> Result<()> {
    let started = Instant::now();
    let ratio = SparsityRatio::new(args.ratio)?;
    let report_data = storage_report(args.n, args.p, args.p_prime, args.f, ratio)?;

    let relative = |bits: u64| format!("{:.4}", bits as f64 / report_data.fine_tuned_bits as f64);
    report::table(
        &["method", "bits", "vs_fine_tuned"],
        &[
            vec![
                "fine_tuned".into(),
                report_data.fine_tuned_bits.to_string(),
                relative(report_data.fine_tuned_bits),
            ],
            vec![
                "single_model".into(),
                report_data.single_model_bits.to_string(),
                relative(report_data.single_model_bits),
            ],
            vec![
                "tall_masks".into(),
                report_data.tallmask_bits.to_string(),
                relative(report_data.tallmask_bits),
            ],
            vec![
                "nps".into(),
                report_data.nps_bits.to_string(),
                relative(report_data.nps_bits),
            ],
        ],
    );

    let mut manifest = RunManifest::new("storage-report");
    manifest
        .flag("n", args.n)
        .flag("p", args.p)
        .flag("p-prime", args.p_prime)
        .flag("f", args.f)
        .flag("ratio", args.ratio);
    report::emit(manifest.finish(started), report_data, args.out.as_deref())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_path_parsing_accepts_name_equals_path() {
        let (name, path) = parse_named_path("colors=/tmp/colors.npsc").unwrap();
        assert_eq!(name, "colors");
        assert_eq!(path, PathBuf::from("/tmp/colors.npsc"));
        assert!(parse_named_path("colors").is_err());
        assert!(parse_named_path("=path").is_err());
        assert!(parse_named_path("name=").is_err());
    }

    #[test]
    fn count_parsing_accepts_integers_and_round_scientific_notation() {
        assert_eq!(parse_count("0").unwrap(), 0);
        assert_eq!(parse_count("123456").unwrap(), 123_456);
        assert_eq!(parse_count("1e6").unwrap(), 1_000_000);
        assert_eq!(parse_count("2.5e3").unwrap(), 2_500);
        assert!(parse_count("1.5").is_err());
        assert!(parse_count("-3").is_err());
        assert!(parse_count("many").is_err());
        assert!(parse_count("inf").is_err());
    }
}
