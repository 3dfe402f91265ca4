//! The `bench` subcommand: trains the synthetic model zoo, runs every pruning
//! and merging method over it, and writes comparison tables.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use serde::Serialize;

use nps_core::cmaes::{GenerationRecord, SearchBudget};
use nps_core::harness::{
    finetune, pretrain, AccuracyEvaluator, Split, TinyModelSpec, DEFAULT_CLASS_COUNT,
    DEFAULT_FINETUNE_STEPS, DEFAULT_INPUT_DIM, DEFAULT_PRETRAIN_STEPS,
};
use nps_core::{
    compress, dare, fuse_search, load_bundle, normalized_accuracy, nps_search, prune, save_bundle,
    storage_report, task_arithmetic, ties_merge, weight_average, Checkpoint, DareConfig, Error,
    NpsSearchConfig, PrunedTaskVector, Result, SparsityRatio, StorageReport, TaskVector,
};

use crate::config::TaskConfig;
use crate::report::{self, RunManifest};

/// TIES trims each task vector to its canonical top 20% before merging; the
/// headline --ratio stays the sparse-search operating point.
const TIES_TRIM: f64 = 0.2;
/// Standard drop probability for delta dropping.
const DARE_DROP: f64 = 0.9;

// Disjoint seed streams derived from the one --seed flag.
const STREAM_TASKS: u64 = 1;
const STREAM_PRETRAIN: u64 = 2;
const STREAM_FUSION: u64 = 3;
const STREAM_FINETUNE: u64 = 0x100;
const STREAM_SEARCH: u64 = 0x200;
const STREAM_DARE: u64 = 0x300;
const STREAM_SWEEP: u64 = 0x1000;

/// splitmix64 finalizer over (seed, stream) so nearby streams decorrelate.
fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lambda_grid(from_tenths: u32, to_tenths: u32) -> Vec<f64> {
    (from_tenths..=to_tenths).map(|k| k as f64 / 10.0).collect()
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Number of synthetic tasks.
    #[arg(long, default_value_t = 8)]
    pub tasks: usize,
    /// Keep fraction for the headline pruning and fusion runs.
    #[arg(long, default_value_t = 0.05)]
    pub ratio: f64,
    /// Search generations per task and for the fusion search.
    #[arg(long, default_value_t = 30)]
    pub generations: usize,
    /// Number of magnitude-rank subspaces.
    #[arg(long, default_value_t = 8)]
    pub subspaces: usize,
    /// Master seed; every other seed in the run derives from it.
    #[arg(long, env = "NPS_SEED", default_value_t = 42)]
    pub seed: u64,
    /// Keep fractions for the sparsity sweep table.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 0.2, 0.1, 0.05, 0.04])]
    pub sweep_ratios: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_PRETRAIN_STEPS)]
    pub pretrain_steps: usize,
    #[arg(long, default_value_t = DEFAULT_FINETUNE_STEPS)]
    pub finetune_steps: usize,
    /// Optional task generator overrides (key = value file); the task count
    /// and seed always come from the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for the CSV/JSON artifacts.
    #[arg(long, default_value = "bench-out")]
    pub out_dir: PathBuf,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// One comparison-table row: a method, its settings, and its test accuracy.
#[derive(Debug, Clone, Serialize)]
struct MethodReport {
    method: String,
    settings: String,
    per_task_test: Vec<f64>,
    mean_test: f64,
    normalized: f64,
}

#[derive(Debug, Clone, Serialize)]
struct SweepRow {
    ratio: f64,
    task: usize,
    magnitude_accuracy: f64,
    nps_accuracy: f64,
}

#[derive(Debug, Clone, Serialize)]
struct StoragePoint {
    method: String,
    bits: u64,
    mean_test_accuracy: f64,
}

#[derive(Debug, Serialize)]
struct BenchConfigEcho {
    tasks: usize,
    d: usize,
    ratio: f64,
    subspaces: usize,
    generations: usize,
    seed: u64,
    pretrain_steps: usize,
    finetune_steps: usize,
    sweep_ratios: Vec<f64>,
    ties_trim: f64,
    dare_drop_prob: f64,
}

#[derive(Debug, Serialize)]
struct GridWinners {
    task_arithmetic_lambda: f64,
    ties_lambda: f64,
    dare_lambda: f64,
}

#[derive(Debug, Serialize)]
struct FusionSummary {
    lambdas: Vec<f64>,
    calibration_fitness: f64,
    evaluations: usize,
}

#[derive(Debug, Serialize)]
struct NpsSummary {
    per_task_calibration_fitness: Vec<f64>,
    evaluations: usize,
}

#[derive(Debug, Serialize)]
struct StorageSummary {
    report: StorageReport,
    bundle_bytes: u64,
    points: Vec<StoragePoint>,
}

/// Everything deterministic about the run; timing lives in the manifest.
#[derive(Debug, Serialize)]
struct BenchResults {
    config: BenchConfigEcho,
    comparison: Vec<MethodReport>,
    grid: GridWinners,
    fusion: FusionSummary,
    nps: NpsSummary,
    sweep: Vec<SweepRow>,
    storage: StorageSummary,
}

#[derive(Debug, Serialize)]
struct BenchSummary {
    out_dir: String,
    files: Vec<String>,
    mean_test_accuracy: BTreeMap<String, f64>,
}

/// Scores every grid coefficient on calibration data and keeps the first
/// maximizer, so ties always resolve to the smallest coefficient.
fn pick_lambda<F>(grid: &[f64], build: F, scorer: &AccuracyEvaluator) -> Result<(f64, Checkpoint)>
where
    F: Fn(f64) -> Result<Checkpoint>,
{
    let mut best: Option<(f64, f64, Checkpoint)> = None;
    for &lambda in grid {
        let model = build(lambda)?;
        let score = scorer.accuracy(&model)?;
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, lambda, model));
        }
    }
    best.map(|(_, lambda, model)| (lambda, model))
        .ok_or_else(|| Error::InvalidArgument("empty coefficient grid".into()))
}

fn comparison_csv(rows: &[MethodReport], n_tasks: usize) -> String {
    let mut csv = String::from("method,settings");
    for i in 0..n_tasks {
        csv.push_str(&format!(",task_{i}"));
    }
    csv.push_str(",mean_accuracy,normalized_accuracy\n");
    for row in rows {
        csv.push_str(&format!("{},{}", row.method, row.settings));
        for acc in &row.per_task_test {
            csv.push_str(&format!(",{acc}"));
        }
        csv.push_str(&format!(",{},{}\n", row.mean_test, row.normalized));
    }
    csv
}

fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut csv = String::from("ratio,task,magnitude_accuracy,nps_accuracy\n");
    for row in rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            row.ratio, row.task, row.magnitude_accuracy, row.nps_accuracy
        ));
    }
    csv
}

fn storage_csv(points: &[StoragePoint]) -> String {
    let mut csv = String::from("method,bits,mean_test_accuracy\n");
    for point in points {
        csv.push_str(&format!(
            "{},{},{}\n",
            point.method, point.bits, point.mean_test_accuracy
        ));
    }
    csv
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn bench(args: &BenchArgs) -> Result<()> {
    let started = Instant::now();
    let ratio = SparsityRatio::new(args.ratio)?;
    let sweep_ratios: Vec<SparsityRatio> = args
        .sweep_ratios
        .iter()
        .map(|&r| SparsityRatio::new(r))
        .collect::<Result<_>>()?;
    std::fs::create_dir_all(&args.out_dir)?;

    let mut task_cfg = match &args.config {
        Some(path) => TaskConfig::load(path)?,
        None => TaskConfig::default(),
    };
    task_cfg.tasks = args.tasks;
    task_cfg.base_seed = derive_seed(args.seed, STREAM_TASKS);
    let tasks = task_cfg.build()?;
    let n = tasks.len();

    let spec = TinyModelSpec::default_for(DEFAULT_INPUT_DIM, DEFAULT_CLASS_COUNT)?;
    let d = spec.param_count();

    eprintln!(
        "bench: {n} tasks, d={d}, pretrain {} steps, finetune {} steps",
        args.pretrain_steps, args.finetune_steps
    );
    let pre = pretrain(
        &spec,
        &tasks,
        args.pretrain_steps,
        derive_seed(args.seed, STREAM_PRETRAIN),
    )?;
    let fine_tuned: Vec<Checkpoint> = tasks
        .iter()
        .enumerate()
        .map(|(i, task)| {
            finetune(
                &pre,
                task,
                args.finetune_steps,
                derive_seed(args.seed, STREAM_FINETUNE + i as u64),
            )
        })
        .collect::<Result<_>>()?;
    let task_vectors: Vec<TaskVector> = fine_tuned
        .iter()
        .map(|ft| nps_core::diff(ft, &pre))
        .collect::<Result<_>>()?;

    let calibration_all = AccuracyEvaluator::new(spec.clone(), &tasks, Split::Calibration)?;
    let test_all = AccuracyEvaluator::new(spec.clone(), &tasks, Split::Test)?;
    let calibration_single: Vec<AccuracyEvaluator> = tasks
        .iter()
        .map(|t| AccuracyEvaluator::new(spec.clone(), std::slice::from_ref(t), Split::Calibration))
        .collect::<Result<_>>()?;
    let test_single: Vec<AccuracyEvaluator> = tasks
        .iter()
        .map(|t| AccuracyEvaluator::new(spec.clone(), std::slice::from_ref(t), Split::Test))
        .collect::<Result<_>>()?;

    let pre_test = test_all.per_task_accuracy(&pre)?;
    let ft_test: Vec<f64> = fine_tuned
        .iter()
        .enumerate()
        .map(|(i, ft)| test_single[i].accuracy(ft))
        .collect::<Result<_>>()?;

    let mut histories: Vec<GenerationRecord> = Vec::new();

    // Per-task pruning at the headline ratio: plain magnitude vs searched.
    let mut magnitude_test = Vec::with_capacity(n);
    let mut nps_test = Vec::with_capacity(n);
    let mut nps_fitness = Vec::with_capacity(n);
    let mut nps_pruned: Vec<PrunedTaskVector> = Vec::with_capacity(n);
    let mut nps_evaluations = 0usize;
    for i in 0..n {
        let (_, plain_model) = prune(&pre, &task_vectors[i], ratio)?;
        magnitude_test.push(test_single[i].accuracy(&plain_model)?);
        let config = NpsSearchConfig::new(
            args.subspaces,
            ratio,
            SearchBudget::new(args.generations),
            derive_seed(args.seed, STREAM_SEARCH + i as u64),
        );
        let outcome = nps_search(&pre, &fine_tuned[i], &calibration_single[i], &config)
            .map_err(|e| e.error)?;
        nps_test.push(test_single[i].accuracy(&outcome.checkpoint)?);
        nps_fitness.push(outcome.best_fitness);
        nps_evaluations += outcome.evaluations;
        histories.extend(outcome.history);
        nps_pruned.push(outcome.pruned);
        eprintln!(
            "task {i}: fine-tuned {:.4}  magnitude {:.4}  searched {:.4}",
            ft_test[i], magnitude_test[i], nps_test[i]
        );
    }

    // Merged baselines, coefficients tuned on calibration data.
    let average_model = weight_average(&fine_tuned)?;
    let (ta_lambda, ta_model) = pick_lambda(
        &lambda_grid(2, 15),
        |l| task_arithmetic(&pre, &task_vectors, l),
        &calibration_all,
    )?;
    let ties_trim = SparsityRatio::new(TIES_TRIM)?;
    let (ties_lambda, ties_model) = pick_lambda(
        &lambda_grid(8, 25),
        |l| ties_merge(&pre, &task_vectors, ties_trim, l),
        &calibration_all,
    )?;
    let dared: Vec<TaskVector> = task_vectors
        .iter()
        .enumerate()
        .map(|(i, tv)| {
            dare(
                tv,
                &DareConfig::new(DARE_DROP, derive_seed(args.seed, STREAM_DARE + i as u64))?,
            )
        })
        .collect::<Result<_>>()?;
    let (dare_lambda, dare_model) = pick_lambda(
        &lambda_grid(2, 15),
        |l| task_arithmetic(&pre, &dared, l),
        &calibration_all,
    )?;

    // Searched fusion of the per-task searched vectors.
    let fusion = fuse_search(
        &pre,
        &nps_pruned,
        &calibration_all,
        &SearchBudget::new(args.generations),
        derive_seed(args.seed, STREAM_FUSION),
    )
    .map_err(|e| e.error)?;
    let fusion_summary = FusionSummary {
        lambdas: fusion.lambdas.clone(),
        calibration_fitness: fusion.best_fitness,
        evaluations: fusion.evaluations,
    };
    let fused_model = fusion.merged;
    histories.extend(fusion.history);

    // Bundle the searched vectors and verify the round trip is bit-exact.
    let entries: Vec<(String, PrunedTaskVector)> = nps_pruned
        .iter()
        .enumerate()
        .map(|(i, p)| (format!("task{i}"), p.clone()))
        .collect();
    let bundle = compress(pre.clone(), entries)?;
    let bundle_path = args.out_dir.join("bundle.npsb");
    save_bundle(&bundle_path, &bundle)?;
    let bundle_bytes = std::fs::metadata(&bundle_path)?.len();
    let loaded = load_bundle(&bundle_path)?;
    for i in 0..n {
        let name = format!("task{i}");
        let rebuilt = loaded.reconstruct(&name)?;
        let direct = nps_pruned[i].reconstruct(&pre)?;
        if rebuilt
            .values()
            .iter()
            .zip(direct.values())
            .any(|(a, b)| a.to_bits() != b.to_bits())
        {
            return Err(Error::Numeric(format!("bundle round trip altered {name}")));
        }
    }

    // Sparsity sweep: plain vs searched pruning per task per keep fraction.
    let mut sweep = Vec::with_capacity(sweep_ratios.len() * n);
    for (ridx, &sweep_ratio) in sweep_ratios.iter().enumerate() {
        for i in 0..n {
            let (_, plain_model) = prune(&pre, &task_vectors[i], sweep_ratio)?;
            let magnitude_accuracy = test_single[i].accuracy(&plain_model)?;
            let config = NpsSearchConfig::new(
                args.subspaces,
                sweep_ratio,
                SearchBudget::new(args.generations),
                derive_seed(args.seed, STREAM_SWEEP + (ridx * n + i) as u64),
            );
            let outcome = nps_search(&pre, &fine_tuned[i], &calibration_single[i], &config)
                .map_err(|e| e.error)?;
            let nps_accuracy = test_single[i].accuracy(&outcome.checkpoint)?;
            histories.extend(outcome.history);
            sweep.push(SweepRow {
                ratio: sweep_ratio.value(),
                task: i,
                magnitude_accuracy,
                nps_accuracy,
            });
        }
        let slice = &sweep[sweep.len() - n..];
        eprintln!(
            "sweep r={}: magnitude {:.4}  searched {:.4}",
            sweep_ratio.value(),
            mean(
                &slice
                    .iter()
                    .map(|s| s.magnitude_accuracy)
                    .collect::<Vec<_>>()
            ),
            mean(&slice.iter().map(|s| s.nps_accuracy).collect::<Vec<_>>()),
        );
    }

    // Comparison table. Per-task methods score each model on its own task;
    // merged methods score the one model on every task.
    let mut comparison = Vec::new();
    let mut push_row = |method: &str, settings: String, per_task: Vec<f64>| -> Result<()> {
        let row = MethodReport {
            method: method.to_string(),
            settings,
            mean_test: mean(&per_task),
            normalized: normalized_accuracy(&per_task, &ft_test)?,
            per_task_test: per_task,
        };
        comparison.push(row);
        Ok(())
    };
    push_row("pretrained", String::new(), pre_test.clone())?;
    push_row(
        "fine_tuned",
        format!("steps={}", args.finetune_steps),
        ft_test.clone(),
    )?;
    push_row(
        "magnitude_prune",
        format!("r={}", args.ratio),
        magnitude_test.clone(),
    )?;
    push_row(
        "nps_prune",
        format!(
            "r={};M={};gens={}",
            args.ratio, args.subspaces, args.generations
        ),
        nps_test.clone(),
    )?;
    push_row(
        "weight_average",
        String::new(),
        test_all.per_task_accuracy(&average_model)?,
    )?;
    push_row(
        "task_arithmetic",
        format!("lambda={ta_lambda}"),
        test_all.per_task_accuracy(&ta_model)?,
    )?;
    push_row(
        "ties",
        format!("lambda={ties_lambda};trim={TIES_TRIM}"),
        test_all.per_task_accuracy(&ties_model)?,
    )?;
    push_row(
        "dare_task_arithmetic",
        format!("p={DARE_DROP};lambda={dare_lambda}"),
        test_all.per_task_accuracy(&dare_model)?,
    )?;
    push_row(
        "nps_fuse",
        format!("r={};gens={}", args.ratio, args.generations),
        test_all.per_task_accuracy(&fused_model)?,
    )?;

    // Accuracy-versus-storage points for the retention schemes that exist as
    // models here. TALL-mask bits appear in the report for reference only.
    let storage = storage_report(n as u64, d as u64, d as u64, 0, ratio)?;
    let find = |method: &str| -> &MethodReport {
        comparison
            .iter()
            .find(|r| r.method == method)
            .expect("comparison rows were just pushed")
    };
    let points = vec![
        StoragePoint {
            method: "fine_tuned".into(),
            bits: storage.fine_tuned_bits,
            mean_test_accuracy: find("fine_tuned").mean_test,
        },
        StoragePoint {
            method: "weight_average".into(),
            bits: storage.single_model_bits,
            mean_test_accuracy: find("weight_average").mean_test,
        },
        StoragePoint {
            method: "nps_fuse".into(),
            bits: storage.single_model_bits,
            mean_test_accuracy: find("nps_fuse").mean_test,
        },
        StoragePoint {
            method: "nps_bundle".into(),
            bits: storage.nps_bits,
            mean_test_accuracy: find("nps_prune").mean_test,
        },
    ];

    // Deterministic artifacts.
    let comparison_path = args.out_dir.join("comparison.csv");
    let sweep_path = args.out_dir.join("sweep.csv");
    let storage_path = args.out_dir.join("storage.csv");
    let results_path = args.out_dir.join("results.json");
    std::fs::write(&comparison_path, comparison_csv(&comparison, n))?;
    std::fs::write(&sweep_path, sweep_csv(&sweep))?;
    std::fs::write(&storage_path, storage_csv(&points))?;
    let results = BenchResults {
        config: BenchConfigEcho {
            tasks: n,
            d,
            ratio: args.ratio,
            subspaces: args.subspaces,
            generations: args.generations,
            seed: args.seed,
            pretrain_steps: args.pretrain_steps,
            finetune_steps: args.finetune_steps,
            sweep_ratios: args.sweep_ratios.clone(),
            ties_trim: TIES_TRIM,
            dare_drop_prob: DARE_DROP,
        },
        comparison: comparison.clone(),
        grid: GridWinners {
            task_arithmetic_lambda: ta_lambda,
            ties_lambda,
            dare_lambda,
        },
        fusion: fusion_summary,
        nps: NpsSummary {
            per_task_calibration_fitness: nps_fitness,
            evaluations: nps_evaluations,
        },
        sweep,
        storage: StorageSummary {
            report: storage,
            bundle_bytes,
            points,
        },
    };
    let mut results_json = serde_json::to_string_pretty(&results)
        .map_err(|e| Error::Parse(format!("results encoding failed: {e}")))?;
    results_json.push('\n');
    std::fs::write(&results_path, results_json)?;

    report::table(
        &["method", "settings", "mean_test", "normalized"],
        &comparison
            .iter()
            .map(|r| {
                vec![
                    r.method.clone(),
                    r.settings.clone(),
                    format!("{:.4}", r.mean_test),
                    format!("{:.4}", r.normalized),
                ]
            })
            .collect::<Vec<_>>(),
    );

    // Timing manifest, kept out of the deterministic artifact set.
    let mut manifest = RunManifest::new("bench");
    manifest
        .flag("tasks", args.tasks)
        .flag("ratio", args.ratio)
        .flag("generations", args.generations)
        .flag("subspaces", args.subspaces)
        .flag("seed", args.seed)
        .flag(
            "sweep-ratios",
            args.sweep_ratios
                .iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join(","),
        )
        .flag("pretrain-steps", args.pretrain_steps)
        .flag("finetune-steps", args.finetune_steps)
        .flag("out-dir", args.out_dir.display())
        .output(&comparison_path)
        .output(&sweep_path)
        .output(&storage_path)
        .output(&results_path)
        .output(&bundle_path)
        .record_history(&histories);
    manifest.seed = Some(args.seed);
    if let Some(path) = &args.config {
        manifest.flag("config", path.display()).input(path);
    }
    let manifest = manifest.finish(started);
    let manifest_path = args.out_dir.join("manifest.json");
    let mut manifest_json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Parse(format!("manifest encoding failed: {e}")))?;
    manifest_json.push('\n');
    std::fs::write(&manifest_path, manifest_json)?;

    let summary = BenchSummary {
        out_dir: args.out_dir.display().to_string(),
        files: vec![
            "comparison.csv".into(),
            "sweep.csv".into(),
            "storage.csv".into(),
            "results.json".into(),
            "bundle.npsb".into(),
            "manifest.json".into(),
        ],
        mean_test_accuracy: comparison
            .iter()
            .map(|r| (r.method.clone(), r.mean_test))
            .collect(),
    };
    report::emit(manifest, summary, args.out.as_deref())
}
