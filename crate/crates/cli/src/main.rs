//! `nps`: prune fine-tuned task vectors with searched subspace weights, then
//! transfer, merge, or compactly store the results.

use clap::{Parser, Subcommand};
use nps_core::Error;

mod bench;
mod commands;
mod config;
mod report;

#[derive(Parser)]
#[command(name = "nps")]
#[command(
    about = "Task-vector pruning by subspace-weight search, with merging and compressed storage"
)]
#[command(version)]
struct Cli {
    /// Cap the candidate-evaluation worker pool (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Subtract a pre-trained checkpoint from a fine-tuned one.
    Diff(commands::DiffArgs),
    /// Keep the top fraction of a task vector by magnitude and rebuild the model.
    Prune(commands::PruneArgs),
    /// Search subspace weights that maximize calibration accuracy, then prune.
    Search(commands::SearchArgs),
    /// Merge several fine-tuned models into one multi-task model.
    Merge(commands::MergeArgs),
    /// Pack a base model plus pruned task vectors into one bundle file.
    Compress(commands::CompressArgs),
    /// Rebuild a task's full model from a bundle.
    Reconstruct(commands::ReconstructArgs),
    /// Score a model on the synthetic benchmark tasks.
    Eval(commands::EvalArgs),
    /// Compare storage bit costs of checkpoint-retention schemes.
    StorageReport(commands::StorageReportArgs),
    /// Run the whole synthetic pipeline and emit comparison tables.
    Bench(bench::BenchArgs),
}

/// Distinct exit codes per failure class: 2 bad arguments, 3 file or parse
/// problems, 4 structural mismatches, 5 numeric failures.
fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) => 2,
        Error::Io(_)
        | Error::BadMagic { .. }
        | Error::UnsupportedVersion { .. }
        | Error::Truncated(_)
        | Error::NonFinite { .. }
        | Error::Parse(_)
        | Error::UnknownTask(_) => 3,
        Error::Mismatch(_) => 4,
        Error::Numeric(_) => 5,
    }
}

fn run(command: &Command) -> nps_core::Result<()> {
    match command {
        Command::Diff(args) => commands::diff(args),
        Command::Prune(args) => commands::prune_cmd(args),
        Command::Search(args) => commands::search(args),
        Command::Merge(args) => commands::merge(args),
        Command::Compress(args) => commands::compress_cmd(args),
        Command::Reconstruct(args) => commands::reconstruct(args),
        Command::Eval(args) => commands::eval(args),
        Command::StorageReport(args) => commands::storage_report_cmd(args),
        Command::Bench(args) => bench::bench(args),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Some(workers) = cli.workers {
        // Failure here means a pool already exists; the run stays correct
        // because candidate results are gathered in submission order anyway.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
    let code = match run(&cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    };
    std::process::exit(code);
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_internally_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn failure_classes_map_to_distinct_exit_codes() {
        assert_eq!(exit_code(&Error::InvalidArgument("x".into())), 2);
        assert_eq!(
            exit_code(&Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "missing"
            ))),
            3
        );
        assert_eq!(
            exit_code(&Error::BadMagic {
                expected: *b"NPSC",
                found: *b"JUNK"
            }),
            3
        );
        assert_eq!(exit_code(&Error::Truncated("short".into())), 3);
        assert_eq!(exit_code(&Error::Parse("bad".into())), 3);
        assert_eq!(exit_code(&Error::UnknownTask("t".into())), 3);
        assert_eq!(exit_code(&Error::Mismatch("shape".into())), 4);
        assert_eq!(exit_code(&Error::Numeric("nan".into())), 5);
    }

    #[test]
    fn seed_flags_read_the_env_default() {
        let cli = Cli::try_parse_from([
            "nps",
            "search",
            "--pre",
            "a",
            "--fine-tuned",
            "b",
            "--config",
            "c",
            "--ratio",
            "0.05",
            "--output",
            "d",
            "--seed",
            "9",
        ])
        .unwrap();
        match cli.command {
            Command::Search(args) => assert_eq!(args.seed, 9),
            _ => panic!("expected search"),
        }
    }
}
