use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use genread::datamodel::Strategy;
use genread::llm_backend::BackendKind;
use genread::pipeline::{
    client_for, cluster_pool, evaluate_records, generate_all, load_dataset, merge_all, read_all,
    read_jsonl, render_report, run, write_jsonl, DocumentRecord, PredictionRecord, RunConfig,
    RunStatus,
};

#[derive(Parser)]
#[command(
    name = "genread",
    version,
    about = "Generate-then-read question answering"
)]
struct Cli {
    /// JSON run configuration; flags below override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Process only the first N dataset examples.
    #[arg(long, global = true)]
    limit: Option<usize>,
    #[arg(long, global = true, value_enum)]
    backend: Option<Backend>,
    /// Concurrent backend requests.
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    strategy: Option<StrategyArg>,
    /// Documents generated per question (K).
    #[arg(long, global = true)]
    num_documents: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Http,
    Mock,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Greedy,
    Nucleus,
    HumanPrompt,
    Clustered,
}

#[derive(Subcommand)]
enum Command {
    /// Generate documents only; writes documents.jsonl.
    Generate,
    /// Build the pair pool and cluster it; writes clusters.json.
    Cluster,
    /// Answer questions from a documents file; writes predictions.jsonl.
    Read {
        /// Defaults to <output_dir>/documents.jsonl.
        #[arg(long)]
        documents: Option<PathBuf>,
    },
    /// Score documents and predictions; writes report.json and report.txt.
    Evaluate {
        #[arg(long)]
        documents: Option<PathBuf>,
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Interleave generated documents with the dataset's retrieved ones.
    Merge {
        /// Generated documents.jsonl to merge.
        #[arg(long)]
        generated: PathBuf,
    },
    /// End-to-end run.
    Run,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_json_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(l) = cli.limit {
        cfg.limit = Some(l);
    }
    if let Some(b) = cli.backend {
        cfg.backend = match b {
            Backend::Http => BackendKind::Http,
            Backend::Mock => BackendKind::Mock,
        };
    }
    if let Some(p) = cli.parallelism {
        cfg.parallelism = p;
    }
    if let Some(d) = &cli.dataset {
        cfg.dataset_path = d.clone();
    }
    if let Some(o) = &cli.output_dir {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = cli.strategy {
        cfg.strategy = match s {
            StrategyArg::Greedy => Strategy::Greedy,
            StrategyArg::Nucleus => Strategy::Nucleus,
            StrategyArg::HumanPrompt => Strategy::HumanPrompt,
            StrategyArg::Clustered => Strategy::Clustered,
        };
    }
    if let Some(k) = cli.num_documents {
        cfg.num_documents = k;
    }
    if cfg.dataset_path.as_os_str().is_empty() && !matches!(cli.command, Command::Cluster) {
        bail!("no dataset given: set dataset_path in the config or pass --dataset");
    }
    Ok(cfg)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn count_errors(errors: impl Iterator<Item = bool>) -> usize {
    errors.filter(|e| *e).count()
}

fn execute(cli: &Cli) -> Result<ExitCode> {
    let cfg = load_config(cli)?;
    let out = cfg.output_dir.clone();
    match &cli.command {
        Command::Run => {
            let outcome = run(&cfg)?;
            print!("{}", outcome.report_text);
            let s = &outcome.manifest.stats;
            info!(
                "{} requests, {} cache hits, {} network calls, {} ms",
                s.requests, s.cache_hits, s.network_calls, s.wall_clock_ms
            );
            println!("outputs written to {}", outcome.output_dir.display());
            Ok(match outcome.status {
                RunStatus::Success => ExitCode::SUCCESS,
                RunStatus::Partial => {
                    eprintln!("{} of {} examples failed", s.failed_examples, s.examples);
                    ExitCode::from(2)
                }
                RunStatus::Failed => {
                    eprintln!(
                        "run failed: {} of {} examples failed",
                        s.failed_examples, s.examples
                    );
                    ExitCode::from(1)
                }
            })
        }
        Command::Generate => {
            let client = client_for(&cfg);
            let (records, clusters) = generate_all(&cfg, &client)?;
            write_jsonl(&out.join("documents.jsonl"), &records)?;
            if let Some(c) = clusters {
                write_json(&out.join("clusters.json"), &serde_json::to_value(&c)?)?;
            }
            let failed = count_errors(records.iter().map(|r| r.error.is_some()));
            println!(
                "{} document records ({failed} failed) in {}",
                records.len(),
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Cluster => {
            let client = client_for(&cfg);
            let clusters = cluster_pool(&cfg, &client)?;
            let path = out.join("clusters.json");
            write_json(&path, &serde_json::to_value(&clusters)?)?;
            println!(
                "{} pairs in {} clusters, sizes {:?}; written to {}",
                clusters.pool.entries.len(),
                clusters.assignment.k,
                clusters.assignment.cluster_sizes(),
                path.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Read { documents } => {
            let data = load_dataset(&cfg.dataset_path, cfg.task, cfg.limit)?;
            let doc_path = documents
                .clone()
                .unwrap_or_else(|| out.join("documents.jsonl"));
            let docs: Vec<DocumentRecord> = read_jsonl(&doc_path)?;
            let client = client_for(&cfg);
            let preds = read_all(&cfg, &client, &data.examples, &docs)?;
            write_jsonl(&out.join("predictions.jsonl"), &preds)?;
            let failed = count_errors(preds.iter().map(|r| r.error.is_some()));
            println!(
                "{} predictions ({failed} failed) in {}",
                preds.len(),
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Evaluate {
            documents,
            predictions,
        } => {
            let data = load_dataset(&cfg.dataset_path, cfg.task, cfg.limit)?;
            let docs: Vec<DocumentRecord> = read_jsonl(
                &documents
                    .clone()
                    .unwrap_or_else(|| out.join("documents.jsonl")),
            )?;
            let preds: Vec<PredictionRecord> = read_jsonl(
                &predictions
                    .clone()
                    .unwrap_or_else(|| out.join("predictions.jsonl")),
            )?;
            let (report, skipped) = evaluate_records(&cfg, &data.examples, &docs, &preds)?;
            let (text, json) = render_report(&report);
            write_json(&out.join("report.json"), &json)?;
            fs::write(out.join("report.txt"), &text)?;
            print!("{text}");
            if skipped > 0 {
                eprintln!("{skipped} examples skipped (missing or failed records)");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Merge { generated } => {
            let data = load_dataset(&cfg.dataset_path, cfg.task, cfg.limit)?;
            let gen: Vec<DocumentRecord> = read_jsonl(generated)?;
            let merged = merge_all(&data.examples, &gen, cfg.merge_budget)?;
            write_jsonl(&out.join("documents.jsonl"), &merged)?;
            println!("{} merged records in {}", merged.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
