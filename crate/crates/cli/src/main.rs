//! `imdcl`: pretraining, adaptation runs, ablations and gradient checks on
//! the synthetic cross-domain benchmark.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use imdcl::checks::{gradient_suite, GRADIENT_TOLERANCE};
use imdcl::config::{load_config, parse_config, to_text};
use imdcl::data::write_csv;
use imdcl::model::{load_checkpoint, save_checkpoint, SourceModel};
use imdcl::pipeline::{
    lambda_study, prepare, run_ablation, run_experiment, write_csv_report, write_json_report,
    write_trajectories, ComparisonTable, ExperimentConfig, Method, RunReport,
};
use imdcl::{data::make_domain_pair, rng::derive_seed, Error};

#[derive(Parser, Debug)]
#[command(name = "imdcl", version, about = "Source-free few-shot adaptation on synthetic shifted domains")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// `key=value` override, applied after the file. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Where reports, trajectories and checkpoints go.
    #[arg(long, global = true, env = "IMDCL_OUTPUT_DIR", default_value = ".")]
    output_dir: PathBuf,

    /// Parallel episodes; shorthand for `--set jobs=J`.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the source model and write `checkpoint.json`.
    Pretrain,
    /// Adapt over episodes with the configured method.
    Adapt {
        /// Start from a saved source model instead of pretraining.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare all five methods on paired episodes.
    Ablate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare the three λ_N modes on paired episodes.
    LambdaStudy {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Check analytic gradients of every loss against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
    /// Write the source and target datasets as CSV.
    ExportData,
}

fn resolve(cli: &Cli) -> imdcl::Result<ExperimentConfig> {
    let mut overrides = cli.overrides.clone();
    if let Some(j) = cli.jobs {
        overrides.push(format!("jobs={j}"));
    }
    match &cli.config {
        Some(p) => load_config(p, &overrides),
        None => parse_config("", &overrides),
    }
}

fn source_model(config: &ExperimentConfig, checkpoint: Option<&Path>) -> imdcl::Result<(SourceModel, imdcl::data::Dataset)> {
    let pair = make_domain_pair(&config.domain, derive_seed(config.seed, "domain", 0))?;
    match checkpoint {
        Some(path) => Ok((load_checkpoint(path)?, pair.target_pool)),
        None => {
            let b = prepare(config)?;
            eprintln!("source train accuracy {:.4}", b.pretrained.train_accuracy);
            Ok((b.pretrained.model, b.pair.target_pool))
        }
    }
}

fn print_row(r: &RunReport) {
    println!(
        "{:<18} {:>7.2} ± {:<5.2} ({} episodes)",
        r.tag,
        100.0 * r.mean,
        100.0 * r.ci95,
        r.episodes
    );
}

fn emit_table(table: &ComparisonTable, out: &Path) -> imdcl::Result<()> {
    write_json_report(table, &out.join("report.json"))?;
    write_csv_report(&table.rows, &out.join("report.csv"))?;
    write_trajectories(&table.rows, &out.join("trajectory.jsonl"))?;
    for r in &table.rows {
        print_row(r);
    }
    for d in &table.deltas {
        println!(
            "  {} − {}: {:+.2} ± {:.2}",
            d.b,
            d.a,
            100.0 * d.mean,
            100.0 * d.ci95
        );
    }
    Ok(())
}

fn run(cli: &Cli) -> imdcl::Result<()> {
    let config = resolve(cli)?;
    print!("{}", to_text(&config));
    println!();
    let out = &cli.output_dir;
    std::fs::create_dir_all(out)?;

    match &cli.command {
        Command::Pretrain => {
            let b = prepare(&config)?;
            save_checkpoint(&b.pretrained.model, &out.join("checkpoint.json"))?;
            println!(
                "source train accuracy {:.4}, final loss {:.4}",
                b.pretrained.train_accuracy, b.pretrained.final_loss
            );
        }
        Command::Adapt { checkpoint } => {
            let (model, pool) = source_model(&config, checkpoint.as_deref())?;
            let report = run_experiment(&model, &pool, &config)?;
            write_json_report(&report, &out.join("report.json"))?;
            write_csv_report(std::slice::from_ref(&report), &out.join("report.csv"))?;
            write_trajectories(std::slice::from_ref(&report), &out.join("trajectory.jsonl"))?;
            print_row(&report);
        }
        Command::Ablate { checkpoint } => {
            let (model, pool) = source_model(&config, checkpoint.as_deref())?;
            emit_table(&run_ablation(&model, &pool, &config, &Method::ALL)?, out)?;
        }
        Command::LambdaStudy { checkpoint } => {
            let (model, pool) = source_model(&config, checkpoint.as_deref())?;
            emit_table(&lambda_study(&model, &pool, &config)?, out)?;
        }
        Command::Gradcheck { instances } => {
            let checks = gradient_suite(*instances, config.seed)?;
            for c in &checks {
                println!(
                    "{:<26} max rel error {:.3e} over {} instances  {}",
                    c.name,
                    c.max_rel_error,
                    c.instances,
                    if c.passed { "ok" } else { "FAIL" }
                );
            }
            if let Some(bad) = checks.iter().find(|c| !c.passed) {
                return Err(Error::NumericalAbort(format!(
                    "{} gradient error {:.3e} exceeds {GRADIENT_TOLERANCE:e}",
                    bad.name, bad.max_rel_error
                )));
            }
        }
        Command::ExportData => {
            let pair = make_domain_pair(&config.domain, derive_seed(config.seed, "domain", 0))?;
            write_csv(&pair.source_data, &out.join("source.csv"))?;
            write_csv(&pair.target_pool, &out.join("target.csv"))?;
            println!(
                "wrote {} source and {} target rows",
                pair.source_data.len(),
                pair.target_pool.len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::NumericalAbort(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
