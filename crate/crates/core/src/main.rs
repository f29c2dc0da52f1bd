use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use eivid::config::ExperimentConfig;
use eivid::harness::{run_dynamic_snr, run_recursive_compare, run_snr_sweep};
use eivid::output::{pcrlb_csv, snr_csv, sweep_csv, trace_csv, write_file, RunManifest};
use eivid::Error;

/// Resistance identification from noisy voltage and current: Monte-Carlo experiments.
#[derive(Parser)]
#[command(name = "eivid", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Batch LS/TLS over an SNR grid; writes sweep.csv.
    SweepSnr(RunArgs),
    /// Recursive estimators on a fixed-noise stream; writes trace.csv.
    Recursive(RunArgs),
    /// Recursive estimators on a pulsed profile; writes dynamic.csv, snr.csv and pcrlb.csv.
    Dynamic(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Config file, or the name of a shipped recipe (fig2 … fig9).
    #[arg(long)]
    config: PathBuf,
    /// Output directory [default: $EIVID_OUT, else ./out].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Monte-Carlo runs.
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

fn execute(name: &str, args: &RunArgs) -> eivid::Result<Vec<String>> {
    let started = chrono::Utc::now();
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(runs) = args.runs {
        cfg.runs = runs;
    }
    cfg.validate()?;

    let out = args
        .out
        .clone()
        .or_else(|| std::env::var_os("EIVID_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));

    let files: Vec<(&str, String)> = match name {
        "sweep-snr" => vec![("sweep.csv", sweep_csv(&run_snr_sweep(&cfg)?))],
        "recursive" => vec![("trace.csv", trace_csv(&run_recursive_compare(&cfg)?, false))],
        _ => {
            let t = run_dynamic_snr(&cfg)?;
            vec![("dynamic.csv", trace_csv(&t, true)), ("snr.csv", snr_csv(&t)?), ("pcrlb.csv", pcrlb_csv(&t))]
        }
    };

    std::fs::create_dir_all(&out)?;
    let entries = files.iter().map(|(f, text)| write_file(&out, f, text)).collect::<eivid::Result<Vec<_>>>()?;
    RunManifest::new(name, &cfg, started, entries.clone()).write(&out)?;
    Ok(entries.iter().map(|e| format!("{}  {}", e.sha256, out.join(&e.name).display())).collect())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Command::SweepSnr(a) => ("sweep-snr", a),
        Command::Recursive(a) => ("recursive", a),
        Command::Dynamic(a) => ("dynamic", a),
    };
    match execute(name, args) {
        Ok(lines) => {
            if !args.quiet {
                lines.iter().for_each(|l| println!("{l}"));
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_input_error() {
        2
    } else {
        3
    }
}
