mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Quantized RNN-T toolkit: model generation, quantization, decoding and
/// accelerator simulation.
#[derive(Debug, Parser)]
#[command(name = "qrnnt", version)]
struct Cli {
    /// Also write the JSON run report to this file.
    #[arg(long, global = true)]
    report: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a seeded-random real32 checkpoint.
    InitModel(InitModel),
    /// Quantize a checkpoint with a scheme and print its size report.
    Quantize(Quantize),
    /// Beam-search decode a feature file.
    Decode(Decode),
    /// Replay a workload trace on the accelerator model.
    Simulate(Simulate),
    /// Simulate synthetic full-size workloads over several beam widths.
    Sweep(Sweep),
    /// Write synthetic features and toy reference transcripts.
    GenData(GenData),
}

#[derive(Debug, Args)]
struct InitModel {
    /// Architecture file; the built-in default architecture when omitted.
    #[arg(long)]
    arch: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output checkpoint for the transducer.
    #[arg(long)]
    out: PathBuf,
    /// Also write an external LM checkpoint (seeded with seed + 1).
    #[arg(long)]
    lm_ext_out: Option<PathBuf>,
    /// Also write a source-domain LM checkpoint (seeded with seed + 2).
    #[arg(long)]
    lm_src_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Quantize {
    #[arg(long)]
    ckpt: PathBuf,
    /// Scheme file, or `default` / `w2a4` for the mixed scheme generated for
    /// the checkpoint's architecture.
    #[arg(long)]
    scheme: String,
    /// Feature file for calibrating data-dependent quantizers.
    #[arg(long)]
    calib: Option<PathBuf>,
    /// Transcripts (one per line) for label-driven layers; a sweep over the
    /// vocabulary is used when omitted.
    #[arg(long)]
    calib_text: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct Decode {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    lm_ext: Option<PathBuf>,
    #[arg(long)]
    lm_src: Option<PathBuf>,
    #[arg(long)]
    features: PathBuf,
    /// Decode settings file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=16))]
    beam: Option<u32>,
    #[arg(long, allow_negative_numbers = true)]
    mu: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    rho: Option<f64>,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    max_symbols_per_frame: Option<u32>,
    /// Recompute prefix states instead of caching them.
    #[arg(long)]
    no_cache: bool,
    /// Reference transcripts, one per utterance.
    #[arg(long)]
    refs: Option<PathBuf>,
    /// Write the merged workload trace (JSON) here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write hypotheses, one per line, here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Simulate {
    #[arg(long)]
    trace: PathBuf,
    /// Preset name (`bw32`, `bw64`) or config file.
    #[arg(long, default_value = "bw32")]
    hw: String,
    /// Plot-ready CSV: beam,component,seconds,rtf.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Beam width recorded in the CSV.
    #[arg(long)]
    beam: Option<u32>,
    /// Baseline hardware for an acceleration report.
    #[arg(long)]
    baseline_hw: Option<String>,
}

#[derive(Debug, Args)]
struct Sweep {
    /// Beam widths: a range `1..16` (inclusive) or a list `1,4,16`.
    #[arg(long, default_value = "1..16")]
    beams: String,
    #[arg(long)]
    arch: Option<PathBuf>,
    /// real16, int8 or mixed4.
    #[arg(long, default_value = "mixed4")]
    precision: String,
    /// Leave both language models out of the workload.
    #[arg(long)]
    no_lms: bool,
    #[arg(long, default_value = "bw32")]
    hw: String,
    /// Workload profile file; built-in defaults when omitted.
    #[arg(long)]
    workload: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenData {
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    utterances: u32,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    frames: u32,
    #[arg(long, default_value_t = 340, value_parser = clap::value_parser!(u32).range(1..))]
    dim: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Toy reference transcripts, one per utterance.
    #[arg(long)]
    refs_out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("E_USAGE: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let hint = match &e {
                qrnnt::Error::MissingCalibration { .. } => " (pass --calib <features.qft>)",
                _ => "",
            };
            eprintln!("{}: {}{hint}", e.code(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
