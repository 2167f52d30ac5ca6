//! `bloch-strip`: band, transmission and radiation diagnostics driven by one JSON config.

mod artifacts;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use bloch_strip::bloch_core::Side;
use bloch_strip::config::RunConfig;
use bloch_strip::exec::Execution;

use artifacts::OutDir;
use pipeline::{Session, StageError};

#[derive(Parser, Debug)]
#[command(
    name = "bloch-strip",
    version,
    about = "Bloch-wave transmission through a periodic half-strip"
)]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.directory`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 1 runs every stage sequentially.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Recorded in the manifest; no stage draws random numbers.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Band values on the frequency grid.
    Bands {
        #[arg(long, value_parser = parse_side)]
        side: Option<Side>,
    },
    /// Isofrequency contours with group velocities at the vertices.
    Isofreq {
        #[arg(long, value_parser = parse_side)]
        side: Option<Side>,
    },
    /// Poynting numbers and flux classes on the frequency grid.
    Poynting {
        #[arg(long, value_parser = parse_side)]
        side: Option<Side>,
    },
    /// Transmitted-mode prediction and refraction verdict.
    Transmit,
    /// Solves the truncated transmission problem and dumps the field.
    Simulate,
    /// Bloch coefficients of a field dump on the analysis boxes.
    Expand {
        #[arg(long)]
        field: Option<PathBuf>,
        #[arg(long, value_parser = parse_side)]
        side: Option<Side>,
        #[arg(long = "R")]
        r: Option<usize>,
    },
    /// Outgoing-wave metrics and energy balance of a field dump.
    CheckRadiation {
        #[arg(long)]
        field: Option<PathBuf>,
    },
    /// Discrete Bloch measures and their support report.
    BlochMeasure {
        #[arg(long)]
        field: Option<PathBuf>,
    },
    /// Joins a prediction with the measured peak.
    Validate {
        #[arg(long)]
        prediction: Option<PathBuf>,
        #[arg(long)]
        measure: Option<PathBuf>,
    },
    /// simulate, check-radiation, bloch-measure, transmit, validate.
    Full,
}

fn parse_side(s: &str) -> Result<Side, String> {
    s.parse().map_err(|e: bloch_strip::Error| e.to_string())
}

fn usage(msg: &str) -> ExitCode {
    eprintln!("error: {msg}");
    eprintln!("usage: bloch-strip --config PATH [--out DIR] [--threads N] [--seed N] <COMMAND>");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let Some(config_path) = cli.config.as_ref() else {
        return usage("--config is required");
    };
    let text = match std::fs::read(config_path) {
        Ok(t) => t,
        Err(e) => return usage(&format!("{}: {e}", config_path.display())),
    };
    let cfg = match RunConfig::from_json(&String::from_utf8_lossy(&text)) {
        Ok(c) => c,
        Err(e) => return usage(&format!("{}:\n{e}", config_path.display())),
    };
    let threads = cli.threads.unwrap_or(0);
    if cli.threads == Some(0) {
        return usage("--threads must be at least 1");
    }
    #[cfg(feature = "parallel")]
    if threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            return usage(&format!("thread pool: {e}"));
        }
    }
    let exec = if threads == 1 {
        Execution::Sequential
    } else {
        Execution::default()
    };
    let root = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.output.directory));
    let out = match OutDir::create(root.clone()) {
        Ok(o) => o,
        Err(e) => return usage(&format!("{}: {e}", root.display())),
    };
    let sha = artifacts::sha256_bytes(&text);
    let mut session = match Session::new(cfg, sha, out, exec, threads, cli.seed) {
        Ok(s) => s,
        Err(e) => return usage(&e.to_string()),
    };
    let _ = std::fs::remove_file(root.join("FAILED.json"));
    match run(&mut session, &cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(StageError { stage, error }) => {
            eprintln!("stage {stage} failed: {error}");
            let marker = json!({ "stage": stage, "error": error.to_string() });
            let _ = std::fs::write(root.join("FAILED.json"), format!("{marker:#}\n"));
            ExitCode::from(1)
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Bands { .. } => "bands",
        Command::Isofreq { .. } => "isofreq",
        Command::Poynting { .. } => "poynting",
        Command::Transmit => "transmit",
        Command::Simulate => "simulate",
        Command::Expand { .. } => "expand",
        Command::CheckRadiation { .. } => "check-radiation",
        Command::BlochMeasure { .. } => "bloch-measure",
        Command::Validate { .. } => "validate",
        Command::Full => "full",
    }
}

fn run(s: &mut Session, command: &Command) -> Result<(), StageError> {
    match command {
        Command::Bands { side } => s.bands(*side)?,
        Command::Isofreq { side } => s.isofreq(*side)?,
        Command::Poynting { side } => s.poynting(*side)?,
        Command::Transmit => s.transmit()?,
        Command::Simulate => s.simulate()?,
        Command::Expand { field, side, r } => s.expand(field.as_deref(), *side, *r)?,
        Command::CheckRadiation { field } => s.check_radiation(field.as_deref())?,
        Command::BlochMeasure { field } => s.bloch_measure(field.as_deref())?,
        Command::Validate {
            prediction,
            measure,
        } => s.validate(prediction.as_deref(), measure.as_deref())?,
        Command::Full => {
            s.simulate()?;
            s.check_radiation(None)?;
            s.bloch_measure(None)?;
            s.transmit()?;
            s.validate(None, None)?;
        }
    }
    s.manifest(command_name(command))
}
