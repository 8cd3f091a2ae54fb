//! `ppot`: runs the transport, entropy and heat-flow harnesses from the
//! command line and writes CSV or JSON with a metadata header.

mod commands;
mod models;
mod output;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use commands::*;
use output::{Format, Meta};

#[derive(Debug, Parser)]
#[command(name = "ppot", version, about = "Transport, entropy and heat-flow experiments for stationary point processes")]
struct Cli {
    /// master seed (required)
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// write here instead of standard output
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    /// worker threads; results do not depend on it
    #[arg(long, global = true, env = "PPOT_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
enum Command {
    /// Sample configurations of a model on a centred box
    Sample(SampleArgs),
    /// Transport cost per volume of a coupling along a sequence of boxes
    Cost(CostArgs),
    /// Constant-speed check of displacement interpolation
    Geodesic(GeodesicArgs),
    /// Boundary-layer modification of coupled realizations
    Modify(ModifyArgs),
    /// Specific relative entropy with respect to the unit Poisson process
    Entropy(EntropyArgs),
    /// Specific Fisher information of perturbed grids
    Fisher(FisherArgs),
    /// Run Brownian motion on sampled configurations
    Evolve(EvolveArgs),
    /// Evolution variational inequality checks
    Evi(EviArgs),
    /// Cost of a coupling before and after heating both sides
    Contraction(ContractionArgs),
    /// Entropy against transport distance times root Fisher information
    Hwi(HwiArgs),
    /// Entropy decay of one particle under reflected heat flow
    Decay(DecayArgs),
    /// Run the acceptance battery and print a pass/fail table
    Validate(ValidateArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::Sample(_) => "sample",
            Self::Cost(_) => "cost",
            Self::Geodesic(_) => "geodesic",
            Self::Modify(_) => "modify",
            Self::Entropy(_) => "entropy",
            Self::Fisher(_) => "fisher",
            Self::Evolve(_) => "evolve",
            Self::Evi(_) => "evi",
            Self::Contraction(_) => "contraction",
            Self::Hwi(_) => "hwi",
            Self::Decay(_) => "decay",
            Self::Validate(_) => "validate",
        }
    }

    fn run(&self, seed: u64) -> anyhow::Result<output::Payload> {
        match self {
            Self::Sample(a) => sample(a, seed),
            Self::Cost(a) => cost(a, seed),
            Self::Geodesic(a) => geodesic(a, seed),
            Self::Modify(a) => modify(a, seed),
            Self::Entropy(a) => entropy(a, seed),
            Self::Fisher(a) => fisher(a),
            Self::Evolve(a) => evolve(a, seed),
            Self::Evi(a) => evi(a, seed),
            Self::Contraction(a) => contraction(a, seed),
            Self::Hwi(a) => hwi(a, seed),
            Self::Decay(a) => decay(a),
            Self::Validate(a) => validate(a, seed),
        }
    }
}

const EXIT_CONFIG: u8 = 1;
const EXIT_VIOLATED: u8 = 2;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let Some(seed) = cli.seed else {
        eprintln!("error: --seed is required");
        return ExitCode::from(EXIT_CONFIG);
    };
    let workers = cli.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let payload = match ppot::parallel::with_workers(workers, || cli.command.run(seed)) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let config = serde_json::json!({ "format": cli.format, "args": &cli.command });
    let meta = Meta::new(cli.command.name(), seed, config);
    let written = match &cli.output {
        Some(path) => File::create(path).map_err(anyhow::Error::from).and_then(|f| {
            let mut w = BufWriter::new(f);
            output::write(&mut w, cli.format, &meta, &payload)?;
            Ok(w.flush()?)
        }),
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            output::write(&mut w, cli.format, &meta, &payload)
        }
    };
    if let Err(e) = written {
        eprintln!("error: {e:#}");
        return ExitCode::from(EXIT_CONFIG);
    }
    if payload.violated {
        eprintln!("check violated");
        return ExitCode::from(EXIT_VIOLATED);
    }
    ExitCode::SUCCESS
}
