//! Command-line experiment runner.

use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use irsim::bench::{
    figure_spec, run_experiment, summary_table, ExperimentSpec, OutputKind, Scheme, Sweep,
};
use irsim::config::SystemConfig;
use irsim::conic::adapter::{solve_problem_document, ProblemJson};
use irsim::conic::SolverTolerances;
use irsim::{Error, Result};

#[derive(Parser)]
#[command(
    name = "irsim",
    about = "Max-min rate experiments for a reflecting-surface-aided \
             joint-transmission downlink",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single-user preset: two base stations, one cell-edge user.
    SingleUser(RunArgs),
    /// Multiuser preset: three base stations, users dropped in a disc.
    MultiUser(RunArgs),
    /// Surface versus amplify-and-forward relay, direct links zeroed.
    RelayCompare(RunArgs),
    /// Named figure presets with their built-in sweeps.
    Figure {
        /// fig2|fig3|fig5|fig6|fig7|fig8|fig10|fig11
        name: String,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Solve one conic problem document (JSON in, JSON out).
    SolveConic {
        /// Input path; stdin when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Output path; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Channel realizations per sweep point.
    #[arg(long)]
    realizations: Option<usize>,
    /// Reflecting elements; a comma list sweeps the axis.
    #[arg(long)]
    m: Option<String>,
    /// Transmit antennas per base station; a comma list sweeps the axis.
    #[arg(long)]
    nt: Option<String>,
    /// Power budget in dBm; a comma list sweeps the axis.
    #[arg(long = "pmax-dbm")]
    pmax_dbm: Option<String>,
    /// Surface x-position in metres; a comma list sweeps the axis.
    #[arg(long = "irs-x")]
    irs_x: Option<String>,
    /// Quantizer resolution for the optimized scheme (bits).
    #[arg(long)]
    bits: Option<u32>,
    /// CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat key=value configuration file applied to the base config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    workers: Option<usize>,
    /// Comma list of schemes (optimized-continuous, quantized-b<N>,
    /// random-phase, no-irs, af-relay).
    #[arg(long)]
    schemes: Option<String>,
    /// Gaussian-randomization candidates per phase update.
    #[arg(long = "randomization-count")]
    randomization_count: Option<usize>,
    /// Record wall-clock timings (output is then not byte-reproducible).
    #[arg(long)]
    timing: bool,
    /// Print a plain-text summary table to stdout.
    #[arg(long)]
    summary: bool,
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| Error::Usage(format!("invalid {what} '{s}'"))))
        .collect()
}

impl RunArgs {
    /// Applies config file, scalar overrides, and at most one swept axis.
    fn apply(&self, spec: &mut ExperimentSpec) -> Result<()> {
        if let Some(path) = &self.config {
            spec.base.apply_file(path)?;
        }
        if let Some(seed) = self.seed {
            spec.seed = seed;
            spec.base.rng_seed = seed;
        }
        if let Some(realizations) = self.realizations {
            spec.realizations = realizations;
        }
        if let Some(count) = self.randomization_count {
            spec.base.randomization_count = count;
        }
        if let Some(bits) = self.bits {
            spec.base.phase_resolution = irsim::config::PhaseResolution::Bits(bits);
            // The explicit resolution replaces the optimized scheme with its
            // quantized counterpart.
            for scheme in spec.schemes.iter_mut() {
                if *scheme == Scheme::OptimizedContinuous {
                    *scheme = Scheme::Quantized(bits);
                }
            }
        }
        if let Some(schemes) = &self.schemes {
            spec.schemes = schemes
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::parse)
                .collect::<Result<Vec<_>>>()?;
        }

        let mut sweeps: Vec<Sweep> = Vec::new();
        if let Some(m) = &self.m {
            let values: Vec<usize> = parse_list(m, "element count")?;
            match values.as_slice() {
                [one] => spec.base.num_irs_elements = *one,
                _ => sweeps.push(Sweep::IrsElements(values)),
            }
        }
        if let Some(nt) = &self.nt {
            let values: Vec<usize> = parse_list(nt, "antenna count")?;
            match values.as_slice() {
                [one] => spec.base.tx_antennas = *one,
                _ => sweeps.push(Sweep::TxAntennas(values)),
            }
        }
        if let Some(pmax) = &self.pmax_dbm {
            let values: Vec<f64> = parse_list(pmax, "power")?;
            match values.as_slice() {
                [one] => spec.base.max_power_w = irsim::config::dbm_to_watts(*one),
                _ => sweeps.push(Sweep::PmaxDbm(values)),
            }
        }
        if let Some(irs_x) = &self.irs_x {
            let values: Vec<f64> = parse_list(irs_x, "position")?;
            match values.as_slice() {
                [one] => spec.base.irs_position[0] = *one,
                _ => sweeps.push(Sweep::IrsX(values)),
            }
        }
        match sweeps.len() {
            0 => {}
            1 => spec.sweep = sweeps.pop().expect("one sweep"),
            _ => {
                return Err(Error::Usage(
                    "at most one axis may carry a comma list of sweep values".into(),
                ))
            }
        }
        if let Some(out) = &self.out {
            spec.out = Some(out.clone());
        }
        spec.workers = self.workers.or(spec.workers);
        spec.include_timing = self.timing;
        Ok(())
    }
}

fn default_spec(preset: &str, base: SystemConfig) -> ExperimentSpec {
    ExperimentSpec {
        preset: preset.to_string(),
        base,
        sweep: Sweep::None,
        realizations: 50,
        schemes: Scheme::comparison_set(),
        seed: 1,
        out: None,
        workers: None,
        include_timing: false,
        zero_direct: false,
        output: OutputKind::Rates,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SingleUser(args) => {
            let mut spec = default_spec("single-user", SystemConfig::single_user());
            args.apply(&mut spec)?;
            execute(spec, args.summary)
        }
        Command::MultiUser(args) => {
            let mut spec = default_spec("multi-user", SystemConfig::multi_user());
            args.apply(&mut spec)?;
            execute(spec, args.summary)
        }
        Command::RelayCompare(args) => {
            let mut spec = default_spec("relay-compare", SystemConfig::multi_user());
            spec.schemes = vec![Scheme::OptimizedContinuous, Scheme::AfRelay];
            spec.zero_direct = true;
            spec.realizations = 20;
            args.apply(&mut spec)?;
            execute(spec, args.summary)
        }
        Command::Figure { name, args } => {
            let seed = args.seed.unwrap_or(1);
            let mut spec = figure_spec(&name, seed)?;
            args.apply(&mut spec)?;
            execute(spec, args.summary)
        }
        Command::SolveConic { input, output } => {
            let text = match input {
                Some(path) => std::fs::read_to_string(path)?,
                None => {
                    let mut buf = String::new();
                    std::io::stdin().read_to_string(&mut buf)?;
                    buf
                }
            };
            let doc: ProblemJson = serde_json::from_str(&text)
                .map_err(|e| Error::Adapter(format!("cannot parse problem document: {e}")))?;
            let solution = solve_problem_document(&doc, &SolverTolerances::default())?;
            let rendered = serde_json::to_string_pretty(&solution)
                .map_err(|e| Error::Adapter(format!("cannot render solution: {e}")))?;
            match output {
                Some(path) => std::fs::write(path, rendered)?,
                None => {
                    let mut stdout = std::io::stdout().lock();
                    stdout.write_all(rendered.as_bytes())?;
                    stdout.write_all(b"\n")?;
                }
            }
            Ok(())
        }
    }
}

fn execute(spec: ExperimentSpec, summary: bool) -> Result<()> {
    let results = run_experiment(&spec)?;
    let failures = results.rows.iter().filter(|r| r.status != "ok").count();
    if let Some(path) = &spec.out {
        eprintln!(
            "wrote {} rows to {} ({failures} failed runs)",
            if spec.output == OutputKind::Trajectories {
                results.trajectories.len()
            } else {
                results.rows.len()
            },
            path.display()
        );
    }
    if summary || spec.out.is_none() {
        print!("{}", summary_table(&results.rows));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Usage(message)) => {
            eprintln!("usage error: {message}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
