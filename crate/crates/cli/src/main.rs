use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use topomode::config::{Overrides, RunConfig, RunKind};
use topomode::output::run_to_dir;
use topomode::{presets, Error, ErrorClass};

#[derive(Parser)]
#[command(name = "topomode", version, about = "Lyapunov-control preparation of topological edge modes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Eigenvalues and edge modes of the configured model
    Spectrum(RunArgs),
    /// Integrate one controlled trajectory
    Evolve(RunArgs),
    /// Monte Carlo robustness sweeps
    Sweep(RunArgs),
    /// Bundled figure configurations
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    List,
    /// Run a preset with the subcommand its `kind` names
    Run {
        name: String,
        #[command(flatten)]
        opts: Common,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    opts: Common,
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long = "record-every")]
    record_every: Option<usize>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            workers: self.workers,
            record_every: self.record_every,
        }
    }
}

fn execute(mut cfg: RunConfig, kind: RunKind, opts: &Common) -> Result<(), Error> {
    cfg.kind = kind;
    cfg.apply(opts.overrides())?;
    for f in run_to_dir(&cfg, kind, &opts.out)? {
        println!("{}", f.display());
    }
    Ok(())
}

fn from_file(a: &RunArgs, kind: RunKind) -> Result<(), Error> {
    execute(RunConfig::from_path_as(&a.config, Some(kind))?, kind, &a.opts)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Spectrum(a) => from_file(&a, RunKind::Spectrum),
        Command::Evolve(a) => from_file(&a, RunKind::Evolve),
        Command::Sweep(a) => from_file(&a, RunKind::Sweep),
        Command::Presets {
            action: PresetAction::List,
        } => {
            for (name, _) in presets::PRESETS {
                let cfg = presets::load(name)?;
                let kind = serde_json::to_value(cfg.kind).unwrap_or_default();
                println!(
                    "{name:<6} {:<9} {}",
                    kind.as_str().unwrap_or(""),
                    cfg.description.unwrap_or_default()
                );
            }
            Ok(())
        }
        Command::Presets {
            action: PresetAction::Run { name, opts },
        } => {
            let cfg = presets::load(&name)?;
            let kind = cfg.kind;
            execute(cfg, kind, &opts)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Numerical => 3,
                ErrorClass::Model => 4,
            })
        }
    }
}
