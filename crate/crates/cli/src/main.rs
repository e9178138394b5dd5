use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use plume2rate::config::RunConfig;
use plume2rate::pipeline;
use plume2rate::{Error, ErrorClass};

#[derive(Parser)]
#[command(name = "plume2rate", version, about = "Estimate point-source CO2 emission rates from plume imagery")]
struct Cli {
    /// Print the embedded default configuration as TOML and exit.
    #[arg(long)]
    print_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(clap::Args)]
struct Common {
    /// TOML (or JSON) run configuration; defaults are used for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Artifact directory; overrides the config file.
    #[arg(long, env = "PLUME2RATE_DATA_ROOT")]
    data_root: Option<PathBuf>,

    /// Global seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic plume scenes.
    Simulate(Common),
    /// Preprocess raw satellite-style fields into samples.
    Ingest(Common),
    /// Merge corpora, split by emission bin, fit normalization.
    BuildDataset(Common),
    /// Train one ensemble per architecture.
    Train(Common),
    /// Score ensembles on the test split.
    Evaluate(Common),
    /// Print the stored evaluation table and training summary.
    Report(Common),
    /// Run every stage in order.
    RunAll(Common),
}

fn load_config(c: &Common) -> Result<RunConfig, Error> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(root) = &c.data_root {
        cfg.data_root = Some(root.clone());
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Simulate(c) => {
            let s = pipeline::cmd_simulate(&load_config(&c)?)?;
            println!("simulated {} scenes, q range [{:.2}, {:.2}] Mt/yr", s.count, s.q_min, s.q_max);
        }
        Command::Ingest(c) => {
            let s = pipeline::cmd_ingest(&load_config(&c)?)?;
            println!(
                "ingested {} samples; skipped {} at grid edge, {} without proxy; degenerate plants: {}",
                s.samples,
                s.skipped_edge,
                s.skipped_no_proxy,
                s.degenerate_plants.len()
            );
        }
        Command::BuildDataset(c) => {
            let s = pipeline::cmd_build_dataset(&load_config(&c)?)?;
            println!("{} samples; train/valid/test = {:?}", s.total, s.split_sizes);
            print!("{}", s.histogram);
        }
        Command::Train(c) => {
            for m in pipeline::cmd_train(&load_config(&c)?)? {
                println!(
                    "{} {}: best epoch {} of {}, valid MAE {:.3} (initial {:.3})",
                    m.arch, m.loss, m.best_epoch, m.epochs_run, m.best_valid_mae, m.initial_valid_mae
                );
            }
        }
        Command::Evaluate(c) => print!("{}", pipeline::cmd_evaluate(&load_config(&c)?)?.table),
        Command::Report(c) => print!("{}", pipeline::cmd_report(&load_config(&c)?)?),
        Command::RunAll(c) => {
            let cfg = load_config(&c)?;
            pipeline::run_all(&cfg)?;
            print!("{}", pipeline::report_text(&pipeline::Layout::new(cfg.data_root()?))?);
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Config => 2,
        ErrorClass::Io => 3,
        ErrorClass::DataIntegrity => 4,
        ErrorClass::Other => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if cli.print_config {
        print!("{}", RunConfig::default().to_toml());
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("no command given; see --help");
        return ExitCode::from(2);
    };
    match run(command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            if let Error::UnbinnedSample(ids) = &e {
                for id in ids {
                    eprintln!("unbinned: {id}");
                }
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
