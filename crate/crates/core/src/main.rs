use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cilkit::checkpoint::Checkpoint;
use cilkit::harness::ablation::{parse_grid, run_ablation, sweep_memory};
use cilkit::harness::dataset::{generate_synthetic, write_feature_csv};
use cilkit::harness::report::{format_arm_table, write_run, RunSummary};
use cilkit::harness::{run_config, StreamConfig};
use cilkit::Result;

#[derive(Parser)]
#[command(name = "cilkit", version, about = "Class-incremental learning with curriculum ordering and informative replay")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one task stream and write results.jsonl, table.csv and checkpoint.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run every on/off combination of the named components.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "curriculum,iss")]
        grid: String,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long, default_value = "ablation")]
        out: PathBuf,
    },
    /// Run the stream at several retained fractions.
    SweepMemory {
        #[arg(long, value_delimiter = ',', required = true)]
        epsilons: Vec<f64>,
        /// Defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        /// Also run uniform-random selection at each budget.
        #[arg(long)]
        with_random: bool,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
    },
    /// Write a synthetic Gaussian-blob dataset as CSV.
    Synth {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        separation: f64,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<StreamConfig> {
    match path {
        Some(p) => StreamConfig::load(p),
        None => Ok(StreamConfig::default()),
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run { config, seed, out } => {
            let mut cfg = load_config(Some(&config))?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let run = run_config(&cfg)?;
            write_run(&out, &cfg, &run)?;
            Checkpoint::new(run.records.len(), run.model.clone(), run.memory.clone(), run.units.clone())
                .save(&out.join("checkpoint.json"))?;
            println!("{}", serde_json::to_string_pretty(&RunSummary::of(&run))?);
        }
        Command::Ablate { config, grid, seeds, out } => {
            let cfg = load_config(Some(&config))?;
            let rows = run_ablation(&cfg, &parse_grid(&grid)?, &seeds, Some(&out))?;
            print!("{}", format_arm_table(&rows));
        }
        Command::SweepMemory { epsilons, config, seeds, with_random, out } => {
            let cfg = load_config(config.as_deref())?;
            let rows = sweep_memory(&cfg, &epsilons, &seeds, with_random, Some(&out))?;
            print!("{}", format_arm_table(&rows));
        }
        Command::Synth { classes, dim, separation, samples, seed, out } => {
            let data = generate_synthetic(classes, samples, dim, separation, seed)?;
            write_feature_csv(&out, &data)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
