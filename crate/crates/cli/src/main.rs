use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use koopman_lift::config::ExperimentConfig;
use koopman_lift::pipeline::{self, Layout};
use koopman_lift::Error;

#[derive(Parser)]
#[command(name = "koopman-lift", version, about = "Subspace-separated Koopman models with direct encoding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate training and test trajectories.
    Gen(Common),
    /// Train the unstable, stable and aggregate observable networks.
    Train(Common),
    /// Build the five model bundles.
    Encode(Common),
    /// Multi-step prediction error table.
    Eval(Common),
    /// Instability-quotient grids and the ground-truth panel.
    Boundary(Common),
    /// Every stage in order.
    Run(Common),
    /// Print the fully resolved configuration as JSON.
    PrintConfig(Common),
}

#[derive(Args)]
struct Common {
    /// JSON configuration; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed, overriding `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn resolve(&self) -> Result<(ExperimentConfig, Layout), Error> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_json(&std::fs::read_to_string(path)?)?,
            None => ExperimentConfig::default(),
        };
        if let Some(out) = &self.out {
            cfg.output_dir = out.to_string_lossy().into_owned();
        }
        if cfg.output_dir.is_empty() {
            cfg.output_dir = "out".into();
        }
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        let layout = Layout::new(&cfg.output_dir);
        Ok((cfg, layout))
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::PrintConfig(c) => {
            let (cfg, _) = c.resolve()?;
            println!("{}", cfg.to_json());
        }
        Command::Gen(c) => {
            let (cfg, layout) = c.resolve()?;
            let generated = pipeline::cmd_gen(&cfg, &layout)?;
            log::info!("wrote {} training pairs", generated.dataset.len());
        }
        Command::Train(c) => {
            let (cfg, layout) = c.resolve()?;
            pipeline::cmd_train(&cfg, &layout)?;
        }
        Command::Encode(c) => {
            let (cfg, layout) = c.resolve()?;
            for (name, model) in pipeline::cmd_encode(&cfg, &layout)? {
                log::info!("{name}: order {}", model.order());
            }
        }
        Command::Eval(c) => {
            let (cfg, layout) = c.resolve()?;
            let table = pipeline::cmd_eval(&cfg, &layout)?;
            log::info!("{} error rows", table.rows.len());
        }
        Command::Boundary(c) => {
            let (cfg, layout) = c.resolve()?;
            for panel in pipeline::cmd_boundary(&cfg, &layout)?.panels {
                log::info!("{}: contrast {:.4}", panel.panel, panel.summary.contrast);
            }
        }
        Command::Run(c) => {
            let (cfg, layout) = c.resolve()?;
            pipeline::run_all(&cfg, &layout)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error kind={} msg={msg:?}", e.kind());
            ExitCode::FAILURE
        }
    }
}
