use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use digiq::cli::{self, CliError, PipelineOptions, Stage};
use digiq::config::{ActorLoss, TrainConfig};

#[derive(Parser)]
#[command(name = "digiq", version, about = "Offline RL lab for simulated device control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Overrides shared by every subcommand.
#[derive(clap::Args)]
struct Common {
    /// TOML run configuration; defaults apply to omitted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_traj: Option<usize>,
    #[arg(long, value_parser = ["bon", "awr", "reinforce"])]
    actor_loss: Option<String>,
    /// Comma-separated seed list, e.g. `0,1,2`.
    #[arg(long)]
    seeds: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out the behavior policy and write a dataset with pre-sampled candidates.
    Collect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Featurizer, critic, behavior clone, extraction and evaluation.
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Dataset file; collected from the config when omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
        /// Reuse verified checkpoints of the stages before this one.
        #[arg(long, value_parser = ["featurizer", "critic", "behavior_clone", "actor", "eval"])]
        resume: Option<String>,
    },
    /// Run an ablation (n_sweep, actor_loss, mc_vs_td, data_scaling, representation).
    Ablate {
        name: String,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve(common: &Common) -> Result<TrainConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(n) = common.n_traj {
        cfg.data.n_traj = n;
    }
    if let Some(l) = &common.actor_loss {
        cfg.actor_loss = l.parse::<ActorLoss>()?;
    }
    if let Some(list) = &common.seeds {
        cfg.seeds = cli::parse_seeds(list)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    cli::init_threads()?;
    match cli.command {
        Command::Collect { common, out, force } => {
            let cfg = resolve(&common)?;
            println!("{}", cli::cmd_collect(&cfg, &out, force)?);
        }
        Command::Pipeline {
            common,
            dataset,
            out,
            force,
            resume,
        } => {
            let cfg = resolve(&common)?;
            let resume = resume.map(|r| r.parse::<Stage>()).transpose()?;
            let s = cli::cmd_pipeline(&cfg, &out, &PipelineOptions { dataset, force, resume })?;
            for st in &s.reused {
                println!("reused {} checkpoint", st.name());
            }
            for m in &s.report.methods {
                println!("{}: success {:.3}", m.method, m.success.mean);
            }
            println!("report written to {}", out.join(cli::REPORT_DIR).display());
        }
        Command::Ablate { name, common, out } => {
            let cfg = resolve(&common)?;
            let seeds = cfg.seeds.clone();
            let s = cli::cmd_ablate(&name, &cfg, &out, &seeds)?;
            for m in &s.report.methods {
                println!("{}: success {:.3} ± {:.3}", m.method, m.success.mean, m.success.std);
            }
            for c in &s.checks {
                println!("PASS {} ({})", c.name, c.detail);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { cli::EXIT_USAGE as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("digiq: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
