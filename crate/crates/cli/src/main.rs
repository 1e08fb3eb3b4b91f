use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use semictde_cli::config::ExperimentConfig;
use semictde_cli::{run, CliError};

#[derive(Parser)]
#[command(name = "semictde", version, about = "Region-based multi-agent signal control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    Toy,
    Full,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment file (TOML). Without it the profile defaults apply.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "toy")]
    profile: Profile,
    /// Overrides training.seeds, e.g. `--seeds 0,1,2`.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Overrides output.dir.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Overrides model.tag.
    #[arg(long)]
    model: Option<String>,
    /// Overrides training.episodes.
    #[arg(long)]
    episodes: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Warm-up run, alpha-cut partition and region count per alpha.
    Partition(Common),
    /// Train the configured model once per seed.
    Train(Common),
    /// Greedy evaluation of a checkpoint or baseline controller.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory written by `train`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Tune the regional reward coefficients of a RegionWide run.
    Tune(Common),
    /// Train and evaluate every model of the sweep list.
    Sweep(Common),
}

fn load(common: &Common) -> Result<(ExperimentConfig, Vec<u64>, PathBuf), CliError> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => match common.profile {
            Profile::Toy => ExperimentConfig::toy(),
            Profile::Full => ExperimentConfig::full(),
        },
    };
    if let Some(m) = &common.model {
        cfg.model.tag = m.clone();
    }
    if let Some(e) = common.episodes {
        cfg.training.episodes = e;
    }
    if let Some(s) = &common.seeds {
        cfg.training.seeds = s.clone();
    }
    if let Some(o) = &common.out {
        cfg.output.dir = o.clone();
    }
    cfg.validate()?;
    let seeds = cfg.training.seeds.clone();
    let out = cfg.output.dir.clone();
    Ok((cfg, seeds, out))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Partition(c) => {
            let (cfg, _, out) = load(&c)?;
            let (part, rows) = run::cmd_partition(&cfg, &out)?;
            println!("{} regions at alpha {} (hash {})", part.len(), cfg.partition.alpha, part.hash());
            for r in rows {
                println!("alpha {:>10.6}  regions {:>3}  largest {:>3}", r.alpha, r.regions, r.largest);
            }
        }
        Command::Train(c) => {
            let (cfg, seeds, out) = load(&c)?;
            for m in run::cmd_train(&cfg, &seeds, &out)? {
                let last = m.episodes.last();
                println!("{} seed {}: final awt {:.2}", m.model, m.seed, last.map_or(f64::NAN, |r| r.awt));
            }
        }
        Command::Eval { common, checkpoint } => {
            let (cfg, _, out) = load(&common)?;
            for r in run::cmd_eval(&cfg, checkpoint.as_deref(), &out)? {
                println!("{} {}: awt {:.2} ± {:.2}  aql {:.3} ± {:.3}", r.flow, r.model, r.awt_mean, r.awt_std, r.aql_mean, r.aql_std);
            }
        }
        Command::Tune(c) => {
            let (cfg, seeds, out) = load(&c)?;
            for m in run::cmd_tune(&cfg, &seeds, &out)? {
                println!("seed {}: lambda {:?}", m.seed, m.lambda);
            }
        }
        Command::Sweep(c) => {
            let (cfg, seeds, out) = load(&c)?;
            for r in run::cmd_sweep(&cfg, &seeds, &out)? {
                println!("{} {}: awt {:.2} ± {:.2} over {} runs", r.flow, r.model, r.awt_mean, r.awt_std, r.runs);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
