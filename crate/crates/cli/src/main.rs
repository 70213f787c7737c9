use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hint_core::datastore::Dataset;
use hint_core::experiment::{
    collect_dynamics_data, collect_perception_data, create_dir, evaluate, load_traces, render_svg, run_benchmark, train_dynamics_model,
    train_perception_model, write_eval, write_text, ExperimentConfig, Method,
};
use hint_core::models::{DynamicsModel, PerceptionModel, TrainReport};
use hint_core::sim::DynamicsVariant;
use hint_core::{Error, ErrorClass};

#[derive(Parser)]
#[command(name = "hint", version, about = "Collect data, train perception and dynamics models, and evaluate MPC planners")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Perception,
    Dynamics,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Hint,
    Hierarchy,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Hint => Method::Hint,
            MethodArg::Hierarchy => Method::Hierarchy,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the resolved config (defaults if no file is given).
    Config {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Collect a dataset into a directory.
    Collect {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "dynamics")]
        kind: Kind,
        /// Platform to drive; defaults to `variant` (dynamics) or the first
        /// perception source (perception).
        #[arg(long)]
        variant: Option<String>,
        /// Pool index; offsets the collection seed of perception sources.
        #[arg(long, default_value_t = 0)]
        source: usize,
        /// Use the held-out dynamics seed.
        #[arg(long)]
        held_out: bool,
    },
    /// Train a perception model on one or more pooled datasets.
    TrainPerception {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "data", required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a dynamics model on one or more datasets of the deployment variant.
    TrainDynamics {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "data", required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run S x T closed-loop trials with trained models.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        perception: PathBuf,
        #[arg(long)]
        dynamics: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Collect, train and evaluate both methods on every benchmark variant.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw the trajectories found under a directory as a top-down SVG.
    Plot {
        #[arg(long)]
        trajectories: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Other(_) => 1,
        _ => match e.class() {
            ErrorClass::Config => 2,
            ErrorClass::Io => 3,
            ErrorClass::Numeric => 4,
        },
    }
}

fn parse_variant(s: &str) -> Result<DynamicsVariant, Error> {
    s.parse().map_err(|e: hint_core::sim::UnknownVariant| hint_core::error::ConfigError::Invalid(e.to_string()).into())
}

/// `dir/name.ckpt` -> `dir/name.<suffix>`.
fn beside(ckpt: &Path, suffix: &str) -> PathBuf {
    let stem = ckpt.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into());
    ckpt.with_file_name(format!("{stem}.{suffix}"))
}

fn load_all(dirs: &[PathBuf]) -> Result<Vec<Dataset>, Error> {
    dirs.iter().map(|d| Dataset::load(d).map_err(Error::from)).collect()
}

fn report_training(what: &str, out: &Path, cfg: &ExperimentConfig, report: &TrainReport) -> Result<(), Error> {
    write_text(&beside(out, "loss.csv"), &report.to_csv())?;
    write_text(&beside(out, "config.toml"), &cfg.to_toml())?;
    let (first, last) = (report.initial(), report.last());
    println!(
        "{what}: {} train / {} validation windows, loss {:.6} -> {:.6}, wrote {}",
        report.train_windows,
        report.val_windows,
        first.train_loss,
        last.train_loss,
        out.display()
    );
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<(), Error> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn run(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Config { config } => {
            let cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => ExperimentConfig::default(),
            };
            print!("{}", cfg.to_toml());
        }
        Command::Collect { config, out, kind, variant, source, held_out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let ds = match kind {
                Kind::Perception => {
                    let v = match variant {
                        Some(v) => parse_variant(&v)?,
                        None => cfg.data.perception.variants[source.min(cfg.data.perception.variants.len() - 1)],
                    };
                    collect_perception_data(&cfg, v, source)?
                }
                Kind::Dynamics => {
                    let v = variant.as_deref().map(parse_variant).transpose()?.unwrap_or(cfg.variant);
                    collect_dynamics_data(&cfg, v, held_out)?
                }
            };
            let m = ds.save(&out)?;
            write_text(&out.join("config.toml"), &cfg.to_toml())?;
            println!(
                "collected {} episodes, {} steps ({} collisions, {} goals) on {} with {} into {}",
                m.episodes,
                m.steps,
                m.collisions,
                m.goals,
                m.variant,
                m.policy,
                out.display()
            );
        }
        Command::TrainPerception { config, data, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let sets = load_all(&data)?;
            let refs: Vec<&Dataset> = sets.iter().collect();
            let (model, report) = train_perception_model(&cfg, &refs)?;
            ensure_parent(&out)?;
            model.save(&out)?;
            report_training("perception", &out, &cfg, &report)?;
        }
        Command::TrainDynamics { config, data, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let sets = load_all(&data)?;
            let variant = sets[0].manifest()?.variant;
            let refs: Vec<&Dataset> = sets.iter().collect();
            let (model, report) = train_dynamics_model(&cfg, variant, &refs)?;
            ensure_parent(&out)?;
            model.save(&out)?;
            report_training(&format!("dynamics ({variant})"), &out, &cfg, &report)?;
        }
        Command::Evaluate { config, perception, dynamics, method, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let p = PerceptionModel::load(&perception)?;
            let d = DynamicsModel::load(&dynamics)?;
            let report = evaluate(&cfg, cfg.variant, &p, &d, method.into())?;
            write_eval(&out, &cfg, &report)?;
            println!(
                "{} on {}: {}/{} successful ({:.1}%), wrote {}",
                report.method.as_str(),
                report.variant,
                report.successes(),
                report.trials.len(),
                100.0 * report.success_rate(),
                out.display()
            );
        }
        Command::Benchmark { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = run_benchmark(&cfg, Some(&out))?;
            print!("{}", report.summary_csv());
        }
        Command::Plot { trajectories, out } => {
            let (world, traces) = load_traces(&trajectories)?;
            let svg = render_svg(&world, &traces)?;
            ensure_parent(&out)?;
            write_text(&out, &svg)?;
            println!("plotted {} trajectories into {}", traces.len(), out.display());
        }
    }
    Ok(())
}
