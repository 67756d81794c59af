use std::path::{Path, PathBuf};
use std::process::ExitCode;

use beamvi::config::{emit, parse_config, preset, ScenarioConfig};
use beamvi::output::read_trajectory;
use beamvi::scenario::{reconstruct_into, run_scenario, CliError, Reconstruction};
use beamvi_core::integrators::cfl_check;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Lie group variational integrators for geometrically exact beams.
///
/// Set BEAMVI_THREADS to bound the worker pool (1 runs sequentially).
#[derive(Parser)]
#[command(name = "beamvi", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Scenario file (TOML).
    config: Option<PathBuf>,
    /// Built-in scenario instead of a file.
    #[arg(long)]
    preset: Option<String>,
}

impl Source {
    fn load(&self) -> Result<ScenarioConfig, CliError> {
        let cfg = match (&self.config, &self.preset) {
            (Some(path), _) => parse_config(path)?,
            (None, Some(name)) => preset(name)?,
            (None, None) => unreachable!("clap requires one source"),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Space,
    Time,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its artifacts.
    Run {
        #[command(flatten)]
        source: Source,
        /// Output directory (default: the one named in the scenario).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the time step with the dilational stability estimate.
    CheckCfl {
        #[command(flatten)]
        source: Source,
    },
    /// March from the first two slices of a stored trajectory and compare.
    Reconstruct {
        /// trajectory.csv written by `run`.
        trajectory: PathBuf,
        #[arg(long, value_enum)]
        direction: DirectionArg,
        /// Scenario file supplying material and solver settings.
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a built-in scenario as TOML.
    EmitPreset { name: String },
}

fn configure_threads() {
    let Ok(v) = std::env::var("BEAMVI_THREADS") else {
        return;
    };
    match v.parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
            {
                log::warn!("cannot size the thread pool: {e}");
            }
        }
        _ => log::warn!("ignoring BEAMVI_THREADS={v}: expected a positive integer"),
    }
}

fn out_dir(out: &Option<PathBuf>, cfg: &ScenarioConfig) -> PathBuf {
    out.clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.output.dir))
}

fn run(cmd: Command) -> Result<i32, CliError> {
    match cmd {
        Command::Run { source, out } => {
            let cfg = source.load()?;
            let dir = out_dir(&out, &cfg);
            let outcome = run_scenario(&cfg, &dir)?;
            for f in &outcome.files {
                println!("{}", f.display());
            }
            if let Some(e) = &outcome.primary.failure {
                eprintln!("error: {e}");
            }
            if let Some((r, _)) = &outcome.reconstruction {
                if let Some(e) = &r.failure {
                    eprintln!("error: reconstruction: {e}");
                }
            }
            Ok(outcome.exit_code())
        }
        Command::CheckCfl { source } => {
            let cfg = source.load()?;
            let r = cfl_check(&cfg.params()?);
            println!("wave_speed = {:.6e} m/s", r.wave_speed);
            println!("dt = {:.6e} s", r.dt);
            println!("dt_suggested = {:.6e} s", r.dt_suggested);
            println!("exceeds = {}", r.exceeds);
            Ok(0)
        }
        Command::Reconstruct {
            trajectory,
            direction,
            config,
            preset: name,
            out,
        } => {
            let cfg = Source {
                config,
                preset: name,
            }
            .load()?;
            let field = read_trajectory(&trajectory)?;
            let params = cfg.params()?;
            let dir =
                out.unwrap_or_else(|| trajectory.parent().unwrap_or(Path::new(".")).to_path_buf());
            std::fs::create_dir_all(&dir).map_err(|source| CliError::Io {
                path: dir.clone(),
                source,
            })?;
            let recon = match direction {
                DirectionArg::Space => Reconstruction::Space,
                DirectionArg::Time => Reconstruction::Time,
            };
            let mut files = Vec::new();
            let (run, cross) = reconstruct_into(&field, &params, recon, &cfg, &dir, &mut files)?;
            for f in &files {
                println!("{}", f.display());
            }
            println!(
                "max_error_excluding_edges = {:.6e} m",
                cross.max_error_kept()
            );
            match &run.failure {
                Some(e) => {
                    eprintln!("error: {e}");
                    Ok(2)
                }
                None => Ok(0),
            }
        }
        Command::EmitPreset { name } => {
            print!("{}", emit(&preset(&name)?));
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    configure_threads();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
