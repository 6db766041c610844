use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use s3kf_core::pipeline::{self, EngineKind, PipelineError, TrackInputs};
use s3kf_core::sim::{self, Scenario};

/// Panoramic multi-object tracking on the unit sphere.
///
/// Verbosity is read from S3KF_LOG (error, warn, info, debug).
#[derive(Debug, Parser)]
#[command(name = "s3kf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate ground truth and sensor streams for a scenario.
    Simulate {
        #[command(flatten)]
        scenario: OneScenario,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a tracker over recorded detection and LiDAR streams.
    Track {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        lidar: Option<PathBuf>,
        /// Tracker configuration (JSON); omitted fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "spherical")]
        engine: EngineKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a track log against ground truth.
    Eval {
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run both engines on the same scenarios and compare identities.
    ///
    /// Without --scenario or --canned, the four shipped dynamic scenarios are used.
    Compare {
        /// Scenario file; may be repeated.
        #[arg(long)]
        scenario: Vec<PathBuf>,
        /// Shipped scenario by name; may be repeated.
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(sim::CANNED))]
        canned: Vec<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a shipped scenario file.
    Scenario {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(sim::CANNED))]
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct OneScenario {
    /// Scenario file.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Shipped scenario by name.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(sim::CANNED))]
    canned: Option<String>,
}

impl OneScenario {
    fn load(&self) -> Result<Scenario, PipelineError> {
        match (&self.scenario, &self.canned) {
            (Some(p), _) => pipeline::load_scenario(p),
            (None, Some(name)) => Ok(sim::canned(name)?),
            (None, None) => unreachable!("clap requires one of the group"),
        }
    }
}

fn run(cmd: Command) -> Result<(), PipelineError> {
    match cmd {
        Command::Simulate { scenario, seed, out } => {
            let scenario = scenario.load()?;
            let run = pipeline::cmd_simulate(&scenario, seed, &out)?;
            log::info!("{}: {} frames, {} gt records", scenario.name, run.frames.len(), run.gt.len());
        }
        Command::Track { detections, lidar, config, engine, out } => {
            let cfg = pipeline::load_config(config.as_deref())?;
            let tracks = pipeline::cmd_track(&TrackInputs { detections, lidar }, &cfg, engine, &out)?;
            log::info!("{}: {} track records", engine.name(), tracks.len());
        }
        Command::Eval { tracks, gt, out } => {
            let report = pipeline::cmd_eval(&tracks, &gt, &out)?;
            println!("max_id_total {} switches {}", report.max_id_total, report.total_switches);
            for t in &report.targets {
                let rmse = t.rmse.map_or_else(|| "n/a".to_owned(), |r| format!("{r:.3}"));
                println!("target {}: rmse {rmse} m, coverage {:.3}, switches {}", t.target_id, t.coverage, t.switches);
            }
        }
        Command::Compare { scenario, canned, config, seed, out } => {
            let cfg = pipeline::load_config(config.as_deref())?;
            let mut scenarios = scenario.iter().map(|p| pipeline::load_scenario(p)).collect::<Result<Vec<_>, _>>()?;
            for name in &canned {
                scenarios.push(sim::canned(name)?);
            }
            if scenarios.is_empty() {
                for name in sim::DYNAMIC {
                    scenarios.push(sim::canned(name)?);
                }
            }
            let cmp = pipeline::cmd_compare(&scenarios, seed, &cfg, &out)?;
            println!("{:<24} {:>10} {:>10}", "scenario", "spherical", "pixel");
            for r in &cmp.rows {
                println!("{:<24} {:>10} {:>10}", r.scenario, r.spherical.max_id_total, r.pixel.max_id_total);
            }
            println!("{:<24} {:>10} {:>10}", "total", cmp.spherical_max_id_total, cmp.pixel_max_id_total);
        }
        Command::Scenario { name, out } => write_scenario(&name, &out)?,
    }
    Ok(())
}

fn write_scenario(name: &str, out: &Path) -> Result<(), PipelineError> {
    let text = sim::canned_source(name).ok_or_else(|| PipelineError::Config(format!("unknown scenario {name:?}")))?;
    s3kf_core::io::write_atomic(out, text.as_bytes())?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("S3KF_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
