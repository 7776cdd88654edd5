//! `moods` subcommands.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use moods_core::analysis::{Metric, Weighting};
use moods_core::platform::{Platform, PlatformConfig};
use moods_core::replay::{replay_study, ReplayOptions};
use moods_core::sim::{simulate, write_dataset, SimConfig};
use moods_core::viz::write_bundle;
use serde::Serialize;

use crate::api::{serve, system_clock, AppState};
use crate::config::GatewayConfig;
use crate::error::{GatewayError, Result};
use crate::reports::{run_analysis, AnalysisKind, AnalysisParams};

#[derive(Debug, Parser)]
#[command(name = "moods", version, about = "Sensor-triggered stress journaling platform")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a cohort and write it in the storage layout the service reads.
    Simulate {
        /// Simulator TOML; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the HTTP API over a data directory.
    Serve {
        #[arg(long, env = "MOODS_DATA_DIR")]
        data: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        /// Gateway TOML with platform settings and tokens.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run one cohort analysis over a data directory.
    Analyze {
        kind: AnalysisKind,
        #[arg(long = "in", env = "MOODS_DATA_DIR")]
        input: PathBuf,
        /// Report file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        params: AnalysisParams,
    },
    /// Reflection chart bundles.
    Viz {
        #[command(subcommand)]
        command: VizCommand,
    },
    /// Simulate, persist, reload, build every weekly bundle and analyse.
    ReplayStudy {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Empty directory for the dataset; a temporary one when omitted.
        #[arg(long, env = "MOODS_DATA_DIR")]
        data: Option<PathBuf>,
        /// Full outcome as JSON; a summary is printed either way.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write every weekly bundle under this directory.
        #[arg(long)]
        bundles: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum VizCommand {
    /// Write one participant's charts for a week plus a manifest.
    Build {
        #[arg(long)]
        participant: String,
        #[arg(long)]
        week: u32,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "MOODS_DATA_DIR")]
        data: PathBuf,
    },
}

fn sim_config(path: Option<&Path>) -> Result<SimConfig> {
    Ok(path.map(SimConfig::load).transpose()?.unwrap_or_default())
}

fn open_existing(dir: &Path, config: PlatformConfig) -> Result<Platform> {
    if !dir.is_dir() {
        return Err(GatewayError::BadRequest(format!("data directory {} does not exist", dir.display())));
    }
    Ok(Platform::open(dir, config)?)
}

fn write_json(out: Option<&Path>, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(p, text)?;
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = sim_config(config.as_deref())?;
            let sim = simulate(&cfg)?;
            write_dataset(&sim.participants, &out)?;
            write_json(Some(&out.join("truth.json")), &sim.truths)?;
            let events: usize = sim.participants.iter().map(|p| p.events.len()).sum();
            println!("simulated {} participants, {events} events into {}", sim.participants.len(), out.display());
            Ok(())
        }
        Command::Serve { data, port, bind, config } => {
            let cfg = config.as_deref().map(GatewayConfig::load).transpose()?.unwrap_or_default();
            let platform = Arc::new(Platform::open(&data, cfg.platform.clone())?);
            let state = AppState::new(platform, &cfg, system_clock())?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind((bind.as_str(), port)).await?;
                println!("listening on http://{}", listener.local_addr()?);
                serve(listener, state).await
            })?;
            Ok(())
        }
        Command::Analyze { kind, input, out, params } => {
            let platform = open_existing(&input, PlatformConfig::default())?;
            let doc = run_analysis(kind, &params, &platform.snapshots())?;
            write_json(out.as_deref(), &doc)
        }
        Command::Viz { command: VizCommand::Build { participant, week, out, data } } => {
            let platform = open_existing(&data, PlatformConfig::default())?;
            let bundle = platform.visualizations(&participant.as_str().into(), week)?;
            let manifest = write_bundle(&bundle, &out)?;
            println!("wrote {} charts and manifest.json to {}", manifest.charts.len(), out.display());
            Ok(())
        }
        Command::ReplayStudy { config, data, out, bundles } => {
            let cfg = sim_config(config.as_deref())?;
            let scratch = data.is_none().then(|| {
                let nanos = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_nanos());
                std::env::temp_dir().join(format!("moods-replay-{}-{nanos}", std::process::id()))
            });
            let dir = data.or_else(|| scratch.clone()).expect("one of the two is set");
            let opts = ReplayOptions { bundle_dir: bundles, ..Default::default() };
            let outcome = replay_study(&cfg, &dir, &opts);
            if let Some(s) = &scratch {
                let _ = std::fs::remove_dir_all(s);
            }
            let outcome = outcome?;
            let matched = if outcome.simulated_hash == outcome.reloaded_hash { "matches" } else { "DIFFERS" };
            println!("participants: {}", outcome.participants);
            println!("bundles: {} ({} charts)", outcome.bundles, outcome.charts);
            println!("state hash {matched}: {}", outcome.reloaded_hash);
            for metric in Metric::ALL {
                if let Some(t) = outcome.report.trend(metric, Weighting::ParticipantMean, 1) {
                    println!("{} trend: m = {:.4}, p = {:.3e}", metric.as_str(), t.report.slope, t.report.p_value);
                }
            }
            if let Some(o) = out.as_deref() {
                write_json(Some(o), &outcome)?;
            }
            Ok(())
        }
    }
}
