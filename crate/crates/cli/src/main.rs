mod commands;
mod config;
mod device;
mod error;
mod report;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fieldsync_core::model::Source;
use fieldsync_core::sync::Tier;

use crate::commands::{CollectArgs, Output, RenderArgs, ServeArgs};
use crate::config::{Overrides, PeerKind, Settings};
use crate::error::CliError;

const AFTER_HELP: &str = "\
Settings resolve in this order: command-line flag, FIELDSYNC_* environment
variable, then the config file (--config, or config.json in the data dir).

Exit codes: 0 ok, 2 validation or config error, 3 offline (data kept locally),
4 service failure, 1 anything else.";

#[derive(Debug, Parser)]
#[command(name = "fieldsync", version, about = "Offline-first field data collection and sync", after_help = AFTER_HELP)]
struct Cli {
    /// Config file (JSON).
    #[arg(long, global = true, env = "FIELDSYNC_CONFIG")]
    config: Option<PathBuf>,
    /// Local data directory.
    #[arg(long, global = true, env = "FIELDSYNC_DATA_DIR")]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true, env = "FIELDSYNC_DEVICE_ID")]
    device_id: Option<String>,
    #[arg(long, global = true, env = "FIELDSYNC_EDGE_URL")]
    edge_url: Option<String>,
    #[arg(long, global = true, env = "FIELDSYNC_CLOUD_URL")]
    cloud_url: Option<String>,
    /// Print reports as JSON.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SourceArg {
    Manual,
    Sensor,
    Archival,
}

impl From<SourceArg> for Source {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::Manual => Source::Manual,
            SourceArg::Sensor => Source::Sensor,
            SourceArg::Archival => Source::Archival,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TierArg {
    Edge,
    Cloud,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Record an observation locally (stored UNSYNCED).
    Collect {
        /// Field values, e.g. scorch=42 note="wind shift".
        #[arg(value_name = "FIELD=VALUE")]
        values: Vec<String>,
        #[arg(long, allow_hyphen_values = true)]
        lat: f64,
        #[arg(long, allow_hyphen_values = true)]
        lon: f64,
        /// Attach an image file; it is hashed and staged for upload.
        #[arg(long)]
        image: Vec<PathBuf>,
        /// Observation time (RFC 3339); defaults to now.
        #[arg(long)]
        ts: Option<String>,
        #[arg(long, value_enum, default_value = "manual")]
        source: SourceArg,
    },
    /// Run one sync session with the edge or cloud.
    Sync {
        #[arg(long, value_enum)]
        peer: PeerKind,
        /// Per-request timeout in seconds.
        #[arg(long, default_value_t = 10.0)]
        timeout: f64,
    },
    /// List local records with their freshness color (R/G/B).
    Status,
    /// Per-cell record counts over the configured grid.
    Coverage,
    /// Grid cells with no records.
    Missing {
        /// List cells below the per-cell quota with their deficit instead.
        #[arg(long)]
        under_sampled: bool,
    },
    /// Records whose value is a robust outlier among their neighbors.
    Anomalies {
        /// Numeric field; defaults to the schema's first numeric field.
        #[arg(long)]
        field: Option<String>,
        #[arg(long, default_value_t = 3.0)]
        threshold: f64,
    },
    /// Run an edge or cloud tier service.
    Serve {
        #[arg(long, value_enum)]
        tier: TierArg,
        /// Service config file (JSON).
        #[arg(long)]
        service_config: Option<PathBuf>,
        /// host:port [default: 127.0.0.1:8080]
        #[arg(long)]
        bind: Option<String>,
        /// Cloud base URL (edge only); falls back to --cloud-url.
        #[arg(long)]
        upstream: Option<String>,
        /// Seconds between upstream sync attempts.
        #[arg(long)]
        interval: Option<f64>,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        store_id: Option<String>,
    },
    /// Run a scenario through the simulator and report convergence.
    Simulate {
        /// Scenario file, or "scorch-demo" for the bundled one.
        scenario: String,
        /// Write each simulated store as a data dir under this directory.
        #[arg(long)]
        export: Option<PathBuf>,
        /// Write the event trace as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Export wedge and HUD indicators for a viewer pose as JSON.
    Renderplan {
        /// x,y,heading,fov in grid meters and radians (heading clockwise from north).
        #[arg(long, allow_hyphen_values = true)]
        viewer: String,
        #[arg(long)]
        field: Option<String>,
        /// lo,hi for the colormap; defaults to the field's schema range.
        #[arg(long, allow_hyphen_values = true)]
        range: Option<String>,
        /// Overhead window width,height in meters.
        #[arg(long, default_value = "100,100")]
        viewport: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<Option<Output>, CliError> {
    let overrides = Overrides {
        config: cli.config.clone(),
        data_dir: cli.data_dir.clone(),
        device_id: cli.device_id.clone(),
        edge_url: cli.edge_url.clone(),
        cloud_url: cli.cloud_url.clone(),
    };
    let settings = || Settings::resolve(overrides.clone());
    let out = match cli.command {
        Command::Collect {
            values,
            lat,
            lon,
            image,
            ts,
            source,
        } => commands::collect(
            &settings()?,
            CollectArgs {
                values,
                lat,
                lon,
                images: image,
                ts,
                source: source.into(),
            },
        )?,
        Command::Sync { peer, timeout } => commands::sync(&settings()?, peer, timeout)?,
        Command::Status => commands::status(&settings()?)?,
        Command::Coverage => commands::coverage_cmd(&settings()?)?,
        Command::Missing { under_sampled } => commands::missing(&settings()?, under_sampled)?,
        Command::Anomalies { field, threshold } => {
            commands::anomalies(&settings()?, field, threshold)?
        }
        Command::Serve {
            tier,
            service_config,
            bind,
            upstream,
            interval,
            schema,
            store_id,
        } => {
            tracing_subscriber::fmt()
                .with_env_filter(
                    tracing_subscriber::EnvFilter::try_from_default_env()
                        .unwrap_or_else(|_| "info".into()),
                )
                .with_writer(std::io::stderr)
                .init();
            let tier = match tier {
                TierArg::Edge => Tier::Edge,
                TierArg::Cloud => Tier::Cloud,
            };
            let cfg = commands::service_config(
                &settings()?,
                cli.data_dir.as_deref(),
                ServeArgs {
                    tier,
                    service_config,
                    bind,
                    upstream,
                    interval,
                    schema,
                    store_id,
                },
            )?;
            commands::serve(&cfg)?;
            return Ok(None);
        }
        Command::Simulate {
            scenario,
            export,
            trace,
        } => commands::simulate(&scenario, export.as_deref(), trace.as_deref())?,
        Command::Renderplan {
            viewer,
            field,
            range,
            viewport,
            out,
        } => commands::renderplan(
            &settings()?,
            RenderArgs {
                viewer,
                field,
                range,
                viewport,
                out,
            },
        )?,
    };
    Ok(Some(out))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json = cli.json;
    match run(cli) {
        Ok(Some(out)) => {
            let text = if json {
                serde_json::to_string_pretty(&out.json).expect("json output") + "\n"
            } else {
                out.text
            };
            // A closed pipe (e.g. `| head`) is not a failure of the command.
            let _ = std::io::stdout().lock().write_all(text.as_bytes());
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
