//! The `citsci` organizer command line.
//!
//! Commands operate on a data directory (`--data-dir`, `CITSCI_DATA_DIR`).
//! While `citsci serve` holds the directory, the other commands refuse to
//! open it; use the HTTP API instead.

pub mod error;
pub mod simulate;

use std::io::Read;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use citsci_core::analytics::Tagset;
use citsci_core::annotation_store::ExportBundle;
use citsci_core::corpus::{self, Dataset};
use citsci_core::ids::{CampaignId, SessionId};
use citsci_core::onboarding::{AnnotatorSession, CallEvent, Channel};
use citsci_core::report::{self, Format, ReportKind, ReportParams};
use citsci_core::storage;
use citsci_core::{fixture, AnnotationRecord, CampaignConfig, Platform, PlatformOptions};
use clap::{Args, Parser, Subcommand};

pub use error::{Class, CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "citsci",
    version,
    about = "Run and analyse citizen-science stance annotation campaigns"
)]
pub struct Cli {
    /// Data directory holding the dataset and platform state.
    #[arg(long, global = true, env = "CITSCI_DATA_DIR", default_value = "citsci-data")]
    pub data_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a dataset file and store it in the data directory.
    Ingest { dataset: PathBuf },
    /// Create and publish campaigns, mint invite links.
    #[command(subcommand)]
    Campaign(CampaignCommand),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Compute a report.
    Report(ReportArgs),
    /// Export a campaign's records.
    Export(ExportArgs),
    /// Erase a participant's session, consent, leases and records.
    DeleteSession { session_id: String },
    /// Drive the full API with synthetic annotators and print the export.
    Simulate(simulate::SimulateArgs),
    /// Install the synthetic published-shape campaign into an empty data directory.
    #[command(hide = true)]
    Fixture,
}

#[derive(Debug, Subcommand)]
pub enum CampaignCommand {
    /// Create a draft campaign from a JSON config file (`-` for stdin).
    Create { config: PathBuf },
    /// Freeze the disclosure and open the campaign.
    Publish { campaign_id: String },
    /// Mint an invite link, optionally tagged with a recruitment channel.
    Link {
        campaign_id: String,
        #[arg(long)]
        channel: Option<String>,
        /// Prefix for the printed URL.
        #[arg(long, default_value = "")]
        base_url: String,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "CITSCI_BIND", default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    #[arg(long, env = "CITSCI_ORGANIZER_KEY", hide_env_values = true)]
    pub organizer_key: Option<String>,
    /// Lease duration in seconds for every campaign, overriding their configs.
    #[arg(long, env = "CITSCI_LEASE_DURATION")]
    pub lease_duration: Option<i64>,
    /// Seconds between background sweeps of expired leases; 0 disables.
    #[arg(long, default_value_t = 60)]
    pub sweep_every: u64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// coverage, accuracy, labels, timeline or users.
    pub kind: ReportKind,
    #[arg(long)]
    pub campaign: Option<String>,
    /// Restrict accuracy to one tagset (fine or coarse).
    #[arg(long)]
    pub tagset: Option<Tagset>,
    /// Mark channels with fewer scored records as excluded.
    #[arg(long, default_value_t = 0)]
    pub min_scored: u64,
    /// Timeline bucket width: seconds or a number with s, m, h, d or w.
    #[arg(long, default_value = "1d", value_parser = report::parse_bucket)]
    pub bucket: chrono::Duration,
    #[arg(long, default_value = "csv")]
    pub format: Format,
    /// Write to this file instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Compute from an exported JSON bundle instead of the data directory's state.
    #[arg(long)]
    pub from_export: Option<PathBuf>,
    /// Dataset for --from-export; defaults to the data directory's.
    #[arg(long, requires = "from_export")]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub campaign: Option<String>,
    /// Replace session ids with fresh pseudonyms.
    #[arg(long)]
    pub anonymize: bool,
    #[arg(long, default_value = "json")]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::new(Class::Io, format!("{}: {e}", path.display()))
}

fn read_input(path: &Path) -> CliResult<String> {
    if path == Path::new("-") {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s).map_err(|e| io_error(path, e))?;
        Ok(s)
    } else {
        std::fs::read_to_string(path).map_err(|e| io_error(path, e))
    }
}

/// Writes `text` to `out`, or returns it for stdout.
fn emit(out: Option<&Path>, text: String) -> CliResult<String> {
    match out {
        Some(path) => {
            std::fs::write(path, &text).map_err(|e| io_error(path, e))?;
            Ok(format!("wrote {}\n", path.display()))
        }
        None => Ok(text),
    }
}

fn open(dir: &Path) -> CliResult<Platform> {
    Ok(Platform::open(dir, PlatformOptions::default())?)
}

/// The named campaign, or the only one.
fn pick_campaign(p: &Platform, named: Option<&str>) -> CliResult<Option<CampaignId>> {
    if let Some(c) = named {
        return Ok(Some(CampaignId::new(c)));
    }
    let ids: Vec<CampaignId> = p.onboarding().campaigns().map(|c| c.id().clone()).collect();
    match ids.len() {
        0 => Ok(None),
        1 => Ok(ids.into_iter().next()),
        _ => Err(CliError::input(format!(
            "several campaigns exist ({}); pass --campaign",
            ids.iter().map(CampaignId::as_str).collect::<Vec<_>>().join(", ")
        ))),
    }
}

/// Runs one command and returns what should go to stdout.
pub fn run(cli: Cli) -> CliResult<String> {
    let dir = cli.data_dir.as_path();
    match cli.command {
        Command::Ingest { dataset } => {
            let d = corpus::load_dataset(&dataset)?;
            storage::write_dataset(dir, &d)?;
            let n = d.denominators();
            Ok(format!(
                "ingested {} claims, {} clusters, {} instances into {} (digest {})\n",
                n.claims,
                n.clusters,
                n.instances,
                dir.display(),
                d.digest()
            ))
        }
        Command::Campaign(cmd) => campaign(dir, cmd),
        Command::Serve(args) => serve(dir, args),
        Command::Report(args) => report_cmd(dir, args),
        Command::Export(args) => {
            let mut p = open(dir)?;
            let campaign = pick_campaign(&p, args.campaign.as_deref())?
                .ok_or_else(|| CliError::new(Class::NotFound, "no campaign to export"))?;
            let bundle = p.export(&campaign, args.anonymize)?;
            let text = match args.format {
                Format::Json => bundle.to_json(),
                Format::Csv => bundle.to_csv(),
            };
            emit(args.out.as_deref(), text)
        }
        Command::DeleteSession { session_id } => {
            let mut p = open(dir)?;
            let r = p.delete_participant_data(&SessionId::new(session_id.clone()))?;
            Ok(format!(
                "deleted session {session_id}: {} consent record(s), {} record(s), {} open lease(s), {} lease history entr{}\n",
                r.consent_records,
                r.records,
                r.leases,
                r.lease_history,
                if r.lease_history == 1 { "y" } else { "ies" }
            ))
        }
        Command::Simulate(args) => {
            let outcome = simulate::run(&args)?;
            eprintln!("{}", outcome.summary_line());
            emit(args.out.as_deref(), outcome.export_text)
        }
        Command::Fixture => {
            let f = fixture::published_shape();
            storage::install(dir, &f.dataset, &f.snapshot())?;
            Ok(format!(
                "installed campaign {} with {} records into {}\n",
                fixture::CAMPAIGN_ID,
                f.records.len(),
                dir.display()
            ))
        }
    }
}

fn campaign(dir: &Path, cmd: CampaignCommand) -> CliResult<String> {
    let mut p = open(dir)?;
    match cmd {
        CampaignCommand::Create { config } => {
            let text = read_input(&config)?;
            let config: CampaignConfig = serde_json::from_str(&text)
                .map_err(|e| CliError::input(format!("{}: invalid campaign config: {e}", config.display())))?;
            let id = p.create_campaign(config)?;
            let missing = p.campaign(&id).and_then(|c| c.config.missing_disclosure());
            let mut out = format!("created campaign {id}\n");
            if let Some(field) = missing {
                out.push_str(&format!("note: {field} required before publishing\n"));
            }
            Ok(out)
        }
        CampaignCommand::Publish { campaign_id } => {
            let v = p.publish_campaign(&CampaignId::new(campaign_id.clone()))?;
            Ok(format!(
                "published {campaign_id} (disclosure version {}, sha256 {})\n",
                v.version, v.hash
            ))
        }
        CampaignCommand::Link {
            campaign_id,
            channel,
            base_url,
        } => {
            let link = p.mint_invite_link(&CampaignId::new(campaign_id), channel.map(Channel::new))?;
            Ok(format!("{}{}\n", base_url.trim_end_matches('/'), link.path()))
        }
    }
}

fn serve(dir: &Path, args: ServeArgs) -> CliResult<String> {
    let key = args
        .organizer_key
        .filter(|k| !k.is_empty())
        .ok_or_else(|| CliError::input("an organizer key is required (--organizer-key or CITSCI_ORGANIZER_KEY)"))?;
    let lease_override = match args.lease_duration {
        Some(s) if s <= 0 => return Err(CliError::input("--lease-duration must be positive")),
        Some(s) => Some(chrono::Duration::seconds(s)),
        None => None,
    };
    let p = Platform::open(
        dir,
        PlatformOptions {
            lease_override,
            ..PlatformOptions::default()
        },
    )?;
    let app = citsci_server::App::new(p, key);
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::new(Class::Service, e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(args.bind)
            .await
            .map_err(|e| CliError::new(Class::Io, format!("cannot bind {}: {e}", args.bind)))?;
        let addr = listener
            .local_addr()
            .map_err(|e| CliError::new(Class::Io, e.to_string()))?;
        eprintln!("listening on http://{addr}");
        if args.sweep_every > 0 {
            citsci_server::spawn_sweeper(app.clone(), std::time::Duration::from_secs(args.sweep_every));
        }
        let shutdown = async {
            #[cfg(unix)]
            {
                use tokio::signal::unix::{signal, SignalKind};
                match signal(SignalKind::terminate()) {
                    Ok(mut term) => {
                        tokio::select! {
                            _ = tokio::signal::ctrl_c() => {}
                            _ = term.recv() => {}
                        }
                    }
                    Err(_) => {
                        let _ = tokio::signal::ctrl_c().await;
                    }
                }
            }
            #[cfg(not(unix))]
            {
                let _ = tokio::signal::ctrl_c().await;
            }
        };
        citsci_server::serve(listener, app, shutdown)
            .await
            .map_err(|e| CliError::new(Class::Service, e.to_string()))
    })?;
    Ok(String::new())
}

fn report_cmd(dir: &Path, args: ReportArgs) -> CliResult<String> {
    let params = ReportParams {
        tagset: args.tagset,
        min_scored: args.min_scored,
        bucket: args.bucket,
    };
    let text = if let Some(path) = &args.from_export {
        let bundle = ExportBundle::from_json(&read_input(path)?)
            .map_err(|e| CliError::input(format!("{}: invalid export bundle: {e}", path.display())))?;
        let dataset = match &args.dataset {
            Some(d) => corpus::load_dataset(d)?,
            None => storage::read_dataset(dir)?,
        };
        if bundle.manifest.dataset_digest != dataset.digest() {
            return Err(CliError::new(
                Class::Conflict,
                "export was produced against a different dataset (digest mismatch)",
            ));
        }
        report::render(
            args.kind,
            args.format,
            &params,
            &dataset,
            &bundle.records,
            &bundle.sessions,
            &[],
        )
        .map_err(|e| CliError::input(e.to_string()))?
    } else {
        let p = open(dir)?;
        match pick_campaign(&p, args.campaign.as_deref())? {
            Some(c) => p.report(&c, args.kind, args.format, &params)?,
            None => empty_report(p.dataset(), args.kind, args.format, &params)?,
        }
    };
    emit(args.out.as_deref(), text)
}

/// A report over no records, for a data directory without campaigns.
fn empty_report(dataset: &Dataset, kind: ReportKind, format: Format, params: &ReportParams) -> CliResult<String> {
    let records: [AnnotationRecord; 0] = [];
    let sessions: [AnnotatorSession; 0] = [];
    let events: [CallEvent; 0] = [];
    report::render(kind, format, params, dataset, &records, &sessions, &events)
        .map_err(|e| CliError::input(e.to_string()))
}
