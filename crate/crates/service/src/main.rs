use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use screenrec_core::session::{load_session_dataset, LoadOptions};
use screenrec_core::summarizer::MockBackend;
use screenrec_service::experiment::{run_experiment_request, ExperimentRequest};
use screenrec_service::{BackendChoice, Config, Service};

#[derive(Parser)]
#[command(name = "screenrec", version, about = "Screenshot-summary recommender service")]
struct Cli {
    /// Data directory (overrides SCREENREC_DATA_DIR).
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Import a line-delimited catalog file.
    ImportCatalog { file: PathBuf },
    /// Store sessions from a session file so the service can serve them.
    ImportSessions { file: PathBuf },
    /// Summarize a stored session's screenshots and print the summary.
    Summarize {
        #[arg(long)]
        session: String,
        #[arg(long, default_value = "mock")]
        backend: BackendChoice,
    },
    /// Run an evaluation plan and append its rows to the reports directory.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Also write the rows as CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Register a mock-backend response for a batch of screenshot keys.
    WriteFixture {
        /// Comma-separated screenshot keys of one batch.
        #[arg(long, value_delimiter = ',')]
        keys: Vec<String>,
        /// File holding the raw response text.
        #[arg(long)]
        response: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    let mut config = Config::from_env()?;
    if let Some(dir) = cli.data_dir {
        config = Config { fixtures_dir: dir.join("fixtures"), ui_dir: dir.join("ui"), data_dir: dir, ..config };
    }
    match cli.command {
        Command::Serve { port, host } => {
            let service = Arc::new(Service::from_config(config)?);
            let addr: SocketAddr = format!("{host}:{port}").parse()?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                tracing::info!(%addr, "listening");
                axum::serve(listener, screenrec_service::http::router(service))
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await
            })?;
        }
        Command::ImportCatalog { file } => {
            let service = Service::from_config(config)?;
            let snapshot = service.import_catalog_file(&file)?;
            println!("imported {} items, catalog version {}", snapshot.len(), snapshot.version());
        }
        Command::ImportSessions { file } => {
            let service = Service::from_config(config)?;
            let data = load_session_dataset(&file, &LoadOptions { strict: false, store: Some(service.screenshots()) })?;
            for s in &data.sessions {
                let mut stored = s.clone();
                stored.ground_truth_next = None;
                stored.events.extend(s.ground_truth_next.iter().map(|id| {
                    screenrec_core::InteractionEvent::new(id.clone(), s.events.last().map_or(0, |e| e.timestamp + 1))
                }));
                service.put_session(&stored)?;
            }
            for ex in &data.excluded {
                eprintln!("line {}: session `{}` skipped: {}", ex.line, ex.session_id, ex.reason);
            }
            println!("stored {} sessions", data.sessions.len());
        }
        Command::Summarize { session, backend } => {
            config.backend = backend;
            let service = Service::from_config(config)?;
            let summary = service.summary(&session)?.unwrap_or_default();
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Eval { config: plan_path, csv } => {
            let service = Service::from_config(config)?;
            let request: ExperimentRequest = serde_json::from_str(&std::fs::read_to_string(&plan_path)?)?;
            let base = plan_path.parent().map(PathBuf::from).unwrap_or_default();
            let outcome = run_experiment_request(&service, &request, &base)?;
            print!("{}", outcome.report.to_table());
            println!("rows appended to {}", outcome.report_path.display());
            if let Some(path) = csv {
                std::fs::write(&path, outcome.report.to_csv())?;
            }
        }
        Command::WriteFixture { keys, response } => {
            let service = Service::from_config(config.clone())?;
            let text = std::fs::read_to_string(&response)?;
            let path = MockBackend::new(&config.fixtures_dir).write_fixture(service.prompt(), &keys, &text)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
