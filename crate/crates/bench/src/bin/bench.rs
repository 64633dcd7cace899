use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use alembic_bench::{
    format_report, format_transfer, local_server, run_scenario, transfer_experiment, BatchSpec,
    BenchError, Format, Scenario, Shape, Target, TransferConfig,
};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "bench",
    about = "Timing and transfer experiments against an alembic server"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Driver address; a private in-process server is started when neither
    /// this nor --info-file is given.
    #[arg(long, conflicts_with = "info_file")]
    server: Option<SocketAddr>,
    /// Connection file written by `alembic-server --info-file`.
    #[arg(long)]
    info_file: Option<PathBuf>,
    #[arg(long, default_value = "table")]
    format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "warn")]
    log_level: log::LevelFilter,
}

#[derive(Subcommand)]
enum Command {
    /// Time send, compute and receive for one scenario file.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Count row messages for a tall and a wide matrix of equal volume.
    Transfer {
        #[arg(long)]
        tall: Shape,
        #[arg(long)]
        wide: Shape,
        /// Comma-separated batch sizes, e.g. `1row,4KiB,1MiB`.
        #[arg(long, value_delimiter = ',', default_value = "1row,4KiB,1MiB")]
        batches: Vec<BatchSpec>,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        #[arg(long, default_value_t = 1)]
        clients: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
}

fn target(
    common: &Common,
    workers: usize,
) -> Result<(Target, Option<alembic::server::ServerHandle>), BenchError> {
    if let Some(a) = common.server {
        return Ok((Target::Addr(a), None));
    }
    if let Some(p) = &common.info_file {
        return Ok((Target::InfoFile(p.clone()), None));
    }
    let srv = local_server(workers)?;
    Ok((Target::Addr(srv.addr()), Some(srv)))
}

fn emit(common: &Common, text: &str) -> Result<(), BenchError> {
    match &common.out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::Run { common, .. } | Command::Transfer { common, .. } => common,
    };
    env_logger::Builder::new()
        .filter_level(common.log_level)
        .init();
    let result = match &cli.command {
        Command::Run { scenario, common } => Scenario::read(scenario).and_then(|s| {
            let (t, _server) = target(common, s.workers)?;
            let report = run_scenario(&s, &t)?;
            emit(common, &format_report(&report, common.format))?;
            Ok(!report.failed())
        }),
        Command::Transfer {
            tall,
            wide,
            batches,
            workers,
            clients,
            seed,
            common,
        } => {
            let cfg = TransferConfig {
                tall: *tall,
                wide: *wide,
                batches: batches.clone(),
                workers: *workers,
                clients: *clients,
                seed: *seed,
            };
            target(common, *workers).and_then(|(t, _server)| {
                let report = transfer_experiment(&cfg, &t)?;
                emit(common, &format_transfer(&report, common.format))?;
                Ok(report.runs.iter().all(|r| r.law_holds()))
            })
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("bench: {e}");
            ExitCode::FAILURE
        }
    }
}
