use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use alembic::server::{Server, ServerConfig};
use clap::Parser;

/// Driver and worker pool for offloaded dense linear algebra.
#[derive(Parser, Debug)]
#[command(name = "alembic-server", version)]
struct Cli {
    /// Number of workers in the pool.
    #[arg(long, default_value_t = 4)]
    workers: usize,

    /// Driver control endpoint.
    #[arg(long, default_value = "127.0.0.1:24960")]
    listen: String,

    /// Worker r listens on this port plus r; 0 picks free ports.
    #[arg(long, default_value_t = 0)]
    worker_port_base: u16,

    /// Write hostname, address and port here once listening.
    #[arg(long)]
    info_file: Option<PathBuf>,

    /// Worker-to-worker transport: inproc or tcp.
    #[arg(long, default_value = "inproc")]
    transport: String,

    /// Seconds a collective waits for a peer before failing the group.
    #[arg(long, default_value_t = 60)]
    collective_timeout: u64,

    /// Seconds sealing a matrix waits for outstanding rows.
    #[arg(long, default_value_t = 120)]
    seal_timeout: u64,

    #[arg(long, default_value = "info")]
    log_level: log::LevelFilter,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .init();
    let config = ServerConfig {
        listen: cli.listen,
        workers: cli.workers,
        worker_port_base: cli.worker_port_base,
        transport: cli.transport,
        info_file: cli.info_file,
        collective_timeout: Duration::from_secs(cli.collective_timeout),
        seal_timeout: Duration::from_secs(cli.seal_timeout),
        ..ServerConfig::default()
    };
    match Server::start(config) {
        Ok(server) => {
            println!("listening on {}", server.addr());
            server.wait();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("alembic-server: {e}");
            ExitCode::FAILURE
        }
    }
}
