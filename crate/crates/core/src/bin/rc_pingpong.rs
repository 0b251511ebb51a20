//! `rc_pingpong`: the classic RC ping-pong benchmark on the emulated fabric.
//!
//! With `--fabric loopback` (the default) both sides run in this process and
//! both reports are printed, server first. With `--fabric socket` the process
//! is a server unless a server host is given.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use softverbs::fabric::FaultProfile;
use softverbs::pingpong::{self, FabricKind, PingpongConfig};
use softverbs::verbs::Mtu;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FabricArg {
    Loopback,
    Socket,
}

#[derive(Debug, Parser)]
#[command(name = "rc_pingpong", about = "Reliable-connection ping-pong over emulated verbs")]
struct Args {
    /// Connect to this server; omit to act as the server.
    server_host: Option<String>,
    /// Out-of-band exchange port.
    #[arg(short = 'p', long, default_value_t = 18515)]
    port: u16,
    #[arg(short = 'i', long, default_value_t = 1)]
    ib_port: u8,
    /// Message size in bytes.
    #[arg(short = 's', long, default_value_t = 4096)]
    size: usize,
    /// Receives kept posted.
    #[arg(short = 'r', long, default_value_t = 500)]
    rx_depth: u32,
    #[arg(short = 'n', long, default_value_t = 1000)]
    iters: u32,
    #[arg(short = 'l', long, default_value_t = 0)]
    sl: u8,
    /// Path MTU: 256, 512, 1024, 2048 or 4096.
    #[arg(short = 'm', long, default_value_t = 1024, value_parser = parse_mtu)]
    mtu: usize,
    /// Sleep on completion events instead of busy polling.
    #[arg(short = 'e', long)]
    events: bool,
    #[arg(short = 'g', long = "gid-idx")]
    gid_idx: Option<usize>,
    /// Fault injection, e.g. "drop=0.1 dup=0 reorder=0 seed=7".
    #[arg(long, value_parser = parse_faults)]
    faults: Option<FaultProfile>,
    #[arg(long, value_enum, default_value_t = FabricArg::Loopback)]
    fabric: FabricArg,
    /// LID-to-address map for the socket fabric.
    #[arg(long)]
    fabric_config: Option<PathBuf>,
}

fn parse_mtu(s: &str) -> Result<usize, String> {
    let n: usize = s.parse().map_err(|e| format!("{e}"))?;
    Mtu::from_bytes(n).map(|_| n).ok_or_else(|| "mtu must be one of 256, 512, 1024, 2048, 4096".into())
}

fn parse_faults(s: &str) -> Result<FaultProfile, String> {
    s.parse().map_err(|e| format!("{e}"))
}

impl Args {
    fn into_config(self) -> PingpongConfig {
        PingpongConfig {
            server_host: self.server_host,
            oob_port: self.port,
            ib_port: self.ib_port,
            size: self.size,
            rx_depth: self.rx_depth,
            iters: self.iters,
            use_event: self.events,
            sl: self.sl,
            mtu: Mtu::from_bytes(self.mtu).expect("validated by parser"),
            gid_index: self.gid_idx,
            faults: self.faults.unwrap_or_default(),
            fabric: match self.fabric {
                FabricArg::Loopback => FabricKind::Loopback,
                FabricArg::Socket => FabricKind::Socket,
            },
            fabric_config: self.fabric_config,
        }
    }
}

fn run(cfg: &PingpongConfig) -> pingpong::Result<()> {
    match cfg.fabric {
        FabricKind::Loopback => {
            let pair = pingpong::run_loopback_pair(cfg)?;
            print!("{}", pair.server.report());
            print!("{}", pair.client.report());
        }
        FabricKind::Socket => print!("{}", pingpong::run_socket(cfg)?.report()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(args) => args,
        Err(e) => {
            let _ = e.print();
            // usage errors abort like any other failure; --help and --version do not
            return if e.use_stderr() { ExitCode::FAILURE } else { ExitCode::SUCCESS };
        }
    };
    let cfg = args.into_config();
    match run(&cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rc_pingpong: {e}");
            ExitCode::FAILURE
        }
    }
}
