//! Whole-program flows: one side against a remote peer, or both sides in
//! one process over the loopback fabric.

use std::net::TcpStream;
use std::sync::Mutex;
use std::time::Duration;

use super::context::{connect_ctx, init_context, post_receives};
use super::report::report;
use super::run::{run_loop, LoopMonitor, NoMonitor, RunStats};
use super::{FabricKind, PingpongConfig, PingpongError, Result};
use crate::fabric::{Fabric, FabricConfig, WireStats};
use crate::oob::{Destination, OobListener, OobStream};
use crate::verbs::{AttrMask, Device, DeviceRegistry, QpAttributes, QpState, QueuePair};

pub const DEVICE_NAME: &str = "softhca0";
const DEVICE_GUID: u64 = 0x0002_c903_00a1_b2c3;
const BARRIER_TIMEOUT: Duration = Duration::from_secs(60);
const DRIVER_GRACE: Duration = Duration::from_millis(1);

/// A registry holding the single emulated HCA.
pub fn default_registry() -> DeviceRegistry {
    DeviceRegistry::new().with_device(Device::new(DEVICE_NAME, DEVICE_GUID)).expect("fresh registry")
}

/// How this side reaches its peer out of band.
pub enum OobRole {
    Server(OobListener),
    Client { host: String, port: u16 },
}

#[derive(Clone, Debug)]
pub struct SideOutcome {
    pub is_server: bool,
    pub stats: RunStats,
    pub mine: Destination,
    pub theirs: Destination,
}

impl SideOutcome {
    pub fn report(&self) -> String {
        report(&self.stats, &self.mine, &self.theirs)
    }
}

/// Both halves of an in-process run, plus what the wire saw.
#[derive(Clone, Debug)]
pub struct PairOutcome {
    pub server: SideOutcome,
    pub client: SideOutcome,
    pub wire: WireStats,
}

/// Runs one side end to end: setup, exchange, connect, loop, teardown.
/// When `qp_slot` is given, the side's QP is published there while it runs
/// so a supervisor can force it into ERR.
pub fn run_side(
    cfg: &PingpongConfig,
    registry: &DeviceRegistry,
    fabric: &Fabric,
    role: OobRole,
    monitor: &mut dyn LoopMonitor,
    qp_slot: Option<&Mutex<Option<QueuePair>>>,
) -> Result<SideOutcome> {
    let device = registry.get_device_list().into_iter().next().ok_or(PingpongError::NoDevices)?;
    let mut ctx = init_context(registry, &device, fabric, cfg)?;
    if let Some(slot) = qp_slot {
        *slot.lock().unwrap() = Some(ctx.qp.clone());
    }

    ctx.routs = post_receives(&ctx, ctx.rx_depth);
    if ctx.routs < ctx.rx_depth {
        return Err(PingpongError::PostRecv { posted: ctx.routs, wanted: ctx.rx_depth });
    }
    if ctx.channel.is_some() {
        ctx.cq.req_notify().map_err(PingpongError::verbs("Couldn't request CQ notification"))?;
    }

    let mine = ctx.local_destination(cfg)?;
    let (mut oob, theirs) = match role {
        OobRole::Client { host, port } => {
            let mut s = OobStream::connect(&host, port)?;
            let theirs = s.exchange(&mine)?;
            connect_ctx(&ctx, cfg.ib_port, mine.psn, cfg.mtu, cfg.sl, &theirs)?;
            (s, theirs)
        }
        OobRole::Server(listener) => {
            let (mut s, theirs) = listener.accept()?;
            // be ready to receive before the client learns our address
            connect_ctx(&ctx, cfg.ib_port, mine.psn, cfg.mtu, cfg.sl, &theirs)?;
            s.send(&mine)?;
            (s, theirs)
        }
    };

    let stats = run_loop(&mut ctx, cfg, monitor)?;
    // neither side may tear down while the other still waits on its ACKs
    oob.barrier(Some(BARRIER_TIMEOUT))?;
    if let Some(slot) = qp_slot {
        slot.lock().unwrap().take();
    }
    ctx.close()?;
    Ok(SideOutcome { is_server: cfg.is_server(), stats, mine, theirs })
}

fn is_flush(e: &PingpongError) -> bool {
    matches!(e, PingpongError::BadStatus { status: crate::wq::WcStatus::WorkRequestFlushed, .. })
}

fn force_error(slot: &Mutex<Option<QueuePair>>) {
    if let Some(qp) = slot.lock().unwrap().take() {
        let _ = qp.modify(&QpAttributes { qp_state: QpState::Err, ..Default::default() }, AttrMask::STATE);
    }
}

/// Runs server and client in one process on a loopback fabric.
pub fn run_loopback_pair(cfg: &PingpongConfig) -> Result<PairOutcome> {
    run_loopback_pair_monitored(cfg, &mut NoMonitor, &mut NoMonitor)
}

pub fn run_loopback_pair_monitored(
    cfg: &PingpongConfig,
    server_monitor: &mut (dyn LoopMonitor + Send),
    client_monitor: &mut (dyn LoopMonitor + Send),
) -> Result<PairOutcome> {
    cfg.validate()?;
    let registry = default_registry();
    let fabric = Fabric::loopback(cfg.faults);
    let lo = fabric.loopback_control().expect("loopback fabric");
    let _driver = lo.spawn_driver(DRIVER_GRACE);

    let listener = OobListener::bind_addr(("127.0.0.1", cfg.oob_port))?;
    let addr = listener.local_addr().map_err(crate::oob::OobError::Io)?;
    let server_cfg = PingpongConfig { server_host: None, ..cfg.clone() };
    let client_cfg = PingpongConfig { server_host: Some("127.0.0.1".into()), oob_port: addr.port(), ..cfg.clone() };
    let slots = [Mutex::new(None), Mutex::new(None)];

    let (server, client) = std::thread::scope(|s| {
        let server = s.spawn(|| {
            let r =
                run_side(&server_cfg, &registry, &fabric, OobRole::Server(listener), server_monitor, Some(&slots[0]));
            if r.is_err() {
                force_error(&slots[1]);
            }
            r
        });
        let client = run_side(
            &client_cfg,
            &registry,
            &fabric,
            OobRole::Client { host: "127.0.0.1".into(), port: addr.port() },
            client_monitor,
            Some(&slots[1]),
        );
        if client.is_err() {
            force_error(&slots[0]);
            // unblock a server still waiting in accept
            let _ = TcpStream::connect(addr);
        }
        (server.join().expect("server thread panicked"), client)
    });
    // when one side fails the other is forced into ERR; report the cause
    let (server, client) = match (server, client) {
        (Err(e), Err(flushed)) if is_flush(&e) && !is_flush(&flushed) => (Err(flushed), Err(e)),
        other => other,
    };
    Ok(PairOutcome { server: server?, client: client?, wire: fabric.stats() })
}

/// Runs this process's side over the socket fabric.
pub fn run_socket(cfg: &PingpongConfig) -> Result<SideOutcome> {
    debug_assert_eq!(cfg.fabric, FabricKind::Socket);
    cfg.validate()?;
    let mut fabric_cfg = match &cfg.fabric_config {
        Some(path) => FabricConfig::from_file(path).map_err(|e| PingpongError::Fabric(e.to_string()))?,
        None => FabricConfig::default(),
    };
    if !cfg.faults.is_lossless() {
        fabric_cfg.faults = cfg.faults;
    }
    let fabric = Fabric::socket(fabric_cfg);
    let role = match &cfg.server_host {
        None => OobRole::Server(OobListener::bind(cfg.oob_port)?),
        Some(host) => OobRole::Client { host: host.clone(), port: cfg.oob_port },
    };
    run_side(cfg, &default_registry(), &fabric, role, &mut NoMonitor, None)
}
