//! The ping-pong application run end to end on the loopback fabric.

use softverbs::fabric::FaultProfile;
use softverbs::pingpong::{
    run_loopback_pair, run_loopback_pair_monitored, FabricKind, LoopMonitor, NoMonitor, PingpongConfig, PingpongError,
    RECV_WRID, SEND_WRID,
};
use softverbs::verbs::Mtu;
use softverbs::wq::{WcStatus, WorkCompletion};

fn cfg() -> PingpongConfig {
    PingpongConfig { oob_port: 0, ..Default::default() }
}

#[derive(Default)]
struct Recorder {
    min_routs: Option<u32>,
    reposts: Vec<(u32, u32)>,
    sends: u32,
    recvs: u32,
}

impl LoopMonitor for Recorder {
    fn on_iteration(&mut self, routs: u32) {
        self.min_routs = Some(self.min_routs.map_or(routs, |m| m.min(routs)));
    }
    fn on_repost(&mut self, before: u32, after: u32) {
        self.reposts.push((before, after));
    }
    fn on_completion(&mut self, wc: &WorkCompletion) {
        match wc.wr_id {
            SEND_WRID => self.sends += 1,
            RECV_WRID => self.recvs += 1,
            _ => panic!("unexpected wr_id"),
        }
    }
}

#[test]
fn defaults_move_the_expected_volume() {
    let out = run_loopback_pair(&cfg()).unwrap();
    for side in [&out.server, &out.client] {
        assert_eq!(side.stats.bytes_total, 8_192_000);
        assert_eq!((side.stats.rcnt, side.stats.scnt, side.stats.iters), (1000, 1000, 1000));
        assert!(side.stats.elapsed.as_secs_f64() > 0.0);
    }
    assert_eq!(out.server.theirs, out.client.mine);
    assert_eq!(out.client.theirs, out.server.mine);
    assert_ne!(out.server.mine.lid, out.client.mine.lid);
    assert_eq!(out.wire.dropped, 0);
    assert!(out.server.is_server && !out.client.is_server);
}

#[test]
fn single_iteration() {
    let out = run_loopback_pair(&PingpongConfig { iters: 1, ..cfg() }).unwrap();
    assert_eq!(out.client.stats.bytes_total, 2 * 4096);
    assert_eq!(out.wire.data_frames_sent, 2 * 4);
}

#[test]
fn event_mode_matches_polling_counters() {
    let polled = run_loopback_pair(&PingpongConfig { iters: 200, ..cfg() }).unwrap();
    let evented = run_loopback_pair(&PingpongConfig { iters: 200, use_event: true, ..cfg() }).unwrap();
    for (p, e) in [(&polled.server, &evented.server), (&polled.client, &evented.client)] {
        assert_eq!(
            (p.stats.rcnt, p.stats.scnt, p.stats.bytes_total),
            (e.stats.rcnt, e.stats.scnt, e.stats.bytes_total)
        );
        assert!(e.stats.cq_events > 0);
        assert_eq!(p.stats.cq_events, 0);
    }
}

#[test]
fn receive_credits_are_replenished() {
    let mut server = Recorder::default();
    let mut client = Recorder::default();
    run_loopback_pair_monitored(&cfg(), &mut server, &mut client).unwrap();
    for m in [&server, &client] {
        assert_eq!(m.reposts, vec![(1, 500), (1, 500)]);
        assert!(m.min_routs.unwrap() >= 1);
        assert_eq!((m.sends, m.recvs), (1000, 1000));
    }
}

#[test]
fn rx_depth_one_reposts_every_message() {
    let mut server = Recorder::default();
    let mut client = Recorder::default();
    let c = PingpongConfig { rx_depth: 1, iters: 50, ..cfg() };
    run_loopback_pair_monitored(&c, &mut server, &mut client).unwrap();
    assert_eq!(server.reposts.len(), 50);
    assert!(server.reposts.iter().all(|&r| r == (0, 1)));
}

#[test]
fn odd_sizes_and_mtus() {
    for (size, mtu) in [(1, Mtu::Mtu256), (5000, Mtu::Mtu256), (4097, Mtu::Mtu4096), (65536, Mtu::Mtu2048)] {
        let out = run_loopback_pair(&PingpongConfig { size, mtu, iters: 20, ..cfg() })
            .unwrap_or_else(|e| panic!("size {size} mtu {mtu:?}: {e}"));
        assert_eq!(out.client.stats.bytes_total, 2 * size as u64 * 20);
        let frames_per_msg = size.div_ceil(mtu.bytes()) as u64;
        assert_eq!(out.wire.data_frames_sent, 2 * 20 * frames_per_msg);
    }
}

#[test]
fn survives_light_loss() {
    let faults: FaultProfile = "drop=0.05,dup=0.05,reorder=0.05,seed=3".parse().unwrap();
    let out = run_loopback_pair(&PingpongConfig { iters: 300, faults, ..cfg() }).unwrap();
    assert_eq!((out.client.stats.rcnt, out.server.stats.rcnt), (300, 300));
    assert!(out.wire.dropped > 0 && out.wire.duplicated > 0 && out.wire.reordered > 0);
}

#[test]
fn heavy_loss_completes_or_aborts_cleanly() {
    // a stop-and-wait exchange can exhaust its retry budget at this rate
    let faults: FaultProfile = "drop=0.2,dup=0.1,reorder=0.1,seed=42".parse().unwrap();
    match run_loopback_pair(&PingpongConfig { iters: 200, faults, ..cfg() }) {
        Ok(out) => assert_eq!(out.client.stats.rcnt, 200),
        Err(PingpongError::BadStatus { status, .. }) => assert_eq!(status, WcStatus::RetryExceeded),
        Err(e) => panic!("unexpected failure: {e}"),
    }
}

#[test]
fn report_has_four_lines() {
    let out = run_loopback_pair(&PingpongConfig { iters: 10, ..cfg() }).unwrap();
    let text = out.client.report();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("  local address:  LID 0x"));
    assert!(lines[1].starts_with("  remote address: LID 0x"));
    assert!(lines[0].ends_with(", GID ::"));
    assert_eq!(
        lines[2],
        format!(
            "81920 bytes in {:.2} seconds = {:.2} Mbit/sec",
            out.client.stats.secs(),
            out.client.stats.mbit_per_sec()
        )
    );
    assert_eq!(
        lines[3],
        format!(
            "10 iters in {:.2} seconds = {:.2} usec/iter",
            out.client.stats.secs(),
            out.client.stats.usec_per_iter()
        )
    );
}

#[test]
fn invalid_configs_are_rejected() {
    for bad in [
        PingpongConfig { size: 0, ..cfg() },
        PingpongConfig { iters: 0, ..cfg() },
        PingpongConfig { rx_depth: 0, ..cfg() },
        PingpongConfig { sl: 16, ..cfg() },
    ] {
        assert!(matches!(run_loopback_pair(&bad), Err(PingpongError::Config(_))), "{bad:?}");
    }
    let _ = (NoMonitor, FabricKind::Socket);
}
