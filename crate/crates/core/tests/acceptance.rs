//! Acceptance suite. Runs every criterion at its pinned tolerance and prints
//! one PASS/FAIL line per criterion; exits non-zero if any fail.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use proptest::test_runner::{Config, TestRunner};
use softverbs::fabric::{Fabric, FaultProfile, Frame, FrameBody, FrameKind};
use softverbs::oob::Destination;
use softverbs::pingpong::{self, LoopMonitor, PingpongConfig, RECV_WRID};
use softverbs::verbs::{AttrMask, CqStatus, Gid, Mtu, QpAttributes, QpState, QueueCaps, VerbsError};
use softverbs::wq::{PollError, PostErrorKind, SendFlags, SendOpcode, SendWr, WcStatus, WorkCompletion};

const STEPS: usize = 5_000_000;

type Criterion = (&'static str, fn() -> String);

fn main() {
    let criteria: [Criterion; 10] = [
        ("end-to-end loopback pingpong", loopback_pingpong),
        ("two-process socket pingpong", socket_pingpong),
        ("queue pair state machine table", state_machine_table),
        ("exactly-once delivery under faults", exactly_once_under_faults),
        ("retry exhaustion", retry_exhaustion),
        ("receiver-not-ready path", receiver_not_ready),
        ("completion queue overflow", cq_overflow),
        ("codec oracles", codec_oracles),
        ("receive credit accounting", receive_credits),
        ("stale packet rejection", stale_replay),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name} ({secs:.2}s): {detail}"),
            Err(e) => {
                failed += 1;
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("FAIL  {name} ({secs:.2}s): {msg}");
            }
        }
    }
    println!("{} of 10 acceptance criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn loopback_pingpong() -> String {
    let start = Instant::now();
    let out = rc_pingpong(&["--port", "0"]);
    let wall = start.elapsed();
    assert!(out.status.success(), "exit {:?}: {}", out.status, out.stderr);
    let totals = out.stdout.lines().filter(|l| l.starts_with("8192000 bytes in ")).count();
    assert_eq!(totals, 2, "both sides must report 8192000 bytes:\n{}", out.stdout);
    assert!(wall < Duration::from_secs(10), "took {wall:?}");

    let pair = pingpong::run_loopback_pair(&PingpongConfig { oob_port: 0, ..Default::default() }).unwrap();
    for side in [&pair.server.stats, &pair.client.stats] {
        assert_eq!((side.rcnt, side.scnt, side.bytes_total), (1000, 1000, 8_192_000));
    }
    format!("binary exit 0 in {:.2}s, rcnt = scnt = 1000 on both sides", wall.as_secs_f64())
}

/// Checks one "  local address:  LID 0x…, QPN 0x…, PSN 0x…, GID ::" line.
fn check_address_line(line: &str, label: &str) -> (String, String, String) {
    let rest = line.strip_prefix(label).unwrap_or_else(|| panic!("bad prefix: {line:?}"));
    let parts: Vec<&str> = rest.split(", ").collect();
    assert_eq!(parts.len(), 4, "{line:?}");
    let hex = |part: &str, key: &str, width: usize| {
        let v = part.strip_prefix(key).unwrap_or_else(|| panic!("{line:?}"));
        assert_eq!(v.len(), width, "{key} width in {line:?}");
        assert!(v.chars().all(|c| c.is_ascii_digit() || ('a'..='f').contains(&c)), "{line:?}");
        v.to_string()
    };
    let lid = hex(parts[0], "LID 0x", 4);
    let qpn = hex(parts[1], "QPN 0x", 6);
    let psn = hex(parts[2], "PSN 0x", 6);
    assert_eq!(parts[3], "GID ::");
    (lid, qpn, psn)
}

fn socket_pingpong() -> String {
    let (server, client) = socket_pair(&[]);
    assert!(server.status.success(), "server: {}", server.stderr);
    assert!(client.status.success(), "client: {}", client.stderr);
    let mut sides = Vec::new();
    for out in [&server, &client] {
        let lines: Vec<&str> = out.stdout.lines().collect();
        assert_eq!(lines.len(), 4, "{}", out.stdout);
        let local = check_address_line(lines[0], "  local address:  ");
        let remote = check_address_line(lines[1], "  remote address: ");
        assert!(lines[2].starts_with("8192000 bytes in "), "{}", lines[2]);
        assert!(lines[3].starts_with("1000 iters in "), "{}", lines[3]);
        sides.push((local, remote));
    }
    assert_eq!(sides[0].0, sides[1].1);
    assert_eq!(sides[1].0, sides[0].1);
    format!("both processes exit 0 with 8192000 bytes; server LID 0x{} client LID 0x{}", sides[0].0 .0, sides[1].0 .0)
}

struct Sm {
    fabric: Fabric,
    node: Node,
    peer: Node,
}

fn sm_attrs(sm: &Sm, to: QpState) -> QpAttributes {
    let mut a = rtr_attrs(sm.peer.lid, sm.peer.qp.qp_num(), 0x42, &Link::default());
    a.qp_state = to;
    a.port_num = 1;
    a.timeout = 14;
    a.retry_cnt = 7;
    a.rnr_retry = 7;
    a.sq_psn = 0x43;
    a.max_rd_atomic = 1;
    a
}

fn sm_fixture(state: QpState) -> Sm {
    let reg = registry();
    let fabric = Fabric::loopback(FaultProfile::none());
    let node = node(&reg, &fabric, "hca0", QueueCaps::new(4, 4, 1, 1), 16);
    let peer = node_in_registry(&reg, &fabric);
    let sm = Sm { fabric, node, peer };
    let path: &[QpState] = match state {
        QpState::Reset => &[],
        QpState::Init => &[QpState::Init],
        QpState::Rtr => &[QpState::Init, QpState::Rtr],
        QpState::Rts => &[QpState::Init, QpState::Rtr, QpState::Rts],
        QpState::Err => &[QpState::Err],
    };
    for &s in path {
        sm.node.qp.modify(&sm_attrs(&sm, s), AttrMask::required_for(s)).unwrap();
    }
    sm
}

fn node_in_registry(reg: &softverbs::verbs::DeviceRegistry, fabric: &Fabric) -> Node {
    node(reg, fabric, "hca1", QueueCaps::new(4, 4, 1, 1), 16)
}

fn state_machine_table() -> String {
    let legal = |from: QpState, to: QpState| {
        matches!(
            (from, to),
            (QpState::Reset, QpState::Init) | (QpState::Init, QpState::Rtr) | (QpState::Rtr, QpState::Rts)
        ) || matches!(to, QpState::Err | QpState::Reset)
    };
    let mut cases = 0;
    for from in QpState::ALL {
        for to in QpState::ALL {
            let required = AttrMask::required_for(to);
            let sm = sm_fixture(from);
            let before = sm.node.qp.query();
            let r = sm.node.qp.modify(&sm_attrs(&sm, to), required);
            cases += 1;
            if legal(from, to) {
                assert!(r.is_ok(), "{from:?}->{to:?} complete mask: {r:?}");
                assert_eq!(sm.node.qp.state(), to);
            } else {
                assert!(matches!(r, Err(VerbsError::IllegalTransition { .. })), "{from:?}->{to:?}: {r:?}");
                assert_eq!((sm.node.qp.state(), sm.node.qp.query()), (from, before));
            }
            // every required field other than the state itself, left out in turn;
            // for ERR and RESET only the state is required, so drop that
            let omit: Vec<AttrMask> = if required == AttrMask::STATE {
                vec![AttrMask::STATE]
            } else {
                required.difference(AttrMask::STATE).iter().collect()
            };
            for bit in omit {
                let sm = sm_fixture(from);
                let before = sm.node.qp.query();
                let r = sm.node.qp.modify(&sm_attrs(&sm, to), required.difference(bit));
                cases += 1;
                if bit == AttrMask::STATE {
                    // no state requested: nothing may move
                    assert!(r.is_ok());
                } else {
                    assert!(r.is_err(), "{from:?}->{to:?} without {bit:?} succeeded");
                }
                assert_eq!(sm.node.qp.state(), from, "{from:?}->{to:?} without {bit:?}");
                if bit != AttrMask::STATE {
                    assert_eq!(sm.node.qp.query(), before);
                }
            }
        }
    }

    for state in QpState::ALL.into_iter().filter(|&s| s != QpState::Rts) {
        let sm = sm_fixture(state);
        let wr =
            SendWr { wr_id: 1, sg_list: vec![sm.node.sge(0, 8)], opcode: SendOpcode::Send, flags: SendFlags::SIGNALED };
        assert_eq!(sm.node.qp.post_send(&[wr]).unwrap_err().kind, PostErrorKind::InvalidState(state));
    }

    for state in [QpState::Reset, QpState::Init] {
        let sm = sm_fixture(state);
        if state == QpState::Init {
            sm.node.post_recv(1, 0, 4096);
        }
        let lo = sm.fabric.loopback_control().unwrap();
        for psn in 0..8 {
            let f = Frame::data(sm.node.qp.qp_num(), psn, softverbs::fabric::Segment::Only, vec![1; 32]);
            lo.inject(sm.node.lid, f.encode(Mtu::Mtu1024).unwrap());
        }
        lo.run_until_idle(STEPS);
        assert!(sm.node.recv_cq.is_empty() && sm.node.send_cq.is_empty(), "{state:?} produced a CQE");
        assert_eq!(sm.node.qp.state(), state);
    }
    format!("{cases} modify cases, post_send rejected in 4 states, 0 CQEs in RESET/INIT")
}

fn exactly_once_under_faults() -> String {
    const MESSAGES: u32 = 1000;
    let faults = FaultProfile::new(0.2, 0.1, 0.1, 0x5eed).unwrap();
    let p = pair(faults, QueueCaps::new(16, 64, 1, 1), Link { mtu: Mtu::Mtu1024, ..Link::default() }, 0x77, 0x99);
    let mut received: Vec<WorkCompletion> = Vec::new();
    let mut send_wcs = 0u32;
    let (mut sent, mut posted) = (0u32, 0u32);
    while (received.len() as u32) < MESSAGES {
        while posted < MESSAGES && p.b.qp.recv_queue_len() < 64 {
            p.b.post_recv(posted as u64, (posted as usize % 64) * 4096, 4096);
            posted += 1;
        }
        while sent < MESSAGES && p.a.qp.send_queue_len() < 16 {
            p.a.send(sent as u64, (sent as usize % 16) * 4096, &payload(sent, 4096));
            sent += 1;
        }
        assert!(p.lo.step(), "fabric stalled after {} messages", received.len());
        for wc in p.b.drain_recv() {
            assert_eq!(wc.status, WcStatus::Success);
            let i = received.len() as u64;
            assert_eq!(wc.wr_id, i, "out of order or duplicated delivery");
            assert_eq!(wc.byte_len, 4096);
            let off = (i as usize % 64) * 4096;
            assert!(p.b.buf.read(off..off + 4096) == payload(i as u32, 4096), "message {i} corrupted");
            received.push(wc);
        }
        for wc in p.a.drain_send() {
            assert_eq!(wc.status, WcStatus::Success, "sender saw {wc:?}");
            send_wcs += 1;
        }
    }
    p.lo.run_until_idle(STEPS);
    assert!(p.b.drain_recv().is_empty(), "extra receive completions");
    send_wcs += p.a.drain_send().len() as u32;
    assert_eq!(send_wcs, MESSAGES);
    let s = p.fabric.stats();
    assert!(s.dropped > 0 && s.duplicated > 0 && s.reordered > 0);
    format!(
        "1000 x 4096 B delivered once, in order, intact; {} frames sent, {} dropped, {} duplicated, {} reordered",
        s.frames_sent, s.dropped, s.duplicated, s.reordered
    )
}

fn retry_exhaustion() -> String {
    let p = pair(FaultProfile::none(), QueueCaps::new(4, 4, 1, 1), Link::default(), 0x1000, 0x2000);
    p.lo.enable_trace();
    p.b.post_recv(1, 0, 4096);
    // drop every transmission of the first data frame
    p.lo.set_drop_filter(|_, f| f.kind() == FrameKind::Data && f.psn == 0x1000);
    p.a.send(7, 0, &[3; 100]);
    p.lo.run_until_idle(STEPS);
    let attempts = p.lo.trace().iter().filter(|r| r.filtered).count();
    assert_eq!(attempts, 1 + 7, "one original transmission plus retry_cnt retransmissions");
    let wc = p.a.drain_send();
    assert_eq!(wc.len(), 1);
    assert_eq!(wc[0].status, WcStatus::RetryExceeded);
    assert_eq!(p.a.qp.state(), QpState::Err);
    assert!(p.b.drain_recv().is_empty());
    "7 retransmissions, then RetryExceeded and ERR".into()
}

fn receiver_not_ready() -> String {
    let p = default_pair();
    p.lo.enable_trace();
    for i in 0..3 {
        p.a.send(i, i as usize * 4096, &payload(i as u32, 2000));
    }
    p.lo.drain_frames(STEPS);
    let naks = p.lo.trace().iter().filter(|r| r.bytes[2] == FrameKind::RnrNak as u8).count();
    assert!(naks >= 1, "no RNR_NAK seen");
    for i in 0..3 {
        p.b.post_recv(10 + i, i as usize * 4096, 4096);
    }
    p.lo.run_until_idle(STEPS);
    let s = p.a.drain_send();
    let r = p.b.drain_recv();
    assert_eq!(s.len(), 3);
    assert!(s.iter().all(|w| w.status == WcStatus::Success), "{s:?}");
    assert_eq!(r.iter().map(|w| w.wr_id).collect::<Vec<_>>(), [10, 11, 12]);
    for i in 0..3 {
        assert_eq!(p.b.buf.read(i * 4096..i * 4096 + 2000), payload(i as u32, 2000));
    }

    let q = pair(FaultProfile::none(), QueueCaps::new(4, 4, 1, 1), Link { rnr_retry: 0, ..Link::default() }, 1, 2);
    q.a.send(1, 0, &[1; 10]);
    q.lo.run_until_idle(STEPS);
    let wc = q.a.drain_send();
    assert_eq!(wc[0].status, WcStatus::RnrRetryExceeded);
    assert_eq!(q.a.qp.state(), QpState::Err);
    format!("{naks} RNR_NAKs then 3 successes; budget 0 gives RnrRetryExceeded")
}

fn cq_overflow() -> String {
    const CAP: usize = 8;
    let reg = registry();
    let fabric = Fabric::loopback(FaultProfile::none());
    let a = node(&reg, &fabric, "hca0", QueueCaps::new(16, 16, 1, 1), 32);
    let b = node(&reg, &fabric, "hca1", QueueCaps::new(16, 16, 1, 1), CAP);
    connect(&a, &b, 0, 0, &Link::default());
    let lo = fabric.loopback_control().unwrap();
    for i in 0..CAP as u64 {
        b.post_recv(i, 0, 64);
        a.send(i, 0, &[1]);
    }
    lo.run_until_idle(STEPS);
    assert_eq!(b.recv_cq.len(), CAP);
    assert_eq!(b.recv_cq.status(), CqStatus::Ok);
    b.post_recv(99, 0, 64);
    a.send(99, 0, &[1]);
    lo.run_until_idle(STEPS);
    assert_eq!(b.recv_cq.status(), CqStatus::Error);
    assert_eq!(b.recv_cq.poll(1).unwrap_err(), PollError::CqError);
    assert_eq!(b.recv_cq.poll(CAP + 1).unwrap_err(), PollError::CqError);
    format!("capacity {CAP}: entry {} latched Error, poll reports CqError", CAP + 1)
}

fn codec_oracles() -> String {
    let mut runner = TestRunner::new(Config { cases: 10_000, failure_persistence: None, ..Config::default() });
    runner
        .run(&arb_frame(), |f| {
            let bytes = f.encode(Mtu::Mtu4096).unwrap();
            proptest::prop_assert_eq!(Frame::decode(&bytes).unwrap(), f);
            Ok(())
        })
        .unwrap();
    let mut runner = TestRunner::new(Config { cases: 10_000, failure_persistence: None, ..Config::default() });
    runner
        .run(&arb_destination(), |d| {
            proptest::prop_assert_eq!(Destination::decode(&d.encode()).unwrap(), d);
            Ok(())
        })
        .unwrap();

    let ack = [0x56, 0x42, 0x01, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00];
    assert_eq!(Frame::decode(&ack).unwrap(), Frame::ack(1, 0));
    assert_eq!(Frame::ack(1, 0).encode(Mtu::Mtu256).unwrap(), ack);
    assert!(matches!(Frame::decode(&ack).unwrap().body, FrameBody::Ack));
    let line = "0008:580048:2a166f:00000000000000000000000000000000\n";
    let d = Destination::decode(line).unwrap();
    assert_eq!(d, Destination { lid: 8, qpn: 0x580048, psn: 0x2a166f, gid: Gid::ZERO });
    assert_eq!(d.encode(), line);
    "10000 frame and 10000 destination round trips; worked ACK and destination vectors exact".into()
}

#[derive(Default)]
struct CreditLog {
    min_routs: Option<u32>,
    reposts: Vec<(u32, u32)>,
    recvs: u32,
}

impl LoopMonitor for CreditLog {
    fn on_iteration(&mut self, routs: u32) {
        self.min_routs = Some(self.min_routs.map_or(routs, |m| m.min(routs)));
    }
    fn on_repost(&mut self, before: u32, after: u32) {
        self.reposts.push((before, after));
    }
    fn on_completion(&mut self, wc: &WorkCompletion) {
        self.recvs += (wc.wr_id == RECV_WRID) as u32;
    }
}

fn receive_credits() -> String {
    let mut server = CreditLog::default();
    let mut client = CreditLog::default();
    let cfg = PingpongConfig { oob_port: 0, ..Default::default() };
    pingpong::run_loopback_pair_monitored(&cfg, &mut server, &mut client).unwrap();
    for log in [&server, &client] {
        assert_eq!(log.recvs, 1000);
        // 500 posted up front; each repost fires on the receive that leaves one
        assert_eq!(log.reposts, vec![(1, 500), (1, 500)]);
        assert!(log.min_routs.unwrap() >= 1, "routs reached {:?}", log.min_routs);
    }
    format!(
        "2 reposts per side, each at routs = 1 restoring 500; minimum routs seen {}",
        server.min_routs.min(client.min_routs).unwrap()
    )
}

fn stale_replay() -> String {
    let p = default_pair();
    p.lo.enable_trace();
    for i in 0..12u32 {
        p.b.post_recv(i as u64, i as usize * 4096, 4096);
        p.a.send(i as u64, i as usize * 4096, &payload(i, 3000));
    }
    p.lo.run_until_idle(STEPS);
    assert_eq!((p.a.drain_send().len(), p.b.drain_recv().len()), (12, 12));
    let trace = p.lo.take_trace();
    assert!(!trace.is_empty());

    // fresh connection between the same queue pairs, PSNs moved by 2^22
    for n in [&p.a, &p.b] {
        n.qp.modify(&QpAttributes { qp_state: QpState::Reset, ..Default::default() }, AttrMask::STATE).unwrap();
    }
    connect(&p.a, &p.b, 0x100 + 0x40_0000, 0x200 + 0x40_0000, &Link::default());
    for i in 0..20 {
        p.b.post_recv(100 + i, i as usize * 4096, 4096);
        p.a.qp
            .post_recv(&[softverbs::wq::RecvWr { wr_id: 200 + i, sg_list: vec![p.a.sge(i as usize * 4096, 4096)] }])
            .unwrap();
    }
    for rec in &trace {
        p.lo.inject(rec.dlid, rec.bytes.clone());
    }
    p.lo.run_until_idle(STEPS);
    let extra = p.a.drain_send().len() + p.a.drain_recv().len() + p.b.drain_send().len() + p.b.drain_recv().len();
    assert_eq!(extra, 0, "replayed frames produced completions");
    assert_eq!((p.a.qp.state(), p.b.qp.state()), (QpState::Rts, QpState::Rts));

    // the fresh connection still works
    p.a.send(1, 0, b"fresh");
    p.lo.run_until_idle(STEPS);
    let wc = p.b.drain_recv();
    assert_eq!(wc.iter().map(|w| w.wr_id).collect::<Vec<_>>(), [100]);
    format!("{} recorded frames replayed, 0 additional CQEs", trace.len())
}
