//! Two-node fixtures shared by the integration tests.
#![allow(dead_code)]

use softverbs::fabric::{Fabric, FaultProfile, Loopback};
use softverbs::verbs::{
    AccessFlags, AddressHandle, AttrMask, Buffer, CompletionQueue, Context, Device, DeviceRegistry, Lid, MemoryRegion,
    Mtu, ProtectionDomain, QpAttributes, QpInitAttr, QpState, QpType, QueueCaps, QueuePair,
};
use softverbs::wq::{RecvWr, SendFlags, SendOpcode, SendWr, Sge, WorkCompletion};

pub const BUF_LEN: usize = 1 << 20;

pub struct Node {
    pub ctx: Context,
    pub pd: ProtectionDomain,
    pub buf: Buffer,
    pub mr: MemoryRegion,
    pub send_cq: CompletionQueue,
    pub recv_cq: CompletionQueue,
    pub qp: QueuePair,
    pub lid: Lid,
}

#[derive(Clone, Copy, Debug)]
pub struct Link {
    pub mtu: Mtu,
    pub timeout: u8,
    pub retry_cnt: u8,
    pub rnr_retry: u8,
    pub min_rnr_timer: u8,
}

impl Default for Link {
    fn default() -> Self {
        Link { mtu: Mtu::Mtu1024, timeout: 14, retry_cnt: 7, rnr_retry: 7, min_rnr_timer: 12 }
    }
}

pub fn registry() -> DeviceRegistry {
    let reg = DeviceRegistry::new();
    reg.add(Device::new("hca0", 0x11)).unwrap();
    reg.add(Device::new("hca1", 0x22)).unwrap();
    reg
}

pub fn node(reg: &DeviceRegistry, fabric: &Fabric, dev: &str, caps: QueueCaps, cq_cap: usize) -> Node {
    let ctx = reg.open_device(&reg.find(dev).unwrap()).unwrap();
    let send_cq = ctx.create_cq(cq_cap, 0, None, 0).unwrap();
    let recv_cq = ctx.create_cq(cq_cap, 0, None, 0).unwrap();
    node_in(ctx, fabric, caps, send_cq, recv_cq)
}

/// Builds a node on an opened context with caller-supplied CQs.
pub fn node_in(
    ctx: Context,
    fabric: &Fabric,
    caps: QueueCaps,
    send_cq: CompletionQueue,
    recv_cq: CompletionQueue,
) -> Node {
    let lid = fabric.attach(&ctx, 1).unwrap();
    let pd = ctx.alloc_pd().unwrap();
    let buf = Buffer::alloc(BUF_LEN);
    let mr = pd.reg_mr(&buf, 0..BUF_LEN, AccessFlags::LOCAL_WRITE).unwrap();
    let qp = pd
        .create_qp(&QpInitAttr {
            send_cq: send_cq.clone(),
            recv_cq: recv_cq.clone(),
            caps,
            qp_type: QpType::Rc,
            sq_sig_all: true,
        })
        .unwrap();
    Node { ctx, pd, buf, mr, send_cq, recv_cq, qp, lid }
}

pub fn to_init(qp: &QueuePair) {
    let a = QpAttributes { qp_state: QpState::Init, port_num: 1, ..Default::default() };
    qp.modify(&a, AttrMask::INIT_REQUIRED).unwrap();
}

pub fn rtr_attrs(peer_lid: Lid, peer_qpn: u32, rq_psn: u32, link: &Link) -> QpAttributes {
    QpAttributes {
        qp_state: QpState::Rtr,
        path_mtu: link.mtu,
        dest_qp_num: peer_qpn,
        rq_psn,
        max_dest_rd_atomic: 1,
        min_rnr_timer: link.min_rnr_timer,
        ah: AddressHandle { dlid: peer_lid, port_num: 1, ..Default::default() },
        ..Default::default()
    }
}

/// Moves an INIT queue pair to RTS towards the peer.
pub fn to_rts(qp: &QueuePair, peer_lid: Lid, peer_qpn: u32, my_psn: u32, peer_psn: u32, link: &Link) {
    let mut a = rtr_attrs(peer_lid, peer_qpn, peer_psn, link);
    qp.modify(&a, AttrMask::RTR_REQUIRED).unwrap();
    a.qp_state = QpState::Rts;
    a.timeout = link.timeout;
    a.retry_cnt = link.retry_cnt;
    a.rnr_retry = link.rnr_retry;
    a.sq_psn = my_psn;
    a.max_rd_atomic = 1;
    qp.modify(&a, AttrMask::RTS_REQUIRED).unwrap();
}

pub fn connect(a: &Node, b: &Node, a_psn: u32, b_psn: u32, link: &Link) {
    to_init(&a.qp);
    to_init(&b.qp);
    to_rts(&a.qp, b.lid, b.qp.qp_num(), a_psn, b_psn, link);
    to_rts(&b.qp, a.lid, a.qp.qp_num(), b_psn, a_psn, link);
}

pub struct Pair {
    pub fabric: Fabric,
    pub lo: Loopback,
    pub a: Node,
    pub b: Node,
}

/// Two connected nodes on a fresh loopback fabric.
pub fn pair(faults: FaultProfile, caps: QueueCaps, link: Link, a_psn: u32, b_psn: u32) -> Pair {
    let reg = registry();
    let fabric = Fabric::loopback(faults);
    let lo = fabric.loopback_control().unwrap();
    let a = node(&reg, &fabric, "hca0", caps, 4096);
    let b = node(&reg, &fabric, "hca1", caps, 4096);
    connect(&a, &b, a_psn, b_psn, &link);
    Pair { fabric, lo, a, b }
}

pub fn default_pair() -> Pair {
    pair(FaultProfile::none(), QueueCaps::new(16, 64, 4, 4), Link::default(), 0x100, 0x200)
}

impl Node {
    pub fn sge(&self, offset: usize, len: usize) -> Sge {
        Sge { addr: self.buf.addr() + offset as u64, length: len as u32, lkey: self.mr.lkey() }
    }

    pub fn post_recv(&self, wr_id: u64, offset: usize, len: usize) {
        self.qp.post_recv(&[RecvWr { wr_id, sg_list: vec![self.sge(offset, len)] }]).unwrap();
    }

    /// Writes `data` at `offset` and posts it as one SEND.
    pub fn send(&self, wr_id: u64, offset: usize, data: &[u8]) {
        self.buf.write(offset, data);
        self.qp
            .post_send(&[SendWr {
                wr_id,
                sg_list: vec![self.sge(offset, data.len())],
                opcode: SendOpcode::Send,
                flags: SendFlags::SIGNALED,
            }])
            .unwrap();
    }

    pub fn drain_send(&self) -> Vec<WorkCompletion> {
        self.send_cq.poll(usize::MAX).unwrap()
    }

    pub fn drain_recv(&self) -> Vec<WorkCompletion> {
        self.recv_cq.poll(usize::MAX).unwrap()
    }
}

/// Deterministic payload for message `i`.
pub fn payload(i: u32, len: usize) -> Vec<u8> {
    (0..len).map(|j| (i as usize * 31 + j * 7 + (j >> 8)) as u8).collect()
}

/// Ports currently free on localhost. Held listeners are released on return,
/// so a short race with other processes remains possible.
pub fn free_ports(n: usize) -> Vec<u16> {
    let held: Vec<std::net::TcpListener> =
        (0..n).map(|_| std::net::TcpListener::bind("127.0.0.1:0").unwrap()).collect();
    held.iter().map(|l| l.local_addr().unwrap().port()).collect()
}

/// Output of one `rc_pingpong` process.
pub struct ProcOutput {
    pub status: std::process::ExitStatus,
    pub stdout: String,
    pub stderr: String,
}

fn finish(child: std::process::Child) -> ProcOutput {
    let out = child.wait_with_output().unwrap();
    ProcOutput {
        status: out.status,
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn rc_pingpong(args: &[&str]) -> ProcOutput {
    finish(spawn_rc_pingpong(args))
}

pub fn spawn_rc_pingpong(args: &[&str]) -> std::process::Child {
    std::process::Command::new(env!("CARGO_BIN_EXE_rc_pingpong"))
        .args(args)
        .stdout(std::process::Stdio::piped())
        .stderr(std::process::Stdio::piped())
        .spawn()
        .unwrap()
}

/// Runs a server and a client as separate processes over the socket fabric.
/// `extra` is passed to both. Returns (server, client).
pub fn socket_pair(extra: &[&str]) -> (ProcOutput, ProcOutput) {
    let ports = free_ports(3);
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("fabric.conf");
    std::fs::write(
        &cfg_path,
        format!("lid 1 host 127.0.0.1 port {}\nlid 2 host 127.0.0.1 port {}\n", ports[1], ports[2]),
    )
    .unwrap();
    let oob = ports[0].to_string();
    let cfg = cfg_path.to_str().unwrap().to_string();
    let mut common = vec!["--fabric", "socket", "--fabric-config", cfg.as_str(), "--port", oob.as_str()];
    common.extend_from_slice(extra);

    let server = spawn_rc_pingpong(&common);
    // the server binds its exchange port before its fabric port
    let deadline = std::time::Instant::now() + std::time::Duration::from_secs(10);
    while std::net::TcpStream::connect(("127.0.0.1", ports[1])).is_err() {
        assert!(std::time::Instant::now() < deadline, "server never came up");
        std::thread::sleep(std::time::Duration::from_millis(20));
    }
    let mut client_args = vec!["127.0.0.1"];
    client_args.extend_from_slice(&common);
    let client = rc_pingpong(&client_args);
    (finish(server), client)
}

/// Random frames that satisfy the codec's invariants at `Mtu::Mtu4096`.
pub fn arb_frame() -> impl proptest::strategy::Strategy<Value = softverbs::fabric::Frame> {
    use proptest::prelude::*;
    use softverbs::fabric::{Frame, Segment};
    let seg = prop_oneof![Just(Segment::Only), Just(Segment::First), Just(Segment::Middle), Just(Segment::Last)];
    let qpn = 0u32..=0xFF_FFFF;
    let psn = 0u32..=0xFF_FFFF;
    prop_oneof![
        (qpn.clone(), psn.clone(), seg, proptest::collection::vec(any::<u8>(), 0..=4096))
            .prop_map(|(q, p, s, payload)| Frame::data(q, p, s, payload)),
        (qpn.clone(), psn.clone()).prop_map(|(q, p)| Frame::ack(q, p)),
        (qpn, psn, any::<u8>()).prop_map(|(q, p, h)| Frame::rnr_nak(q, p, h)),
    ]
}

pub fn arb_destination() -> impl proptest::strategy::Strategy<Value = softverbs::oob::Destination> {
    use proptest::prelude::*;
    (any::<u16>(), 0u32..=0xFF_FFFF, 0u32..=0xFF_FFFF, any::<[u8; 16]>())
        .prop_map(|(lid, qpn, psn, gid)| softverbs::oob::Destination { lid, qpn, psn, gid: softverbs::verbs::Gid(gid) })
}
