//! Queue pairs and the RESET → INIT → RTR → RTS state machine.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex, MutexGuard};

use bitflags::bitflags;

use super::cq::CompletionQueue;
use super::device::Context;
use super::error::{Result, VerbsError};
use super::pd::ProtectionDomain;
use super::types::{AccessFlags, Gid, Lid, Mtu};
use crate::fabric::psn::{is_valid_psn, PSN_MASK};
use crate::fabric::rc::{self, ReceiverState, SenderState};
use crate::fabric::Route;
use crate::wq::{PostedRecv, PostedSend};

/// Upper bound on work requests per queue.
pub const DEVICE_MAX_WR: u32 = 1 << 16;
/// Upper bound on scatter/gather elements per work request.
pub const DEVICE_MAX_SGE: u32 = 32;
/// Partition key table length; only index 0 exists.
pub const PKEY_TABLE_LEN: u16 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum QpState {
    #[default]
    Reset,
    Init,
    /// Ready to receive.
    Rtr,
    /// Ready to send.
    Rts,
    Err,
}

impl QpState {
    pub const ALL: [QpState; 5] = [QpState::Reset, QpState::Init, QpState::Rtr, QpState::Rts, QpState::Err];

    /// Whether `self -> to` is a legal transition.
    pub fn can_transition_to(self, to: QpState) -> bool {
        matches!(
            (self, to),
            (QpState::Reset, QpState::Init)
                | (QpState::Init, QpState::Rtr)
                | (QpState::Rtr, QpState::Rts)
                | (_, QpState::Err)
                | (_, QpState::Reset)
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpType {
    /// Reliable connection.
    Rc,
    /// Unreliable connection (not supported).
    Uc,
    /// Unreliable datagram (not supported).
    Ud,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QueueCaps {
    pub max_send_wr: u32,
    pub max_recv_wr: u32,
    pub max_send_sge: u32,
    pub max_recv_sge: u32,
}

impl QueueCaps {
    pub fn new(max_send_wr: u32, max_recv_wr: u32, max_send_sge: u32, max_recv_sge: u32) -> Self {
        QueueCaps { max_send_wr, max_recv_wr, max_send_sge, max_recv_sge }
    }

    fn validate(&self) -> Result<()> {
        let wr_ok = |n: u32| (1..=DEVICE_MAX_WR).contains(&n);
        let sge_ok = |n: u32| (1..=DEVICE_MAX_SGE).contains(&n);
        if !(wr_ok(self.max_send_wr) && wr_ok(self.max_recv_wr)) {
            return Err(VerbsError::InvalidArgument("work request capacity out of range"));
        }
        if !(sge_ok(self.max_send_sge) && sge_ok(self.max_recv_sge)) {
            return Err(VerbsError::InvalidArgument("scatter/gather capacity out of range"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AddressHandle {
    pub dlid: Lid,
    /// Service level (4 bits). Stored, not used for arbitration.
    pub sl: u8,
    pub src_path_bits: u8,
    pub port_num: u8,
    pub is_global: bool,
    pub dgid: Gid,
}

/// Queue pair attributes; which fields a modify applies is chosen by an [`AttrMask`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QpAttributes {
    pub qp_state: QpState,
    pub pkey_index: u16,
    pub port_num: u8,
    pub qp_access_flags: AccessFlags,
    pub path_mtu: Mtu,
    pub dest_qp_num: u32,
    pub rq_psn: u32,
    pub sq_psn: u32,
    pub max_dest_rd_atomic: u8,
    pub max_rd_atomic: u8,
    /// Encoded RNR delay (5 bits).
    pub min_rnr_timer: u8,
    /// Encoded ACK timeout (5 bits).
    pub timeout: u8,
    pub retry_cnt: u8,
    pub rnr_retry: u8,
    pub ah: AddressHandle,
}

impl Default for QpAttributes {
    fn default() -> Self {
        QpAttributes {
            qp_state: QpState::Reset,
            pkey_index: 0,
            port_num: 0,
            qp_access_flags: AccessFlags::empty(),
            path_mtu: Mtu::default(),
            dest_qp_num: 0,
            rq_psn: 0,
            sq_psn: 0,
            max_dest_rd_atomic: 0,
            max_rd_atomic: 0,
            min_rnr_timer: 0,
            timeout: 0,
            retry_cnt: 0,
            rnr_retry: 0,
            ah: AddressHandle::default(),
        }
    }
}

bitflags! {
    /// Selects the [`QpAttributes`] fields a modify call writes.
    #[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
    pub struct AttrMask: u32 {
        const STATE = 1 << 0;
        const PKEY_INDEX = 1 << 1;
        const PORT = 1 << 2;
        const ACCESS_FLAGS = 1 << 3;
        const AV = 1 << 4;
        const PATH_MTU = 1 << 5;
        const DEST_QPN = 1 << 6;
        const RQ_PSN = 1 << 7;
        const MAX_DEST_RD_ATOMIC = 1 << 8;
        const MIN_RNR_TIMER = 1 << 9;
        const TIMEOUT = 1 << 10;
        const RETRY_CNT = 1 << 11;
        const RNR_RETRY = 1 << 12;
        const SQ_PSN = 1 << 13;
        const MAX_QP_RD_ATOMIC = 1 << 14;
    }
}

impl AttrMask {
    pub const INIT_REQUIRED: AttrMask =
        AttrMask::STATE.union(AttrMask::PKEY_INDEX).union(AttrMask::PORT).union(AttrMask::ACCESS_FLAGS);

    pub const RTR_REQUIRED: AttrMask = AttrMask::STATE
        .union(AttrMask::AV)
        .union(AttrMask::PATH_MTU)
        .union(AttrMask::DEST_QPN)
        .union(AttrMask::RQ_PSN)
        .union(AttrMask::MAX_DEST_RD_ATOMIC)
        .union(AttrMask::MIN_RNR_TIMER);

    pub const RTS_REQUIRED: AttrMask = AttrMask::STATE
        .union(AttrMask::TIMEOUT)
        .union(AttrMask::RETRY_CNT)
        .union(AttrMask::RNR_RETRY)
        .union(AttrMask::SQ_PSN)
        .union(AttrMask::MAX_QP_RD_ATOMIC);

    /// Fields that must accompany a transition into `target`.
    pub fn required_for(target: QpState) -> AttrMask {
        match target {
            QpState::Init => Self::INIT_REQUIRED,
            QpState::Rtr => Self::RTR_REQUIRED,
            QpState::Rts => Self::RTS_REQUIRED,
            QpState::Reset | QpState::Err => AttrMask::STATE,
        }
    }

    pub fn is_well_formed(self) -> bool {
        self.bits() & !Self::all().bits() == 0
    }
}

pub struct QpInitAttr {
    pub send_cq: CompletionQueue,
    pub recv_cq: CompletionQueue,
    pub caps: QueueCaps,
    pub qp_type: QpType,
    /// Accepted for API parity; every send completes signaled.
    pub sq_sig_all: bool,
}

pub(crate) struct QpInner {
    pub(crate) state: QpState,
    pub(crate) attrs: QpAttributes,
    pub(crate) send_queue: VecDeque<PostedSend>,
    pub(crate) recv_queue: VecDeque<PostedRecv>,
    pub(crate) sender: SenderState,
    pub(crate) receiver: ReceiverState,
    pub(crate) route: Option<Route>,
    pub(crate) destroyed: bool,
}

pub(crate) struct QpShared {
    pub(crate) qpn: u32,
    pub(crate) pd: ProtectionDomain,
    pub(crate) send_cq: CompletionQueue,
    pub(crate) recv_cq: CompletionQueue,
    pub(crate) caps: QueueCaps,
    pub(crate) sq_sig_all: bool,
    pub(crate) inner: Mutex<QpInner>,
}

impl QpShared {
    pub(crate) fn lock(&self) -> MutexGuard<'_, QpInner> {
        self.inner.lock().unwrap()
    }

    pub(crate) fn context(&self) -> &Context {
        self.pd.context()
    }
}

/// A reliable-connection queue pair.
#[derive(Clone)]
pub struct QueuePair {
    pub(crate) shared: Arc<QpShared>,
}

impl ProtectionDomain {
    pub fn create_qp(&self, init: &QpInitAttr) -> Result<QueuePair> {
        if init.qp_type != QpType::Rc {
            return Err(VerbsError::UnsupportedQpType);
        }
        init.caps.validate()?;
        let ctx = self.context();
        if !init.send_cq.context().same_as(ctx) || !init.recv_cq.context().same_as(ctx) {
            return Err(VerbsError::CrossContext);
        }
        let mut ctx_state = ctx.lock_open()?;
        let mut pd_state = self.inner.state.lock().unwrap();
        if pd_state.destroyed {
            return Err(VerbsError::Destroyed("protection domain"));
        }
        {
            let mut s = init.send_cq.lock();
            if s.destroyed {
                return Err(VerbsError::Destroyed("completion queue"));
            }
            s.qp_refs += 1;
        }
        {
            let mut r = init.recv_cq.lock();
            if r.destroyed {
                drop(r);
                init.send_cq.lock().qp_refs -= 1;
                return Err(VerbsError::Destroyed("completion queue"));
            }
            r.qp_refs += 1;
        }
        let qpn = ctx_state.next_qpn;
        if qpn > PSN_MASK {
            init.send_cq.lock().qp_refs -= 1;
            init.recv_cq.lock().qp_refs -= 1;
            return Err(VerbsError::InvalidArgument("queue pair numbers exhausted"));
        }
        ctx_state.next_qpn += 1;
        pd_state.live_qps += 1;

        let shared = QpShared {
            qpn,
            pd: self.clone(),
            send_cq: init.send_cq.clone(),
            recv_cq: init.recv_cq.clone(),
            caps: init.caps,
            sq_sig_all: init.sq_sig_all,
            inner: Mutex::new(QpInner {
                state: QpState::Reset,
                attrs: QpAttributes::default(),
                send_queue: VecDeque::new(),
                recv_queue: VecDeque::new(),
                sender: SenderState::new(0),
                receiver: ReceiverState::new(0),
                route: None,
                destroyed: false,
            }),
        };
        Ok(QueuePair { shared: Arc::new(shared) })
    }
}

impl QueuePair {
    pub fn qp_num(&self) -> u32 {
        self.shared.qpn
    }

    pub fn state(&self) -> QpState {
        self.shared.lock().state
    }

    /// Current attributes, with `qp_state` reporting the live state.
    pub fn query(&self) -> QpAttributes {
        let inner = self.shared.lock();
        QpAttributes { qp_state: inner.state, ..inner.attrs }
    }

    pub fn caps(&self) -> QueueCaps {
        self.shared.caps
    }

    pub fn sq_sig_all(&self) -> bool {
        self.shared.sq_sig_all
    }

    pub fn pd(&self) -> &ProtectionDomain {
        &self.shared.pd
    }

    pub fn send_cq(&self) -> &CompletionQueue {
        &self.shared.send_cq
    }

    pub fn recv_cq(&self) -> &CompletionQueue {
        &self.shared.recv_cq
    }

    pub fn send_queue_len(&self) -> usize {
        self.shared.lock().send_queue.len()
    }

    pub fn recv_queue_len(&self) -> usize {
        self.shared.lock().recv_queue.len()
    }

    /// Next PSN the receive side will accept.
    pub fn expected_psn(&self) -> u32 {
        self.shared.lock().receiver.expected_psn
    }

    /// PSN the next transmitted frame will carry.
    pub fn next_send_psn(&self) -> u32 {
        self.shared.lock().sender.next_psn
    }

    /// PSNs of frames sent but not yet acknowledged, oldest first.
    pub fn unacked_psns(&self) -> Vec<u32> {
        self.shared.lock().sender.unacked.iter().map(|f| f.psn).collect()
    }

    pub fn same_as(&self, other: &QueuePair) -> bool {
        Arc::ptr_eq(&self.shared, &other.shared)
    }

    /// Writes exactly the fields selected by `mask`, applying a state
    /// transition when `STATE` is among them.
    ///
    /// On any failure the queue pair is left untouched.
    pub fn modify(&self, attrs: &QpAttributes, mask: AttrMask) -> Result<()> {
        let mut inner = self.shared.lock();
        if inner.destroyed {
            return Err(VerbsError::Destroyed("queue pair"));
        }
        if !mask.is_well_formed() {
            return Err(VerbsError::InvalidArgument("undefined attribute mask bits"));
        }
        self.validate_values(attrs, mask)?;

        let current = inner.state;
        let target = mask.contains(AttrMask::STATE).then_some(attrs.qp_state);
        if let Some(to) = target {
            if !current.can_transition_to(to) {
                return Err(VerbsError::IllegalTransition { from: current, to });
            }
            let missing = AttrMask::required_for(to).difference(mask);
            if !missing.is_empty() {
                return Err(VerbsError::IncompleteMask { from: current, to, missing });
            }
        }

        let mut next = inner.attrs;
        apply_masked(&mut next, attrs, mask);

        let route = match target {
            Some(QpState::Rtr) => Some(self.resolve_route(next.port_num)?),
            _ => None,
        };

        inner.attrs = next;
        match target {
            None => {}
            Some(QpState::Init) => inner.state = QpState::Init,
            Some(QpState::Rtr) => {
                let route = route.expect("resolved above");
                route.fabric.bind(route.local_lid, self.shared.qpn, Arc::downgrade(&self.shared));
                inner.receiver = ReceiverState::new(inner.attrs.rq_psn);
                inner.route = Some(route);
                inner.state = QpState::Rtr;
            }
            Some(QpState::Rts) => {
                inner.sender = SenderState::new(inner.attrs.sq_psn);
                inner.state = QpState::Rts;
            }
            Some(QpState::Err) => rc::enter_error(&self.shared, &mut inner, None),
            Some(QpState::Reset) => self.reset_locked(&mut inner),
        }
        Ok(())
    }

    fn validate_values(&self, attrs: &QpAttributes, mask: AttrMask) -> Result<()> {
        let bad = |what| Err(VerbsError::InvalidArgument(what));
        if mask.contains(AttrMask::PKEY_INDEX) && attrs.pkey_index >= PKEY_TABLE_LEN {
            return bad("pkey index out of range");
        }
        if mask.contains(AttrMask::PORT) {
            let ctx = self.shared.context().lock_open()?;
            if !ctx.ports.contains_key(&attrs.port_num) {
                return Err(VerbsError::InvalidPort(attrs.port_num));
            }
        }
        if mask.contains(AttrMask::ACCESS_FLAGS) && !attrs.qp_access_flags.is_well_formed() {
            return bad("undefined access flag bits");
        }
        if mask.contains(AttrMask::AV) {
            if attrs.ah.sl > 15 {
                return bad("service level exceeds 4 bits");
            }
            if !attrs.ah.is_global && !attrs.ah.dgid.is_zero() {
                return bad("non-global address handle with nonzero GID");
            }
        }
        if mask.contains(AttrMask::DEST_QPN) && attrs.dest_qp_num > PSN_MASK {
            return bad("destination QPN exceeds 24 bits");
        }
        if mask.contains(AttrMask::RQ_PSN) && !is_valid_psn(attrs.rq_psn) {
            return bad("rq_psn exceeds 24 bits");
        }
        if mask.contains(AttrMask::SQ_PSN) && !is_valid_psn(attrs.sq_psn) {
            return bad("sq_psn exceeds 24 bits");
        }
        if mask.contains(AttrMask::MIN_RNR_TIMER) && attrs.min_rnr_timer > 31 {
            return bad("min_rnr_timer exceeds 5 bits");
        }
        if mask.contains(AttrMask::TIMEOUT) && attrs.timeout > 31 {
            return bad("timeout exceeds 5 bits");
        }
        if mask.contains(AttrMask::RETRY_CNT) && attrs.retry_cnt > 7 {
            return bad("retry_cnt exceeds 7");
        }
        if mask.contains(AttrMask::RNR_RETRY) && attrs.rnr_retry > 7 {
            return bad("rnr_retry exceeds 7");
        }
        Ok(())
    }

    fn resolve_route(&self, port: u8) -> Result<Route> {
        let ctx = self.shared.context().lock_open()?;
        let slot = ctx.ports.get(&port).ok_or(VerbsError::InvalidPort(port))?;
        match (&slot.fabric, slot.attrs.lid) {
            (Some(fabric), lid) if lid != 0 => Ok(Route { fabric: fabric.clone(), local_lid: lid }),
            _ => Err(VerbsError::PortNotActive(port)),
        }
    }

    fn reset_locked(&self, inner: &mut QpInner) {
        if let Some(route) = inner.route.take() {
            route.fabric.unbind(route.local_lid, self.shared.qpn);
        }
        inner.send_queue.clear();
        inner.recv_queue.clear();
        inner.sender = SenderState::new(0);
        inner.receiver = ReceiverState::new(0);
        inner.state = QpState::Reset;
    }

    /// Destroys the queue pair, discarding outstanding work without completions.
    pub fn destroy(&self) -> Result<()> {
        let mut inner = self.shared.lock();
        if inner.destroyed {
            return Err(VerbsError::Destroyed("queue pair"));
        }
        self.reset_locked(&mut inner);
        inner.destroyed = true;
        drop(inner);
        self.shared.send_cq.lock().qp_refs -= 1;
        self.shared.recv_cq.lock().qp_refs -= 1;
        self.shared.pd.inner.state.lock().unwrap().live_qps -= 1;
        Ok(())
    }
}

impl std::fmt::Debug for QueuePair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("QueuePair").field("qpn", &format_args!("{:#08x}", self.shared.qpn)).finish()
    }
}

fn apply_masked(dst: &mut QpAttributes, src: &QpAttributes, mask: AttrMask) {
    if mask.contains(AttrMask::STATE) {
        dst.qp_state = src.qp_state;
    }
    if mask.contains(AttrMask::PKEY_INDEX) {
        dst.pkey_index = src.pkey_index;
    }
    if mask.contains(AttrMask::PORT) {
        dst.port_num = src.port_num;
    }
    if mask.contains(AttrMask::ACCESS_FLAGS) {
        dst.qp_access_flags = src.qp_access_flags;
    }
    if mask.contains(AttrMask::AV) {
        dst.ah = src.ah;
    }
    if mask.contains(AttrMask::PATH_MTU) {
        dst.path_mtu = src.path_mtu;
    }
    if mask.contains(AttrMask::DEST_QPN) {
        dst.dest_qp_num = src.dest_qp_num;
    }
    if mask.contains(AttrMask::RQ_PSN) {
        dst.rq_psn = src.rq_psn;
    }
    if mask.contains(AttrMask::MAX_DEST_RD_ATOMIC) {
        dst.max_dest_rd_atomic = src.max_dest_rd_atomic;
    }
    if mask.contains(AttrMask::MIN_RNR_TIMER) {
        dst.min_rnr_timer = src.min_rnr_timer;
    }
    if mask.contains(AttrMask::TIMEOUT) {
        dst.timeout = src.timeout;
    }
    if mask.contains(AttrMask::RETRY_CNT) {
        dst.retry_cnt = src.retry_cnt;
    }
    if mask.contains(AttrMask::RNR_RETRY) {
        dst.rnr_retry = src.rnr_retry;
    }
    if mask.contains(AttrMask::SQ_PSN) {
        dst.sq_psn = src.sq_psn;
    }
    if mask.contains(AttrMask::MAX_QP_RD_ATOMIC) {
        dst.max_rd_atomic = src.max_rd_atomic;
    }
}
