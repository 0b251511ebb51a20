//! Reliable-connection engine: segmentation, PSN ordering, cumulative ACKs,
//! go-back-N retransmission and receiver-not-ready handling.
//!
//! All handlers run with the queue pair lock held, so work on one QP is
//! serialized. Time is the owning fabric's clock, in microseconds.

use std::collections::VecDeque;

use super::frame::{Frame, FrameBody, Segment};
use super::psn::{psn_add, psn_diff};
use crate::verbs::{Mtu, QpInner, QpShared, QpState};
use crate::wq::{self, WcOpcode, WcStatus, WorkCompletion};

pub(crate) struct InFlight {
    pub(crate) psn: u32,
    pub(crate) frame: Frame,
    pub(crate) sent_at: u64,
    pub(crate) ends_message: bool,
}

pub(crate) struct SenderState {
    pub(crate) next_psn: u32,
    /// Sent, unacknowledged frames; PSNs are consecutive mod 2^24.
    pub(crate) unacked: VecDeque<InFlight>,
    /// Timeout retransmissions since the window last advanced.
    pub(crate) retries_used: u8,
    /// RNR retransmissions since the window last advanced.
    pub(crate) rnr_retries_used: u8,
    pub(crate) rnr_resume_at: Option<u64>,
    /// Start of the current retransmission timer period.
    pub(crate) timer_base: u64,
}

impl SenderState {
    pub(crate) fn new(start_psn: u32) -> Self {
        SenderState {
            next_psn: start_psn,
            unacked: VecDeque::new(),
            retries_used: 0,
            rnr_retries_used: 0,
            rnr_resume_at: None,
            timer_base: 0,
        }
    }
}

pub(crate) struct ReceiverState {
    pub(crate) expected_psn: u32,
    pub(crate) reassembly: Option<Vec<u8>>,
}

impl ReceiverState {
    pub(crate) fn new(start_psn: u32) -> Self {
        ReceiverState { expected_psn: start_psn, reassembly: None }
    }
}

/// Splits a message into MTU-sized chunks tagged with their position.
/// An empty message still occupies one `Only` frame.
pub fn segment_message(payload: &[u8], mtu: Mtu) -> Vec<(Segment, Vec<u8>)> {
    let chunks: Vec<&[u8]> = if payload.is_empty() { vec![&[][..]] } else { payload.chunks(mtu.bytes()).collect() };
    let last = chunks.len() - 1;
    chunks
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let seg = match (i, last) {
                (_, 0) => Segment::Only,
                (0, _) => Segment::First,
                (i, l) if i == l => Segment::Last,
                _ => Segment::Middle,
            };
            (seg, c.to_vec())
        })
        .collect()
}

fn send_to_peer(inner: &QpInner, frame: &Frame) {
    if let Some(route) = &inner.route {
        route.fabric.send(inner.attrs.ah.dlid, frame, inner.attrs.path_mtu);
    }
}

/// Segments `payload` into the send window and transmits it.
pub(crate) fn post_message(_shared: &QpShared, inner: &mut QpInner, payload: Vec<u8>) {
    let Some(route) = inner.route.clone() else { return };
    let now = route.fabric.now_us();
    let dest_qpn = inner.attrs.dest_qp_num;
    if inner.sender.unacked.is_empty() {
        inner.sender.timer_base = now;
    }
    for (seg, chunk) in segment_message(&payload, inner.attrs.path_mtu) {
        let psn = inner.sender.next_psn;
        inner.sender.next_psn = psn_add(psn, 1);
        let frame = Frame::data(dest_qpn, psn, seg, chunk);
        if inner.sender.rnr_resume_at.is_none() {
            send_to_peer(inner, &frame);
        }
        inner.sender.unacked.push_back(InFlight { psn, frame, sent_at: now, ends_message: seg.ends_message() });
    }
}

/// Entry point for a frame routed to this queue pair.
pub(crate) fn handle_frame(shared: &QpShared, frame: Frame, now: u64) {
    let mut inner = shared.lock();
    if inner.destroyed {
        return;
    }
    let psn = frame.psn;
    match frame.body {
        FrameBody::Data { seg, payload } => on_data(shared, &mut inner, psn, seg, payload),
        FrameBody::Ack => on_ack(shared, &mut inner, psn, now),
        FrameBody::RnrNak { delay_hint } => on_rnr_nak(shared, &mut inner, psn, delay_hint, now),
    }
}

fn on_data(shared: &QpShared, inner: &mut QpInner, psn: u32, seg: Segment, payload: Vec<u8>) {
    // RESET and INIT silently drop; ERR has nothing left to deliver into.
    if !matches!(inner.state, QpState::Rtr | QpState::Rts) {
        return;
    }
    let dest_qpn = inner.attrs.dest_qp_num;
    let expected = inner.receiver.expected_psn;
    let d = psn_diff(psn, expected);
    if d < 0 {
        // duplicate or stale: repeat the cumulative ACK and discard
        send_to_peer(inner, &Frame::ack(dest_qpn, psn_add(expected, super::psn::PSN_MASK)));
        return;
    }
    if d > 0 {
        return;
    }
    if seg.starts_message() {
        if inner.recv_queue.is_empty() {
            let hint = inner.attrs.min_rnr_timer;
            send_to_peer(inner, &Frame::rnr_nak(dest_qpn, psn, hint));
            return;
        }
        inner.receiver.reassembly = Some(Vec::with_capacity(payload.len()));
    } else if inner.receiver.reassembly.is_none() {
        return;
    }
    inner.receiver.reassembly.as_mut().expect("message in progress").extend_from_slice(&payload);
    inner.receiver.expected_psn = psn_add(expected, 1);
    send_to_peer(inner, &Frame::ack(dest_qpn, psn));

    if seg.ends_message() {
        let data = inner.receiver.reassembly.take().unwrap_or_default();
        let wr = inner.recv_queue.pop_front().expect("checked at message start");
        let ok = wq::scatter(shared, &wr, &data).is_ok();
        shared.recv_cq.push(WorkCompletion {
            wr_id: wr.wr_id,
            status: if ok { WcStatus::Success } else { WcStatus::LocalProtectionError },
            opcode: WcOpcode::Recv,
            byte_len: if ok { data.len() as u32 } else { 0 },
            qp_num: shared.qpn,
        });
        if !ok {
            enter_error(shared, inner, None);
        }
    }
}

/// Retires every in-flight frame up to and including `psn`. Returns false
/// when `psn` falls outside the window.
fn retire_through(shared: &QpShared, inner: &mut QpInner, psn: u32, now: u64) -> bool {
    let Some(head) = inner.sender.unacked.front().map(|f| f.psn) else { return false };
    let d = psn_diff(psn, head);
    if d < 0 || d as usize >= inner.sender.unacked.len() {
        return false;
    }
    for _ in 0..=d {
        let f = inner.sender.unacked.pop_front().expect("within window");
        if f.ends_message {
            if let Some(wqe) = inner.send_queue.pop_front() {
                shared.send_cq.push(WorkCompletion {
                    wr_id: wqe.wr_id,
                    status: WcStatus::Success,
                    opcode: WcOpcode::Send,
                    byte_len: 0,
                    qp_num: shared.qpn,
                });
            }
        }
    }
    inner.sender.retries_used = 0;
    inner.sender.rnr_retries_used = 0;
    inner.sender.timer_base = now;
    true
}

fn on_ack(shared: &QpShared, inner: &mut QpInner, psn: u32, now: u64) {
    if inner.state != QpState::Rts {
        return;
    }
    retire_through(shared, inner, psn, now);
}

fn on_rnr_nak(shared: &QpShared, inner: &mut QpInner, psn: u32, hint: u8, now: u64) {
    if inner.state != QpState::Rts || inner.sender.rnr_resume_at.is_some() {
        return;
    }
    let Some(head) = inner.sender.unacked.front().map(|f| f.psn) else { return };
    let d = psn_diff(psn, head);
    if d < 0 || d as usize >= inner.sender.unacked.len() {
        return;
    }
    if d > 0 {
        // everything before the NAKed frame was accepted
        retire_through(shared, inner, psn_add(psn, super::psn::PSN_MASK), now);
    }
    if inner.sender.rnr_retries_used >= inner.attrs.rnr_retry {
        enter_error(shared, inner, Some(WcStatus::RnrRetryExceeded));
        return;
    }
    inner.sender.rnr_retries_used += 1;
    let delay_ms = match &inner.route {
        Some(r) => r.fabric.timing().rnr_delay_ms(hint),
        None => return,
    };
    inner.sender.rnr_resume_at = Some(now + delay_ms * 1000);
}

fn retransmit_window(inner: &mut QpInner, now: u64) {
    inner.sender.timer_base = now;
    let Some(route) = inner.route.clone() else { return };
    let dlid = inner.attrs.ah.dlid;
    let mtu = inner.attrs.path_mtu;
    for f in inner.sender.unacked.iter_mut() {
        f.sent_at = now;
        route.fabric.send(dlid, &f.frame, mtu);
    }
}

/// Fires retransmission and RNR timers that are due at `now`.
pub(crate) fn on_timeout_tick(shared: &QpShared, now: u64) {
    let mut inner = shared.lock();
    if inner.destroyed || inner.state != QpState::Rts {
        return;
    }
    if let Some(at) = inner.sender.rnr_resume_at {
        if now >= at {
            inner.sender.rnr_resume_at = None;
            retransmit_window(&mut inner, now);
        }
        return;
    }
    if inner.sender.unacked.is_empty() {
        return;
    }
    let Some(timeout_ms) = inner.route.as_ref().and_then(|r| r.fabric.timing().ack_timeout_ms(inner.attrs.timeout))
    else {
        return;
    };
    if now < inner.sender.timer_base + timeout_ms * 1000 {
        return;
    }
    if inner.sender.retries_used >= inner.attrs.retry_cnt {
        enter_error(shared, &mut inner, Some(WcStatus::RetryExceeded));
        return;
    }
    inner.sender.retries_used += 1;
    retransmit_window(&mut inner, now);
}

/// Earliest time at which [`on_timeout_tick`] would act, if any.
pub(crate) fn next_deadline(shared: &QpShared) -> Option<u64> {
    let inner = shared.lock();
    if inner.destroyed || inner.state != QpState::Rts {
        return None;
    }
    if let Some(at) = inner.sender.rnr_resume_at {
        return Some(at);
    }
    if inner.sender.unacked.is_empty() {
        return None;
    }
    let timeout_ms = inner.route.as_ref()?.fabric.timing().ack_timeout_ms(inner.attrs.timeout)?;
    Some(inner.sender.timer_base + timeout_ms * 1000)
}

/// Moves the queue pair to ERR and flushes outstanding work. The oldest send,
/// if any, completes with `head_status`; everything else is flushed.
pub(crate) fn enter_error(shared: &QpShared, inner: &mut QpInner, head_status: Option<WcStatus>) {
    inner.state = QpState::Err;
    for (i, wqe) in inner.send_queue.drain(..).enumerate() {
        let status = match (i, head_status) {
            (0, Some(s)) => s,
            _ => WcStatus::WorkRequestFlushed,
        };
        shared.send_cq.push(WorkCompletion {
            wr_id: wqe.wr_id,
            status,
            opcode: WcOpcode::Send,
            byte_len: 0,
            qp_num: shared.qpn,
        });
    }
    for wqe in inner.recv_queue.drain(..) {
        shared.recv_cq.push(WorkCompletion {
            wr_id: wqe.wr_id,
            status: WcStatus::WorkRequestFlushed,
            opcode: WcOpcode::Recv,
            byte_len: 0,
            qp_num: shared.qpn,
        });
    }
    inner.sender.unacked.clear();
    inner.sender.rnr_resume_at = None;
    inner.receiver.reassembly = None;
}
