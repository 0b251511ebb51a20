//! Work requests and completions: posting to send/receive queues, validating
//! scatter/gather elements against registered memory, polling completion
//! queues and completion-event channels.

use std::time::{Duration, Instant};

use bitflags::bitflags;
use thiserror::Error;

use crate::fabric::rc;
use crate::verbs::{
    CompletionChannel, CompletionQueue, CqStatus, MrInner, ProtectionDomain, QpShared, QpState, QueuePair, Result,
    VerbsError,
};

/// Scatter/gather element: `length` bytes at `addr` inside the region named by `lkey`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sge {
    pub addr: u64,
    pub length: u32,
    pub lkey: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecvWr {
    pub wr_id: u64,
    pub sg_list: Vec<Sge>,
}

bitflags! {
    #[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
    pub struct SendFlags: u32 {
        const SIGNALED = 1;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SendOpcode {
    #[default]
    Send,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SendWr {
    pub wr_id: u64,
    pub sg_list: Vec<Sge>,
    pub opcode: SendOpcode,
    pub flags: SendFlags,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WcStatus {
    Success,
    LocalProtectionError,
    RetryExceeded,
    RnrRetryExceeded,
    WorkRequestFlushed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WcOpcode {
    Send,
    Recv,
}

/// A completion queue entry. `wr_id` is copied from the originating work request.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct WorkCompletion {
    pub wr_id: u64,
    pub status: WcStatus,
    pub opcode: WcOpcode,
    /// Bytes received; zero for sends.
    pub byte_len: u32,
    pub qp_num: u32,
}

#[derive(Clone, Copy, Debug, Error, PartialEq, Eq)]
pub enum PostErrorKind {
    #[error("queue pair is in state {0:?}")]
    InvalidState(QpState),
    #[error("queue is full")]
    QueueFull,
    #[error("too many scatter/gather elements")]
    TooManySge,
    #[error("zero-length scatter/gather element")]
    ZeroLengthSge,
    #[error("unknown lkey {0}")]
    InvalidLkey(u32),
    #[error("memory region belongs to another protection domain")]
    WrongPd,
    #[error("scatter/gather element outside its memory region")]
    OutOfBounds,
    #[error("queue pair destroyed")]
    Destroyed,
}

/// A rejected post. Requests before `index` were accepted and stay queued.
#[derive(Clone, Copy, Debug, Error, PartialEq, Eq)]
#[error("work request {index} rejected: {kind}")]
pub struct PostError {
    pub index: usize,
    pub kind: PostErrorKind,
}

#[derive(Clone, Copy, Debug, Error, PartialEq, Eq)]
pub enum PollError {
    #[error("completion queue is in the error state")]
    CqError,
    #[error("completion queue destroyed")]
    Destroyed,
    #[error("poll budget must be at least 1")]
    ZeroBudget,
}

/// Every send completes with a CQE; the SIGNALED flag is accepted but not
/// used to suppress completions.
pub(crate) struct PostedSend {
    pub(crate) wr_id: u64,
}

pub(crate) struct PostedRecv {
    pub(crate) wr_id: u64,
    pub(crate) sg_list: Vec<Sge>,
}

impl PostedRecv {
    pub(crate) fn capacity(&self) -> usize {
        self.sg_list.iter().map(|s| s.length as usize).sum()
    }
}

fn resolve_sge<'a>(
    mrs: &'a std::collections::HashMap<u32, std::sync::Arc<MrInner>>,
    pd: &ProtectionDomain,
    sge: &Sge,
) -> std::result::Result<(&'a MrInner, usize), PostErrorKind> {
    if sge.length == 0 {
        return Err(PostErrorKind::ZeroLengthSge);
    }
    let mr = mrs.get(&sge.lkey).ok_or(PostErrorKind::InvalidLkey(sge.lkey))?;
    if !mr.pd.same_as(pd) {
        return Err(PostErrorKind::WrongPd);
    }
    let offset = mr.translate(sge.addr, sge.length as usize).ok_or(PostErrorKind::OutOfBounds)?;
    Ok((mr, offset))
}

/// Writes `data` into the receive's elements front to back. Fails when the
/// data does not fit or a region has gone away since posting.
pub(crate) fn scatter(qp: &QpShared, wr: &PostedRecv, data: &[u8]) -> std::result::Result<(), ()> {
    if data.len() > wr.capacity() {
        return Err(());
    }
    let ctx = qp.context().lock();
    let mut rest = data;
    for sge in &wr.sg_list {
        if rest.is_empty() {
            break;
        }
        let (mr, offset) = resolve_sge(&ctx.mrs, &qp.pd, sge).map_err(|_| ())?;
        let n = rest.len().min(sge.length as usize);
        mr.buffer.write(offset, &rest[..n]);
        rest = &rest[n..];
    }
    Ok(())
}

impl QueuePair {
    /// Posts receive requests in order. Processing stops at the first
    /// invalid request; earlier ones remain queued.
    pub fn post_recv(&self, wrs: &[RecvWr]) -> std::result::Result<(), PostError> {
        let shared = &self.shared;
        let mut inner = shared.lock();
        for (index, wr) in wrs.iter().enumerate() {
            let fail = |kind| PostError { index, kind };
            if inner.destroyed {
                return Err(fail(PostErrorKind::Destroyed));
            }
            if !matches!(inner.state, QpState::Init | QpState::Rtr | QpState::Rts) {
                return Err(fail(PostErrorKind::InvalidState(inner.state)));
            }
            if wr.sg_list.len() > shared.caps.max_recv_sge as usize {
                return Err(fail(PostErrorKind::TooManySge));
            }
            {
                let ctx = shared.context().lock();
                for sge in &wr.sg_list {
                    resolve_sge(&ctx.mrs, &shared.pd, sge).map_err(fail)?;
                }
            }
            if inner.recv_queue.len() >= shared.caps.max_recv_wr as usize {
                return Err(fail(PostErrorKind::QueueFull));
            }
            inner.recv_queue.push_back(PostedRecv { wr_id: wr.wr_id, sg_list: wr.sg_list.clone() });
        }
        Ok(())
    }

    /// Posts send requests. Each payload is copied out of its buffers at
    /// post time and handed to the fabric immediately.
    pub fn post_send(&self, wrs: &[SendWr]) -> std::result::Result<(), PostError> {
        let shared = &self.shared;
        let mut inner = shared.lock();
        for (index, wr) in wrs.iter().enumerate() {
            let fail = |kind| PostError { index, kind };
            if inner.destroyed {
                return Err(fail(PostErrorKind::Destroyed));
            }
            if inner.state != QpState::Rts {
                return Err(fail(PostErrorKind::InvalidState(inner.state)));
            }
            if wr.sg_list.len() > shared.caps.max_send_sge as usize {
                return Err(fail(PostErrorKind::TooManySge));
            }
            let payload = {
                let ctx = shared.context().lock();
                let mut payload = Vec::with_capacity(wr.sg_list.iter().map(|s| s.length as usize).sum());
                for sge in &wr.sg_list {
                    let (mr, offset) = resolve_sge(&ctx.mrs, &shared.pd, sge).map_err(fail)?;
                    payload.extend_from_slice(&mr.buffer.read(offset..offset + sge.length as usize));
                }
                payload
            };
            if inner.send_queue.len() >= shared.caps.max_send_wr as usize {
                return Err(fail(PostErrorKind::QueueFull));
            }
            inner.send_queue.push_back(PostedSend { wr_id: wr.wr_id });
            rc::post_message(shared, &mut inner, payload);
        }
        Ok(())
    }
}

impl CompletionQueue {
    /// Removes up to `max` completions in FIFO order. Never blocks.
    pub fn poll(&self, max: usize) -> std::result::Result<Vec<WorkCompletion>, PollError> {
        if max == 0 {
            return Err(PollError::ZeroBudget);
        }
        let mut st = self.lock();
        if st.destroyed {
            return Err(PollError::Destroyed);
        }
        if st.status == CqStatus::Error {
            return Err(PollError::CqError);
        }
        let n = max.min(st.entries.len());
        Ok(st.entries.drain(..n).collect())
    }

    /// Arms a one-shot notification: the next completion added pushes this
    /// queue onto its channel.
    pub fn req_notify(&self) -> Result<()> {
        if self.inner.channel.is_none() {
            return Err(VerbsError::NoChannel);
        }
        let mut st = self.lock();
        if st.destroyed {
            return Err(VerbsError::Destroyed("completion queue"));
        }
        st.notify_armed = true;
        Ok(())
    }

    /// Acknowledges `n` events previously returned by `get_cq_event`.
    pub fn ack_events(&self, n: u32) -> Result<()> {
        let mut st = self.lock();
        if n > st.unacked_events {
            return Err(VerbsError::OverAck { requested: n, outstanding: st.unacked_events });
        }
        st.unacked_events -= n;
        if st.unacked_events == 0 {
            self.inner.acked.notify_all();
        }
        Ok(())
    }
}

impl CompletionChannel {
    /// Blocks until an armed queue reports a completion and returns it.
    pub fn get_cq_event(&self) -> Result<CompletionQueue> {
        self.wait_event(None)?.ok_or(VerbsError::ChannelDestroyed)
    }

    /// Like [`get_cq_event`](Self::get_cq_event) but gives up after
    /// `timeout`, returning `Ok(None)`.
    pub fn get_cq_event_timeout(&self, timeout: Duration) -> Result<Option<CompletionQueue>> {
        self.wait_event(Some(Instant::now() + timeout))
    }

    fn wait_event(&self, deadline: Option<Instant>) -> Result<Option<CompletionQueue>> {
        let mut st = self.inner.state.lock().unwrap();
        loop {
            if st.destroyed {
                return Err(VerbsError::ChannelDestroyed);
            }
            if let Some(cq) = st.pending.pop_front() {
                drop(st);
                cq.lock().unacked_events += 1;
                return Ok(Some(cq));
            }
            st = match deadline {
                None => self.inner.ready.wait(st).unwrap(),
                Some(d) => {
                    let now = Instant::now();
                    if now >= d {
                        return Ok(None);
                    }
                    self.inner.ready.wait_timeout(st, d - now).unwrap().0
                }
            };
        }
    }
}
