//! Completion queues and completion channels.
//!
//! Polling, notification and event acknowledgement live in [`crate::wq`];
//! this module owns creation, destruction and the insertion rule.

use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};

use super::device::Context;
use super::error::{Result, VerbsError};
use crate::wq::WorkCompletion;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CqStatus {
    Ok,
    /// Latched after an overflow; the queue can no longer be used.
    Error,
}

pub(crate) struct CqState {
    pub(crate) entries: VecDeque<WorkCompletion>,
    pub(crate) status: CqStatus,
    pub(crate) unacked_events: u32,
    pub(crate) notify_armed: bool,
    pub(crate) destroyed: bool,
    pub(crate) qp_refs: usize,
}

pub(crate) struct CqInner {
    pub(crate) ctx: Context,
    pub(crate) capacity: usize,
    pub(crate) user_context: u64,
    pub(crate) channel: Option<CompletionChannel>,
    pub(crate) state: Mutex<CqState>,
    pub(crate) acked: Condvar,
}

#[derive(Clone)]
pub struct CompletionQueue {
    pub(crate) inner: Arc<CqInner>,
}

pub(crate) struct ChannelState {
    pub(crate) pending: VecDeque<CompletionQueue>,
    pub(crate) destroyed: bool,
}

pub(crate) struct ChannelInner {
    pub(crate) ctx: Context,
    pub(crate) state: Mutex<ChannelState>,
    pub(crate) ready: Condvar,
}

/// Delivers completion notifications from armed CQs to a sleeping consumer.
#[derive(Clone)]
pub struct CompletionChannel {
    pub(crate) inner: Arc<ChannelInner>,
}

impl Context {
    pub fn create_comp_channel(&self) -> Result<CompletionChannel> {
        let mut st = self.lock_open()?;
        st.live_channels += 1;
        Ok(CompletionChannel {
            inner: Arc::new(ChannelInner {
                ctx: self.clone(),
                state: Mutex::new(ChannelState { pending: VecDeque::new(), destroyed: false }),
                ready: Condvar::new(),
            }),
        })
    }

    /// Creates a completion queue holding at most `capacity` entries.
    ///
    /// Only completion vector 0 exists. `user_context` is stored and handed
    /// back untouched by [`CompletionQueue::user_context`].
    pub fn create_cq(
        &self,
        capacity: usize,
        user_context: u64,
        channel: Option<&CompletionChannel>,
        comp_vector: u32,
    ) -> Result<CompletionQueue> {
        if capacity < 1 {
            return Err(VerbsError::InvalidArgument("completion queue capacity must be at least 1"));
        }
        if comp_vector != 0 {
            return Err(VerbsError::InvalidArgument("only completion vector 0 is supported"));
        }
        if let Some(ch) = channel {
            if !ch.inner.ctx.same_as(self) {
                return Err(VerbsError::CrossContext);
            }
            if ch.inner.state.lock().unwrap().destroyed {
                return Err(VerbsError::ChannelDestroyed);
            }
        }
        let mut st = self.lock_open()?;
        st.live_cqs += 1;
        Ok(CompletionQueue {
            inner: Arc::new(CqInner {
                ctx: self.clone(),
                capacity,
                user_context,
                channel: channel.cloned(),
                state: Mutex::new(CqState {
                    entries: VecDeque::with_capacity(capacity.min(4096)),
                    status: CqStatus::Ok,
                    unacked_events: 0,
                    notify_armed: false,
                    destroyed: false,
                    qp_refs: 0,
                }),
                acked: Condvar::new(),
            }),
        })
    }
}

impl CompletionQueue {
    pub fn capacity(&self) -> usize {
        self.inner.capacity
    }

    pub fn user_context(&self) -> u64 {
        self.inner.user_context
    }

    pub fn context(&self) -> &Context {
        &self.inner.ctx
    }

    pub fn channel(&self) -> Option<&CompletionChannel> {
        self.inner.channel.as_ref()
    }

    pub fn status(&self) -> CqStatus {
        self.lock().status
    }

    /// Number of entries waiting to be polled.
    pub fn len(&self) -> usize {
        self.lock().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn unacked_events(&self) -> u32 {
        self.lock().unacked_events
    }

    pub fn same_as(&self, other: &CompletionQueue) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }

    pub(crate) fn lock(&self) -> MutexGuard<'_, CqState> {
        self.inner.state.lock().unwrap()
    }

    /// Appends a completion. A full queue latches into the error state and
    /// the entry is discarded; an errored queue discards everything.
    pub(crate) fn push(&self, wc: WorkCompletion) {
        let mut st = self.lock();
        if st.destroyed || st.status == CqStatus::Error {
            return;
        }
        if st.entries.len() >= self.inner.capacity {
            st.status = CqStatus::Error;
            return;
        }
        st.entries.push_back(wc);
        if st.notify_armed {
            st.notify_armed = false;
            if let Some(ch) = &self.inner.channel {
                ch.deliver(self.clone());
            }
        }
    }

    /// Destroys the queue. Blocks until every event returned by
    /// `get_cq_event` for this queue has been acknowledged; fails if a queue
    /// pair still references it.
    pub fn destroy(&self) -> Result<()> {
        let mut st = self.lock();
        if st.destroyed {
            return Err(VerbsError::Destroyed("completion queue"));
        }
        if st.qp_refs > 0 {
            return Err(VerbsError::Busy("completion queue"));
        }
        while st.unacked_events > 0 {
            st = self.inner.acked.wait(st).unwrap();
        }
        if st.destroyed {
            return Err(VerbsError::Destroyed("completion queue"));
        }
        st.destroyed = true;
        st.entries.clear();
        drop(st);
        self.inner.ctx.lock().live_cqs -= 1;
        Ok(())
    }
}

impl std::fmt::Debug for CompletionQueue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CompletionQueue").field("capacity", &self.inner.capacity).finish()
    }
}

impl CompletionChannel {
    pub fn context(&self) -> &Context {
        &self.inner.ctx
    }

    fn deliver(&self, cq: CompletionQueue) {
        let mut st = self.inner.state.lock().unwrap();
        if st.destroyed {
            return;
        }
        st.pending.push_back(cq);
        self.inner.ready.notify_one();
    }

    /// Number of notifications waiting to be collected.
    pub fn pending(&self) -> usize {
        self.inner.state.lock().unwrap().pending.len()
    }

    /// Destroys the channel, waking any waiter with an error.
    pub fn destroy(&self) -> Result<()> {
        let mut st = self.inner.state.lock().unwrap();
        if st.destroyed {
            return Err(VerbsError::Destroyed("completion channel"));
        }
        st.destroyed = true;
        st.pending.clear();
        self.inner.ready.notify_all();
        drop(st);
        self.inner.ctx.lock().live_channels -= 1;
        Ok(())
    }
}

impl std::fmt::Debug for CompletionChannel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("CompletionChannel")
    }
}
