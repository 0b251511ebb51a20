//! In-process transport on a virtual clock.
//!
//! Frames go onto a time-ordered event queue and are delivered when the
//! clock reaches them. Nothing moves unless somebody steps the fabric, either
//! a test calling [`Loopback::step`] or a [`LoopbackDriver`] thread.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use super::faults::{Fate, FaultInjector, FaultProfile};
use super::frame::Frame;
use super::{FabricCore, Wire, WireStats};
use crate::verbs::Lid;

/// One-hop latency added to every frame.
pub const LINK_LATENCY_US: u64 = 10;

/// Returns true for frames that should be dropped outright.
pub type DropFilter = Box<dyn FnMut(Lid, &Frame) -> bool + Send>;

/// A frame as it left the sender, with what the fabric did to it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceRecord {
    pub at_us: u64,
    pub dlid: Lid,
    pub bytes: Vec<u8>,
    pub fate: Fate,
    /// Dropped by the installed drop filter rather than the fault profile.
    pub filtered: bool,
}

#[derive(PartialEq, Eq, PartialOrd, Ord)]
struct Pending {
    at: u64,
    seq: u64,
    dlid: Lid,
    bytes: Vec<u8>,
}

struct LoopState {
    now_us: u64,
    seq: u64,
    queue: BinaryHeap<Reverse<Pending>>,
    injector: FaultInjector,
    trace: Option<Vec<TraceRecord>>,
    drop_filter: Option<DropFilter>,
}

pub(crate) struct LoopbackWire {
    state: Mutex<LoopState>,
    wake: Condvar,
}

impl LoopbackWire {
    pub(crate) fn new(faults: FaultProfile) -> Self {
        LoopbackWire {
            state: Mutex::new(LoopState {
                now_us: 0,
                seq: 0,
                queue: BinaryHeap::new(),
                injector: FaultInjector::new(faults),
                trace: None,
                drop_filter: None,
            }),
            wake: Condvar::new(),
        }
    }

    pub(crate) fn now_us(&self) -> u64 {
        self.state.lock().unwrap().now_us
    }

    pub(crate) fn transmit(&self, core: &FabricCore, dlid: Lid, frame: &Frame, bytes: Vec<u8>) {
        let mut st = self.state.lock().unwrap();
        let now = st.now_us;
        let filtered = st.drop_filter.as_mut().is_some_and(|f| f(dlid, frame));
        // the injector is consulted even for filtered frames so a filter does
        // not shift the fault schedule of unrelated traffic
        let mut fate = st.injector.next_fate();
        if filtered {
            fate = Fate { dropped: true, duplicated: false, reorder_delay_us: None };
        }
        if let Some(trace) = st.trace.as_mut() {
            trace.push(TraceRecord { at_us: now, dlid, bytes: bytes.clone(), fate, filtered });
        }
        if !filtered {
            core.record_fate(&fate);
        } else {
            core.stats_mut().dropped += 1;
        }
        if fate.dropped {
            return;
        }
        let at = now + LINK_LATENCY_US + fate.reorder_delay_us.unwrap_or(0);
        if fate.duplicated {
            let seq = st.seq;
            st.seq += 1;
            st.queue.push(Reverse(Pending { at: now + LINK_LATENCY_US, seq, dlid, bytes: bytes.clone() }));
        }
        let seq = st.seq;
        st.seq += 1;
        st.queue.push(Reverse(Pending { at, seq, dlid, bytes }));
        drop(st);
        self.wake.notify_all();
    }
}

/// Control surface of a loopback fabric.
#[derive(Clone)]
pub struct Loopback {
    core: Arc<FabricCore>,
}

enum Next {
    Deliver(Lid, Vec<u8>),
    Tick(u64),
    Idle,
}

impl Loopback {
    pub(crate) fn new(core: Arc<FabricCore>) -> Self {
        Loopback { core }
    }

    fn wire(&self) -> &LoopbackWire {
        match &self.core.wire {
            Wire::Loopback(w) => w,
            Wire::Socket(_) => unreachable!("loopback handle on a socket fabric"),
        }
    }

    pub fn now_us(&self) -> u64 {
        self.wire().now_us()
    }

    /// Frames queued but not yet delivered.
    pub fn in_flight(&self) -> usize {
        self.wire().state.lock().unwrap().queue.len()
    }

    pub fn stats(&self) -> WireStats {
        *self.core.stats_mut()
    }

    pub fn faults(&self) -> FaultProfile {
        self.wire().state.lock().unwrap().injector.profile()
    }

    fn pick(&self, events_only: bool) -> Next {
        let deadline = if events_only { None } else { self.core.next_deadline() };
        let mut st = self.wire().state.lock().unwrap();
        let next_event = st.queue.peek().map(|Reverse(p)| p.at);
        match (next_event, deadline) {
            (Some(at), d) if d.is_none_or(|d| at <= d) => {
                let Reverse(p) = st.queue.pop().expect("peeked");
                st.now_us = st.now_us.max(p.at);
                Next::Deliver(p.dlid, p.bytes)
            }
            (_, Some(d)) => {
                st.now_us = st.now_us.max(d);
                Next::Tick(st.now_us)
            }
            _ => Next::Idle,
        }
    }

    fn run(&self, next: Next) -> bool {
        match next {
            Next::Deliver(dlid, bytes) => self.core.deliver(dlid, &bytes),
            Next::Tick(now) => self.core.tick(now),
            Next::Idle => return false,
        }
        true
    }

    /// Processes the earliest pending event or timer, advancing the clock to
    /// it. Returns false when nothing is pending.
    pub fn step(&self) -> bool {
        self.run(self.pick(false))
    }

    /// Steps until nothing is pending or `max_steps` is reached. Returns the
    /// number of steps taken.
    pub fn run_until_idle(&self, max_steps: usize) -> usize {
        let mut n = 0;
        while n < max_steps && self.step() {
            n += 1;
        }
        n
    }

    /// Delivers queued frames without firing timers.
    pub fn drain_frames(&self, max_steps: usize) -> usize {
        let mut n = 0;
        while n < max_steps && self.run(self.pick(true)) {
            n += 1;
        }
        n
    }

    /// Steps until `done` holds, giving up after `max_steps`.
    pub fn run_until(&self, max_steps: usize, mut done: impl FnMut() -> bool) -> bool {
        for _ in 0..max_steps {
            if done() {
                return true;
            }
            if !self.step() {
                return done();
            }
        }
        done()
    }

    /// Moves the clock forward by `us`, delivering and firing everything due
    /// on the way.
    pub fn advance(&self, us: u64) {
        let target = self.now_us() + us;
        loop {
            let deadline = self.core.next_deadline();
            let mut st = self.wire().state.lock().unwrap();
            let next_event = st.queue.peek().map(|Reverse(p)| p.at).filter(|&at| at <= target);
            let due_timer = deadline.filter(|&d| d <= target);
            let next = match (next_event, due_timer) {
                (Some(at), d) if d.is_none_or(|d| at <= d) => {
                    let Reverse(p) = st.queue.pop().expect("peeked");
                    st.now_us = st.now_us.max(p.at);
                    Next::Deliver(p.dlid, p.bytes)
                }
                (_, Some(d)) => {
                    st.now_us = st.now_us.max(d);
                    Next::Tick(st.now_us)
                }
                _ => {
                    st.now_us = st.now_us.max(target);
                    Next::Idle
                }
            };
            drop(st);
            if !self.run(next) {
                return;
            }
        }
    }

    pub fn enable_trace(&self) {
        let mut st = self.wire().state.lock().unwrap();
        st.trace.get_or_insert_with(Vec::new);
    }

    /// Returns and clears the recorded trace, leaving tracing enabled.
    pub fn take_trace(&self) -> Vec<TraceRecord> {
        let mut st = self.wire().state.lock().unwrap();
        st.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn trace(&self) -> Vec<TraceRecord> {
        self.wire().state.lock().unwrap().trace.clone().unwrap_or_default()
    }

    pub fn set_drop_filter(&self, filter: impl FnMut(Lid, &Frame) -> bool + Send + 'static) {
        self.wire().state.lock().unwrap().drop_filter = Some(Box::new(filter));
    }

    pub fn clear_drop_filter(&self) {
        self.wire().state.lock().unwrap().drop_filter = None;
    }

    /// Queues raw bytes for `dlid` as if they had arrived off the wire,
    /// bypassing fault injection and tracing.
    pub fn inject(&self, dlid: Lid, bytes: Vec<u8>) {
        let w = self.wire();
        let mut st = w.state.lock().unwrap();
        let at = st.now_us + LINK_LATENCY_US;
        let seq = st.seq;
        st.seq += 1;
        st.queue.push(Reverse(Pending { at, seq, dlid, bytes }));
        drop(st);
        w.wake.notify_all();
    }

    /// Runs the fabric on a background thread until the returned guard is
    /// dropped. Frames are processed as soon as they are queued. When only
    /// timers remain, the driver waits `grace` of real time for new traffic
    /// before jumping the virtual clock to the next deadline.
    pub fn spawn_driver(&self, grace: Duration) -> LoopbackDriver {
        let stop = Arc::new(AtomicBool::new(false));
        let me = self.clone();
        let flag = stop.clone();
        let handle = std::thread::Builder::new()
            .name("loopback-fabric".into())
            .spawn(move || me.drive(&flag, grace))
            .expect("spawn fabric driver");
        LoopbackDriver { stop, handle: Some(handle), fabric: self.clone() }
    }

    fn drive(&self, stop: &AtomicBool, grace: Duration) {
        let w = self.wire();
        while !stop.load(Ordering::Acquire) {
            if self.run(self.pick(true)) {
                continue;
            }
            // no frames queued: give user threads a chance to post before
            // letting virtual time run forward
            let st = w.state.lock().unwrap();
            let (st, timeout) = w.wake.wait_timeout_while(st, grace, |s| s.queue.is_empty()).unwrap();
            drop(st);
            if !timeout.timed_out() || stop.load(Ordering::Acquire) {
                continue;
            }
            self.step();
        }
    }
}

/// Guard for a background loopback driver; stops and joins it on drop.
pub struct LoopbackDriver {
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
    fabric: Loopback,
}

impl Drop for LoopbackDriver {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Release);
        self.fabric.wire().wake.notify_all();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
