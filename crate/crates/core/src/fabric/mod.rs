//! Emulated link layer: LID assignment, routing of frames to queue pairs,
//! and the two transports (in-process loopback and stream sockets).

pub mod config;
pub mod faults;
pub mod frame;
mod loopback;
pub mod psn;
pub(crate) mod rc;
mod socket;
pub mod timing;

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, Weak};

pub use config::{ConfigError, FabricConfig, LidEntry};
pub use faults::{Fate, FaultProfile, FaultSpecError};
pub use frame::{Frame, FrameBody, FrameError, FrameKind, Segment};
pub use loopback::{Loopback, LoopbackDriver, TraceRecord};
pub use rc::segment_message;
pub use timing::TimingTable;

use crate::verbs::{Context, Lid, Mtu, QpShared, Result, VerbsError};
use loopback::LoopbackWire;
use socket::SocketWire;

/// Counters kept by every transport.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WireStats {
    pub frames_sent: u64,
    pub data_frames_sent: u64,
    pub dropped: u64,
    pub duplicated: u64,
    pub reordered: u64,
    pub delivered: u64,
    /// Decoded frames whose (LID, QPN) matched no bound queue pair.
    pub unroutable: u64,
    pub decode_errors: u64,
}

#[derive(Default)]
struct Routing {
    /// Loopback LID counter; socket fabrics take LIDs from their config.
    next_lid: u32,
    endpoints: BTreeMap<Lid, u64>,
    qps: BTreeMap<(Lid, u32), Weak<QpShared>>,
}

enum Wire {
    Loopback(LoopbackWire),
    Socket(SocketWire),
}

pub(crate) struct FabricCore {
    routing: Mutex<Routing>,
    wire: Wire,
    timing: TimingTable,
    stats: Mutex<WireStats>,
}

/// Where a connected queue pair sends from.
#[derive(Clone)]
pub(crate) struct Route {
    pub(crate) fabric: Arc<FabricCore>,
    pub(crate) local_lid: Lid,
}

impl FabricCore {
    fn new(wire: Wire, timing: TimingTable) -> Self {
        FabricCore {
            routing: Mutex::new(Routing { next_lid: 1, ..Default::default() }),
            wire,
            timing,
            stats: Mutex::new(WireStats::default()),
        }
    }

    pub(crate) fn now_us(&self) -> u64 {
        match &self.wire {
            Wire::Loopback(w) => w.now_us(),
            Wire::Socket(w) => w.now_us(),
        }
    }

    pub(crate) fn timing(&self) -> &TimingTable {
        &self.timing
    }

    fn stats_mut(&self) -> std::sync::MutexGuard<'_, WireStats> {
        self.stats.lock().unwrap()
    }

    /// Encodes and hands a frame to the transport. Encoding failures are
    /// programming errors upstream; the frame is dropped.
    pub(crate) fn send(&self, dlid: Lid, frame: &Frame, mtu: Mtu) {
        let Ok(bytes) = frame.encode(mtu) else {
            debug_assert!(false, "engine produced an unencodable frame");
            return;
        };
        {
            let mut s = self.stats_mut();
            s.frames_sent += 1;
            if frame.kind() == FrameKind::Data {
                s.data_frames_sent += 1;
            }
        }
        match &self.wire {
            Wire::Loopback(w) => w.transmit(self, dlid, frame, bytes),
            Wire::Socket(w) => w.transmit(self, dlid, bytes),
        }
    }

    pub(crate) fn bind(&self, lid: Lid, qpn: u32, qp: Weak<QpShared>) {
        self.routing.lock().unwrap().qps.insert((lid, qpn), qp);
    }

    pub(crate) fn unbind(&self, lid: Lid, qpn: u32) {
        self.routing.lock().unwrap().qps.remove(&(lid, qpn));
    }

    /// Decodes a frame that arrived for `dlid` and runs it through the
    /// engine of the addressed queue pair.
    pub(crate) fn deliver(&self, dlid: Lid, bytes: &[u8]) {
        let frame = match Frame::decode(bytes) {
            Ok(f) => f,
            Err(_) => {
                self.stats_mut().decode_errors += 1;
                return;
            }
        };
        let qp = self.routing.lock().unwrap().qps.get(&(dlid, frame.dest_qpn)).and_then(Weak::upgrade);
        match qp {
            Some(qp) => {
                self.stats_mut().delivered += 1;
                rc::handle_frame(&qp, frame, self.now_us());
            }
            None => self.stats_mut().unroutable += 1,
        }
    }

    fn bound_qps(&self) -> Vec<Arc<QpShared>> {
        self.routing.lock().unwrap().qps.values().filter_map(Weak::upgrade).collect()
    }

    pub(crate) fn tick(&self, now: u64) {
        for qp in self.bound_qps() {
            rc::on_timeout_tick(&qp, now);
        }
    }

    pub(crate) fn next_deadline(&self) -> Option<u64> {
        self.bound_qps().iter().filter_map(|qp| rc::next_deadline(qp)).min()
    }

    fn record_fate(&self, fate: &Fate) {
        let mut s = self.stats_mut();
        s.dropped += fate.dropped as u64;
        s.duplicated += fate.duplicated as u64;
        s.reordered += fate.reorder_delay_us.is_some() as u64;
    }
}

/// Handle to an emulated fabric. Clones share the same fabric.
#[derive(Clone)]
pub struct Fabric {
    core: Arc<FabricCore>,
}

impl Fabric {
    /// An in-process fabric driven by a virtual clock.
    pub fn loopback(faults: FaultProfile) -> Fabric {
        Self::loopback_with_timing(faults, TimingTable::default())
    }

    pub fn loopback_with_timing(faults: FaultProfile, timing: TimingTable) -> Fabric {
        Fabric { core: Arc::new(FabricCore::new(Wire::Loopback(LoopbackWire::new(faults)), timing)) }
    }

    /// A fabric whose LIDs are TCP listeners taken from `config`.
    pub fn socket(config: FabricConfig) -> Fabric {
        Fabric { core: Arc::new(FabricCore::new(Wire::Socket(SocketWire::new(config)), TimingTable::default())) }
    }

    /// Activates `port` of `ctx` on this fabric and returns its new LID.
    pub fn attach(&self, ctx: &Context, port: u8) -> Result<Lid> {
        ctx.check_attachable(port)?;
        let lid = match &self.core.wire {
            Wire::Loopback(_) => {
                let mut r = self.core.routing.lock().unwrap();
                if r.next_lid > Lid::MAX as u32 {
                    return Err(VerbsError::LidsExhausted);
                }
                let lid = r.next_lid as Lid;
                r.next_lid += 1;
                r.endpoints.insert(lid, ctx.inner.id);
                lid
            }
            Wire::Socket(w) => {
                let taken: Vec<Lid> = self.core.routing.lock().unwrap().endpoints.keys().copied().collect();
                let lid = w.listen(&self.core, &taken).map_err(|e| VerbsError::Fabric(e.to_string()))?;
                self.core.routing.lock().unwrap().endpoints.insert(lid, ctx.inner.id);
                lid
            }
        };
        ctx.attach_port(port, lid, self.core.clone());
        Ok(lid)
    }

    /// Control surface of a loopback fabric; `None` for socket fabrics.
    pub fn loopback_control(&self) -> Option<Loopback> {
        matches!(self.core.wire, Wire::Loopback(_)).then(|| Loopback::new(self.core.clone()))
    }

    pub fn is_loopback(&self) -> bool {
        matches!(self.core.wire, Wire::Loopback(_))
    }

    pub fn timing(&self) -> &TimingTable {
        &self.core.timing
    }

    pub fn now_us(&self) -> u64 {
        self.core.now_us()
    }

    pub fn stats(&self) -> WireStats {
        *self.core.stats_mut()
    }

    /// LIDs attached so far, in ascending order.
    pub fn lids(&self) -> Vec<Lid> {
        self.core.routing.lock().unwrap().endpoints.keys().copied().collect()
    }
}

impl std::fmt::Debug for Fabric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fabric").field("loopback", &self.is_loopback()).field("lids", &self.lids()).finish()
    }
}
