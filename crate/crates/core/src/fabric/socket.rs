//! Stream-socket transport. Each attached LID owns a TCP listener; frames
//! travel as records prefixed by a big-endian u32 length.
//!
//! Inbound frames from every connection funnel into one event-loop thread,
//! which also drives the retransmission timers on the wall clock.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex, Weak};
use std::time::{Duration, Instant};

use super::config::FabricConfig;
use super::faults::FaultInjector;
use super::frame::{FRAME_HEADER_LEN, MAX_FRAME_PAYLOAD};
use super::{FabricCore, Wire};
use crate::verbs::Lid;

const CONNECT_TIMEOUT: Duration = Duration::from_millis(500);
const LOOP_PERIOD: Duration = Duration::from_millis(1);
const MAX_RECORD: usize = FRAME_HEADER_LEN + MAX_FRAME_PAYLOAD;

type Inbound = mpsc::Sender<(Lid, Vec<u8>)>;

pub(crate) struct SocketWire {
    config: FabricConfig,
    epoch: Instant,
    injector: Mutex<FaultInjector>,
    conns: Mutex<HashMap<Lid, TcpStream>>,
    /// Frames held back by reorder faults until the next transmission.
    held: Mutex<Vec<(Lid, Vec<u8>)>>,
    inbound: Mutex<Option<Inbound>>,
    shutdown: Arc<AtomicBool>,
}

impl SocketWire {
    pub(crate) fn new(config: FabricConfig) -> Self {
        SocketWire {
            injector: Mutex::new(FaultInjector::new(config.faults)),
            config,
            epoch: Instant::now(),
            conns: Mutex::new(HashMap::new()),
            held: Mutex::new(Vec::new()),
            inbound: Mutex::new(None),
            shutdown: Arc::new(AtomicBool::new(false)),
        }
    }

    pub(crate) fn now_us(&self) -> u64 {
        self.epoch.elapsed().as_micros() as u64
    }

    /// Claims the first configured LID not in `taken` whose address can be
    /// bound here, and starts serving it.
    pub(crate) fn listen(&self, core: &Arc<FabricCore>, taken: &[Lid]) -> io::Result<Lid> {
        let mut last_err = None;
        for entry in self.config.entries.iter().filter(|e| !taken.contains(&e.lid)) {
            match TcpListener::bind((entry.host.as_str(), entry.port)) {
                Ok(listener) => {
                    let tx = self.event_loop(core);
                    self.spawn_acceptor(listener, entry.lid, tx)?;
                    return Ok(entry.lid);
                }
                Err(e) => last_err = Some(e),
            }
        }
        Err(last_err.unwrap_or_else(|| io::Error::new(io::ErrorKind::AddrNotAvailable, "no free LID in fabric config")))
    }

    fn event_loop(&self, core: &Arc<FabricCore>) -> Inbound {
        let mut slot = self.inbound.lock().unwrap();
        if let Some(tx) = slot.as_ref() {
            return tx.clone();
        }
        let (tx, rx) = mpsc::channel::<(Lid, Vec<u8>)>();
        let weak: Weak<FabricCore> = Arc::downgrade(core);
        let stop = self.shutdown.clone();
        std::thread::Builder::new()
            .name("socket-fabric".into())
            .spawn(move || {
                while !stop.load(Ordering::Acquire) {
                    let got = rx.recv_timeout(LOOP_PERIOD);
                    let Some(core) = weak.upgrade() else { break };
                    match got {
                        Ok((lid, bytes)) => core.deliver(lid, &bytes),
                        Err(RecvTimeoutError::Timeout) => {}
                        Err(RecvTimeoutError::Disconnected) => break,
                    }
                    if let Wire::Socket(w) = &core.wire {
                        w.flush_held();
                    }
                    core.tick(core.now_us());
                }
            })
            .expect("spawn socket fabric loop");
        *slot = Some(tx.clone());
        tx
    }

    fn spawn_acceptor(&self, listener: TcpListener, lid: Lid, tx: Inbound) -> io::Result<()> {
        listener.set_nonblocking(true)?;
        let stop = self.shutdown.clone();
        std::thread::Builder::new().name(format!("lid-{lid}-accept")).spawn(move || {
            while !stop.load(Ordering::Acquire) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let tx = tx.clone();
                        let stop = stop.clone();
                        let _ = std::thread::Builder::new()
                            .name(format!("lid-{lid}-read"))
                            .spawn(move || read_records(stream, lid, tx, &stop));
                    }
                    Err(e) if e.kind() == io::ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(5)),
                    Err(_) => break,
                }
            }
        })?;
        Ok(())
    }

    pub(crate) fn transmit(&self, core: &FabricCore, dlid: Lid, bytes: Vec<u8>) {
        let fate = self.injector.lock().unwrap().next_fate();
        core.record_fate(&fate);
        if fate.dropped {
            return;
        }
        if fate.reorder_delay_us.is_some() {
            self.held.lock().unwrap().push((dlid, bytes));
            return;
        }
        self.write_record(dlid, &bytes);
        if fate.duplicated {
            self.write_record(dlid, &bytes);
        }
        self.flush_held();
    }

    fn flush_held(&self) {
        let held = std::mem::take(&mut *self.held.lock().unwrap());
        for (dlid, bytes) in held {
            self.write_record(dlid, &bytes);
        }
    }

    /// Best effort: a frame that cannot be written is lost, and the
    /// reliability engine recovers it like any other loss.
    fn write_record(&self, dlid: Lid, bytes: &[u8]) {
        let mut conns = self.conns.lock().unwrap();
        let stream = match conns.entry(dlid) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(v) => {
                let Some(stream) = self.connect(dlid) else { return };
                v.insert(stream)
            }
        };
        let mut record = Vec::with_capacity(4 + bytes.len());
        record.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
        record.extend_from_slice(bytes);
        if stream.write_all(&record).is_err() {
            conns.remove(&dlid);
        }
    }

    fn connect(&self, dlid: Lid) -> Option<TcpStream> {
        let entry = self.config.entry(dlid)?;
        let addr = (entry.host.as_str(), entry.port).to_socket_addrs().ok()?.next()?;
        let stream = TcpStream::connect_timeout(&addr, CONNECT_TIMEOUT).ok()?;
        let _ = stream.set_nodelay(true);
        Some(stream)
    }
}

impl Drop for SocketWire {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::Release);
        for (_, s) in self.conns.lock().unwrap().drain() {
            let _ = s.shutdown(std::net::Shutdown::Both);
        }
    }
}

fn read_records(mut stream: TcpStream, lid: Lid, tx: Inbound, stop: &AtomicBool) {
    let _ = stream.set_nodelay(true);
    let mut len = [0u8; 4];
    while !stop.load(Ordering::Acquire) {
        if stream.read_exact(&mut len).is_err() {
            return;
        }
        let n = u32::from_be_bytes(len) as usize;
        if n > MAX_RECORD {
            return;
        }
        let mut buf = vec![0; n];
        if stream.read_exact(&mut buf).is_err() || tx.send((lid, buf)).is_err() {
            return;
        }
    }
}
