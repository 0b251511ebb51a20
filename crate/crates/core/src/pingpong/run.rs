//! The send/receive loop with receive-credit accounting.

use std::time::{Duration, Instant};

use super::context::{post_receives, PingpongContext};
use super::{PingpongConfig, PingpongError, Result, RECV_WRID, SEND_WRID};
use crate::wq::{SendFlags, SendOpcode, SendWr, Sge, WcStatus, WorkCompletion};

/// Generous bound on a single wait for a completion event.
const EVENT_TIMEOUT: Duration = Duration::from_secs(60);

/// Hooks for observing the loop. All methods default to no-ops.
pub trait LoopMonitor {
    /// Called at the top of every loop iteration.
    fn on_iteration(&mut self, _routs: u32) {}
    /// Called after receives were topped up.
    fn on_repost(&mut self, _routs_before: u32, _routs_after: u32) {}
    fn on_completion(&mut self, _wc: &WorkCompletion) {}
}

pub struct NoMonitor;

impl LoopMonitor for NoMonitor {}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunStats {
    pub bytes_total: u64,
    pub elapsed: Duration,
    pub iters: u32,
    pub rcnt: u32,
    pub scnt: u32,
    pub cq_events: u32,
}

impl RunStats {
    pub fn secs(&self) -> f64 {
        self.elapsed.as_secs_f64()
    }

    pub fn mbit_per_sec(&self) -> f64 {
        self.bytes_total as f64 * 8.0 / (self.secs() * 1e6)
    }

    pub fn usec_per_iter(&self) -> f64 {
        self.secs() * 1e6 / self.iters as f64
    }
}

fn post_send(ctx: &PingpongContext) -> Result<()> {
    let wr = SendWr {
        wr_id: SEND_WRID,
        sg_list: vec![Sge { addr: ctx.buf.addr(), length: ctx.size as u32, lkey: ctx.mr.lkey() }],
        opcode: SendOpcode::Send,
        flags: SendFlags::SIGNALED,
    };
    ctx.qp.post_send(std::slice::from_ref(&wr)).map_err(PingpongError::PostSend)
}

/// Runs the ping-pong until both counters reach `cfg.iters`. Expects the QP
/// in RTS with `ctx.routs` receives already posted and, in event mode, the
/// CQ armed.
pub fn run_loop(ctx: &mut PingpongContext, cfg: &PingpongConfig, monitor: &mut dyn LoopMonitor) -> Result<RunStats> {
    let iters = cfg.iters;
    let start = Instant::now();
    if cfg.is_server() {
        ctx.pending = RECV_WRID;
    } else {
        post_send(ctx)?;
        ctx.pending = RECV_WRID | SEND_WRID;
    }

    let (mut rcnt, mut scnt) = (0u32, 0u32);
    let mut num_cq_events = 0u32;
    let mut unacked_events = 0u32;
    // every message is a copy of the client's initial buffer
    let expected_fill = 0x7b;
    let mut first_checked = false;

    while rcnt < iters || scnt < iters {
        monitor.on_iteration(ctx.routs);
        if let Some(channel) = &ctx.channel {
            let ev_cq = channel
                .get_cq_event_timeout(EVENT_TIMEOUT)
                .map_err(PingpongError::verbs("Failed to get cq_event"))?
                .ok_or(PingpongError::EventTimeout)?;
            num_cq_events += 1;
            unacked_events += 1;
            if !ev_cq.same_as(&ctx.cq) {
                return Err(PingpongError::UnknownCq);
            }
            ctx.cq.req_notify().map_err(PingpongError::verbs("Couldn't request CQ notification"))?;
            if unacked_events >= ctx.rx_depth {
                ctx.cq.ack_events(unacked_events).map_err(PingpongError::verbs("Couldn't ack CQ events"))?;
                unacked_events = 0;
            }
        }

        let wcs = loop {
            let wcs = ctx.cq.poll(2).map_err(PingpongError::Poll)?;
            if ctx.channel.is_some() || !wcs.is_empty() {
                break wcs;
            }
            std::thread::yield_now();
        };

        for wc in &wcs {
            monitor.on_completion(wc);
            if wc.status != WcStatus::Success {
                return Err(PingpongError::BadStatus { status: wc.status, wr_id: wc.wr_id });
            }
            match wc.wr_id {
                SEND_WRID => scnt += 1,
                RECV_WRID => {
                    if !first_checked {
                        first_checked = true;
                        let data = ctx.buf.read(0..wc.byte_len as usize);
                        if wc.byte_len as usize != ctx.size || data.iter().any(|&b| b != expected_fill) {
                            return Err(PingpongError::Payload { expected: expected_fill });
                        }
                    }
                    ctx.routs -= 1;
                    if ctx.routs <= 1 {
                        let before = ctx.routs;
                        let wanted = ctx.rx_depth - ctx.routs;
                        ctx.routs += post_receives(ctx, wanted);
                        monitor.on_repost(before, ctx.routs);
                        if ctx.routs < ctx.rx_depth {
                            return Err(PingpongError::PostRecv { posted: ctx.routs - before, wanted });
                        }
                    }
                    rcnt += 1;
                }
                other => return Err(PingpongError::UnknownWrId(other)),
            }
            ctx.pending &= !wc.wr_id;
            if scnt < iters && ctx.pending == 0 {
                post_send(ctx)?;
                ctx.pending = RECV_WRID | SEND_WRID;
            }
        }
    }
    let elapsed = start.elapsed();

    if unacked_events > 0 {
        ctx.cq.ack_events(unacked_events).map_err(PingpongError::verbs("Couldn't ack CQ events"))?;
    }
    Ok(RunStats {
        bytes_total: 2 * ctx.size as u64 * iters as u64,
        elapsed,
        iters,
        rcnt,
        scnt,
        cq_events: num_cq_events,
    })
}
