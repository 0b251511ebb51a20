//! A reconstruction of `ibv_rc_pingpong` on the emulated stack.
//!
//! Two sides exchange `size`-byte SEND messages `iters` times. Each side
//! keeps up to `rx_depth` receives posted and tops them up when they run low.

mod config;
mod context;
mod report;
mod run;
mod session;

pub use config::{FabricKind, PingpongConfig};
pub use context::{connect_ctx, init_context, post_receives, PingpongContext};
pub use report::{address_line, report};
pub use run::{run_loop, LoopMonitor, NoMonitor, RunStats};
pub use session::{
    default_registry, run_loopback_pair, run_loopback_pair_monitored, run_side, run_socket, OobRole, PairOutcome,
    SideOutcome, DEVICE_NAME,
};

use thiserror::Error;

use crate::oob::OobError;
use crate::verbs::VerbsError;
use crate::wq::{PollError, PostError, WcStatus};

pub const RECV_WRID: u64 = 1;
pub const SEND_WRID: u64 = 2;

#[derive(Debug, Error)]
pub enum PingpongError {
    #[error("No IB devices found")]
    NoDevices,
    #[error("{what}: {source}")]
    Verbs {
        what: &'static str,
        #[source]
        source: VerbsError,
    },
    #[error("Couldn't get local LID")]
    NoLocalLid,
    #[error("Couldn't post receive ({posted} of {wanted})")]
    PostRecv { posted: u32, wanted: u32 },
    #[error("Couldn't post send: {0}")]
    PostSend(#[source] PostError),
    #[error("poll CQ failed: {0}")]
    Poll(#[source] PollError),
    #[error("Failed status {status:?} for wr_id {wr_id}")]
    BadStatus { status: WcStatus, wr_id: u64 },
    #[error("Completion for unknown wr_id {0}")]
    UnknownWrId(u64),
    #[error("CQ event for unknown CQ")]
    UnknownCq,
    #[error("Timed out waiting for a completion event")]
    EventTimeout,
    #[error("first message payload mismatch (expected every byte to be {expected:#04x})")]
    Payload { expected: u8 },
    #[error("Couldn't exchange destinations: {0}")]
    Oob(#[from] OobError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Fabric(String),
}

impl PingpongError {
    pub(crate) fn verbs(what: &'static str) -> impl FnOnce(VerbsError) -> PingpongError {
        move |source| PingpongError::Verbs { what, source }
    }
}

pub type Result<T, E = PingpongError> = std::result::Result<T, E>;
