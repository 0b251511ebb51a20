use thiserror::Error;

use super::qp::{AttrMask, QpState};

/// Failure of a verbs resource or control operation.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[non_exhaustive]
pub enum VerbsError {
    #[error("unknown device `{0}`")]
    UnknownDevice(String),
    #[error("duplicate device name `{0}`")]
    DuplicateDevice(String),
    #[error("device context is closed")]
    ContextClosed,
    #[error("{0} has already been destroyed")]
    Destroyed(&'static str),
    #[error("{0} still has live child resources")]
    Busy(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error("port {0} does not exist")]
    InvalidPort(u8),
    #[error("GID index {0} out of range")]
    InvalidGidIndex(usize),
    #[error("port {0} is already attached to a fabric")]
    PortAlreadyAttached(u8),
    #[error("port {0} is not active")]
    PortNotActive(u8),
    #[error("resources belong to different device contexts")]
    CrossContext,
    #[error("only reliable-connection queue pairs are supported")]
    UnsupportedQpType,
    #[error("illegal queue pair transition {from:?} -> {to:?}")]
    IllegalTransition { from: QpState, to: QpState },
    #[error("transition {from:?} -> {to:?} is missing attributes {missing:?}")]
    IncompleteMask { from: QpState, to: QpState, missing: AttrMask },
    #[error("completion queue has no completion channel")]
    NoChannel,
    #[error("completion channel destroyed")]
    ChannelDestroyed,
    #[error("acknowledging {requested} events but only {outstanding} are outstanding")]
    OverAck { requested: u32, outstanding: u32 },
    #[error("LID space exhausted")]
    LidsExhausted,
    #[error("fabric error: {0}")]
    Fabric(String),
}

pub type Result<T, E = VerbsError> = std::result::Result<T, E>;
