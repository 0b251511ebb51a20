//! Verbs resource model: devices, contexts, protection domains, memory
//! regions, completion queues and queue pairs.

mod cq;
mod device;
mod error;
mod mr;
mod pd;
mod qp;
mod types;

pub use cq::{CompletionChannel, CompletionQueue, CqStatus};
pub use device::{Context, Device, DeviceRegistry, FIRST_QPN, GID_TABLE_LEN};
pub use error::{Result, VerbsError};
pub use mr::{Buffer, MemoryRegion, PAGE_SIZE};
pub use pd::ProtectionDomain;
pub use qp::{
    AddressHandle, AttrMask, QpAttributes, QpInitAttr, QpState, QpType, QueueCaps, QueuePair, DEVICE_MAX_SGE,
    DEVICE_MAX_WR, PKEY_TABLE_LEN,
};
pub use types::{AccessFlags, Gid, Lid, LinkLayer, Mtu, PortAttributes, PortState};

pub(crate) use mr::MrInner;
pub(crate) use qp::{QpInner, QpShared};
