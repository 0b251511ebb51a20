//! Software-emulated RDMA verbs over a reliable-connection transport.
//!
//! The stack mirrors the libibverbs object model (devices, protection
//! domains, memory regions, completion queues, queue pairs) and runs it over
//! an emulated fabric, either in-process on a virtual clock or across TCP.
//! [`pingpong`] rebuilds the classic `ibv_rc_pingpong` program on top.

pub mod fabric;
pub mod oob;
pub mod pingpong;
pub mod verbs;
pub mod wq;

pub use fabric::{Fabric, FaultProfile};
pub use verbs::{Context, Device, DeviceRegistry, VerbsError};
