use std::path::PathBuf;

use super::{PingpongError, Result};
use crate::fabric::FaultProfile;
use crate::oob::DEFAULT_OOB_PORT;
use crate::verbs::{Mtu, DEVICE_MAX_WR};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FabricKind {
    /// Both roles in one process over the virtual-clock fabric.
    #[default]
    Loopback,
    /// One role per process, frames carried over TCP.
    Socket,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PingpongConfig {
    /// Absent for the server role.
    pub server_host: Option<String>,
    pub oob_port: u16,
    pub ib_port: u8,
    pub size: usize,
    pub rx_depth: u32,
    pub iters: u32,
    pub use_event: bool,
    pub sl: u8,
    pub mtu: Mtu,
    pub gid_index: Option<usize>,
    pub faults: FaultProfile,
    pub fabric: FabricKind,
    pub fabric_config: Option<PathBuf>,
}

impl Default for PingpongConfig {
    fn default() -> Self {
        PingpongConfig {
            server_host: None,
            oob_port: DEFAULT_OOB_PORT,
            ib_port: 1,
            size: 4096,
            rx_depth: 500,
            iters: 1000,
            use_event: false,
            sl: 0,
            mtu: Mtu::Mtu1024,
            gid_index: None,
            faults: FaultProfile::none(),
            fabric: FabricKind::Loopback,
            fabric_config: None,
        }
    }
}

impl PingpongConfig {
    pub fn is_server(&self) -> bool {
        self.server_host.is_none()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PingpongError::Config(m.into()));
        if self.size < 1 || self.size > u32::MAX as usize {
            return bad("size must be between 1 and 2^32-1");
        }
        if self.iters < 1 {
            return bad("iters must be at least 1");
        }
        if self.rx_depth < 1 || self.rx_depth > DEVICE_MAX_WR {
            return bad("rx_depth out of range");
        }
        if self.sl > 15 {
            return bad("service level must fit in 4 bits");
        }
        if self.fabric == FabricKind::Loopback && self.server_host.is_some() {
            return bad(
                "the loopback fabric runs both sides in one process; drop the server host or use --fabric socket",
            );
        }
        self.faults.validate().map_err(|e| PingpongError::Config(e.to_string()))
    }
}
