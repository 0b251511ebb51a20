//! Emulated HCAs and the device contexts opened on them.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use super::error::{Result, VerbsError};
use super::mr::MrInner;
use super::types::{Gid, Lid, PortAttributes, PortState};
use crate::fabric::FabricCore;

/// First queue pair number handed out by every context.
pub const FIRST_QPN: u32 = 0x58_0048;

/// Number of GID table entries per port.
pub const GID_TABLE_LEN: usize = 1;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Device {
    name: String,
    guid: u64,
    num_ports: u8,
}

impl Device {
    pub fn new(name: impl Into<String>, guid: u64) -> Self {
        Device { name: name.into(), guid, num_ports: 1 }
    }

    pub fn with_ports(mut self, num_ports: u8) -> Self {
        self.num_ports = num_ports.max(1);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn guid(&self) -> u64 {
        self.guid
    }

    pub fn num_ports(&self) -> u8 {
        self.num_ports
    }
}

/// The set of emulated HCAs visible to this process.
#[derive(Debug, Default)]
pub struct DeviceRegistry {
    devices: RwLock<Vec<Device>>,
}

impl DeviceRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a device; names must be unique.
    pub fn add(&self, device: Device) -> Result<()> {
        let mut devices = self.devices.write().unwrap();
        if devices.iter().any(|d| d.name == device.name) {
            return Err(VerbsError::DuplicateDevice(device.name));
        }
        devices.push(device);
        Ok(())
    }

    pub fn with_device(self, device: Device) -> Result<Self> {
        self.add(device)?;
        Ok(self)
    }

    /// Snapshot of all registered devices, in registration order.
    pub fn get_device_list(&self) -> Vec<Device> {
        self.devices.read().unwrap().clone()
    }

    pub fn find(&self, name: &str) -> Option<Device> {
        self.devices.read().unwrap().iter().find(|d| d.name == name).cloned()
    }

    /// Opens a fresh context on a registered device.
    pub fn open_device(&self, device: &Device) -> Result<Context> {
        if !self.devices.read().unwrap().contains(device) {
            return Err(VerbsError::UnknownDevice(device.name.clone()));
        }
        Ok(Context::new(device.clone()))
    }
}

pub(crate) struct PortSlot {
    pub(crate) attrs: PortAttributes,
    pub(crate) fabric: Option<Arc<FabricCore>>,
}

pub(crate) struct ContextState {
    pub(crate) open: bool,
    pub(crate) ports: BTreeMap<u8, PortSlot>,
    pub(crate) next_pd: u32,
    pub(crate) next_lkey: u32,
    pub(crate) next_qpn: u32,
    pub(crate) mrs: HashMap<u32, Arc<MrInner>>,
    pub(crate) live_pds: usize,
    pub(crate) live_cqs: usize,
    pub(crate) live_channels: usize,
}

pub(crate) struct ContextInner {
    pub(crate) id: u64,
    pub(crate) device: Device,
    pub(crate) state: Mutex<ContextState>,
}

/// An open device context. Cheap to clone; clones refer to the same context.
#[derive(Clone)]
pub struct Context {
    pub(crate) inner: Arc<ContextInner>,
}

static NEXT_CONTEXT_ID: AtomicU64 = AtomicU64::new(1);

impl Context {
    fn new(device: Device) -> Self {
        let ports =
            (1..=device.num_ports).map(|p| (p, PortSlot { attrs: PortAttributes::down(), fabric: None })).collect();
        Context {
            inner: Arc::new(ContextInner {
                id: NEXT_CONTEXT_ID.fetch_add(1, Ordering::Relaxed),
                device,
                state: Mutex::new(ContextState {
                    open: true,
                    ports,
                    next_pd: 1,
                    next_lkey: 1,
                    next_qpn: FIRST_QPN,
                    mrs: HashMap::new(),
                    live_pds: 0,
                    live_cqs: 0,
                    live_channels: 0,
                }),
            }),
        }
    }

    pub fn device(&self) -> &Device {
        &self.inner.device
    }

    pub fn is_open(&self) -> bool {
        self.inner.state.lock().unwrap().open
    }

    pub fn same_as(&self, other: &Context) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }

    pub(crate) fn lock(&self) -> MutexGuard<'_, ContextState> {
        self.inner.state.lock().unwrap()
    }

    /// Locks the context state, failing if the context has been closed.
    pub(crate) fn lock_open(&self) -> Result<MutexGuard<'_, ContextState>> {
        let st = self.lock();
        if !st.open {
            return Err(VerbsError::ContextClosed);
        }
        Ok(st)
    }

    pub fn query_port(&self, port: u8) -> Result<PortAttributes> {
        let st = self.lock_open()?;
        st.ports.get(&port).map(|p| p.attrs).ok_or(VerbsError::InvalidPort(port))
    }

    /// GID table lookup. Index 0 is the link-local GID derived from the device GUID.
    pub fn query_gid(&self, port: u8, index: usize) -> Result<Gid> {
        let st = self.lock_open()?;
        if !st.ports.contains_key(&port) {
            return Err(VerbsError::InvalidPort(port));
        }
        if index >= GID_TABLE_LEN {
            return Err(VerbsError::InvalidGidIndex(index));
        }
        Ok(Gid::link_local(self.inner.device.guid))
    }

    /// Closes the context. Rejected while protection domains, completion
    /// queues or channels created from it are still alive.
    pub fn close(&self) -> Result<()> {
        let mut st = self.lock_open()?;
        if st.live_pds > 0 || st.live_cqs > 0 || st.live_channels > 0 {
            return Err(VerbsError::Busy("device context"));
        }
        st.open = false;
        Ok(())
    }

    pub(crate) fn attach_port(&self, port: u8, lid: Lid, fabric: Arc<FabricCore>) {
        let mut st = self.lock();
        if let Some(slot) = st.ports.get_mut(&port) {
            slot.attrs.lid = lid;
            slot.attrs.state = PortState::Active;
            slot.fabric = Some(fabric);
        }
    }

    pub(crate) fn check_attachable(&self, port: u8) -> Result<()> {
        let st = self.lock_open()?;
        match st.ports.get(&port) {
            None => Err(VerbsError::InvalidPort(port)),
            Some(slot) if slot.attrs.state == PortState::Active => Err(VerbsError::PortAlreadyAttached(port)),
            Some(_) => Ok(()),
        }
    }
}

impl std::fmt::Debug for Context {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Context").field("id", &self.inner.id).field("device", &self.inner.device.name).finish()
    }
}
