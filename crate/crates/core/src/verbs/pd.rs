use std::sync::{Arc, Mutex};

use super::device::Context;
use super::error::{Result, VerbsError};

#[derive(Default)]
pub(crate) struct PdState {
    pub(crate) destroyed: bool,
    pub(crate) live_mrs: usize,
    pub(crate) live_qps: usize,
}

pub(crate) struct PdInner {
    pub(crate) handle: u32,
    pub(crate) ctx: Context,
    pub(crate) state: Mutex<PdState>,
}

/// Protection domain: scopes which memory regions a queue pair may touch.
#[derive(Clone)]
pub struct ProtectionDomain {
    pub(crate) inner: Arc<PdInner>,
}

impl Context {
    pub fn alloc_pd(&self) -> Result<ProtectionDomain> {
        let mut st = self.lock_open()?;
        let handle = st.next_pd;
        st.next_pd += 1;
        st.live_pds += 1;
        Ok(ProtectionDomain {
            inner: Arc::new(PdInner { handle, ctx: self.clone(), state: Mutex::new(PdState::default()) }),
        })
    }
}

impl ProtectionDomain {
    pub fn handle(&self) -> u32 {
        self.inner.handle
    }

    pub fn context(&self) -> &Context {
        &self.inner.ctx
    }

    pub fn same_as(&self, other: &ProtectionDomain) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }

    /// Releases the domain. Fails while memory regions or queue pairs still use it.
    pub fn dealloc(&self) -> Result<()> {
        let mut ctx = self.inner.ctx.lock();
        let mut st = self.inner.state.lock().unwrap();
        if st.destroyed {
            return Err(VerbsError::Destroyed("protection domain"));
        }
        if st.live_mrs > 0 || st.live_qps > 0 {
            return Err(VerbsError::Busy("protection domain"));
        }
        st.destroyed = true;
        ctx.live_pds -= 1;
        Ok(())
    }
}

impl std::fmt::Debug for ProtectionDomain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProtectionDomain").field("handle", &self.inner.handle).finish()
    }
}
