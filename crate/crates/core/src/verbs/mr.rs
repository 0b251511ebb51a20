//! Host buffers and memory registration.
//!
//! The emulator owns all memory it can touch. A [`Buffer`] is a shared byte
//! array placed at a synthetic, page-aligned address; scatter/gather elements
//! name bytes by that address, exactly like `(uintptr_t) buf` in C.

use std::ops::Range;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use super::error::{Result, VerbsError};
use super::pd::ProtectionDomain;
use super::types::AccessFlags;

pub const PAGE_SIZE: u64 = 4096;

// Leave unmapped gaps between buffers so an out-of-range address never aliases
// a neighbour.
static NEXT_BUFFER_ADDR: AtomicU64 = AtomicU64::new(0x1000_0000);

struct BufferInner {
    addr: u64,
    bytes: RwLock<Vec<u8>>,
}

/// A page-aligned host buffer addressable by scatter/gather elements.
#[derive(Clone)]
pub struct Buffer {
    inner: Arc<BufferInner>,
}

impl Buffer {
    /// Allocates a zeroed buffer of `len` bytes at a page-aligned address.
    pub fn alloc(len: usize) -> Buffer {
        let span = (len as u64).div_ceil(PAGE_SIZE).max(1) * PAGE_SIZE + PAGE_SIZE;
        let addr = NEXT_BUFFER_ADDR.fetch_add(span, Ordering::Relaxed);
        Buffer { inner: Arc::new(BufferInner { addr, bytes: RwLock::new(vec![0; len]) }) }
    }

    pub fn addr(&self) -> u64 {
        self.inner.addr
    }

    pub fn len(&self) -> usize {
        self.inner.bytes.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn fill(&self, byte: u8) {
        self.inner.bytes.write().unwrap().fill(byte);
    }

    /// Copies `data` in at `offset`. Panics if the write runs past the end.
    pub fn write(&self, offset: usize, data: &[u8]) {
        self.inner.bytes.write().unwrap()[offset..offset + data.len()].copy_from_slice(data);
    }

    pub fn read(&self, range: Range<usize>) -> Vec<u8> {
        self.inner.bytes.read().unwrap()[range].to_vec()
    }

    pub fn to_vec(&self) -> Vec<u8> {
        self.inner.bytes.read().unwrap().clone()
    }

    pub fn same_as(&self, other: &Buffer) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }
}

impl std::fmt::Debug for Buffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Buffer({:#x}, {} bytes)", self.addr(), self.len())
    }
}

pub(crate) struct MrInner {
    pub(crate) lkey: u32,
    pub(crate) pd: ProtectionDomain,
    pub(crate) buffer: Buffer,
    pub(crate) addr: u64,
    pub(crate) length: usize,
    pub(crate) access: AccessFlags,
    pub(crate) pinned: AtomicBool,
}

impl MrInner {
    /// Buffer offset of `[addr, addr+len)` if it lies inside this region.
    pub(crate) fn translate(&self, addr: u64, len: usize) -> Option<usize> {
        let end = addr.checked_add(len as u64)?;
        if addr < self.addr || end > self.addr + self.length as u64 {
            return None;
        }
        Some((addr - self.buffer.addr()) as usize)
    }
}

/// A registered memory region.
#[derive(Clone)]
pub struct MemoryRegion {
    inner: Arc<MrInner>,
}

impl ProtectionDomain {
    /// Registers `range` of `buffer` for access through this domain.
    pub fn reg_mr(&self, buffer: &Buffer, range: Range<usize>, access: AccessFlags) -> Result<MemoryRegion> {
        if range.is_empty() {
            return Err(VerbsError::InvalidArgument("memory region length must be positive"));
        }
        if range.end > buffer.len() {
            return Err(VerbsError::InvalidArgument("memory region exceeds buffer"));
        }
        if !access.is_well_formed() {
            return Err(VerbsError::InvalidArgument("undefined access flag bits"));
        }
        let mut ctx = self.context().lock_open()?;
        let mut pd = self.inner.state.lock().unwrap();
        if pd.destroyed {
            return Err(VerbsError::Destroyed("protection domain"));
        }
        let lkey = ctx.next_lkey;
        ctx.next_lkey = ctx.next_lkey.checked_add(1).ok_or(VerbsError::InvalidArgument("lkey space exhausted"))?;
        let inner = Arc::new(MrInner {
            lkey,
            pd: self.clone(),
            buffer: buffer.clone(),
            addr: buffer.addr() + range.start as u64,
            length: range.len(),
            access,
            pinned: AtomicBool::new(true),
        });
        ctx.mrs.insert(lkey, inner.clone());
        pd.live_mrs += 1;
        Ok(MemoryRegion { inner })
    }
}

impl MemoryRegion {
    pub fn lkey(&self) -> u32 {
        self.inner.lkey
    }

    pub fn addr(&self) -> u64 {
        self.inner.addr
    }

    pub fn len(&self) -> usize {
        self.inner.length
    }

    pub fn is_empty(&self) -> bool {
        self.inner.length == 0
    }

    pub fn access(&self) -> AccessFlags {
        self.inner.access
    }

    pub fn is_pinned(&self) -> bool {
        self.inner.pinned.load(Ordering::Acquire)
    }

    pub fn pd(&self) -> &ProtectionDomain {
        &self.inner.pd
    }

    pub fn buffer(&self) -> &Buffer {
        &self.inner.buffer
    }

    /// Removes the region from the context table and unpins it.
    pub fn dereg(&self) -> Result<()> {
        let mut ctx = self.inner.pd.context().lock();
        if ctx.mrs.remove(&self.inner.lkey).is_none() {
            return Err(VerbsError::Destroyed("memory region"));
        }
        self.inner.pinned.store(false, Ordering::Release);
        self.inner.pd.inner.state.lock().unwrap().live_mrs -= 1;
        Ok(())
    }
}

impl std::fmt::Debug for MemoryRegion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MemoryRegion")
            .field("lkey", &self.inner.lkey)
            .field("addr", &format_args!("{:#x}", self.inner.addr))
            .field("length", &self.inner.length)
            .finish()
    }
}
