//! C ABI over `softverbs`.
//!
//! Every resource is an opaque heap handle. Creation functions write the new
//! handle through an out-pointer and return an [`SvStatus`]; destroy
//! functions free the handle only when they succeed, so a handle whose
//! destroy failed (for example with `SV_STATUS_BUSY`) stays valid.
//!
//! The message for the most recent failure on the calling thread is
//! available from [`sv_last_error`]. Panics never cross the boundary; they
//! surface as `SV_STATUS_INTERNAL`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use softverbs::fabric::{Fabric, FaultProfile};
use softverbs::verbs::{
    AccessFlags, AddressHandle, AttrMask, Buffer, CompletionQueue, Context, CqStatus, Device, DeviceRegistry, Gid,
    MemoryRegion, Mtu, ProtectionDomain, QpAttributes, QpInitAttr, QpState, QpType, QueueCaps, QueuePair, VerbsError,
};
use softverbs::wq::{
    PollError, PostError, PostErrorKind, RecvWr, SendFlags, SendOpcode, SendWr, Sge, WcOpcode, WcStatus,
};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SvStatus {
    Ok = 0,
    NullPointer,
    InvalidArgument,
    NotFound,
    Busy,
    Destroyed,
    IllegalTransition,
    IncompleteMask,
    Port,
    InvalidState,
    QueueFull,
    InvalidLkey,
    OutOfBounds,
    CqError,
    Fabric,
    Internal,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SvQpState {
    Reset = 0,
    Init,
    Rtr,
    Rts,
    Err,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SvWcStatus {
    Success = 0,
    LocalProtectionError,
    RetryExceeded,
    RnrRetryExceeded,
    WorkRequestFlushed,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SvWcOpcode {
    Send = 0,
    Recv,
}

pub const SV_ACCESS_LOCAL_WRITE: u32 = 1;
pub const SV_ACCESS_REMOTE_WRITE: u32 = 2;
pub const SV_ACCESS_REMOTE_READ: u32 = 4;
pub const SV_ACCESS_REMOTE_ATOMIC: u32 = 8;

pub const SV_ATTR_STATE: u32 = 1 << 0;
pub const SV_ATTR_PKEY_INDEX: u32 = 1 << 1;
pub const SV_ATTR_PORT: u32 = 1 << 2;
pub const SV_ATTR_ACCESS_FLAGS: u32 = 1 << 3;
pub const SV_ATTR_AV: u32 = 1 << 4;
pub const SV_ATTR_PATH_MTU: u32 = 1 << 5;
pub const SV_ATTR_DEST_QPN: u32 = 1 << 6;
pub const SV_ATTR_RQ_PSN: u32 = 1 << 7;
pub const SV_ATTR_MAX_DEST_RD_ATOMIC: u32 = 1 << 8;
pub const SV_ATTR_MIN_RNR_TIMER: u32 = 1 << 9;
pub const SV_ATTR_TIMEOUT: u32 = 1 << 10;
pub const SV_ATTR_RETRY_CNT: u32 = 1 << 11;
pub const SV_ATTR_RNR_RETRY: u32 = 1 << 12;
pub const SV_ATTR_SQ_PSN: u32 = 1 << 13;
pub const SV_ATTR_MAX_QP_RD_ATOMIC: u32 = 1 << 14;

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct SvFaultProfile {
    pub drop_probability: f64,
    pub duplicate_probability: f64,
    pub reorder_probability: f64,
    pub seed: u64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct SvQpCaps {
    pub max_send_wr: u32,
    pub max_recv_wr: u32,
    pub max_send_sge: u32,
    pub max_recv_sge: u32,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct SvAddressHandle {
    pub dlid: u16,
    pub sl: u8,
    pub src_path_bits: u8,
    pub port_num: u8,
    pub is_global: bool,
    pub dgid: [u8; 16],
}

/// Queue pair attributes. `path_mtu` is in bytes (256 to 4096).
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct SvQpAttr {
    pub qp_state: SvQpState,
    pub pkey_index: u16,
    pub port_num: u8,
    pub qp_access_flags: u32,
    pub path_mtu: u32,
    pub dest_qp_num: u32,
    pub rq_psn: u32,
    pub sq_psn: u32,
    pub max_dest_rd_atomic: u8,
    pub max_rd_atomic: u8,
    pub min_rnr_timer: u8,
    pub timeout: u8,
    pub retry_cnt: u8,
    pub rnr_retry: u8,
    pub ah: SvAddressHandle,
}

#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct SvSge {
    pub addr: u64,
    pub length: u32,
    pub lkey: u32,
}

#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct SvWc {
    pub wr_id: u64,
    pub status: SvWcStatus,
    pub opcode: SvWcOpcode,
    pub byte_len: u32,
    pub qp_num: u32,
}

pub struct SvRegistry(DeviceRegistry);
pub struct SvFabric(Fabric);
pub struct SvContext(Context);
pub struct SvPd(ProtectionDomain);
pub struct SvBuffer(Buffer);
pub struct SvMr(MemoryRegion);
pub struct SvCq(CompletionQueue);
pub struct SvQp(QueuePair);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(SvStatus, String);

impl Failure {
    fn new(status: SvStatus, msg: impl Into<String>) -> Self {
        Failure(status, msg.into())
    }
}

impl From<VerbsError> for Failure {
    fn from(e: VerbsError) -> Self {
        let status = match &e {
            VerbsError::UnknownDevice(_) => SvStatus::NotFound,
            VerbsError::Busy(_) => SvStatus::Busy,
            VerbsError::Destroyed(_) | VerbsError::ContextClosed | VerbsError::ChannelDestroyed => SvStatus::Destroyed,
            VerbsError::IllegalTransition { .. } => SvStatus::IllegalTransition,
            VerbsError::IncompleteMask { .. } => SvStatus::IncompleteMask,
            VerbsError::InvalidPort(_) | VerbsError::PortAlreadyAttached(_) | VerbsError::PortNotActive(_) => {
                SvStatus::Port
            }
            VerbsError::Fabric(_) | VerbsError::LidsExhausted => SvStatus::Fabric,
            _ => SvStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<PostError> for Failure {
    fn from(e: PostError) -> Self {
        let status = match e.kind {
            PostErrorKind::InvalidState(_) => SvStatus::InvalidState,
            PostErrorKind::QueueFull => SvStatus::QueueFull,
            PostErrorKind::InvalidLkey(_) | PostErrorKind::WrongPd => SvStatus::InvalidLkey,
            PostErrorKind::OutOfBounds => SvStatus::OutOfBounds,
            PostErrorKind::Destroyed => SvStatus::Destroyed,
            PostErrorKind::TooManySge | PostErrorKind::ZeroLengthSge => SvStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<PollError> for Failure {
    fn from(e: PollError) -> Self {
        let status = match e {
            PollError::CqError => SvStatus::CqError,
            PollError::Destroyed => SvStatus::Destroyed,
            PollError::ZeroBudget => SvStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

/// Runs `f`, recording any failure or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            SvStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            SvStatus::Internal
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::new(SvStatus::NullPointer, format!("{what} is null")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(SvStatus::NullPointer, "output pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn out_ptr<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::new(SvStatus::NullPointer, "output pointer is null"))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(SvStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::new(SvStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Frees `p` after `destroy` succeeds on its contents.
unsafe fn destroy_with<T>(p: *mut T, what: &str, destroy: impl FnOnce(&T) -> Result<(), Failure>) -> SvStatus {
    guard(|| {
        destroy(get(p, what)?)?;
        drop(Box::from_raw(p));
        Ok(())
    })
}

fn qp_state_in(s: SvQpState) -> QpState {
    match s {
        SvQpState::Reset => QpState::Reset,
        SvQpState::Init => QpState::Init,
        SvQpState::Rtr => QpState::Rtr,
        SvQpState::Rts => QpState::Rts,
        SvQpState::Err => QpState::Err,
    }
}

fn qp_state_out(s: QpState) -> SvQpState {
    match s {
        QpState::Reset => SvQpState::Reset,
        QpState::Init => SvQpState::Init,
        QpState::Rtr => SvQpState::Rtr,
        QpState::Rts => SvQpState::Rts,
        QpState::Err => SvQpState::Err,
    }
}

fn attr_in(a: &SvQpAttr) -> Result<QpAttributes, Failure> {
    let path_mtu = Mtu::from_bytes(a.path_mtu as usize)
        .ok_or_else(|| Failure::new(SvStatus::InvalidArgument, format!("invalid path MTU {}", a.path_mtu)))?;
    Ok(QpAttributes {
        qp_state: qp_state_in(a.qp_state),
        pkey_index: a.pkey_index,
        port_num: a.port_num,
        qp_access_flags: AccessFlags::from_bits_retain(a.qp_access_flags),
        path_mtu,
        dest_qp_num: a.dest_qp_num,
        rq_psn: a.rq_psn,
        sq_psn: a.sq_psn,
        max_dest_rd_atomic: a.max_dest_rd_atomic,
        max_rd_atomic: a.max_rd_atomic,
        min_rnr_timer: a.min_rnr_timer,
        timeout: a.timeout,
        retry_cnt: a.retry_cnt,
        rnr_retry: a.rnr_retry,
        ah: AddressHandle {
            dlid: a.ah.dlid,
            sl: a.ah.sl,
            src_path_bits: a.ah.src_path_bits,
            port_num: a.ah.port_num,
            is_global: a.ah.is_global,
            dgid: Gid(a.ah.dgid),
        },
    })
}

fn attr_out(a: &QpAttributes) -> SvQpAttr {
    SvQpAttr {
        qp_state: qp_state_out(a.qp_state),
        pkey_index: a.pkey_index,
        port_num: a.port_num,
        qp_access_flags: a.qp_access_flags.bits(),
        path_mtu: a.path_mtu.bytes() as u32,
        dest_qp_num: a.dest_qp_num,
        rq_psn: a.rq_psn,
        sq_psn: a.sq_psn,
        max_dest_rd_atomic: a.max_dest_rd_atomic,
        max_rd_atomic: a.max_rd_atomic,
        min_rnr_timer: a.min_rnr_timer,
        timeout: a.timeout,
        retry_cnt: a.retry_cnt,
        rnr_retry: a.rnr_retry,
        ah: SvAddressHandle {
            dlid: a.ah.dlid,
            sl: a.ah.sl,
            src_path_bits: a.ah.src_path_bits,
            port_num: a.ah.port_num,
            is_global: a.ah.is_global,
            dgid: *a.ah.dgid.as_bytes(),
        },
    }
}

fn wc_out(wc: &softverbs::wq::WorkCompletion) -> SvWc {
    SvWc {
        wr_id: wc.wr_id,
        status: match wc.status {
            WcStatus::Success => SvWcStatus::Success,
            WcStatus::LocalProtectionError => SvWcStatus::LocalProtectionError,
            WcStatus::RetryExceeded => SvWcStatus::RetryExceeded,
            WcStatus::RnrRetryExceeded => SvWcStatus::RnrRetryExceeded,
            WcStatus::WorkRequestFlushed => SvWcStatus::WorkRequestFlushed,
        },
        opcode: match wc.opcode {
            WcOpcode::Send => SvWcOpcode::Send,
            WcOpcode::Recv => SvWcOpcode::Recv,
        },
        byte_len: wc.byte_len,
        qp_num: wc.qp_num,
    }
}

unsafe fn sges_in(sges: *const SvSge, n: usize) -> Result<Vec<Sge>, Failure> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if sges.is_null() {
        return Err(Failure::new(SvStatus::NullPointer, "scatter/gather list is null"));
    }
    Ok(std::slice::from_raw_parts(sges, n)
        .iter()
        .map(|s| Sge { addr: s.addr, length: s.length, lkey: s.lkey })
        .collect())
}

/// Message describing the calling thread's most recent failure, or an empty
/// string. Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn sv_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Static name of a status code, e.g. "SV_STATUS_BUSY".
#[no_mangle]
pub extern "C" fn sv_status_name(status: SvStatus) -> *const c_char {
    let s: &'static CStr = match status {
        SvStatus::Ok => c"SV_STATUS_OK",
        SvStatus::NullPointer => c"SV_STATUS_NULL_POINTER",
        SvStatus::InvalidArgument => c"SV_STATUS_INVALID_ARGUMENT",
        SvStatus::NotFound => c"SV_STATUS_NOT_FOUND",
        SvStatus::Busy => c"SV_STATUS_BUSY",
        SvStatus::Destroyed => c"SV_STATUS_DESTROYED",
        SvStatus::IllegalTransition => c"SV_STATUS_ILLEGAL_TRANSITION",
        SvStatus::IncompleteMask => c"SV_STATUS_INCOMPLETE_MASK",
        SvStatus::Port => c"SV_STATUS_PORT",
        SvStatus::InvalidState => c"SV_STATUS_INVALID_STATE",
        SvStatus::QueueFull => c"SV_STATUS_QUEUE_FULL",
        SvStatus::InvalidLkey => c"SV_STATUS_INVALID_LKEY",
        SvStatus::OutOfBounds => c"SV_STATUS_OUT_OF_BOUNDS",
        SvStatus::CqError => c"SV_STATUS_CQ_ERROR",
        SvStatus::Fabric => c"SV_STATUS_FABRIC",
        SvStatus::Internal => c"SV_STATUS_INTERNAL",
    };
    s.as_ptr()
}

// ---- devices and fabric ----

#[no_mangle]
pub unsafe extern "C" fn sv_registry_new(out: *mut *mut SvRegistry) -> SvStatus {
    guard(|| put(out, SvRegistry(DeviceRegistry::new())))
}

#[no_mangle]
pub unsafe extern "C" fn sv_registry_add_device(reg: *const SvRegistry, name: *const c_char, guid: u64) -> SvStatus {
    guard(|| {
        let reg = get(reg, "registry")?;
        let name = c_str(name, "device name")?;
        reg.0.add(Device::new(name, guid)).map_err(|e| match e {
            VerbsError::DuplicateDevice(_) => Failure::new(SvStatus::InvalidArgument, e.to_string()),
            e => e.into(),
        })
    })
}

#[no_mangle]
pub unsafe extern "C" fn sv_registry_free(reg: *mut SvRegistry) {
    if !reg.is_null() {
        drop(Box::from_raw(reg));
    }
}

/// Creates an in-process fabric. `faults` may be null for a lossless one.
#[no_mangle]
pub unsafe extern "C" fn sv_fabric_loopback_new(faults: *const SvFaultProfile, out: *mut *mut SvFabric) -> SvStatus {
    guard(|| {
        let profile = match faults.as_ref() {
            None => FaultProfile::none(),
            Some(f) => FaultProfile::new(f.drop_probability, f.duplicate_probability, f.reorder_probability, f.seed)
                .map_err(|e| Failure::new(SvStatus::InvalidArgument, e.to_string()))?,
        };
        put(out, SvFabric(Fabric::loopback(profile)))
    })
}

#[no_mangle]
pub unsafe extern "C" fn sv_fabric_free(fabric: *mut SvFabric) {
    if !fabric.is_null() {
        drop(Box::from_raw(fabric));
    }
}

/// Activates `port` of `ctx` and reports the LID it was given.
#[no_mangle]
pub unsafe extern "C" fn sv_fabric_attach(
    fabric: *const SvFabric,
    ctx: *const SvContext,
    port: u8,
    out_lid: *mut u16,
) -> SvStatus {
    guard(|| {
        let lid = get(fabric, "fabric")?.0.attach(&get(ctx, "context")?.0, port)?;
        *out_ptr(out_lid)? = lid;
        Ok(())
    })
}

/// Processes queued loopback events until none remain or `max_events` have
/// run. `out_events` (nullable) receives the number processed.
#[no_mangle]
pub unsafe extern "C" fn sv_fabric_run_until_idle(
    fabric: *const SvFabric,
    max_events: usize,
    out_events: *mut usize,
) -> SvStatus {
    guard(|| {
        let lo = get(fabric, "fabric")?
            .0
            .loopback_control()
            .ok_or_else(|| Failure::new(SvStatus::Fabric, "not a loopback fabric"))?;
        let n = lo.run_until_idle(max_events);
        if let Some(out) = out_events.as_mut() {
            *out = n;
        }
        Ok(())
    })
}

/// Current fabric clock in microseconds.
#[no_mangle]
pub unsafe extern "C" fn sv_fabric_now_us(fabric: *const SvFabric) -> u64 {
    fabric.as_ref().map_or(0, |f| f.0.now_us())
}

#[no_mangle]
pub unsafe extern "C" fn sv_context_open(
    reg: *const SvRegistry,
    name: *const c_char,
    out: *mut *mut SvContext,
) -> SvStatus {
    guard(|| {
        let reg = &get(reg, "registry")?.0;
        let name = c_str(name, "device name")?;
        let dev = reg.find(name).ok_or_else(|| Failure::new(SvStatus::NotFound, format!("unknown device `{name}`")))?;
        put(out, SvContext(reg.open_device(&dev)?))
    })
}

/// Fails with `SV_STATUS_BUSY` while child resources exist.
#[no_mangle]
pub unsafe extern "C" fn sv_context_close(ctx: *mut SvContext) -> SvStatus {
    destroy_with(ctx, "context", |c| Ok(c.0.close()?))
}

// ---- protection domains and memory ----

#[no_mangle]
pub unsafe extern "C" fn sv_pd_alloc(ctx: *const SvContext, out: *mut *mut SvPd) -> SvStatus {
    guard(|| put(out, SvPd(get(ctx, "context")?.0.alloc_pd()?)))
}

#[no_mangle]
pub unsafe extern "C" fn sv_pd_dealloc(pd: *mut SvPd) -> SvStatus {
    destroy_with(pd, "protection domain", |p| Ok(p.0.dealloc()?))
}

/// Allocates a zeroed buffer with a page-aligned synthetic address.
#[no_mangle]
pub unsafe extern "C" fn sv_buffer_alloc(len: usize, out: *mut *mut SvBuffer) -> SvStatus {
    guard(|| put(out, SvBuffer(Buffer::alloc(len))))
}

#[no_mangle]
pub unsafe extern "C" fn sv_buffer_free(buf: *mut SvBuffer) {
    if !buf.is_null() {
        drop(Box::from_raw(buf));
    }
}

/// Address of byte 0, for building scatter/gather elements.
#[no_mangle]
pub unsafe extern "C" fn sv_buffer_addr(buf: *const SvBuffer) -> u64 {
    buf.as_ref().map_or(0, |b| b.0.addr())
}

fn check_span(buf: &Buffer, offset: usize, len: usize) -> Result<(), Failure> {
    match offset.checked_add(len) {
        Some(end) if end <= buf.len() => Ok(()),
        _ => Err(Failure::new(SvStatus::OutOfBounds, "range exceeds buffer")),
    }
}

#[no_mangle]
pub unsafe extern "C" fn sv_buffer_write(buf: *const SvBuffer, offset: usize, src: *const u8, len: usize) -> SvStatus {
    guard(|| {
        let buf = &get(buf, "buffer")?.0;
        check_span(buf, offset, len)?;
        if len > 0 {
            buf.write(offset, std::slice::from_raw_parts(get(src, "source")?, len));
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sv_buffer_read(buf: *const SvBuffer, offset: usize, dst: *mut u8, len: usize) -> SvStatus {
    guard(|| {
        let buf = &get(buf, "buffer")?.0;
        check_span(buf, offset, len)?;
        if len > 0 {
            let data = buf.read(offset..offset + len);
            ptr::copy_nonoverlapping(data.as_ptr(), out_ptr(dst)?, len);
        }
        Ok(())
    })
}

/// Registers `len` bytes of `buf` starting at `offset`.
#[no_mangle]
pub unsafe extern "C" fn sv_mr_reg(
    pd: *const SvPd,
    buf: *const SvBuffer,
    offset: usize,
    len: usize,
    access: u32,
    out: *mut *mut SvMr,
) -> SvStatus {
    guard(|| {
        let end = offset.checked_add(len).ok_or_else(|| Failure::new(SvStatus::InvalidArgument, "range overflows"))?;
        let mr = get(pd, "protection domain")?.0.reg_mr(
            &get(buf, "buffer")?.0,
            offset..end,
            AccessFlags::from_bits_retain(access),
        )?;
        put(out, SvMr(mr))
    })
}

#[no_mangle]
pub unsafe extern "C" fn sv_mr_lkey(mr: *const SvMr) -> u32 {
    mr.as_ref().map_or(0, |m| m.0.lkey())
}

#[no_mangle]
pub unsafe extern "C" fn sv_mr_addr(mr: *const SvMr) -> u64 {
    mr.as_ref().map_or(0, |m| m.0.addr())
}

#[no_mangle]
pub unsafe extern "C" fn sv_mr_dereg(mr: *mut SvMr) -> SvStatus {
    destroy_with(mr, "memory region", |m| Ok(m.0.dereg()?))
}

// ---- completion queues ----

#[no_mangle]
pub unsafe extern "C" fn sv_cq_create(ctx: *const SvContext, capacity: usize, out: *mut *mut SvCq) -> SvStatus {
    guard(|| put(out, SvCq(get(ctx, "context")?.0.create_cq(capacity, 0, None, 0)?)))
}

/// Removes up to `max` completions into `wcs`; the count goes to `out_n`.
/// A queue that overflowed reports `SV_STATUS_CQ_ERROR` from then on.
#[no_mangle]
pub unsafe extern "C" fn sv_cq_poll(cq: *const SvCq, wcs: *mut SvWc, max: usize, out_n: *mut usize) -> SvStatus {
    guard(|| {
        let cq = &get(cq, "completion queue")?.0;
        let out_n = out_ptr(out_n)?;
        *out_n = 0;
        if max > 0 && wcs.is_null() {
            return Err(Failure::new(SvStatus::NullPointer, "completion array is null"));
        }
        let got = cq.poll(max)?;
        for (i, wc) in got.iter().enumerate() {
            wcs.add(i).write(wc_out(wc));
        }
        *out_n = got.len();
        Ok(())
    })
}

/// True once the queue has latched its error state.
#[no_mangle]
pub unsafe extern "C" fn sv_cq_is_error(cq: *const SvCq) -> bool {
    cq.as_ref().is_some_and(|c| c.0.status() == CqStatus::Error)
}

#[no_mangle]
pub unsafe extern "C" fn sv_cq_destroy(cq: *mut SvCq) -> SvStatus {
    destroy_with(cq, "completion queue", |c| Ok(c.0.destroy()?))
}

// ---- queue pairs ----

/// Creates a reliable-connection queue pair in RESET. Every send completes
/// with a work completion.
#[no_mangle]
pub unsafe extern "C" fn sv_qp_create(
    pd: *const SvPd,
    send_cq: *const SvCq,
    recv_cq: *const SvCq,
    caps: *const SvQpCaps,
    out: *mut *mut SvQp,
) -> SvStatus {
    guard(|| {
        let caps = get(caps, "caps")?;
        let init = QpInitAttr {
            send_cq: get(send_cq, "send CQ")?.0.clone(),
            recv_cq: get(recv_cq, "receive CQ")?.0.clone(),
            caps: QueueCaps::new(caps.max_send_wr, caps.max_recv_wr, caps.max_send_sge, caps.max_recv_sge),
            qp_type: QpType::Rc,
            sq_sig_all: true,
        };
        put(out, SvQp(get(pd, "protection domain")?.0.create_qp(&init)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn sv_qp_num(qp: *const SvQp) -> u32 {
    qp.as_ref().map_or(0, |q| q.0.qp_num())
}

/// Current state; a null handle reads as RESET.
#[no_mangle]
pub unsafe extern "C" fn sv_qp_state(qp: *const SvQp) -> SvQpState {
    qp.as_ref().map_or(SvQpState::Reset, |q| qp_state_out(q.0.state()))
}

/// Writes the fields of `attr` selected by `mask` (`SV_ATTR_*` bits). With
/// `SV_ATTR_STATE` set this is a state transition and the mask must include
/// every field the target state requires.
#[no_mangle]
pub unsafe extern "C" fn sv_qp_modify(qp: *const SvQp, attr: *const SvQpAttr, mask: u32) -> SvStatus {
    guard(|| {
        let qp = &get(qp, "queue pair")?.0;
        let attrs = attr_in(get(attr, "attributes")?)?;
        Ok(qp.modify(&attrs, AttrMask::from_bits_retain(mask))?)
    })
}

#[no_mangle]
pub unsafe extern "C" fn sv_qp_query(qp: *const SvQp, out: *mut SvQpAttr) -> SvStatus {
    guard(|| {
        let attrs = get(qp, "queue pair")?.0.query();
        *out_ptr(out)? = attr_out(&attrs);
        Ok(())
    })
}

/// Posts one SEND gathering `n` elements. Requires RTS.
#[no_mangle]
pub unsafe extern "C" fn sv_qp_post_send(qp: *const SvQp, wr_id: u64, sges: *const SvSge, n: usize) -> SvStatus {
    guard(|| {
        let qp = &get(qp, "queue pair")?.0;
        let wr = SendWr { wr_id, sg_list: sges_in(sges, n)?, opcode: SendOpcode::Send, flags: SendFlags::SIGNALED };
        Ok(qp.post_send(&[wr])?)
    })
}

/// Posts one receive scattering into `n` elements. Allowed from INIT on.
#[no_mangle]
pub unsafe extern "C" fn sv_qp_post_recv(qp: *const SvQp, wr_id: u64, sges: *const SvSge, n: usize) -> SvStatus {
    guard(|| {
        let qp = &get(qp, "queue pair")?.0;
        Ok(qp.post_recv(&[RecvWr { wr_id, sg_list: sges_in(sges, n)? }])?)
    })
}

#[no_mangle]
pub unsafe extern "C" fn sv_qp_destroy(qp: *mut SvQp) -> SvStatus {
    destroy_with(qp, "queue pair", |q| Ok(q.0.destroy()?))
}
