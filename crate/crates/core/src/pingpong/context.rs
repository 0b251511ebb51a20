//! Resource setup mirroring `pp_init_ctx`, `pp_post_recv` and `pp_connect_ctx`.

use super::{PingpongConfig, PingpongError, Result, RECV_WRID};
use crate::fabric::Fabric;
use crate::oob::Destination;
use crate::verbs::{
    AccessFlags, AddressHandle, AttrMask, Buffer, CompletionChannel, CompletionQueue, Context, Device, DeviceRegistry,
    Gid, MemoryRegion, Mtu, PortAttributes, PortState, ProtectionDomain, QpAttributes, QpInitAttr, QpState, QpType,
    QueueCaps, QueuePair,
};
use crate::wq::{RecvWr, Sge};

/// Everything one side of the benchmark owns.
pub struct PingpongContext {
    pub context: Context,
    pub channel: Option<CompletionChannel>,
    pub pd: ProtectionDomain,
    pub mr: MemoryRegion,
    pub cq: CompletionQueue,
    pub qp: QueuePair,
    pub buf: Buffer,
    pub size: usize,
    pub rx_depth: u32,
    /// Receives currently posted.
    pub routs: u32,
    /// Work request kinds still outstanding, as a mask of wr_ids.
    pub pending: u64,
    pub portinfo: PortAttributes,
}

/// Allocates the buffer, opens the device, attaches its port to `fabric`
/// and builds PD, MR, CQ and QP. The QP is left in INIT.
pub fn init_context(
    registry: &DeviceRegistry,
    device: &Device,
    fabric: &Fabric,
    cfg: &PingpongConfig,
) -> Result<PingpongContext> {
    let is_server = cfg.is_server();
    let buf = Buffer::alloc(cfg.size);
    // distinct fill per role so a mixed-up first message is detectable
    buf.fill(0x7b + is_server as u8);

    let context = registry.open_device(device).map_err(PingpongError::verbs("Couldn't get context"))?;
    if context.query_port(cfg.ib_port).map_err(PingpongError::verbs("Couldn't get port info"))?.state
        != PortState::Active
    {
        fabric.attach(&context, cfg.ib_port).map_err(PingpongError::verbs("Couldn't attach port to fabric"))?;
    }
    let channel = if cfg.use_event {
        Some(context.create_comp_channel().map_err(PingpongError::verbs("Couldn't create completion channel"))?)
    } else {
        None
    };
    let pd = context.alloc_pd().map_err(PingpongError::verbs("Couldn't allocate PD"))?;
    let mr =
        pd.reg_mr(&buf, 0..cfg.size, AccessFlags::LOCAL_WRITE).map_err(PingpongError::verbs("Couldn't register MR"))?;
    let cq = context
        .create_cq(cfg.rx_depth as usize + 1, 0, channel.as_ref(), 0)
        .map_err(PingpongError::verbs("Couldn't create CQ"))?;
    let qp = pd
        .create_qp(&QpInitAttr {
            send_cq: cq.clone(),
            recv_cq: cq.clone(),
            caps: QueueCaps::new(1, cfg.rx_depth, 1, 1),
            qp_type: QpType::Rc,
            sq_sig_all: false,
        })
        .map_err(PingpongError::verbs("Couldn't create QP"))?;
    let attr = QpAttributes {
        qp_state: QpState::Init,
        pkey_index: 0,
        port_num: cfg.ib_port,
        qp_access_flags: AccessFlags::empty(),
        ..Default::default()
    };
    qp.modify(&attr, AttrMask::INIT_REQUIRED).map_err(PingpongError::verbs("Failed to modify QP to INIT"))?;
    let portinfo = context.query_port(cfg.ib_port).map_err(PingpongError::verbs("Couldn't get port info"))?;

    Ok(PingpongContext {
        context,
        channel,
        pd,
        mr,
        cq,
        qp,
        buf,
        size: cfg.size,
        rx_depth: cfg.rx_depth,
        routs: 0,
        pending: 0,
        portinfo,
    })
}

/// Posts up to `n` receives covering the whole buffer and returns how many
/// were accepted.
pub fn post_receives(ctx: &PingpongContext, n: u32) -> u32 {
    let wr = RecvWr {
        wr_id: RECV_WRID,
        sg_list: vec![Sge { addr: ctx.buf.addr(), length: ctx.size as u32, lkey: ctx.mr.lkey() }],
    };
    for i in 0..n {
        if ctx.qp.post_recv(std::slice::from_ref(&wr)).is_err() {
            return i;
        }
    }
    n
}

impl PingpongContext {
    /// This side's address, with a fresh 24-bit starting PSN.
    pub fn local_destination(&self, cfg: &PingpongConfig) -> Result<Destination> {
        let port = self.context.query_port(cfg.ib_port).map_err(PingpongError::verbs("Couldn't get port info"))?;
        if port.lid == 0 {
            return Err(PingpongError::NoLocalLid);
        }
        let gid = match cfg.gid_index {
            Some(idx) => {
                self.context.query_gid(cfg.ib_port, idx).map_err(PingpongError::verbs("can't read sgid of index"))?
            }
            None => Gid::ZERO,
        };
        Ok(Destination { lid: port.lid, qpn: self.qp.qp_num(), psn: rand::random::<u32>() & 0xff_ffff, gid })
    }

    /// Tears everything down in reverse order of creation.
    pub fn close(self) -> Result<()> {
        let PingpongContext { context, channel, pd, mr, cq, qp, .. } = self;
        qp.destroy().map_err(PingpongError::verbs("Couldn't destroy QP"))?;
        mr.dereg().map_err(PingpongError::verbs("Couldn't deregister MR"))?;
        cq.destroy().map_err(PingpongError::verbs("Couldn't destroy CQ"))?;
        if let Some(ch) = channel {
            ch.destroy().map_err(PingpongError::verbs("Couldn't destroy completion channel"))?;
        }
        pd.dealloc().map_err(PingpongError::verbs("Couldn't deallocate PD"))?;
        context.close().map_err(PingpongError::verbs("Couldn't release context"))
    }
}

/// Moves the QP through RTR to RTS towards `dest`.
pub fn connect_ctx(ctx: &PingpongContext, port: u8, my_psn: u32, mtu: Mtu, sl: u8, dest: &Destination) -> Result<()> {
    let mut attr = QpAttributes {
        qp_state: QpState::Rtr,
        path_mtu: mtu,
        dest_qp_num: dest.qpn,
        rq_psn: dest.psn,
        max_dest_rd_atomic: 1,
        min_rnr_timer: 12,
        ah: AddressHandle { is_global: false, dlid: dest.lid, sl, src_path_bits: 0, port_num: port, dgid: Gid::ZERO },
        ..ctx.qp.query()
    };
    if !dest.gid.is_zero() {
        attr.ah.is_global = true;
        attr.ah.dgid = dest.gid;
    }
    ctx.qp.modify(&attr, AttrMask::RTR_REQUIRED).map_err(PingpongError::verbs("Failed to modify QP to RTR"))?;

    attr.qp_state = QpState::Rts;
    attr.timeout = 14;
    attr.retry_cnt = 7;
    attr.rnr_retry = 7;
    attr.sq_psn = my_psn;
    attr.max_rd_atomic = 1;
    ctx.qp.modify(&attr, AttrMask::RTS_REQUIRED).map_err(PingpongError::verbs("Failed to modify QP to RTS"))
}
