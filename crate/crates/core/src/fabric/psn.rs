//! 24-bit packet sequence number arithmetic.
//!
//! PSNs live in a circular space of size 2^24. Ordering between two PSNs is
//! decided with serial-number arithmetic: `a` is "after" `b` when the forward
//! distance from `b` to `a` is less than half the space.

/// Mask selecting the 24 PSN bits.
pub const PSN_MASK: u32 = 0x00FF_FFFF;

/// Half of the PSN space; distances at or beyond it count as "behind".
pub const PSN_HALF_RANGE: u32 = 1 << 23;

/// Returns `psn + n` modulo 2^24.
#[inline]
pub fn psn_add(psn: u32, n: u32) -> u32 {
    psn.wrapping_add(n) & PSN_MASK
}

/// Signed distance from `b` to `a`.
///
/// Positive means `a` is ahead of `b`, negative means it is behind. The
/// result lies in `[-2^23, 2^23)`.
#[inline]
pub fn psn_diff(a: u32, b: u32) -> i32 {
    let d = a.wrapping_sub(b) & PSN_MASK;
    if d >= PSN_HALF_RANGE {
        d as i32 - (1 << 24)
    } else {
        d as i32
    }
}

/// True when `psn` is a valid 24-bit value.
#[inline]
pub fn is_valid_psn(psn: u32) -> bool {
    psn <= PSN_MASK
}
