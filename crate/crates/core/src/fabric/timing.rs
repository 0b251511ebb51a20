/// Maps the 5-bit encoded `timeout` and `min_rnr_timer` attributes to
/// emulator milliseconds.
///
/// The defaults anchor `timeout = 14` at 500 ms and `min_rnr_timer = 12` at
/// 10 ms, doubling or halving per step (never below 1 ms). An encoded
/// timeout of 0 disables the retransmission timer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TimingTable {
    ack_timeout_ms: [Option<u64>; 32],
    rnr_delay_ms: [u64; 32],
}

fn scaled(anchor_ms: u64, anchor_code: u8, code: u8) -> u64 {
    if code >= anchor_code {
        anchor_ms << (code - anchor_code)
    } else {
        (anchor_ms >> (anchor_code - code)).max(1)
    }
}

impl Default for TimingTable {
    fn default() -> Self {
        let mut ack_timeout_ms = [None; 32];
        let mut rnr_delay_ms = [0; 32];
        for code in 0..32u8 {
            if code > 0 {
                ack_timeout_ms[code as usize] = Some(scaled(500, 14, code));
            }
            rnr_delay_ms[code as usize] = scaled(10, 12, code);
        }
        TimingTable { ack_timeout_ms, rnr_delay_ms }
    }
}

impl TimingTable {
    pub fn ack_timeout_ms(&self, code: u8) -> Option<u64> {
        self.ack_timeout_ms[(code & 31) as usize]
    }

    pub fn rnr_delay_ms(&self, code: u8) -> u64 {
        self.rnr_delay_ms[(code & 31) as usize]
    }

    pub fn set_ack_timeout_ms(&mut self, code: u8, ms: Option<u64>) {
        self.ack_timeout_ms[(code & 31) as usize] = ms;
    }

    pub fn set_rnr_delay_ms(&mut self, code: u8, ms: u64) {
        self.rnr_delay_ms[(code & 31) as usize] = ms;
    }
}
