use super::RunStats;
use crate::oob::Destination;

/// `  local address:  LID 0x0008, QPN 0x580048, PSN 0x2a166f, GID ::`
pub fn address_line(label: &str, d: &Destination) -> String {
    format!("  {:<15} {}", format!("{label} address:"), d)
}

/// The four-line summary printed at the end of a run.
pub fn report(stats: &RunStats, mine: &Destination, theirs: &Destination) -> String {
    let secs = stats.secs();
    format!(
        "{}\n{}\n{} bytes in {:.2} seconds = {:.2} Mbit/sec\n{} iters in {:.2} seconds = {:.2} usec/iter\n",
        address_line("local", mine),
        address_line("remote", theirs),
        stats.bytes_total,
        secs,
        stats.mbit_per_sec(),
        stats.iters,
        secs,
        stats.usec_per_iter(),
    )
}
