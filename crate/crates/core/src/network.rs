//! Ring network: all-gather of per-core slices with core-ID reordering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RingLink {
    /// Raw link throughput per core cycle (100 Gb/s at 200 MHz).
    pub bits_per_cycle: u64,
    /// Line-code efficiency as a ratio, 64b/66b by default.
    pub efficiency_num: u64,
    pub efficiency_den: u64,
    /// Fixed cost per hop.
    pub hop_latency: u64,
    /// Forward to the next core ID (true) or the previous one.
    pub clockwise: bool,
}

impl Default for RingLink {
    fn default() -> Self {
        RingLink { bits_per_cycle: 500, efficiency_num: 64, efficiency_den: 66, hop_latency: 64, clockwise: true }
    }
}

impl RingLink {
    pub fn check(&self) -> Result<()> {
        if self.bits_per_cycle == 0 || self.efficiency_num == 0 || self.efficiency_num > self.efficiency_den {
            return Err(Error::Config(format!(
                "ring link needs bits_per_cycle > 0 and 0 < efficiency <= 1, got {} and {}/{}",
                self.bits_per_cycle, self.efficiency_num, self.efficiency_den
            )));
        }
        Ok(())
    }

    /// Cycles to push `bits` over one link, excluding hop latency.
    pub fn transfer_cycles(&self, bits: u64) -> u64 {
        (bits * self.efficiency_den).div_ceil(self.bits_per_cycle * self.efficiency_num)
    }

    /// All-gather cost: n-1 forwarding steps of one slice each.
    pub fn all_gather_cycles(&self, n: usize, slice_elems: usize, bits_per_elem: u64) -> u64 {
        if n <= 1 {
            return 0;
        }
        (n as u64 - 1) * (self.hop_latency + self.transfer_cycles(slice_elems as u64 * bits_per_elem))
    }
}

/// Gathers `slices[i]` (core i's piece) onto every core. Each step, every
/// core forwards the slice it received in the previous step to its ring
/// neighbour; arrivals are placed by originating core ID.
pub fn ring_sync<T: Clone>(slices: &[Vec<T>], link: &RingLink, bits_per_elem: u64) -> Result<(Vec<Vec<T>>, u64)> {
    let n = slices.len();
    if n == 0 {
        return Err(Error::Shard("ring sync with no cores".into()));
    }
    let len = slices[0].len();
    if let Some((i, s)) = slices.iter().enumerate().find(|(_, s)| s.len() != len) {
        return Err(Error::SliceMismatch(format!("core {i} sent {} elements, core 0 sent {len}", s.len())));
    }
    // received[c][origin]
    let mut received: Vec<Vec<Option<Vec<T>>>> =
        (0..n).map(|c| (0..n).map(|o| (o == c).then(|| slices[c].clone())).collect()).collect();
    // Origin of the slice each core forwards next.
    let mut outgoing: Vec<usize> = (0..n).collect();
    for _ in 1..n {
        let mut next = vec![0; n];
        for c in 0..n {
            let to = if link.clockwise { (c + 1) % n } else { (c + n - 1) % n };
            let origin = outgoing[c];
            let data = received[c][origin].clone();
            received[to][origin] = data;
            next[to] = origin;
        }
        outgoing = next;
    }
    let gathered = received
        .into_iter()
        .map(|per_core| per_core.into_iter().flat_map(|s| s.expect("every slice arrives after n-1 steps")).collect())
        .collect();
    Ok((gathered, link.all_gather_cycles(n, len, bits_per_elem)))
}
