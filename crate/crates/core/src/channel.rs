//! Slot resolution and airtime.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::probability::Probability;

/// PHY timing and framing constants. Durations in microseconds, sizes in bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhyParams {
    pub phy_rate: u64,
    pub sigma_e: u64,
    pub difs: u64,
    pub sifs: u64,
    pub t_phy: u64,
    pub t_sym: u64,
    pub sf_bits: u64,
    pub md_bits: u64,
    pub mh_bits: u64,
    pub tb_bits: u64,
    pub l_ba_bits: u64,
    pub l_dbps: u64,
}

impl Default for PhyParams {
    fn default() -> Self {
        Self {
            phy_rate: 65_000_000,
            sigma_e: 9,
            difs: 28,
            sifs: 10,
            t_phy: 32,
            t_sym: 4,
            sf_bits: 16,
            md_bits: 32,
            mh_bits: 288,
            tb_bits: 6,
            l_ba_bits: 256,
            l_dbps: 256,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("PHY parameter `{0}` must be strictly positive")]
pub struct PhyError(pub &'static str);

impl PhyParams {
    pub fn validate(&self) -> Result<(), PhyError> {
        let fields = [
            ("phy_rate", self.phy_rate),
            ("sigma_e", self.sigma_e),
            ("difs", self.difs),
            ("sifs", self.sifs),
            ("t_phy", self.t_phy),
            ("t_sym", self.t_sym),
            ("sf_bits", self.sf_bits),
            ("md_bits", self.md_bits),
            ("mh_bits", self.mh_bits),
            ("tb_bits", self.tb_bits),
            ("l_ba_bits", self.l_ba_bits),
            ("l_dbps", self.l_dbps),
        ];
        match fields.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(PhyError(name)),
            None => Ok(()),
        }
    }
}

/// Channel time of an A-MPDU carrying `packets` MPDUs of `payload_bits` each,
/// including SIFS, the Block-ACK, DIFS and the trailing empty slot.
pub fn tx_duration(packets: u32, payload_bits: u64, phy: &PhyParams) -> u64 {
    debug_assert!(packets >= 1);
    let data_bits = phy.sf_bits + packets as u64 * (phy.md_bits + phy.mh_bits + payload_bits) + phy.tb_bits;
    let data = phy.t_phy + data_bits.div_ceil(phy.l_dbps) * phy.t_sym;
    let ack_bits = phy.sf_bits + phy.l_ba_bits + phy.tb_bits;
    let ack = phy.t_phy + ack_bits.div_ceil(phy.l_dbps) * phy.t_sym;
    data + phy.sifs + ack + phy.difs + phy.sigma_e
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotKind {
    Empty,
    /// At least one MPDU got through. `corrupted` has bit `i` set when the
    /// `i`-th MPDU of the batch was lost.
    Success { node: usize, delivered: u32, batch: u32, corrupted: u64 },
    /// Lone transmitter, every MPDU corrupted.
    FailedByError { node: usize, batch: u32 },
    Collision { nodes: Vec<usize>, max_batch: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotOutcome {
    pub kind: SlotKind,
    pub duration: u64,
}

impl SlotOutcome {
    pub fn is_empty(&self) -> bool {
        matches!(self.kind, SlotKind::Empty)
    }

    pub fn is_collision(&self) -> bool {
        matches!(self.kind, SlotKind::Collision { .. })
    }
}

/// A node's transmission in the current slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transmission {
    pub node: usize,
    pub batch: u32,
}

/// Resolves one slot. Two or more transmitters always collide; a lone
/// transmitter loses each MPDU independently with probability `p_e` and
/// fails outright only when all of them are lost.
pub fn resolve_slot<R: Rng + ?Sized>(
    transmitters: &[Transmission],
    p_e: Probability,
    payload_bits: u64,
    phy: &PhyParams,
    rng: &mut R,
) -> SlotOutcome {
    match transmitters {
        [] => SlotOutcome {
            kind: SlotKind::Empty,
            duration: phy.sigma_e,
        },
        [tx] => {
            assert!(tx.batch >= 1 && tx.batch <= 64, "batch of {} MPDUs", tx.batch);
            let duration = tx_duration(tx.batch, payload_bits, phy);
            let mut corrupted = 0u64;
            if !p_e.is_zero() {
                for i in 0..tx.batch {
                    if rng.gen::<f64>() < p_e.get() {
                        corrupted |= 1 << i;
                    }
                }
            }
            let lost = corrupted.count_ones();
            let kind = if lost == tx.batch {
                SlotKind::FailedByError {
                    node: tx.node,
                    batch: tx.batch,
                }
            } else {
                SlotKind::Success {
                    node: tx.node,
                    delivered: tx.batch - lost,
                    batch: tx.batch,
                    corrupted,
                }
            };
            SlotOutcome { kind, duration }
        }
        many => {
            let max_batch = many.iter().map(|t| t.batch).max().unwrap_or(1);
            SlotOutcome {
                kind: SlotKind::Collision {
                    nodes: many.iter().map(|t| t.node).collect(),
                    max_batch,
                },
                duration: tx_duration(max_batch, payload_bits, phy),
            }
        }
    }
}
