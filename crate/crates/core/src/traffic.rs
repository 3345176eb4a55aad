//! MAC queues and the arrival processes that feed them.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TrafficError {
    #[error("asked for {requested} packets but only {available} are queued")]
    Underflow { requested: usize, available: usize },
    #[error("arrival rate must be positive and finite, got {0}")]
    BadRate(f64),
    #[error("payload must be at least one byte")]
    ZeroPayload,
    #[error("queue capacity must be at least one packet")]
    ZeroCapacity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Packet {
    /// Time the packet entered the MAC queue, in µs.
    pub arrival_us: u64,
}

/// Finite FIFO with block/drop accounting.
#[derive(Debug, Clone)]
pub struct MacQueue {
    capacity: usize,
    packets: VecDeque<Packet>,
    arrived: u64,
    blocked_count: u64,
    dropped_count: u64,
}

impl MacQueue {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            packets: VecDeque::with_capacity(capacity.min(4096)),
            arrived: 0,
            blocked_count: 0,
            dropped_count: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.packets.len() >= self.capacity
    }

    /// Every packet offered to the queue, admitted or blocked.
    pub fn arrived(&self) -> u64 {
        self.arrived
    }

    pub fn blocked_count(&self) -> u64 {
        self.blocked_count
    }

    pub fn dropped_count(&self) -> u64 {
        self.dropped_count
    }

    pub fn iter(&self) -> impl Iterator<Item = &Packet> {
        self.packets.iter()
    }

    /// Enqueues `packet`, or counts it as blocked when the queue is full.
    /// Returns whether it was admitted.
    pub fn offer(&mut self, packet: Packet) -> bool {
        self.arrived += 1;
        if self.is_full() {
            self.blocked_count += 1;
            false
        } else {
            debug_assert!(self.packets.back().is_none_or(|p| p.arrival_us <= packet.arrival_us));
            self.packets.push_back(packet);
            true
        }
    }

    /// Removes and returns the `n` oldest packets.
    pub fn dequeue_batch(&mut self, n: usize) -> Result<Vec<Packet>, TrafficError> {
        if n > self.packets.len() {
            return Err(TrafficError::Underflow {
                requested: n,
                available: self.packets.len(),
            });
        }
        Ok(self.packets.drain(..n).collect())
    }

    /// Puts packets back at the head, preserving their order.
    pub fn requeue_front(&mut self, packets: &[Packet]) {
        for &p in packets.iter().rev() {
            self.packets.push_front(p);
        }
    }

    /// Discards up to `n` head packets; returns how many were removed.
    pub fn drop_head(&mut self, n: usize) -> usize {
        let n = n.min(self.packets.len());
        self.packets.drain(..n);
        self.dropped_count += n as u64;
        n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArrivalKind {
    /// Queue never drains.
    Saturated,
    /// Exponential inter-arrival times at the given bit rate.
    Poisson { rate_bps: f64 },
    /// Fixed inter-arrival time at the given bit rate, random initial phase.
    Periodic { rate_bps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrivalProcess {
    pub kind: ArrivalKind,
    pub payload_bits: u64,
}

impl ArrivalProcess {
    pub fn saturated(payload_bits: u64) -> Self {
        Self {
            kind: ArrivalKind::Saturated,
            payload_bits,
        }
    }

    pub fn poisson(rate_bps: f64, payload_bits: u64) -> Self {
        Self {
            kind: ArrivalKind::Poisson { rate_bps },
            payload_bits,
        }
    }

    pub fn validate(&self) -> Result<(), TrafficError> {
        if self.payload_bits == 0 {
            return Err(TrafficError::ZeroPayload);
        }
        match self.kind {
            ArrivalKind::Saturated => Ok(()),
            ArrivalKind::Poisson { rate_bps } | ArrivalKind::Periodic { rate_bps } => {
                if rate_bps.is_finite() && rate_bps > 0.0 {
                    Ok(())
                } else {
                    Err(TrafficError::BadRate(rate_bps))
                }
            }
        }
    }

    pub fn is_saturated(&self) -> bool {
        matches!(self.kind, ArrivalKind::Saturated)
    }

    /// Mean packet arrivals per second, `None` when saturated.
    pub fn packets_per_second(&self) -> Option<f64> {
        match self.kind {
            ArrivalKind::Saturated => None,
            ArrivalKind::Poisson { rate_bps } | ArrivalKind::Periodic { rate_bps } => {
                Some(rate_bps / self.payload_bits as f64)
            }
        }
    }
}

/// Per-node arrival generator.
#[derive(Debug, Clone)]
pub struct ArrivalSource {
    process: ArrivalProcess,
    /// Time of the next arrival in µs (unused when saturated).
    next_at: f64,
}

impl ArrivalSource {
    pub fn new<R: Rng + ?Sized>(process: ArrivalProcess, start_us: f64, rng: &mut R) -> Self {
        let next_at = match process.kind {
            ArrivalKind::Saturated => start_us,
            ArrivalKind::Poisson { .. } => start_us + Self::exp_gap(&process, rng),
            ArrivalKind::Periodic { .. } => start_us + rng.gen::<f64>() * Self::mean_gap_us(&process),
        };
        Self { process, next_at }
    }

    fn mean_gap_us(process: &ArrivalProcess) -> f64 {
        1e6 / process.packets_per_second().expect("unsaturated process")
    }

    fn exp_gap<R: Rng + ?Sized>(process: &ArrivalProcess, rng: &mut R) -> f64 {
        Exp::new(1.0 / Self::mean_gap_us(process))
            .expect("positive rate")
            .sample(rng)
    }

    pub fn process(&self) -> &ArrivalProcess {
        &self.process
    }

    /// Time of the next pending arrival, `None` for saturated sources.
    pub fn next_arrival_us(&self) -> Option<f64> {
        match self.process.kind {
            ArrivalKind::Saturated => None,
            _ => Some(self.next_at),
        }
    }

    /// Feeds the queue with every arrival up to `to_us` inclusive. Saturated
    /// sources top the queue up to capacity, stamped `to_us`.
    pub fn advance_arrivals<R: Rng + ?Sized>(&mut self, queue: &mut MacQueue, to_us: u64, rng: &mut R) {
        match self.process.kind {
            ArrivalKind::Saturated => {
                while !queue.is_full() {
                    queue.offer(Packet { arrival_us: to_us });
                }
            }
            ArrivalKind::Poisson { .. } => {
                while self.next_at <= to_us as f64 {
                    queue.offer(Packet {
                        arrival_us: self.next_at as u64,
                    });
                    self.next_at += Self::exp_gap(&self.process, rng);
                }
            }
            ArrivalKind::Periodic { .. } => {
                let gap = Self::mean_gap_us(&self.process);
                while self.next_at <= to_us as f64 {
                    queue.offer(Packet {
                        arrival_us: self.next_at as u64,
                    });
                    self.next_at += gap;
                }
            }
        }
    }
}
