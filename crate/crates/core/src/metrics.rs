//! Measurement accumulation and run summaries.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::traffic::MacQueue;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("cannot summarize an empty set of runs")]
    NoRuns,
    #[error("runs come from different configurations ({0} vs {1})")]
    Heterogeneous(String, String),
}

/// Jain's fairness index, `(Σx)² / (N·Σx²)`. `None` for an empty or all-zero
/// input.
pub fn jfi(values: &[f64]) -> Option<f64> {
    let sum: f64 = values.iter().sum();
    let sum_sq: f64 = values.iter().map(|x| x * x).sum();
    if values.is_empty() || sum_sq == 0.0 {
        return None;
    }
    Some(sum * sum / (values.len() as f64 * sum_sq))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    /// End of the window, simulated seconds.
    pub time_s: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotClass {
    Empty,
    Success,
    Error,
    Collision,
}

/// One resolved slot as seen by the windowed counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub index: u64,
    pub start_us: u64,
    pub duration_us: u64,
    pub class: SlotClass,
    pub delivered_bits: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
struct WindowBin {
    slots: u64,
    collision_slots: u64,
    delivered_bits: u64,
}

/// Per-window slot counters. Slots are binned by their start time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSeries {
    window_us: u64,
    bins: Vec<WindowBin>,
}

impl WindowSeries {
    pub fn new(window_us: u64) -> Self {
        assert!(window_us > 0, "window must be positive");
        Self {
            window_us,
            bins: Vec::new(),
        }
    }

    fn bin(&mut self, start_us: u64) -> &mut WindowBin {
        let idx = (start_us / self.window_us) as usize;
        if idx >= self.bins.len() {
            self.bins.resize(idx + 1, WindowBin::default());
        }
        &mut self.bins[idx]
    }

    pub fn record(&mut self, start_us: u64, class: SlotClass, delivered_bits: u64) {
        let bin = self.bin(start_us);
        bin.slots += 1;
        if class == SlotClass::Collision {
            bin.collision_slots += 1;
        }
        bin.delivered_bits += delivered_bits;
    }

    /// `count` back-to-back empty slots of `sigma_us` starting at `start_us`.
    pub fn record_empty_run(&mut self, start_us: u64, count: u64, sigma_us: u64) {
        let mut t = start_us;
        let mut left = count;
        while left > 0 {
            let window_end = (t / self.window_us + 1) * self.window_us;
            let fit = (window_end - t).div_ceil(sigma_us).min(left);
            self.bin(t).slots += fit;
            left -= fit;
            t += fit * sigma_us;
        }
    }

    fn time_of(&self, idx: usize) -> f64 {
        ((idx + 1) as u64 * self.window_us) as f64 / 1e6
    }

    /// Collision slots over total slots, per window.
    pub fn collision_fraction(&self) -> Vec<SeriesPoint> {
        self.bins
            .iter()
            .enumerate()
            .map(|(i, b)| SeriesPoint {
                time_s: self.time_of(i),
                value: ratio(b.collision_slots, b.slots),
            })
            .collect()
    }

    /// Collision slots over total slots, from time zero to the end of each window.
    pub fn cumulative_collision_fraction(&self) -> Vec<SeriesPoint> {
        let (mut c, mut s) = (0, 0);
        self.bins
            .iter()
            .enumerate()
            .map(|(i, b)| {
                c += b.collision_slots;
                s += b.slots;
                SeriesPoint {
                    time_s: self.time_of(i),
                    value: ratio(c, s),
                }
            })
            .collect()
    }

    /// Delivered bits per second, per window.
    pub fn throughput(&self) -> Vec<SeriesPoint> {
        let secs = self.window_us as f64 / 1e6;
        self.bins
            .iter()
            .enumerate()
            .map(|(i, b)| SeriesPoint {
                time_s: self.time_of(i),
                value: b.delivered_bits as f64 / secs,
            })
            .collect()
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionSeries {
    pub windowed: Vec<SeriesPoint>,
    pub cumulative: Vec<SeriesPoint>,
}

/// Windowed and cumulative collision-slot fraction of a slot log.
pub fn collision_fraction_window(log: &[SlotRecord], window_s: f64) -> CollisionSeries {
    let mut series = WindowSeries::new((window_s * 1e6).round().max(1.0) as u64);
    for r in log {
        series.record(r.start_us, r.class, r.delivered_bits);
    }
    CollisionSeries {
        windowed: series.collision_fraction(),
        cumulative: series.cumulative_collision_fraction(),
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Mean {
    sum: f64,
    count: u64,
}

impl Mean {
    fn add(&mut self, x: f64) {
        self.sum += x;
        self.count += 1;
    }

    fn get(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

#[derive(Debug, Clone, Default)]
struct NodeAccumulator {
    delivered_packets: u64,
    delivered_bits: u64,
    attempts: u64,
    successes: u64,
    collisions: u64,
    error_failures: u64,
    stage: Mean,
    inter_success: Mean,
    contention_to_ack: Mean,
    delay: Mean,
    last_success_us: Option<u64>,
    contention_start_us: Option<u64>,
}

/// Accumulates everything one engine run measures.
#[derive(Debug, Clone)]
pub struct MetricsCollector {
    nodes: Vec<NodeAccumulator>,
    series: WindowSeries,
    total_slots: u64,
    empty_slots: u64,
    success_slots: u64,
    error_slots: u64,
    collision_slots: u64,
}

impl MetricsCollector {
    pub fn new(n_nodes: usize, window_us: u64) -> Self {
        Self {
            nodes: vec![NodeAccumulator::default(); n_nodes],
            series: WindowSeries::new(window_us),
            total_slots: 0,
            empty_slots: 0,
            success_slots: 0,
            error_slots: 0,
            collision_slots: 0,
        }
    }

    pub fn record_slot(&mut self, record: &SlotRecord) {
        self.total_slots += 1;
        match record.class {
            SlotClass::Empty => self.empty_slots += 1,
            SlotClass::Success => self.success_slots += 1,
            SlotClass::Error => self.error_slots += 1,
            SlotClass::Collision => self.collision_slots += 1,
        }
        self.series.record(record.start_us, record.class, record.delivered_bits);
    }

    pub fn record_empty_run(&mut self, start_us: u64, count: u64, sigma_us: u64) {
        self.total_slots += count;
        self.empty_slots += count;
        self.series.record_empty_run(start_us, count, sigma_us);
    }

    pub fn contention_started(&mut self, node: usize, at_us: u64) {
        self.nodes[node].contention_start_us = Some(at_us);
    }

    /// The node's queue drained; gaps while idle are not inter-success time.
    pub fn went_idle(&mut self, node: usize) {
        let n = &mut self.nodes[node];
        n.last_success_us = None;
        n.contention_start_us = None;
    }

    pub fn attempt(&mut self, node: usize, stage: u32) {
        let n = &mut self.nodes[node];
        n.attempts += 1;
        n.stage.add(stage as f64);
    }

    /// An acknowledged attempt ending at `ack_us`, delivering packets that
    /// arrived at `arrivals_us`.
    pub fn success(&mut self, node: usize, ack_us: u64, arrivals_us: impl Iterator<Item = u64>, payload_bits: u64) {
        let n = &mut self.nodes[node];
        n.successes += 1;
        for a in arrivals_us {
            n.delivered_packets += 1;
            n.delivered_bits += payload_bits;
            n.delay.add((ack_us - a) as f64);
        }
        if let Some(prev) = n.last_success_us.replace(ack_us) {
            n.inter_success.add((ack_us - prev) as f64);
        }
        if let Some(start) = n.contention_start_us.replace(ack_us) {
            n.contention_to_ack.add((ack_us - start) as f64);
        }
    }

    pub fn failure(&mut self, node: usize, collision: bool) {
        let n = &mut self.nodes[node];
        if collision {
            n.collisions += 1;
        } else {
            n.error_failures += 1;
        }
    }

    /// Contention for the dropped batch is over; the next one starts at `at_us`.
    pub fn dropped(&mut self, node: usize, at_us: u64) {
        self.nodes[node].contention_start_us = Some(at_us);
    }

    pub fn finish(self, queues: &[MacQueue], elapsed_us: u64, meta: RunMeta) -> MetricsReport {
        let secs = elapsed_us as f64 / 1e6;
        let per_node: Vec<NodeMetrics> = self
            .nodes
            .iter()
            .zip(queues)
            .map(|(n, q)| NodeMetrics {
                delivered_packets: n.delivered_packets,
                delivered_bits: n.delivered_bits,
                throughput_bps: if secs > 0.0 { n.delivered_bits as f64 / secs } else { 0.0 },
                attempts: n.attempts,
                successes: n.successes,
                collisions: n.collisions,
                error_failures: n.error_failures,
                arrivals: q.arrived(),
                drops: q.dropped_count(),
                blocks: q.blocked_count(),
                queue_len_end: q.len() as u64,
                mean_inter_success_us: n.inter_success.get(),
                mean_contention_to_ack_us: n.contention_to_ack.get(),
                mean_delay_us: n.delay.get(),
                mean_backoff_stage: n.stage.get(),
            })
            .collect();

        let pooled = |f: fn(&NodeAccumulator) -> Mean| {
            let (sum, count) = self.nodes.iter().map(f).fold((0.0, 0), |(s, c), m| (s + m.sum, c + m.count));
            Mean { sum, count }.get()
        };
        let delivered_bits: u64 = per_node.iter().map(|n| n.delivered_bits).sum();
        let delivered: u64 = per_node.iter().map(|n| n.delivered_packets).sum();
        let drops: u64 = per_node.iter().map(|n| n.drops).sum();
        let blocks: u64 = per_node.iter().map(|n| n.blocks).sum();
        let arrivals: u64 = per_node.iter().map(|n| n.arrivals).sum();
        let throughputs: Vec<f64> = per_node.iter().map(|n| n.throughput_bps).collect();

        let aggregate = AggregateMetrics {
            throughput_bps: if secs > 0.0 { delivered_bits as f64 / secs } else { 0.0 },
            jfi: jfi(&throughputs),
            collision_slot_fraction: ratio(self.collision_slots, self.total_slots),
            collision_fraction_timeseries: self.series.collision_fraction(),
            cumulative_collision_fraction: self.series.cumulative_collision_fraction(),
            throughput_timeseries: self.series.throughput(),
            mean_delay_us: pooled(|n| n.delay),
            mean_inter_success_us: pooled(|n| n.inter_success),
            mean_contention_to_ack_us: pooled(|n| n.contention_to_ack),
            drop_fraction: ratio(drops, delivered + drops),
            block_fraction: ratio(blocks, arrivals),
            mean_backoff_stage: pooled(|n| n.stage),
            total_slots: self.total_slots,
            empty_slots: self.empty_slots,
            success_slots: self.success_slots,
            error_slots: self.error_slots,
            collision_slots: self.collision_slots,
        };
        MetricsReport {
            per_node,
            aggregate,
            meta: RunMeta {
                duration_s: secs,
                ..meta
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMetrics {
    pub delivered_packets: u64,
    pub delivered_bits: u64,
    pub throughput_bps: f64,
    pub attempts: u64,
    pub successes: u64,
    pub collisions: u64,
    pub error_failures: u64,
    pub arrivals: u64,
    pub drops: u64,
    pub blocks: u64,
    pub queue_len_end: u64,
    /// Between consecutive acknowledged attempts while backlogged.
    pub mean_inter_success_us: Option<f64>,
    /// From the start of a contention to its acknowledgment.
    pub mean_contention_to_ack_us: Option<f64>,
    pub mean_delay_us: Option<f64>,
    /// Stage at attempt time, averaged over attempts.
    pub mean_backoff_stage: Option<f64>,
}

impl NodeMetrics {
    /// `arrivals = delivered + dropped + blocked + still queued`
    pub fn conserves_packets(&self) -> bool {
        self.arrivals == self.delivered_packets + self.drops + self.blocks + self.queue_len_end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub throughput_bps: f64,
    pub jfi: Option<f64>,
    pub collision_slot_fraction: f64,
    pub collision_fraction_timeseries: Vec<SeriesPoint>,
    pub cumulative_collision_fraction: Vec<SeriesPoint>,
    pub throughput_timeseries: Vec<SeriesPoint>,
    pub mean_delay_us: Option<f64>,
    pub mean_inter_success_us: Option<f64>,
    pub mean_contention_to_ack_us: Option<f64>,
    /// Dropped over (delivered + dropped).
    pub drop_fraction: f64,
    /// Blocked over offered.
    pub block_fraction: f64,
    pub mean_backoff_stage: Option<f64>,
    pub total_slots: u64,
    pub empty_slots: u64,
    pub success_slots: u64,
    pub error_slots: u64,
    pub collision_slots: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    /// Hash of the configuration with the seed left out.
    pub config_hash: String,
    pub seed: u64,
    /// Simulated time actually covered.
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_node: Vec<NodeMetrics>,
    pub aggregate: AggregateMetrics,
    pub meta: RunMeta,
}

impl MetricsReport {
    pub fn conserves_packets(&self) -> bool {
        self.per_node.iter().all(NodeMetrics::conserves_packets)
    }

    /// Mean of the throughput series over windows ending after `from_s`.
    pub fn throughput_after(&self, from_s: f64) -> Option<f64> {
        let tail: Vec<f64> = self
            .aggregate
            .throughput_timeseries
            .iter()
            .filter(|p| p.time_s > from_s + 1e-9)
            .map(|p| p.value)
            .collect();
        (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64)
    }
}

/// Sample mean and `n - 1` standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub n: usize,
    pub mean: Option<f64>,
    /// Absent with fewer than two samples.
    pub std: Option<f64>,
}

impl Stat {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self { n, mean: None, std: None };
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let std = (n > 1).then(|| (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
        Self {
            n,
            mean: Some(mean),
            std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub throughput_bps: Stat,
    pub jfi: Stat,
    pub collision_fraction: Stat,
    pub delay_us: Stat,
    pub inter_success_us: Stat,
    pub contention_to_ack_us: Stat,
    pub drop_fraction: Stat,
    pub block_fraction: Stat,
    pub backoff_stage: Stat,
}

/// Mean and standard deviation of every headline metric across replications
/// of the same configuration.
pub fn aggregate_runs(reports: &[MetricsReport]) -> Result<RunSummary, MetricsError> {
    let first = reports.first().ok_or(MetricsError::NoRuns)?;
    if let Some(other) = reports.iter().find(|r| r.meta.config_hash != first.meta.config_hash) {
        return Err(MetricsError::Heterogeneous(
            first.meta.config_hash.clone(),
            other.meta.config_hash.clone(),
        ));
    }
    let stat = |f: fn(&AggregateMetrics) -> Option<f64>| {
        let xs: Vec<f64> = reports.iter().filter_map(|r| f(&r.aggregate)).collect();
        Stat::from_samples(&xs)
    };
    Ok(RunSummary {
        config_hash: first.meta.config_hash.clone(),
        seeds: reports.iter().map(|r| r.meta.seed).collect(),
        throughput_bps: stat(|a| Some(a.throughput_bps)),
        jfi: stat(|a| a.jfi),
        collision_fraction: stat(|a| Some(a.collision_slot_fraction)),
        delay_us: stat(|a| a.mean_delay_us),
        inter_success_us: stat(|a| a.mean_inter_success_us),
        contention_to_ack_us: stat(|a| a.mean_contention_to_ack_us),
        drop_fraction: stat(|a| Some(a.drop_fraction)),
        block_fraction: stat(|a| Some(a.block_fraction)),
        backoff_stage: stat(|a| a.mean_backoff_stage),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn jfi_examples() {
        assert_eq!(jfi(&[5.0, 5.0, 5.0, 5.0]), Some(1.0));
        assert_eq!(jfi(&[1.0, 0.0, 0.0, 0.0]), Some(0.25));
        assert!((jfi(&[3.0, 1.0]).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(jfi(&[0.0, 0.0]), None);
        assert_eq!(jfi(&[]), None);
    }

    #[test]
    fn sample_statistics() {
        let s = Stat::from_samples(&[10.0, 12.0, 14.0]);
        assert_eq!(s.mean, Some(12.0));
        assert_eq!(s.std, Some(2.0));
        let single = Stat::from_samples(&[3.0]);
        assert_eq!((single.mean, single.std), (Some(3.0), None));
        let same = Stat::from_samples(&[7.0; 20]);
        assert_eq!(same.std, Some(0.0));
    }

    fn rec(index: u64, start_us: u64, class: SlotClass) -> SlotRecord {
        SlotRecord {
            index,
            start_us,
            duration_us: 9,
            class,
            delivered_bits: 0,
        }
    }

    #[test]
    fn windowed_fractions() {
        // ten slots in the first second, two of them collisions
        let mut log: Vec<SlotRecord> = (0..10)
            .map(|i| rec(i, i * 1000, if i < 2 { SlotClass::Collision } else { SlotClass::Empty }))
            .collect();
        // a second window of empties only
        log.extend((0..5).map(|i| rec(10 + i, 1_000_000 + i * 9, SlotClass::Empty)));
        let s = collision_fraction_window(&log, 1.0);
        assert_eq!(s.windowed.len(), 2);
        assert!((s.windowed[0].value - 0.2).abs() < 1e-12);
        assert_eq!(s.windowed[1].value, 0.0);
        assert!((s.cumulative[1].value - 2.0 / 15.0).abs() < 1e-12);
        assert_eq!(s.windowed[1].time_s, 2.0);
    }

    #[test]
    fn empty_runs_split_at_window_edges() {
        let mut bulk = WindowSeries::new(100);
        bulk.record_empty_run(80, 5, 9);
        let mut single = WindowSeries::new(100);
        for i in 0..5 {
            single.record(80 + i * 9, SlotClass::Empty, 0);
        }
        assert_eq!(bulk, single);
    }

    fn report(hash: &str, seed: u64, throughput: f64) -> MetricsReport {
        let c = MetricsCollector::new(1, 1_000_000);
        let mut r = c.finish(&[MacQueue::new(1)], 1_000_000, RunMeta {
            config_hash: hash.into(),
            seed,
            duration_s: 0.0,
        });
        r.aggregate.throughput_bps = throughput;
        r
    }

    #[test]
    fn aggregate_checks_homogeneity() {
        assert_eq!(aggregate_runs(&[]), Err(MetricsError::NoRuns));
        let mixed = [report("a", 1, 1.0), report("b", 2, 1.0)];
        assert!(matches!(aggregate_runs(&mixed), Err(MetricsError::Heterogeneous(..))));
        let ok = [report("a", 1, 10.0), report("a", 2, 12.0), report("a", 3, 14.0)];
        let s = aggregate_runs(&ok).unwrap();
        assert_eq!(s.throughput_bps.mean, Some(12.0));
        assert_eq!(s.throughput_bps.std, Some(2.0));
        assert_eq!(s.seeds, vec![1, 2, 3]);
        assert_eq!(s.jfi.mean, None, "a run with no traffic has no JFI");
    }

    proptest! {
        #[test]
        fn jfi_is_scale_invariant(xs in proptest::collection::vec(0.0f64..1e6, 1..40), c in 1e-3f64..1e3) {
            prop_assume!(xs.iter().any(|&x| x > 0.0));
            let a = jfi(&xs).unwrap();
            let scaled: Vec<f64> = xs.iter().map(|x| x * c).collect();
            let b = jfi(&scaled).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!(a > 0.0 && a <= 1.0 + 1e-12);
        }
    }
}
