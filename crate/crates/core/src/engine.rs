//! Slotted main loop.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::channel::{resolve_slot, PhyError, PhyParams, SlotKind, SlotOutcome, Transmission};
use crate::mac::{apply_clock_drift, BackoffParams, FailureOutcome, MacError, NodeState, ProtocolVariant, VariantError};
use crate::metrics::{MetricsCollector, MetricsReport, RunMeta, SlotClass, SlotRecord};
use crate::probability::Probability;
use crate::traffic::{ArrivalProcess, ArrivalSource, MacQueue, TrafficError};

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("n_nodes must be at least 1")]
    NoNodes,
    #[error("protocol mix is empty")]
    EmptyMix,
    #[error("protocol fraction {0} is outside [0, 1]")]
    BadFraction(f64),
    #[error("protocol fractions sum to {0}, expected 1")]
    FractionSum(f64),
    #[error("duration must be positive and finite, got {0} s")]
    BadDuration(f64),
    #[error("series window must be positive and finite, got {0} s")]
    BadWindow(f64),
    #[error(transparent)]
    Variant(#[from] VariantError),
    #[error(transparent)]
    Phy(#[from] PhyError),
    #[error(transparent)]
    Mac(#[from] MacError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error("packet accounting broken at node {0}")]
    Conservation(usize),
}

/// When a waiting node's backoff counter moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountdownRule {
    /// Every slot, empty or busy, counts as one backoff slot.
    #[default]
    EverySlot,
    /// Busy slots freeze the counter.
    EmptyOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolShare {
    pub variant: ProtocolVariant,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n_nodes: usize,
    pub protocol_mix: Vec<ProtocolShare>,
    pub phy: PhyParams,
    pub backoff: BackoffParams,
    pub traffic: ArrivalProcess,
    pub queue_capacity: usize,
    pub p_e: Probability,
    pub p_cd: Probability,
    /// Simulated seconds.
    pub duration_s: f64,
    pub seed: u64,
    pub runs: u32,
    pub countdown: CountdownRule,
    /// Width of the windows behind the time series, in seconds.
    pub series_window_s: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_nodes: 8,
            protocol_mix: vec![ProtocolShare {
                variant: ProtocolVariant::eca_hys_fs(),
                fraction: 1.0,
            }],
            phy: PhyParams::default(),
            backoff: BackoffParams::default(),
            traffic: ArrivalProcess::saturated(8192),
            queue_capacity: 1000,
            p_e: Probability::ZERO,
            p_cd: Probability::ZERO,
            duration_s: 100.0,
            seed: 1,
            runs: 1,
            countdown: CountdownRule::EverySlot,
            series_window_s: 1.0,
        }
    }
}

impl ScenarioConfig {
    /// Single-protocol scenario with defaults everywhere else.
    pub fn homogeneous(n_nodes: usize, variant: ProtocolVariant) -> Self {
        Self {
            n_nodes,
            protocol_mix: vec![ProtocolShare { variant, fraction: 1.0 }],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.n_nodes == 0 {
            return Err(EngineError::NoNodes);
        }
        if self.protocol_mix.is_empty() {
            return Err(EngineError::EmptyMix);
        }
        for share in &self.protocol_mix {
            if !(0.0..=1.0).contains(&share.fraction) {
                return Err(EngineError::BadFraction(share.fraction));
            }
            share.variant.validate()?;
        }
        let sum: f64 = self.protocol_mix.iter().map(|s| s.fraction).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(EngineError::FractionSum(sum));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(EngineError::BadDuration(self.duration_s));
        }
        if !(self.series_window_s.is_finite() && self.series_window_s > 0.0) {
            return Err(EngineError::BadWindow(self.series_window_s));
        }
        if self.queue_capacity == 0 {
            return Err(TrafficError::ZeroCapacity.into());
        }
        self.phy.validate()?;
        self.backoff.validate()?;
        self.traffic.validate()?;
        Ok(())
    }

    /// SHA-256 over the configuration with the seed zeroed, first 8 bytes in
    /// hex. Replications of one scenario share it.
    pub fn config_hash(&self) -> String {
        let unseeded = Self {
            seed: 0,
            ..self.clone()
        };
        let bytes = serde_json::to_vec(&unseeded).expect("config serializes");
        Sha256::digest(&bytes)[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Variant of every node: largest-remainder counts per share, nodes
    /// assigned in share order.
    pub fn node_variants(&self) -> Vec<ProtocolVariant> {
        let n = self.n_nodes;
        let exact: Vec<f64> = self.protocol_mix.iter().map(|s| s.fraction * n as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
        let mut order: Vec<usize> = (0..exact.len()).collect();
        // stable sort keeps ties in share order
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
        let mut left = n.saturating_sub(counts.iter().sum());
        for &i in order.iter().cycle().take(left.max(1) * exact.len()) {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        self.protocol_mix
            .iter()
            .zip(counts)
            .flat_map(|(s, c)| std::iter::repeat_n(s.variant, c))
            .collect()
    }
}

/// One slot as recorded by a traced run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotTrace {
    pub index: u64,
    pub start_us: u64,
    pub duration_us: u64,
    pub kind: SlotKind,
}

pub struct Engine {
    config: ScenarioConfig,
    variants: Vec<ProtocolVariant>,
    nodes: Vec<NodeState>,
    queues: Vec<MacQueue>,
    sources: Vec<ArrivalSource>,
    traffic_rngs: Vec<ChaCha8Rng>,
    rng: ChaCha8Rng,
    now_us: u64,
    slot_index: u64,
    end_us: u64,
    metrics: MetricsCollector,
    transmitters: Vec<Transmission>,
}

impl Engine {
    pub fn new(config: &ScenarioConfig) -> Result<Self, EngineError> {
        config.validate()?;
        let n = config.n_nodes;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut traffic_rngs: Vec<ChaCha8Rng> = (0..n)
            .map(|i| {
                let mut r = ChaCha8Rng::seed_from_u64(config.seed);
                r.set_stream(i as u64 + 1);
                r
            })
            .collect();
        let sources = traffic_rngs
            .iter_mut()
            .map(|r| ArrivalSource::new(config.traffic, 0.0, r))
            .collect();
        let window_us = (config.series_window_s * 1e6).round().max(1.0) as u64;
        Ok(Self {
            variants: config.node_variants(),
            nodes: (0..n).map(|i| NodeState::new(i, &config.backoff)).collect(),
            queues: (0..n).map(|_| MacQueue::new(config.queue_capacity)).collect(),
            sources,
            traffic_rngs,
            rng,
            now_us: 0,
            slot_index: 0,
            end_us: (config.duration_s * 1e6).round() as u64,
            metrics: MetricsCollector::new(n, window_us),
            transmitters: Vec::with_capacity(n),
            config: config.clone(),
        })
    }

    pub fn now_us(&self) -> u64 {
        self.now_us
    }

    pub fn slot_index(&self) -> u64 {
        self.slot_index
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn queues(&self) -> &[MacQueue] {
        &self.queues
    }

    pub fn variants(&self) -> &[ProtocolVariant] {
        &self.variants
    }

    pub fn is_finished(&self) -> bool {
        self.now_us >= self.end_us
    }

    /// Moves every arrival up to the current time into its queue. Idempotent
    /// within a slot; [`Engine::step`] calls it first.
    pub fn admit_arrivals(&mut self) {
        for i in 0..self.nodes.len() {
            let was_empty = self.queues[i].is_empty();
            self.sources[i].advance_arrivals(&mut self.queues[i], self.now_us, &mut self.traffic_rngs[i]);
            if was_empty && !self.queues[i].is_empty() {
                let node = &mut self.nodes[i];
                node.on_new_contention(&self.config.backoff, &mut self.rng);
                node.backoff = apply_clock_drift(node.backoff, self.config.p_cd, &mut self.rng);
                self.metrics.contention_started(i, self.now_us);
            }
        }
    }

    /// Plays exactly one slot.
    pub fn step(&mut self) -> SlotTrace {
        self.admit_arrivals();

        self.transmitters.clear();
        for (i, node) in self.nodes.iter().enumerate() {
            let len = self.queues[i].len();
            if len > 0 && node.backoff == 0 {
                let batch = node
                    .batch_size(len, &self.variants[i], &self.config.backoff)
                    .expect("backlogged node");
                self.transmitters.push(Transmission { node: i, batch });
            }
        }

        let payload = self.config.traffic.payload_bits;
        let outcome = resolve_slot(&self.transmitters, self.config.p_e, payload, &self.config.phy, &mut self.rng);
        let start = self.now_us;
        let end = start + outcome.duration;
        let delivered_bits = self.dispatch(&outcome, end);

        let busy = !outcome.is_empty();
        for i in 0..self.nodes.len() {
            if self.queues[i].is_empty() || self.transmitters.iter().any(|t| t.node == i) {
                continue;
            }
            let node = &mut self.nodes[i];
            node.sr_observe(busy);
            if !busy || self.config.countdown == CountdownRule::EverySlot {
                node.backoff = node.backoff.saturating_sub(1);
            }
        }

        let class = match outcome.kind {
            SlotKind::Empty => SlotClass::Empty,
            SlotKind::Success { .. } => SlotClass::Success,
            SlotKind::FailedByError { .. } => SlotClass::Error,
            SlotKind::Collision { .. } => SlotClass::Collision,
        };
        self.metrics.record_slot(&SlotRecord {
            index: self.slot_index,
            start_us: start,
            duration_us: outcome.duration,
            class,
            delivered_bits,
        });
        let trace = SlotTrace {
            index: self.slot_index,
            start_us: start,
            duration_us: outcome.duration,
            kind: outcome.kind,
        };
        self.now_us = end;
        self.slot_index += 1;
        trace
    }

    /// Applies the outcome to the transmitters; returns delivered bits.
    fn dispatch(&mut self, outcome: &SlotOutcome, end_us: u64) -> u64 {
        let payload = self.config.traffic.payload_bits;
        let (backoff, p_cd) = (self.config.backoff, self.config.p_cd);
        for t in &self.transmitters {
            self.metrics.attempt(t.node, self.nodes[t.node].stage);
        }
        match outcome.kind {
            SlotKind::Empty => 0,
            SlotKind::Success {
                node,
                delivered,
                batch,
                corrupted,
            } => {
                let queue = &mut self.queues[node];
                let sent = queue.dequeue_batch(batch as usize).expect("batch fits queue");
                let (lost, ok): (Vec<_>, Vec<_>) = sent
                    .iter()
                    .enumerate()
                    .partition(|(j, _)| corrupted & (1 << j) != 0);
                let lost: Vec<_> = lost.into_iter().map(|(_, p)| *p).collect();
                queue.requeue_front(&lost);
                debug_assert_eq!(ok.len(), delivered as usize);
                self.metrics.success(node, end_us, ok.iter().map(|(_, p)| p.arrival_us), payload);

                let n = &mut self.nodes[node];
                n.on_success(&self.variants[node], &backoff, &mut self.rng);
                n.backoff = apply_clock_drift(n.backoff, p_cd, &mut self.rng);
                self.note_drained(node);
                delivered as u64 * payload
            }
            SlotKind::FailedByError { node, .. } => {
                self.fail(node, false, end_us);
                0
            }
            SlotKind::Collision { ref nodes, .. } => {
                for &node in nodes {
                    self.fail(node, true, end_us);
                }
                0
            }
        }
    }

    fn fail(&mut self, node: usize, collision: bool, end_us: u64) {
        let cfg = &self.config;
        self.metrics.failure(node, collision);
        let n = &mut self.nodes[node];
        let outcome = n.on_failure(&self.variants[node], &cfg.backoff, &mut self.rng);
        n.backoff = apply_clock_drift(n.backoff, cfg.p_cd, &mut self.rng);
        if let FailureOutcome::Drop(d) = outcome {
            self.queues[node].drop_head(d.packets as usize);
            self.metrics.dropped(node, end_us);
            self.note_drained(node);
        }
    }

    fn note_drained(&mut self, node: usize) {
        // saturated sources refill at the next slot without a new contention
        if self.queues[node].is_empty() && !self.config.traffic.is_saturated() {
            self.metrics.went_idle(node);
        }
    }

    /// Number of upcoming slots that are certainly empty: no backlogged node
    /// reaches zero and no idle node receives a packet before they start.
    fn empty_run_length(&self) -> u64 {
        let sigma = self.config.phy.sigma_e;
        let mut run = self.end_us.saturating_sub(self.now_us).div_ceil(sigma);
        for (i, q) in self.queues.iter().enumerate() {
            if q.is_empty() {
                if let Some(at) = self.sources[i].next_arrival_us() {
                    let slots = ((at - self.now_us as f64) / sigma as f64).ceil().max(0.0) as u64;
                    run = run.min(slots);
                }
            } else {
                run = run.min(self.nodes[i].backoff);
            }
            if run == 0 {
                break;
            }
        }
        run
    }

    fn skip_empty_slots(&mut self, count: u64) {
        let sigma = self.config.phy.sigma_e;
        for i in 0..self.nodes.len() {
            if !self.queues[i].is_empty() {
                let node = &mut self.nodes[i];
                node.backoff -= count;
                node.sr_observe_idle(count);
            }
        }
        self.metrics.record_empty_run(self.now_us, count, sigma);
        self.now_us += count * sigma;
        self.slot_index += count;
    }

    /// Runs to the configured duration, jumping over runs of empty slots.
    pub fn run_to_end(&mut self) {
        while !self.is_finished() {
            self.admit_arrivals();
            let run = self.empty_run_length();
            if run > 0 {
                self.skip_empty_slots(run);
            } else {
                self.step();
            }
        }
    }

    /// Runs to the configured duration one slot at a time, recording each.
    pub fn run_traced(&mut self) -> Vec<SlotTrace> {
        let mut log = Vec::new();
        while !self.is_finished() {
            log.push(self.step());
        }
        log
    }

    pub fn finish(mut self) -> Result<MetricsReport, EngineError> {
        // packets that arrived during the final slot still count as offered
        for i in 0..self.nodes.len() {
            self.sources[i].advance_arrivals(&mut self.queues[i], self.now_us.min(self.end_us), &mut self.traffic_rngs[i]);
        }
        let meta = RunMeta {
            config_hash: self.config.config_hash(),
            seed: self.config.seed,
            duration_s: 0.0,
        };
        let report = self.metrics.finish(&self.queues, self.now_us, meta);
        if let Some(bad) = report.per_node.iter().position(|n| !n.conserves_packets()) {
            return Err(EngineError::Conservation(bad));
        }
        Ok(report)
    }
}

/// Simulates one scenario with its own seed.
pub fn run(config: &ScenarioConfig) -> Result<MetricsReport, EngineError> {
    let mut engine = Engine::new(config)?;
    engine.run_to_end();
    engine.finish()
}

/// Like [`run`], also returning every slot.
pub fn run_with_trace(config: &ScenarioConfig) -> Result<(MetricsReport, Vec<SlotTrace>), EngineError> {
    let mut engine = Engine::new(config)?;
    let log = engine.run_traced();
    Ok((engine.finish()?, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mac::BaseProtocol;

    fn short(n: usize, variant: ProtocolVariant) -> ScenarioConfig {
        ScenarioConfig {
            duration_s: 0.5,
            ..ScenarioConfig::homogeneous(n, variant)
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = short(4, ProtocolVariant::csma_ca());
        c.n_nodes = 0;
        assert_eq!(c.validate(), Err(EngineError::NoNodes));
        let mut c = short(4, ProtocolVariant::csma_ca());
        c.protocol_mix[0].fraction = 0.5;
        assert_eq!(c.validate(), Err(EngineError::FractionSum(0.5)));
        let mut c = short(4, ProtocolVariant::csma_ca());
        c.duration_s = 0.0;
        assert!(Engine::new(&c).is_err());
    }

    #[test]
    fn mix_assignment() {
        let mut c = short(10, ProtocolVariant::csma_ca());
        c.protocol_mix = vec![
            ProtocolShare {
                variant: ProtocolVariant::csma_ca(),
                fraction: 0.25,
            },
            ProtocolShare {
                variant: ProtocolVariant::eca_hys_fs(),
                fraction: 0.75,
            },
        ];
        let v = c.node_variants();
        assert_eq!(v.len(), 10);
        // 2.5 and 7.5: the tie goes to the first share
        assert_eq!(v.iter().filter(|v| v.base == BaseProtocol::CsmaCa).count(), 3);
        assert_eq!(v[0].base, BaseProtocol::CsmaCa);
        assert_eq!(v[9].base, BaseProtocol::CsmaEca);
    }

    #[test]
    fn hash_ignores_seed_only() {
        let a = short(4, ProtocolVariant::csma_ca());
        let b = ScenarioConfig { seed: 99, ..a.clone() };
        let c = ScenarioConfig { n_nodes: 5, ..a.clone() };
        assert_eq!(a.config_hash(), b.config_hash());
        assert_ne!(a.config_hash(), c.config_hash());
        assert_eq!(a.config_hash().len(), 16);
    }

    #[test]
    fn single_eca_node_never_collides() {
        let report = run(&short(1, ProtocolVariant::csma_eca())).unwrap();
        assert_eq!(report.aggregate.collision_slots, 0);
        assert!(report.aggregate.throughput_bps > 0.0);
    }

    #[test]
    fn empty_slot_decrements_everyone() {
        let mut c = short(3, ProtocolVariant::csma_ca());
        c.seed = 5;
        let mut e = Engine::new(&c).unwrap();
        e.admit_arrivals();
        let before: Vec<u64> = e.nodes().iter().map(|n| n.backoff).collect();
        if before.iter().all(|&b| b > 0) {
            let t = e.step();
            assert_eq!(t.kind, SlotKind::Empty);
            for (n, b) in e.nodes().iter().zip(before) {
                assert_eq!(n.backoff, b - 1);
            }
        }
    }

    #[test]
    fn skipping_matches_stepping() {
        for variant in [ProtocolVariant::csma_ca(), ProtocolVariant::eca_hys_fs()] {
            let mut c = short(6, variant);
            c.p_e = Probability::new(0.05).unwrap();
            c.p_cd = Probability::new(0.1).unwrap();
            c.traffic = ArrivalProcess::poisson(3e6, 8192);
            let fast = run(&c).unwrap();
            let (slow, log) = run_with_trace(&c).unwrap();
            assert_eq!(fast, slow);
            let total: u64 = log.iter().map(|s| s.duration_us).sum();
            assert_eq!(total, (fast.meta.duration_s * 1e6).round() as u64);
        }
    }

    #[test]
    fn freeze_rule_holds_busy_slots() {
        let mut c = short(5, ProtocolVariant::csma_ca());
        c.countdown = CountdownRule::EmptyOnly;
        let mut e = Engine::new(&c).unwrap();
        for _ in 0..2000 {
            e.admit_arrivals();
            let before: Vec<u64> = e.nodes().iter().map(|n| n.backoff).collect();
            let t = e.step();
            let txs: Vec<usize> = match &t.kind {
                SlotKind::Success { node, .. } | SlotKind::FailedByError { node, .. } => vec![*node],
                SlotKind::Collision { nodes, .. } => nodes.clone(),
                SlotKind::Empty => vec![],
            };
            for (i, (n, b)) in e.nodes().iter().zip(before).enumerate() {
                if txs.contains(&i) {
                    continue;
                }
                let expected = if t.kind == SlotKind::Empty { b - 1 } else { b };
                assert_eq!(n.backoff, expected);
            }
        }
    }
}
