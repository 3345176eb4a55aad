//! Per-node contention state machines.
//!
//! Every transition here is a plain function of the node's own state, the
//! protocol variant and, where a random backoff is drawn, the caller's random
//! source. The engine owns the nodes and decides which transition to fire.

mod schedule_reset;
mod variant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::probability::Probability;

pub use schedule_reset::{sr_evaluate, threshold, ScheduleResetState};
pub use variant::{Aggregation, BaseProtocol, ProtocolVariant, ResetScope, ScheduleResetMode, VariantError};

/// Largest supported maximum backoff stage; keeps an A-MPDU within the
/// 64-MPDU Block-ACK window.
pub const MAX_STAGE_LIMIT: u32 = 6;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MacError {
    #[error("CW_min must be a power of two no smaller than 2, got {0}")]
    BadCwMin(u64),
    #[error("maximum backoff stage {0} exceeds {MAX_STAGE_LIMIT}")]
    StageTooLarge(u32),
    #[error("retransmission limit must be at least 1")]
    ZeroRetryLimit,
    #[error("node {0} contended with an empty queue")]
    EmptyQueue(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackoffParams {
    pub cw_min: u64,
    /// `m`
    pub max_stage: u32,
    /// `R`: failed attempts before the head batch is discarded.
    pub retry_limit: u32,
    /// Failures a node absorbs on its deterministic backoff before falling
    /// back to a random one. Zero means the first failure already reverts.
    pub default_stickiness: u32,
    /// Whether failures absorbed by stickiness still count toward `R`.
    pub sticky_failures_count: bool,
}

impl Default for BackoffParams {
    fn default() -> Self {
        Self {
            cw_min: 16,
            max_stage: 5,
            retry_limit: 6,
            default_stickiness: 0,
            sticky_failures_count: false,
        }
    }
}

impl BackoffParams {
    pub fn validate(&self) -> Result<(), MacError> {
        if self.cw_min < 2 || !self.cw_min.is_power_of_two() {
            return Err(MacError::BadCwMin(self.cw_min));
        }
        if self.max_stage > MAX_STAGE_LIMIT {
            return Err(MacError::StageTooLarge(self.max_stage));
        }
        if self.retry_limit == 0 {
            return Err(MacError::ZeroRetryLimit);
        }
        Ok(())
    }

    /// `CW(k) = 2^k * CW_min`
    pub fn contention_window(&self, stage: u32) -> u64 {
        self.cw_min << stage
    }
}

/// Uniform draw on `[0, 2^k * CW_min - 1]`.
pub fn draw_random_backoff<R: Rng + ?Sized>(stage: u32, params: &BackoffParams, rng: &mut R) -> u64 {
    rng.gen_range(0..params.contention_window(stage))
}

/// `ceil(CW(k) / 2) - 1`, the mean of the random range at stage `k`.
pub fn deterministic_backoff(stage: u32, params: &BackoffParams) -> u64 {
    params.contention_window(stage).div_ceil(2) - 1
}

/// Packets carried by the next attempt of a node at `stage` with
/// `queue_len` packets waiting.
pub fn batch_size(
    node: usize,
    stage: u32,
    queue_len: usize,
    variant: &ProtocolVariant,
    params: &BackoffParams,
) -> Result<u32, MacError> {
    if queue_len == 0 {
        return Err(MacError::EmptyQueue(node));
    }
    let wanted: u64 = match variant.aggregation {
        Aggregation::None => 1,
        Aggregation::FairShare => 1 << stage,
        Aggregation::MaxAg => 1 << params.max_stage,
    };
    Ok(wanted.min(queue_len as u64) as u32)
}

/// Applies one contention cycle's worth of clock drift: one slot more with
/// probability `p/2`, one slot less (floored at zero) with probability `p/2`.
pub fn apply_clock_drift<R: Rng + ?Sized>(backoff: u64, p_cd: Probability, rng: &mut R) -> u64 {
    if p_cd.is_zero() {
        return backoff;
    }
    let u: f64 = rng.gen();
    let half = p_cd.get() / 2.0;
    if u < half {
        backoff + 1
    } else if u < p_cd.get() {
        backoff.saturating_sub(1)
    } else {
        backoff
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackoffMode {
    Random,
    Deterministic,
}

/// A stage reduction made by schedule reset, kept until the next attempt
/// either confirms it (success) or undoes it (failure).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageChange {
    pub from: u32,
    pub to: u32,
}

/// Instruction to discard packets from the head of the queue after the
/// retransmission limit was reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DropDirective {
    pub packets: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureOutcome {
    /// Stickiness kept the node on its deterministic backoff.
    Retained,
    /// Stage increased and a random backoff was drawn.
    Backoff,
    /// Retry limit reached; the batch must be discarded.
    Drop(DropDirective),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeState {
    pub id: usize,
    /// `k`
    pub stage: u32,
    /// `k_c`: stage at which the current contention began.
    pub contention_stage: u32,
    /// `r`
    pub retries: u32,
    /// `B`: slots left before the next attempt.
    pub backoff: u64,
    pub mode: BackoffMode,
    pub stickiness: u32,
    pub default_stickiness: u32,
    /// Consecutive successes (`sxTx`).
    pub consecutive_successes: u32,
    pub schedule_reset: Option<ScheduleResetState>,
    pub pending_sr_change: Option<StageChange>,
}

impl NodeState {
    /// A node that has not contended yet. Call [`NodeState::on_new_contention`]
    /// once it has traffic.
    pub fn new(id: usize, params: &BackoffParams) -> Self {
        Self {
            id,
            stage: 0,
            contention_stage: 0,
            retries: 0,
            backoff: 0,
            mode: BackoffMode::Random,
            stickiness: 0,
            default_stickiness: params.default_stickiness,
            consecutive_successes: 0,
            schedule_reset: None,
            pending_sr_change: None,
        }
    }

    pub fn batch_size(&self, queue_len: usize, variant: &ProtocolVariant, params: &BackoffParams) -> Result<u32, MacError> {
        batch_size(self.id, self.stage, queue_len, variant, params)
    }

    /// The queue went from empty to non-empty: start over from stage zero.
    pub fn on_new_contention<R: Rng + ?Sized>(&mut self, params: &BackoffParams, rng: &mut R) {
        self.retries = 0;
        self.stage = 0;
        self.contention_stage = 0;
        self.backoff = draw_random_backoff(0, params, rng);
        self.mode = BackoffMode::Random;
        self.stickiness = 0;
        self.consecutive_successes = 0;
        self.schedule_reset = None;
        self.pending_sr_change = None;
    }

    /// The attempt was acknowledged (at least one MPDU got through).
    pub fn on_success<R: Rng + ?Sized>(&mut self, variant: &ProtocolVariant, params: &BackoffParams, rng: &mut R) {
        self.retries = 0;
        match variant.base {
            BaseProtocol::CsmaCa => {
                self.stage = 0;
                self.backoff = draw_random_backoff(0, params, rng);
                self.mode = BackoffMode::Random;
                self.consecutive_successes = self.consecutive_successes.saturating_add(1);
            }
            BaseProtocol::CsmaEca => {
                if !variant.hysteresis {
                    self.stage = 0;
                }
                self.pending_sr_change = None;
                self.stickiness = self.default_stickiness;
                self.consecutive_successes = self.consecutive_successes.saturating_add(1);
                if variant.schedule_reset != ScheduleResetMode::Off {
                    self.advance_schedule_reset(variant, params);
                }
                self.backoff = deterministic_backoff(self.stage, params);
                self.mode = BackoffMode::Deterministic;
            }
        }
        self.contention_stage = self.stage;
    }

    fn advance_schedule_reset(&mut self, variant: &ProtocolVariant, params: &BackoffParams) {
        let completed_window = self
            .schedule_reset
            .as_ref()
            .filter(|w| w.stage() == self.stage && self.consecutive_successes > w.gamma())
            .map(|w| sr_evaluate(w.bitmap(), self.stage, variant.reset_scope, params));

        match completed_window {
            Some(candidate) => {
                self.consecutive_successes = 0;
                self.schedule_reset = None;
                if let Some(to) = candidate {
                    self.pending_sr_change = Some(StageChange { from: self.stage, to });
                    self.stage = to;
                    if variant.dynamic_stickiness {
                        self.stickiness = self.default_stickiness + 1;
                    }
                }
            }
            None => {
                if self.schedule_reset.as_ref().is_some_and(|w| w.stage() != self.stage) {
                    // stage moved under the window; restart it
                    self.schedule_reset = None;
                    self.consecutive_successes = 1;
                }
                if self.consecutive_successes == 1 && self.stage > 0 {
                    self.schedule_reset = Some(ScheduleResetState::new(self.stage, variant.schedule_reset, params));
                }
                if let Some(window) = self.schedule_reset.as_mut() {
                    // the node's own transmission occupies position 0
                    window.observe(true);
                }
            }
        }
    }

    /// The attempt was not acknowledged, by collision or by channel error.
    pub fn on_failure<R: Rng + ?Sized>(
        &mut self,
        variant: &ProtocolVariant,
        params: &BackoffParams,
        rng: &mut R,
    ) -> FailureOutcome {
        self.consecutive_successes = 0;
        self.schedule_reset = None;
        if let Some(change) = self.pending_sr_change.take() {
            self.stage = change.from;
        }

        if variant.is_eca() && self.mode == BackoffMode::Deterministic && self.stickiness > 0 {
            self.stickiness -= 1;
            self.backoff = deterministic_backoff(self.stage, params);
            if params.sticky_failures_count {
                self.retries += 1;
                if self.retries >= params.retry_limit {
                    let directive = self.drop_directive(variant, params);
                    self.retries = 0;
                    self.contention_stage = self.stage;
                    return FailureOutcome::Drop(directive);
                }
            }
            return FailureOutcome::Retained;
        }

        self.stickiness = 0;
        self.mode = BackoffMode::Random;
        self.retries += 1;
        self.stage = (self.stage + 1).min(params.max_stage);
        let outcome = if self.retries >= params.retry_limit {
            let directive = self.drop_directive(variant, params);
            self.retries = 0;
            if !variant.hysteresis {
                self.stage = 0;
            }
            self.contention_stage = self.stage;
            FailureOutcome::Drop(directive)
        } else {
            FailureOutcome::Backoff
        };
        self.backoff = draw_random_backoff(self.stage, params, rng);
        outcome
    }

    fn drop_directive(&self, variant: &ProtocolVariant, params: &BackoffParams) -> DropDirective {
        let packets = match variant.aggregation {
            Aggregation::None => 1,
            Aggregation::FairShare => 1 << self.contention_stage,
            Aggregation::MaxAg => 1 << params.max_stage,
        };
        DropDirective { packets }
    }

    /// Records a slot this node overheard while waiting, if a window is open.
    pub fn sr_observe(&mut self, busy: bool) {
        if let Some(window) = self.schedule_reset.as_mut() {
            window.observe(busy);
        }
    }

    pub fn sr_observe_idle(&mut self, slots: u64) {
        if let Some(window) = self.schedule_reset.as_mut() {
            window.observe_idle(slots);
        }
    }
}
