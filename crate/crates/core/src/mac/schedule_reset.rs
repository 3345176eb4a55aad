//! Bitmap-based detection of a shorter collision-free schedule.
//!
//! A node that keeps succeeding records, for each slot position inside its
//! own cycle of `B_d + 1` slots, whether that position was ever busy. Index
//! `0` is the node's own transmission; the slots it overhears before its next
//! attempt land on `1..=B_d`. When a smaller stage `j` would place every one
//! of the node's future attempts on a position that stayed empty, the node may
//! move to that stage.

use serde::{Deserialize, Serialize};

use super::variant::{ResetScope, ScheduleResetMode};
use super::{deterministic_backoff, BackoffParams};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleResetState {
    bitmap: Vec<bool>,
    /// Index of the next slot to record.
    cursor: usize,
    /// Consecutive successes that must complete before evaluating.
    gamma: u32,
    /// Stage the bitmap was sized for.
    stage: u32,
}

impl ScheduleResetState {
    /// Fresh, all-empty window for a node at `stage`.
    pub fn new(stage: u32, mode: ScheduleResetMode, params: &BackoffParams) -> Self {
        let b_d = deterministic_backoff(stage, params);
        Self {
            bitmap: vec![false; b_d as usize + 1],
            cursor: 0,
            gamma: threshold(mode, b_d, params),
            stage,
        }
    }

    /// Records one elapsed slot at the cursor and advances it, wrapping at the
    /// end of the cycle.
    pub fn observe(&mut self, busy: bool) {
        self.bitmap[self.cursor] |= busy;
        self.cursor += 1;
        if self.cursor == self.bitmap.len() {
            self.cursor = 0;
        }
    }

    /// Equivalent to `count` calls of `observe(false)`.
    pub fn observe_idle(&mut self, count: u64) {
        let len = self.bitmap.len() as u64;
        self.cursor = ((self.cursor as u64 + count % len) % len) as usize;
    }

    pub fn bitmap(&self) -> &[bool] {
        &self.bitmap
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn gamma(&self) -> u32 {
        self.gamma
    }

    pub fn stage(&self) -> u32 {
        self.stage
    }

    /// Builds a window with an explicit bitmap; used to replay recorded cycles.
    pub fn from_bitmap(bitmap: Vec<bool>, stage: u32, gamma: u32) -> Self {
        assert!(!bitmap.is_empty(), "bitmap must cover at least the own slot");
        Self {
            bitmap,
            cursor: 0,
            gamma,
            stage,
        }
    }
}

/// Number of consecutive successes a window spans.
pub fn threshold(mode: ScheduleResetMode, b_d: u64, params: &BackoffParams) -> u32 {
    match mode {
        ScheduleResetMode::Off | ScheduleResetMode::Aggressive => 1,
        ScheduleResetMode::Conservative => {
            let largest = deterministic_backoff(params.max_stage, params);
            if b_d == 0 {
                1
            } else {
                largest.div_ceil(b_d).max(1) as u32
            }
        }
    }
}

/// Searches for a smaller stage whose attempt positions were all empty.
///
/// Candidate stage `j` transmits every `y = ceil(2^j * CW_min / 2)` slots, so
/// it is accepted when `bitmap[y], bitmap[2y], ...` (below the bitmap length)
/// are all clear. Full reset tries `j = 0, 1, ..., k - 1` in order; halving
/// only tries `k - 1`.
pub fn sr_evaluate(bitmap: &[bool], stage: u32, scope: ResetScope, params: &BackoffParams) -> Option<u32> {
    if stage == 0 {
        return None;
    }
    let candidates = match scope {
        ResetScope::FullReset => 0..stage,
        ResetScope::Halving => stage - 1..stage,
    };
    candidates.into_iter().find(|&j| {
        let step = deterministic_backoff(j, params) as usize + 1;
        (step..bitmap.len()).step_by(step).all(|t| !bitmap[t])
    })
}
