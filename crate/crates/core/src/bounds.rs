//! Closed-form throughput of the collision-free schedules CSMA/ECA settles
//! into under saturation.

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{tx_duration, PhyParams};
use crate::mac::{deterministic_backoff, BackoffParams};

#[derive(Debug, Error, PartialEq)]
pub enum BoundsError {
    #[error("need at least one contender")]
    NoContenders,
    #[error("aggregation must carry at least one packet")]
    EmptyBatch,
    #[error("zero denominator in the throughput of the {0} stage")]
    ZeroDenominator(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundMode {
    /// Fair Share batches: `2^k` and `2^(k-1)` packets.
    Lower,
    /// Everyone at the maximum stage with `2^m`-packet batches.
    Upper,
    /// Ideal stages, `2^m`-packet batches everywhere.
    MaxAg,
}

/// How the second term of the lower-stage denominator is weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum StageTerm {
    /// `k * T(l_k) / 2`, with `k` the stage index.
    #[default]
    Verbatim,
    /// `h * T(l_k) / 2`, with `h` the number of nodes at stage `k`.
    HInterpretation,
}

/// Ideal schedule for `n` saturated contenders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub n: usize,
    /// Stage holding the `h` nodes; the rest sit one stage below.
    pub k: u32,
    /// Schedule length in slots.
    pub c: u64,
    pub h: u64,
    /// `2N - C` before clamping to `[0, N]`.
    pub h_raw: i64,
}

impl ScheduleParams {
    pub fn h_clamped(&self) -> bool {
        self.h_raw != self.h as i64
    }
}

pub fn schedule_params(n: usize, backoff: &BackoffParams) -> ScheduleParams {
    let b_d = deterministic_backoff(0, backoff);
    let n64 = n as u64;
    if n64 <= b_d + 1 {
        return ScheduleParams {
            n,
            k: 0,
            c: b_d + 1,
            h: n64,
            h_raw: n as i64,
        };
    }
    // smallest k with 2^k (B_d + 1) >= n
    let mut k = 0u32;
    while (b_d + 1) << k < n64 {
        k += 1;
    }
    let c = (b_d << k) + 1;
    let h_raw = 2 * n as i64 - c as i64;
    let h = h_raw.clamp(0, n as i64) as u64;
    if h as i64 != h_raw {
        log::warn!("n={n}: h = 2N - C = {h_raw} falls outside [0, {n}], clamped to {h}");
    }
    ScheduleParams { n, k, c, h, h_raw }
}

/// Per-node throughput (bits/s) at stage `k` and at stage `k - 1`.
///
/// The second value is meaningless when every node is at stage `k`; it is
/// still computed when its denominator is non-zero.
pub fn stage_throughputs(
    sched: &ScheduleParams,
    l_k: u32,
    l_k1: u32,
    payload_bits: u64,
    phy: &PhyParams,
    term: StageTerm,
) -> Result<(f64, Option<f64>), BoundsError> {
    if sched.n == 0 {
        return Err(BoundsError::NoContenders);
    }
    if l_k == 0 || l_k1 == 0 {
        return Err(BoundsError::EmptyBatch);
    }
    let n = sched.n as f64;
    let h = sched.h as f64;
    let t_k = tx_duration(l_k, payload_bits, phy) as f64;
    let t_k1 = tx_duration(l_k1, payload_bits, phy) as f64;
    let idle = phy.sigma_e as f64 * (sched.c as f64 - n).max(0.0);

    let den_k = h * t_k + 2.0 * (n - h) * t_k1 + idle;
    if den_k <= 0.0 {
        return Err(BoundsError::ZeroDenominator("upper"));
    }
    let s_k = l_k as f64 * payload_bits as f64 / den_k;

    let weight = match term {
        StageTerm::Verbatim => sched.k as f64,
        StageTerm::HInterpretation => h,
    };
    let den_k1 = (n - h) * t_k1 + weight * t_k / 2.0;
    let s_k1 = (den_k1 > 0.0).then(|| l_k1 as f64 * payload_bits as f64 / den_k1);
    Ok((s_k * 1e6, s_k1.map(|s| s * 1e6)))
}

/// Aggregate throughput in bits/s for `n` contenders under `mode`.
pub fn bound_throughput(
    n: usize,
    mode: BoundMode,
    backoff: &BackoffParams,
    phy: &PhyParams,
    payload_bits: u64,
    term: StageTerm,
) -> Result<f64, BoundsError> {
    if n == 0 {
        return Err(BoundsError::NoContenders);
    }
    let m = backoff.max_stage;
    let (sched, l_k, l_k1) = match mode {
        BoundMode::Lower => {
            let s = schedule_params(n, backoff);
            (s, 1 << s.k, 1 << s.k.saturating_sub(1))
        }
        BoundMode::MaxAg => (schedule_params(n, backoff), 1 << m, 1 << m),
        BoundMode::Upper => {
            let c = (deterministic_backoff(0, backoff) << m) + 1;
            let s = ScheduleParams {
                n,
                k: m,
                c,
                h: n as u64,
                h_raw: n as i64,
            };
            (s, 1 << m, 1 << m)
        }
    };
    let (s_k, s_k1) = stage_throughputs(&sched, l_k, l_k1, payload_bits, phy, term)?;
    let lower_nodes = n as u64 - sched.h;
    let rest = if lower_nodes == 0 {
        0.0
    } else {
        lower_nodes as f64 * s_k1.ok_or(BoundsError::ZeroDenominator("lower"))?
    };
    Ok(sched.h as f64 * s_k + rest)
}

/// One point of the bound curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsResult {
    pub n: usize,
    pub k: u32,
    pub c: u64,
    pub h: u64,
    pub h_clamped: bool,
    pub lower: f64,
    pub upper: f64,
    pub max_agg: f64,
    /// Same curves with the h-weighted lower-stage term.
    pub lower_h_term: f64,
    pub max_agg_h_term: f64,
}

pub fn bound_curve(
    n_range: RangeInclusive<usize>,
    mode: BoundMode,
    backoff: &BackoffParams,
    phy: &PhyParams,
    payload_bits: u64,
    term: StageTerm,
) -> Result<Vec<(usize, f64)>, BoundsError> {
    n_range
        .map(|n| Ok((n, bound_throughput(n, mode, backoff, phy, payload_bits, term)?)))
        .collect()
}

pub fn bounds_table(
    n_range: RangeInclusive<usize>,
    backoff: &BackoffParams,
    phy: &PhyParams,
    payload_bits: u64,
) -> Result<Vec<BoundsResult>, BoundsError> {
    if n_range.is_empty() {
        return Err(BoundsError::NoContenders);
    }
    n_range
        .map(|n| {
            let s = schedule_params(n, backoff);
            let at = |mode, term| bound_throughput(n, mode, backoff, phy, payload_bits, term);
            Ok(BoundsResult {
                n,
                k: s.k,
                c: s.c,
                h: s.h,
                h_clamped: s.h_clamped(),
                lower: at(BoundMode::Lower, StageTerm::Verbatim)?,
                upper: at(BoundMode::Upper, StageTerm::Verbatim)?,
                max_agg: at(BoundMode::MaxAg, StageTerm::Verbatim)?,
                lower_h_term: at(BoundMode::Lower, StageTerm::HInterpretation)?,
                max_agg_h_term: at(BoundMode::MaxAg, StageTerm::HInterpretation)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const L: u64 = 8192;

    fn p() -> BackoffParams {
        BackoffParams::default()
    }

    #[test]
    fn schedule_examples() {
        let s8 = schedule_params(8, &p());
        assert_eq!((s8.k, s8.c, s8.h), (0, 8, 8));
        let s10 = schedule_params(10, &p());
        assert_eq!((s10.k, s10.c, s10.h), (1, 15, 5));
        let s16 = schedule_params(16, &p());
        assert_eq!((s16.k, s16.c, s16.h_raw, s16.h), (1, 15, 17, 16));
        assert!(s16.h_clamped());
        let s17 = schedule_params(17, &p());
        assert_eq!((s17.k, s17.c, s17.h), (2, 29, 5));
    }

    #[test]
    fn eight_nodes_fill_the_schedule() {
        let s = bound_throughput(8, BoundMode::Lower, &p(), &PhyParams::default(), L, StageTerm::Verbatim).unwrap();
        assert!((s - 8192.0 / 255.0 * 1e6).abs() < 1e-6);
    }

    #[test]
    fn single_node_pays_for_idle_slots() {
        let s = bound_throughput(1, BoundMode::Lower, &p(), &PhyParams::default(), L, StageTerm::Verbatim).unwrap();
        assert!((s - 8192.0 / (255.0 + 9.0 * 7.0) * 1e6).abs() < 1e-6);
    }

    #[test]
    fn idle_term_lowers_throughput() {
        let phy = PhyParams::default();
        let mut s = schedule_params(3, &p());
        let mut prev = f64::INFINITY;
        for c in 3..20 {
            s.c = c;
            let (sk, _) = stage_throughputs(&s, 1, 1, L, &phy, StageTerm::Verbatim).unwrap();
            assert!(sk < prev);
            prev = sk;
        }
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let s = schedule_params(4, &p());
        let phy = PhyParams::default();
        assert_eq!(stage_throughputs(&s, 0, 1, L, &phy, StageTerm::Verbatim), Err(BoundsError::EmptyBatch));
        #[allow(clippy::reversed_empty_ranges)]
        let empty = 5..=4;
        assert!(bounds_table(empty, &p(), &phy, L).is_err());
    }

    #[test]
    fn curves_are_ordered_and_finite() {
        let phy = PhyParams::default();
        for r in bounds_table(1..=64, &p(), &phy, L).unwrap() {
            for v in [r.lower, r.upper, r.max_agg, r.lower_h_term, r.max_agg_h_term] {
                assert!(v.is_finite() && v > 0.0, "{r:?}");
            }
            assert!(r.max_agg >= r.lower, "{r:?}");
            assert!(r.h <= r.n as u64);
        }
    }
}
