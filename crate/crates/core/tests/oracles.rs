//! Library results against values worked out independently here.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ecasim::bounds::{bound_throughput, bounds_table, schedule_params, BoundMode, StageTerm};
use ecasim::channel::{tx_duration, PhyParams};
use ecasim::mac::{deterministic_backoff, draw_random_backoff, sr_evaluate, BackoffParams, ResetScope};

fn airtime(l: u64, payload: u64) -> u64 {
    let data_symbols = ((16 + l * (32 + 288 + payload) + 6) as f64 / 256.0).ceil() as u64;
    let ack_symbols = ((16 + 256 + 6) as f64 / 256.0).ceil() as u64;
    (32 + 4 * data_symbols) + 10 + (32 + 4 * ack_symbols) + 28 + 9
}

#[test]
fn airtime_matches_hand_evaluation() {
    let phy = PhyParams::default();
    assert_eq!(tx_duration(1, 8192, &phy), 255);
    assert_eq!(tx_duration(2, 8192, &phy), 387);
    for payload in [8, 1500 * 8, 8192, 12_000] {
        for l in 1..=64 {
            assert_eq!(tx_duration(l as u32, payload, &phy), airtime(l, payload), "l={l} payload={payload}");
        }
    }
}

#[test]
fn random_backoff_is_uniform() {
    // stage 2: 64 equally likely values, chi-square at the 1% level
    let params = BackoffParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let draws = 1_000_000;
    let mut counts = [0u64; 64];
    for _ in 0..draws {
        counts[draw_random_backoff(2, &params, &mut rng) as usize] += 1;
    }
    let expected = draws as f64 / 64.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    assert!(chi2 < 92.01, "chi-square {chi2}");
}

#[test]
fn deterministic_backoff_is_half_the_window() {
    let p = BackoffParams::default();
    let expected = [7, 15, 31, 63, 127, 255];
    for (k, &b) in expected.iter().enumerate() {
        assert_eq!(deterministic_backoff(k as u32, &p), b);
    }
}

#[test]
fn bounds_by_hand() {
    let (b, phy) = (BackoffParams::default(), PhyParams::default());
    let (t1, t2) = (255.0, 387.0);

    // N = 10: k = 1, C = 15, five nodes at each stage
    let s = schedule_params(10, &b);
    assert_eq!((s.k, s.c, s.h), (1, 15, 5));
    let s_k = 2.0 * 8192.0 / (5.0 * t2 + 2.0 * 5.0 * t1 + 9.0 * 5.0);
    let verbatim = 5.0 * s_k + 5.0 * 8192.0 / (5.0 * t1 + 1.0 * t2 / 2.0);
    let h_term = 5.0 * s_k + 5.0 * 8192.0 / (5.0 * t1 + 5.0 * t2 / 2.0);
    let got = bound_throughput(10, BoundMode::Lower, &b, &phy, 8192, StageTerm::Verbatim).unwrap();
    assert!((got / 1e6 - verbatim).abs() < 1e-9, "{got} vs {verbatim}");
    let got = bound_throughput(10, BoundMode::Lower, &b, &phy, 8192, StageTerm::HInterpretation).unwrap();
    assert!((got / 1e6 - h_term).abs() < 1e-9);

    // N = 8 fills the stage-0 schedule exactly
    let got = bound_throughput(8, BoundMode::Lower, &b, &phy, 8192, StageTerm::Verbatim).unwrap();
    assert!((got - 8192.0 / 255.0 * 1e6).abs() < 1e-6);

    // one node waits out seven empty slots per cycle
    let got = bound_throughput(1, BoundMode::Lower, &b, &phy, 8192, StageTerm::Verbatim).unwrap();
    assert!((got - 8192.0 / 318.0 * 1e6).abs() < 1e-6);

    // everyone at stage 5 with 32-packet bursts
    let t32 = airtime(32, 8192) as f64;
    let upper = 4.0 * 32.0 * 8192.0 / (4.0 * t32 + 9.0 * (225.0 - 4.0));
    let got = bound_throughput(4, BoundMode::Upper, &b, &phy, 8192, StageTerm::Verbatim).unwrap();
    assert!((got / 1e6 - upper).abs() < 1e-9);
}

#[test]
fn max_aggregation_dominates_lower_bound() {
    for r in bounds_table(1..=64, &BackoffParams::default(), &PhyParams::default(), 8192).unwrap() {
        assert!(r.max_agg >= r.lower, "n={}", r.n);
    }
}

#[test]
fn schedule_reset_bitmap_from_the_worked_example() {
    let bitmap: Vec<bool> = (0..32).map(|t| t == 0 || t % 8 != 0).collect();
    let p = BackoffParams::default();
    assert_eq!(sr_evaluate(&bitmap, 2, ResetScope::FullReset, &p), Some(0));
    assert_eq!(sr_evaluate(&bitmap, 2, ResetScope::Halving, &p), Some(1));
    let busy = vec![true; 32];
    assert_eq!(sr_evaluate(&busy, 2, ResetScope::FullReset, &p), None);
}
