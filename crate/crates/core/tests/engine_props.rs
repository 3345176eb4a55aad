use proptest::prelude::*;

use ecasim::channel::SlotKind;
use ecasim::engine::{run, run_with_trace, Engine, ScenarioConfig};
use ecasim::mac::{BackoffMode, ProtocolVariant};
use ecasim::probability::Probability;
use ecasim::traffic::ArrivalProcess;

fn variant_strategy() -> impl Strategy<Value = ProtocolVariant> {
    prop_oneof![
        Just(ProtocolVariant::csma_ca()),
        Just(ProtocolVariant::csma_eca()),
        Just(ProtocolVariant::eca_hys()),
        Just(ProtocolVariant::eca_hys_fs()),
        Just(ProtocolVariant::eca_hys_maxag()),
        Just("eca+hys+fs+sr-aggr+halv+dynstick".parse().unwrap()),
        Just("eca+hys+fs+sr".parse().unwrap()),
    ]
}

prop_compose! {
    fn scenario()(
        n in 1usize..12,
        variant in variant_strategy(),
        p_e in 0.0f64..0.3,
        p_cd in 0.0f64..0.3,
        rate in prop_oneof![Just(None), (2e5f64..8e6).prop_map(Some)],
        capacity in 1usize..200,
        seed in any::<u64>(),
    ) -> ScenarioConfig {
        ScenarioConfig {
            p_e: Probability::new(p_e).unwrap(),
            p_cd: Probability::new(p_cd).unwrap(),
            traffic: rate.map_or(ArrivalProcess::saturated(8192), |r| ArrivalProcess::poisson(r, 8192)),
            queue_capacity: capacity,
            duration_s: 0.3,
            seed,
            series_window_s: 0.1,
            ..ScenarioConfig::homogeneous(n, variant)
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn packets_are_conserved(cfg in scenario()) {
        let report = run(&cfg).unwrap();
        for node in &report.per_node {
            prop_assert_eq!(node.arrivals, node.delivered_packets + node.drops + node.blocks + node.queue_len_end);
        }
        let bits: u64 = report.per_node.iter().map(|n| n.delivered_bits).sum();
        prop_assert!((report.aggregate.throughput_bps - bits as f64 / report.meta.duration_s).abs() < 1e-6);
        prop_assert!((0.0..=1.0).contains(&report.aggregate.collision_slot_fraction));
    }

    #[test]
    fn clock_is_the_sum_of_slot_durations(cfg in scenario()) {
        let (report, log) = run_with_trace(&cfg).unwrap();
        let mut t = 0;
        for (i, slot) in log.iter().enumerate() {
            prop_assert_eq!(slot.index, i as u64);
            prop_assert_eq!(slot.start_us, t);
            t += slot.duration_us;
        }
        prop_assert_eq!(t as f64 / 1e6, report.meta.duration_s);
        let collisions = log.iter().filter(|s| matches!(s.kind, SlotKind::Collision { .. })).count() as u64;
        prop_assert_eq!(collisions, report.aggregate.collision_slots);
        prop_assert_eq!(log.len() as u64, report.aggregate.total_slots);
    }

    #[test]
    fn same_seed_same_report(cfg in scenario()) {
        prop_assert_eq!(run(&cfg).unwrap(), run(&cfg).unwrap());
    }

    #[test]
    fn transmitters_are_exactly_the_ready_nodes(cfg in scenario()) {
        let mut engine = Engine::new(&cfg).unwrap();
        for _ in 0..3000 {
            if engine.is_finished() {
                break;
            }
            engine.admit_arrivals();
            let before: Vec<(u64, usize)> = engine.nodes().iter().zip(engine.queues()).map(|(n, q)| (n.backoff, q.len())).collect();
            let slot = engine.step();
            let sent: Vec<usize> = match &slot.kind {
                SlotKind::Empty => vec![],
                SlotKind::Success { node, .. } | SlotKind::FailedByError { node, .. } => vec![*node],
                SlotKind::Collision { nodes, .. } => nodes.clone(),
            };
            for (i, &(b, len)) in before.iter().enumerate() {
                prop_assert_eq!(len > 0 && b == 0, sent.contains(&i), "node {} backoff {} queue {}", i, b, len);
            }
        }
    }

    #[test]
    fn settled_eca_stays_collision_free(n in 1usize..=8, seed in any::<u64>()) {
        let cfg = ScenarioConfig {
            duration_s: 2.0,
            seed,
            ..ScenarioConfig::homogeneous(n, ProtocolVariant::csma_eca())
        };
        let mut engine = Engine::new(&cfg).unwrap();
        let mut settled = false;
        while !engine.is_finished() {
            let slot = engine.step();
            if settled {
                prop_assert!(!matches!(slot.kind, SlotKind::Collision { .. }), "collision at slot {}", slot.index);
            }
            settled = engine.nodes().iter().all(|n| n.mode == BackoffMode::Deterministic);
        }
    }
}

#[test]
fn one_node_never_collides() {
    for variant in [ProtocolVariant::csma_ca(), ProtocolVariant::csma_eca(), ProtocolVariant::eca_hys_fs()] {
        let report = run(&ScenarioConfig {
            duration_s: 5.0,
            ..ScenarioConfig::homogeneous(1, variant)
        })
        .unwrap();
        assert_eq!(report.aggregate.collision_slots, 0);
    }
}

#[test]
fn four_eca_nodes_settle() {
    let report = run(&ScenarioConfig {
        duration_s: 20.0,
        ..ScenarioConfig::homogeneous(4, ProtocolVariant::csma_eca())
    })
    .unwrap();
    let tail = &report.aggregate.collision_fraction_timeseries[5..];
    assert!(tail.iter().all(|p| p.value == 0.0));
}
