//! Runs many independent scenarios, in parallel when the `parallel` feature
//! is enabled.

use crate::engine::{self, EngineError, ScenarioConfig};
use crate::metrics::MetricsReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Falls back to sequential execution without the `parallel` feature.
    #[default]
    Parallel,
}

/// Copies of `base`, one per replication, seeded `base.seed + i`.
pub fn replication_configs(base: &ScenarioConfig, runs: u32) -> Vec<ScenarioConfig> {
    (0..runs as u64)
        .map(|i| ScenarioConfig {
            seed: base.seed.wrapping_add(i),
            ..base.clone()
        })
        .collect()
}

pub fn run_sequential(configs: &[ScenarioConfig]) -> Vec<Result<MetricsReport, EngineError>> {
    configs.iter().map(engine::run).collect()
}

#[cfg(feature = "parallel")]
pub fn run_parallel(configs: &[ScenarioConfig]) -> Vec<Result<MetricsReport, EngineError>> {
    use rayon::prelude::*;
    configs.par_iter().map(engine::run).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn run_parallel(configs: &[ScenarioConfig]) -> Vec<Result<MetricsReport, EngineError>> {
    run_sequential(configs)
}

/// Results come back in input order whatever the execution mode.
pub fn run_all(configs: &[ScenarioConfig], execution: Execution) -> Vec<Result<MetricsReport, EngineError>> {
    match execution {
        Execution::Sequential => run_sequential(configs),
        Execution::Parallel => run_parallel(configs),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mac::ProtocolVariant;

    #[test]
    fn seeds_follow_base() {
        let base = ScenarioConfig {
            seed: 40,
            ..ScenarioConfig::default()
        };
        let seeds: Vec<u64> = replication_configs(&base, 3).iter().map(|c| c.seed).collect();
        assert_eq!(seeds, vec![40, 41, 42]);
    }

    #[test]
    fn modes_agree() {
        let base = ScenarioConfig {
            duration_s: 0.2,
            ..ScenarioConfig::homogeneous(5, ProtocolVariant::csma_ca())
        };
        let configs = replication_configs(&base, 4);
        assert_eq!(run_all(&configs, Execution::Sequential), run_all(&configs, Execution::Parallel));
    }
}
