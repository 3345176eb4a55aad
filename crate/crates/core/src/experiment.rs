//! Experiment files, sweeps over them, and result tables.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::BoundsResult;
use crate::channel::{PhyError, PhyParams, SlotKind};
use crate::engine::{CountdownRule, EngineError, ProtocolShare, ScenarioConfig, SlotTrace};
use crate::mac::{BackoffParams, BaseProtocol, MacError, ProtocolVariant, VariantError};
use crate::metrics::{aggregate_runs, MetricsError, MetricsReport, RunSummary};
use crate::probability::Probability;
use crate::replicate::{self, Execution};
use crate::traffic::{ArrivalKind, ArrivalProcess, TrafficError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("`{key}` must be a probability in [0, 1], got {value}")]
    Probability { key: String, value: f64 },
    #[error("`{key}` must be a fraction in [0, 1], got {value}")]
    Fraction { key: String, value: f64 },
    #[error("`{key}`: {source}")]
    Variant { key: String, source: VariantError },
    #[error("`{key}`: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FileConfig {
    n_nodes: usize,
    duration_s: f64,
    seed: u64,
    runs: u32,
    p_e: f64,
    p_cd: f64,
    series_window_s: f64,
    phy: PhyParams,
    mac: MacSection,
    traffic: TrafficSection,
    sweep: SweepSection,
}

impl Default for FileConfig {
    fn default() -> Self {
        Self {
            n_nodes: 8,
            duration_s: 100.0,
            seed: 1,
            runs: 20,
            p_e: 0.0,
            p_cd: 0.0,
            series_window_s: 1.0,
            phy: PhyParams::default(),
            mac: MacSection::default(),
            traffic: TrafficSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct MacSection {
    variant: String,
    ca_fraction: f64,
    cw_min: u64,
    max_stage: u32,
    retry_limit: u32,
    default_stickiness: u32,
    sticky_failures_count: bool,
    countdown: CountdownRule,
}

impl Default for MacSection {
    fn default() -> Self {
        let b = BackoffParams::default();
        Self {
            variant: ProtocolVariant::eca_hys_fs().to_string(),
            ca_fraction: 0.0,
            cw_min: b.cw_min,
            max_stage: b.max_stage,
            retry_limit: b.retry_limit,
            default_stickiness: b.default_stickiness,
            sticky_failures_count: b.sticky_failures_count,
            countdown: CountdownRule::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficModel {
    Saturated,
    Poisson,
    Periodic,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TrafficSection {
    model: TrafficModel,
    rate_bps: Option<f64>,
    payload_bits: u64,
    queue_capacity: usize,
}

impl Default for TrafficSection {
    fn default() -> Self {
        Self {
            model: TrafficModel::Saturated,
            rate_bps: None,
            payload_bits: 8192,
            queue_capacity: 1000,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SweepSection {
    n_nodes: Option<Vec<usize>>,
    variant: Option<Vec<String>>,
    ca_fraction: Option<Vec<f64>>,
    p_e: Option<Vec<f64>>,
    p_cd: Option<Vec<f64>>,
    rate_bps: Option<Vec<f64>>,
}

/// One point of the sweep: a full scenario plus the labels it is reported under.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub variant: ProtocolVariant,
    pub ca_fraction: f64,
    pub scenario: ScenarioConfig,
}

impl Cell {
    pub fn rate_bps(&self) -> Option<f64> {
        match self.scenario.traffic.kind {
            ArrivalKind::Saturated => None,
            ArrivalKind::Poisson { rate_bps } | ArrivalKind::Periodic { rate_bps } => Some(rate_bps),
        }
    }
}

/// Every cell of a parsed experiment file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentMatrix {
    pub cells: Vec<Cell>,
    pub runs: u32,
}

impl ExperimentMatrix {
    pub fn run_count(&self) -> usize {
        self.cells.len() * self.runs as usize
    }

    /// Replaces the base seed of every cell.
    pub fn with_seed(mut self, seed: u64) -> Self {
        for c in &mut self.cells {
            c.scenario.seed = seed;
        }
        self
    }

    pub fn with_runs(mut self, runs: u32) -> Self {
        self.runs = runs;
        for c in &mut self.cells {
            c.scenario.runs = runs;
        }
        self
    }
}

fn probability(key: &str, value: f64) -> Result<Probability, ConfigError> {
    Probability::new(value).map_err(|_| ConfigError::Probability {
        key: key.to_string(),
        value,
    })
}

fn fraction(key: &str, value: f64) -> Result<f64, ConfigError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(ConfigError::Fraction {
            key: key.to_string(),
            value,
        })
    }
}

fn variant(key: &str, text: &str) -> Result<ProtocolVariant, ConfigError> {
    text.parse().map_err(|source| ConfigError::Variant {
        key: key.to_string(),
        source,
    })
}

/// CSMA/CA nodes make up `ca_fraction` of the network, `variant` the rest.
pub fn protocol_mix(variant: ProtocolVariant, ca_fraction: f64) -> Vec<ProtocolShare> {
    let ca = ProtocolVariant::csma_ca();
    if variant.base == BaseProtocol::CsmaCa || ca_fraction >= 1.0 {
        vec![ProtocolShare { variant: ca, fraction: 1.0 }]
    } else if ca_fraction <= 0.0 {
        vec![ProtocolShare { variant, fraction: 1.0 }]
    } else {
        vec![
            ProtocolShare {
                variant: ca,
                fraction: ca_fraction,
            },
            ProtocolShare {
                variant,
                fraction: 1.0 - ca_fraction,
            },
        ]
    }
}

fn traffic(model: TrafficModel, rate: Option<f64>, payload_bits: u64, key: &str) -> Result<ArrivalProcess, ConfigError> {
    let need_rate = || rate.ok_or_else(|| invalid(key, "required for poisson and periodic traffic"));
    let kind = match model {
        TrafficModel::Saturated => {
            if rate.is_some() {
                return Err(invalid(key, "has no effect on saturated traffic"));
            }
            ArrivalKind::Saturated
        }
        TrafficModel::Poisson => ArrivalKind::Poisson { rate_bps: need_rate()? },
        TrafficModel::Periodic => ArrivalKind::Periodic { rate_bps: need_rate()? },
    };
    Ok(ArrivalProcess { kind, payload_bits })
}

/// Points a scenario validation failure at the config key responsible.
fn scenario_error(err: EngineError) -> ConfigError {
    let key = match &err {
        EngineError::NoNodes => "n_nodes".to_string(),
        EngineError::BadDuration(_) => "duration_s".to_string(),
        EngineError::BadWindow(_) => "series_window_s".to_string(),
        EngineError::EmptyMix | EngineError::BadFraction(_) | EngineError::FractionSum(_) => "mac.ca_fraction".to_string(),
        EngineError::Variant(_) => "mac.variant".to_string(),
        EngineError::Phy(PhyError(field)) => format!("phy.{field}"),
        EngineError::Mac(MacError::BadCwMin(_)) => "mac.cw_min".to_string(),
        EngineError::Mac(MacError::StageTooLarge(_)) => "mac.max_stage".to_string(),
        EngineError::Mac(MacError::ZeroRetryLimit) => "mac.retry_limit".to_string(),
        EngineError::Mac(MacError::EmptyQueue(_)) | EngineError::Conservation(_) => "scenario".to_string(),
        EngineError::Traffic(TrafficError::ZeroCapacity) => "traffic.queue_capacity".to_string(),
        EngineError::Traffic(TrafficError::ZeroPayload) => "traffic.payload_bits".to_string(),
        EngineError::Traffic(_) => "traffic.rate_bps".to_string(),
    };
    invalid(&key, err.to_string())
}

/// Parses and validates an experiment file. Omitted keys take their
/// defaults; unknown keys are errors.
pub fn parse_config(text: &str) -> Result<ExperimentMatrix, ConfigError> {
    let file: FileConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let sweep = &file.sweep;

    let non_empty = |key: &str, len: Option<usize>| match len {
        Some(0) => Err(invalid(key, "sweep list is empty")),
        _ => Ok(()),
    };
    non_empty("sweep.n_nodes", sweep.n_nodes.as_ref().map(Vec::len))?;
    non_empty("sweep.variant", sweep.variant.as_ref().map(Vec::len))?;
    non_empty("sweep.ca_fraction", sweep.ca_fraction.as_ref().map(Vec::len))?;
    non_empty("sweep.p_e", sweep.p_e.as_ref().map(Vec::len))?;
    non_empty("sweep.p_cd", sweep.p_cd.as_ref().map(Vec::len))?;
    non_empty("sweep.rate_bps", sweep.rate_bps.as_ref().map(Vec::len))?;

    let variants: Vec<ProtocolVariant> = match &sweep.variant {
        Some(list) => list
            .iter()
            .enumerate()
            .map(|(i, v)| variant(&format!("sweep.variant[{i}]"), v))
            .collect::<Result<_, _>>()?,
        None => vec![variant("mac.variant", &file.mac.variant)?],
    };
    let ca_fractions: Vec<f64> = match &sweep.ca_fraction {
        Some(list) => list
            .iter()
            .enumerate()
            .map(|(i, &v)| fraction(&format!("sweep.ca_fraction[{i}]"), v))
            .collect::<Result<_, _>>()?,
        None => vec![fraction("mac.ca_fraction", file.mac.ca_fraction)?],
    };
    let probabilities = |key: &str, list: &Option<Vec<f64>>, single: f64| -> Result<Vec<Probability>, ConfigError> {
        match list {
            Some(list) => list
                .iter()
                .enumerate()
                .map(|(i, &v)| probability(&format!("sweep.{key}[{i}]"), v))
                .collect(),
            None => Ok(vec![probability(key, single)?]),
        }
    };
    let p_es = probabilities("p_e", &sweep.p_e, file.p_e)?;
    let p_cds = probabilities("p_cd", &sweep.p_cd, file.p_cd)?;
    let n_nodes = sweep.n_nodes.clone().unwrap_or(vec![file.n_nodes]);
    let rates: Vec<Option<f64>> = match &sweep.rate_bps {
        Some(list) => {
            if file.traffic.model == TrafficModel::Saturated {
                return Err(invalid("sweep.rate_bps", "needs traffic.model = poisson or periodic"));
            }
            list.iter().map(|&r| Some(r)).collect()
        }
        None => vec![file.traffic.rate_bps],
    };

    let backoff = BackoffParams {
        cw_min: file.mac.cw_min,
        max_stage: file.mac.max_stage,
        retry_limit: file.mac.retry_limit,
        default_stickiness: file.mac.default_stickiness,
        sticky_failures_count: file.mac.sticky_failures_count,
    };
    if file.runs == 0 {
        return Err(invalid("runs", "must be at least 1"));
    }

    let mut cells = Vec::new();
    for &variant in &variants {
        for &ca_fraction in &ca_fractions {
            for &n in &n_nodes {
                for &p_e in &p_es {
                    for &p_cd in &p_cds {
                        for &rate in &rates {
                            let rate_key = if sweep.rate_bps.is_some() { "sweep.rate_bps" } else { "traffic.rate_bps" };
                            let scenario = ScenarioConfig {
                                n_nodes: n,
                                protocol_mix: protocol_mix(variant, ca_fraction),
                                phy: file.phy,
                                backoff,
                                traffic: traffic(file.traffic.model, rate, file.traffic.payload_bits, rate_key)?,
                                queue_capacity: file.traffic.queue_capacity,
                                p_e,
                                p_cd,
                                duration_s: file.duration_s,
                                seed: file.seed,
                                runs: file.runs,
                                countdown: file.mac.countdown,
                                series_window_s: file.series_window_s,
                            };
                            scenario.validate().map_err(scenario_error)?;
                            cells.push(Cell {
                                variant,
                                ca_fraction: if variant.base == BaseProtocol::CsmaCa { 1.0 } else { ca_fraction },
                                scenario,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(ExperimentMatrix { cells, runs: file.runs })
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: Cell,
    pub reports: Vec<MetricsReport>,
    pub summary: RunSummary,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("cell {cell} seed {seed}: {source}")]
    Engine { cell: usize, seed: u64, source: EngineError },
    #[error("cell {cell}: {source}")]
    Summary { cell: usize, source: MetricsError },
}

/// Runs every replication of every cell. Cells that fail are reported in the
/// second list; the rest are summarized in the first.
pub fn run_matrix(matrix: &ExperimentMatrix, execution: Execution) -> (Vec<CellResult>, Vec<RunError>) {
    let configs: Vec<ScenarioConfig> = matrix
        .cells
        .iter()
        .flat_map(|c| replicate::replication_configs(&c.scenario, matrix.runs))
        .collect();
    let mut outcomes = replicate::run_all(&configs, execution).into_iter();

    let mut results = Vec::new();
    let mut errors = Vec::new();
    for (i, cell) in matrix.cells.iter().enumerate() {
        let mut reports = Vec::new();
        let mut failed = false;
        for (r, outcome) in outcomes.by_ref().take(matrix.runs as usize).enumerate() {
            match outcome {
                Ok(report) => reports.push(report),
                Err(source) => {
                    failed = true;
                    errors.push(RunError::Engine {
                        cell: i,
                        seed: cell.scenario.seed.wrapping_add(r as u64),
                        source,
                    });
                }
            }
        }
        if failed {
            continue;
        }
        match aggregate_runs(&reports) {
            Ok(summary) => results.push(CellResult {
                cell: cell.clone(),
                reports,
                summary,
            }),
            Err(source) => errors.push(RunError::Summary { cell: i, source }),
        }
    }
    (results, errors)
}

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    n_nodes: usize,
    variant: String,
    p_e: f64,
    p_cd: f64,
    ca_fraction: f64,
    seed_base: u64,
    runs: usize,
    throughput_mean: Option<f64>,
    throughput_std: Option<f64>,
    jfi_mean: Option<f64>,
    collision_frac_mean: Option<f64>,
    delay_mean: Option<f64>,
    inter_success_mean: Option<f64>,
    drop_frac_mean: Option<f64>,
    block_frac_mean: Option<f64>,
    avg_stage_mean: Option<f64>,
    jfi_std: Option<f64>,
    collision_frac_std: Option<f64>,
    delay_std: Option<f64>,
    inter_success_std: Option<f64>,
    contention_to_ack_mean: Option<f64>,
    contention_to_ack_std: Option<f64>,
    drop_frac_std: Option<f64>,
    block_frac_std: Option<f64>,
    avg_stage_std: Option<f64>,
    rate_bps: Option<f64>,
    duration_s: f64,
    config_hash: &'a str,
}

/// One row per cell: means and standard deviations across replications.
pub fn write_csv<W: Write>(results: &[CellResult], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in results {
        let s = &r.summary;
        w.serialize(CsvRow {
            n_nodes: r.cell.scenario.n_nodes,
            variant: r.cell.variant.to_string(),
            p_e: r.cell.scenario.p_e.get(),
            p_cd: r.cell.scenario.p_cd.get(),
            ca_fraction: r.cell.ca_fraction,
            seed_base: r.cell.scenario.seed,
            runs: r.reports.len(),
            throughput_mean: s.throughput_bps.mean,
            throughput_std: s.throughput_bps.std,
            jfi_mean: s.jfi.mean,
            collision_frac_mean: s.collision_fraction.mean,
            delay_mean: s.delay_us.mean,
            inter_success_mean: s.inter_success_us.mean,
            drop_frac_mean: s.drop_fraction.mean,
            block_frac_mean: s.block_fraction.mean,
            avg_stage_mean: s.backoff_stage.mean,
            jfi_std: s.jfi.std,
            collision_frac_std: s.collision_fraction.std,
            delay_std: s.delay_us.std,
            inter_success_std: s.inter_success_us.std,
            contention_to_ack_mean: s.contention_to_ack_us.mean,
            contention_to_ack_std: s.contention_to_ack_us.std,
            drop_frac_std: s.drop_fraction.std,
            block_frac_std: s.block_fraction.std,
            avg_stage_std: s.backoff_stage.std,
            rate_bps: r.cell.rate_bps(),
            duration_s: r.cell.scenario.duration_s,
            config_hash: &s.config_hash,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct JsonCell<'a> {
    variant: String,
    ca_fraction: f64,
    scenario: &'a ScenarioConfig,
    summary: &'a RunSummary,
    reports: &'a [MetricsReport],
}

/// Full detail, per-node metrics and time series included.
pub fn write_json<W: Write>(results: &[CellResult], out: W) -> serde_json::Result<()> {
    let cells: Vec<JsonCell> = results
        .iter()
        .map(|r| JsonCell {
            variant: r.cell.variant.to_string(),
            ca_fraction: r.cell.ca_fraction,
            scenario: &r.cell.scenario,
            summary: &r.summary,
            reports: &r.reports,
        })
        .collect();
    serde_json::to_writer_pretty(out, &cells)
}

#[derive(Serialize)]
struct TraceRow {
    cell: usize,
    seed: u64,
    slot: u64,
    start_us: u64,
    duration_us: u64,
    outcome: &'static str,
    nodes: String,
    delivered: u32,
}

/// Per-slot log lines for one run.
pub fn write_trace<W: Write>(w: &mut csv::Writer<W>, cell: usize, seed: u64, log: &[SlotTrace]) -> Result<(), csv::Error> {
    for s in log {
        let (outcome, nodes, delivered) = match &s.kind {
            SlotKind::Empty => ("empty", String::new(), 0),
            SlotKind::Success { node, delivered, .. } => ("success", node.to_string(), *delivered),
            SlotKind::FailedByError { node, .. } => ("error", node.to_string(), 0),
            SlotKind::Collision { nodes, .. } => (
                "collision",
                nodes.iter().map(usize::to_string).collect::<Vec<_>>().join(" "),
                0,
            ),
        };
        w.serialize(TraceRow {
            cell,
            seed,
            slot: s.index,
            start_us: s.start_us,
            duration_us: s.duration_us,
            outcome,
            nodes,
            delivered,
        })?;
    }
    Ok(())
}

#[derive(Serialize)]
struct BoundsRow {
    n: usize,
    lower: f64,
    upper: f64,
    max_agg: f64,
    k: u32,
    c: u64,
    h: u64,
    h_clamped: bool,
    lower_h_term: f64,
    max_agg_h_term: f64,
}

pub fn write_bounds_csv<W: Write>(rows: &[BoundsResult], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(BoundsRow {
            n: r.n,
            lower: r.lower,
            upper: r.upper,
            max_agg: r.max_agg,
            k: r.k,
            c: r.c,
            h: r.h,
            h_clamped: r.h_clamped,
            lower_h_term: r.lower_h_term,
            max_agg_h_term: r.max_agg_h_term,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// PHY, MAC and payload settings of an experiment file, for the bounds.
pub fn parse_bounds_params(text: &str) -> Result<(PhyParams, BackoffParams, u64), ConfigError> {
    let m = parse_config(text)?;
    let s = &m.cells[0].scenario;
    Ok((s.phy, s.backoff, s.traffic.payload_bits))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_takes_defaults() {
        let m = parse_config("").unwrap();
        assert_eq!(m.cells.len(), 1);
        assert_eq!(m.runs, 20);
        let s = &m.cells[0].scenario;
        assert_eq!(s.phy, PhyParams::default());
        assert_eq!(s.backoff, BackoffParams::default());
        assert!(s.traffic.is_saturated());
    }

    #[test]
    fn empty_phy_section() {
        let m = parse_config("[phy]\n").unwrap();
        let phy = m.cells[0].scenario.phy;
        assert_eq!((phy.phy_rate, phy.sigma_e, phy.difs, phy.sifs), (65_000_000, 9, 28, 10));
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = parse_config("[phy]\nsigma = 9\n").unwrap_err().to_string();
        assert!(err.contains("sigma"), "{err}");
        let err = parse_config("bogus = 1\n").unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn probability_range() {
        let err = parse_config("p_e = 1.5\n").unwrap_err();
        assert!(matches!(&err, ConfigError::Probability { key, value } if key == "p_e" && *value == 1.5));
        let err = parse_config("[sweep]\np_cd = [0.1, -0.2]\n").unwrap_err();
        assert!(err.to_string().contains("sweep.p_cd[1]"), "{err}");
    }

    #[test]
    fn fraction_and_variant_errors() {
        let err = parse_config("[mac]\nca_fraction = 1.25\n").unwrap_err();
        assert!(err.to_string().contains("mac.ca_fraction"));
        let err = parse_config("[mac]\nvariant = \"eca+turbo\"\n").unwrap_err();
        assert!(err.to_string().contains("mac.variant"));
        let err = parse_config("[mac]\ncw_min = 12\n").unwrap_err();
        assert!(err.to_string().contains("mac.cw_min"), "{err}");
    }

    #[test]
    fn sweep_product() {
        let m = parse_config("[sweep]\nn_nodes = [2, 4, 8]\n").unwrap();
        assert_eq!(m.run_count(), 60);
        let m = parse_config("[sweep]\nn_nodes = [8, 16]\nca_fraction = [0.25, 0.5, 0.75]\n").unwrap();
        assert_eq!(m.cells.len(), 6);
        assert_eq!(m.cells[1].scenario.protocol_mix.len(), 2);
    }

    #[test]
    fn rate_needs_unsaturated_traffic() {
        assert!(parse_config("[sweep]\nrate_bps = [1e6]\n").is_err());
        assert!(parse_config("[traffic]\nmodel = \"poisson\"\n").is_err());
        let m = parse_config("[traffic]\nmodel = \"poisson\"\n[sweep]\nrate_bps = [1e6, 2e6]\n").unwrap();
        assert_eq!(m.cells[1].rate_bps(), Some(2e6));
    }

    #[test]
    fn mix_shapes() {
        let hys = ProtocolVariant::eca_hys_fs();
        assert_eq!(protocol_mix(hys, 0.0).len(), 1);
        assert_eq!(protocol_mix(hys, 1.0)[0].variant, ProtocolVariant::csma_ca());
        let mix = protocol_mix(hys, 0.25);
        assert_eq!((mix[0].fraction, mix[1].fraction), (0.25, 0.75));
    }
}
