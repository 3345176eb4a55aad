//! Slot-level simulator of WLAN contention under CSMA/CA and CSMA/ECA,
//! together with closed-form throughput bounds for the collision-free
//! schedules CSMA/ECA converges to.

pub mod bounds;
pub mod channel;
pub mod engine;
pub mod experiment;
pub mod mac;
pub mod metrics;
pub mod probability;
pub mod replicate;
pub mod traffic;

pub use channel::{tx_duration, PhyParams};
pub use engine::{run, ScenarioConfig};
pub use mac::{BackoffParams, ProtocolVariant};
pub use metrics::MetricsReport;
pub use probability::Probability;
