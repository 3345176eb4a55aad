use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaseProtocol {
    CsmaCa,
    CsmaEca,
}

/// How many MPDUs a node packs into one A-MPDU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Aggregation {
    None,
    /// `2^k` packets at backoff stage `k`.
    FairShare,
    /// `2^m` packets regardless of stage.
    MaxAg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScheduleResetMode {
    Off,
    /// Threshold `ceil(C / B_d)` successes, `C` the largest deterministic backoff.
    Conservative,
    /// Threshold of a single cycle.
    Aggressive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ResetScope {
    /// Test every smaller stage, smallest first.
    FullReset,
    /// Test only the stage directly below the current one.
    Halving,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VariantError {
    #[error("{0} requires the CSMA/ECA base protocol")]
    RequiresEca(&'static str),
    #[error("schedule reset requires hysteresis")]
    ResetWithoutHysteresis,
    #[error("unknown protocol token `{0}`")]
    UnknownToken(String),
    #[error("protocol string must start with `ca` or `eca`, got `{0}`")]
    MissingBase(String),
}

/// One point in the protocol family: the base access scheme plus the
/// extensions layered on top of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProtocolVariant {
    pub base: BaseProtocol,
    pub hysteresis: bool,
    pub aggregation: Aggregation,
    pub schedule_reset: ScheduleResetMode,
    pub reset_scope: ResetScope,
    pub dynamic_stickiness: bool,
}

impl ProtocolVariant {
    pub const fn csma_ca() -> Self {
        Self {
            base: BaseProtocol::CsmaCa,
            hysteresis: false,
            aggregation: Aggregation::None,
            schedule_reset: ScheduleResetMode::Off,
            reset_scope: ResetScope::FullReset,
            dynamic_stickiness: false,
        }
    }

    pub const fn csma_eca() -> Self {
        Self {
            base: BaseProtocol::CsmaEca,
            ..Self::csma_ca()
        }
    }

    pub const fn eca_hys() -> Self {
        Self {
            hysteresis: true,
            ..Self::csma_eca()
        }
    }

    pub const fn eca_hys_fs() -> Self {
        Self {
            aggregation: Aggregation::FairShare,
            ..Self::eca_hys()
        }
    }

    pub const fn eca_hys_maxag() -> Self {
        Self {
            aggregation: Aggregation::MaxAg,
            ..Self::eca_hys()
        }
    }

    pub const fn with_schedule_reset(self, mode: ScheduleResetMode, scope: ResetScope) -> Self {
        Self {
            schedule_reset: mode,
            reset_scope: scope,
            ..self
        }
    }

    pub const fn with_dynamic_stickiness(self) -> Self {
        Self {
            dynamic_stickiness: true,
            ..self
        }
    }

    pub fn is_eca(&self) -> bool {
        self.base == BaseProtocol::CsmaEca
    }

    pub fn validate(&self) -> Result<(), VariantError> {
        if !self.is_eca() {
            if self.hysteresis {
                return Err(VariantError::RequiresEca("hysteresis"));
            }
            if self.aggregation != Aggregation::None {
                return Err(VariantError::RequiresEca("aggregation"));
            }
            if self.schedule_reset != ScheduleResetMode::Off {
                return Err(VariantError::RequiresEca("schedule reset"));
            }
        }
        if self.schedule_reset != ScheduleResetMode::Off && !self.hysteresis {
            return Err(VariantError::ResetWithoutHysteresis);
        }
        Ok(())
    }
}

/// Compact `+`-separated form, e.g. `eca+hys+fs+sr-aggr+halv+dynstick`.
impl fmt::Display for ProtocolVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<&str> = vec![match self.base {
            BaseProtocol::CsmaCa => "ca",
            BaseProtocol::CsmaEca => "eca",
        }];
        if self.hysteresis {
            parts.push("hys");
        }
        match self.aggregation {
            Aggregation::None => {}
            Aggregation::FairShare => parts.push("fs"),
            Aggregation::MaxAg => parts.push("maxag"),
        }
        match self.schedule_reset {
            ScheduleResetMode::Off => {}
            ScheduleResetMode::Conservative => parts.push("sr"),
            ScheduleResetMode::Aggressive => parts.push("sr-aggr"),
        }
        if self.schedule_reset != ScheduleResetMode::Off && self.reset_scope == ResetScope::Halving {
            parts.push("halv");
        }
        if self.dynamic_stickiness {
            parts.push("dynstick");
        }
        f.write_str(&parts.join("+"))
    }
}

impl FromStr for ProtocolVariant {
    type Err = VariantError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lowered = s.trim().to_ascii_lowercase();
        let mut tokens = lowered.split('+').map(str::trim);
        let mut variant = match tokens.next() {
            Some("ca") | Some("csma-ca") | Some("dcf") => Self::csma_ca(),
            Some("eca") | Some("csma-eca") => Self::csma_eca(),
            _ => return Err(VariantError::MissingBase(s.to_string())),
        };
        for token in tokens {
            match token {
                "hys" => variant.hysteresis = true,
                "fs" => variant.aggregation = Aggregation::FairShare,
                "maxag" => variant.aggregation = Aggregation::MaxAg,
                "sr" | "sr-cons" => variant.schedule_reset = ScheduleResetMode::Conservative,
                "sr-aggr" => variant.schedule_reset = ScheduleResetMode::Aggressive,
                "halv" => variant.reset_scope = ResetScope::Halving,
                "dynstick" => variant.dynamic_stickiness = true,
                other => return Err(VariantError::UnknownToken(other.to_string())),
            }
        }
        variant.validate()?;
        Ok(variant)
    }
}
