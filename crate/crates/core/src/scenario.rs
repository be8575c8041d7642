use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{CircuitConfig, EnergyError};
use crate::timing::{class_a_schedule, RadioConfig, TimingError, TimingSchedule};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Circuit(#[from] EnergyError),
    #[error(transparent)]
    Timing(#[from] TimingError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// Which downlink, if any, a deterministic cycle receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DlCase {
    /// Both windows are listened to and nothing arrives.
    #[default]
    None,
    /// A downlink is received in RX1.
    Rx1,
    /// RX1 is empty and a downlink is received in RX2.
    Rx2,
}

impl DlCase {
    pub const ALL: [DlCase; 3] = [DlCase::None, DlCase::Rx1, DlCase::Rx2];

    pub fn as_str(self) -> &'static str {
        match self {
            DlCase::None => "none",
            DlCase::Rx1 => "rx1",
            DlCase::Rx2 => "rx2",
        }
    }
}

impl fmt::Display for DlCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DlCase {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(DlCase::None),
            "rx1" => Ok(DlCase::Rx1),
            "rx2" => Ok(DlCase::Rx2),
            other => Err(ScenarioError::Invalid(format!(
                "downlink case must be none, rx1 or rx2, got {other:?}"
            ))),
        }
    }
}

/// Everything needed to run the simulator or build the chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub circuit: CircuitConfig,
    pub radio: RadioConfig,
    pub ul_payload: u32,
    pub dl_payload: u32,
    /// Interval `M` between scheduled uplinks, seconds.
    pub interval_m: f64,
    /// Probability that a downlink is detected in RX1.
    pub p1: f64,
    /// Probability that a downlink is detected in RX2, given none in RX1.
    pub p2: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            circuit: CircuitConfig::default(),
            radio: RadioConfig::default(),
            ul_payload: 16,
            dl_payload: 1,
            interval_m: 60.0,
            p1: 0.0,
            p2: 0.0,
        }
    }
}

impl Scenario {
    pub fn schedule(&self) -> Result<TimingSchedule, TimingError> {
        class_a_schedule(&self.radio, self.ul_payload, self.dl_payload)
    }

    /// Checks every component invariant, the interval bound and the
    /// downlink probabilities.
    pub fn validate(&self) -> Result<TimingSchedule, ScenarioError> {
        self.circuit.validate()?;
        let schedule = self.schedule()?;
        for (name, p) in [("p1", self.p1), ("p2", self.p2)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ScenarioError::Invalid(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        let bound = schedule.min_interval_bound();
        if !(self.interval_m > bound && self.interval_m.is_finite()) {
            return Err(ScenarioError::Invalid(format!(
                "transmission interval {} s must exceed the Class A cycle bound {bound:.6} s",
                self.interval_m
            )));
        }
        Ok(schedule)
    }

    pub fn with_interval(mut self, interval_m: f64) -> Self {
        self.interval_m = interval_m;
        self
    }

    pub fn with_turn_on_fraction(mut self, fraction: f64) -> Self {
        self.circuit.thresholds.turn_on_fraction = fraction;
        self
    }

    pub fn with_capacitance(mut self, farads: f64) -> Self {
        self.circuit.capacitor.capacitance = farads;
        self
    }

    pub fn with_harvest_power(mut self, watts: f64) -> Self {
        self.circuit.harvester.harvest_power = watts;
        self
    }

    pub fn with_downlink_probabilities(mut self, p1: f64, p2: f64) -> Self {
        self.p1 = p1;
        self.p2 = p2;
        self
    }

    pub fn with_payloads(mut self, ul: u32, dl: u32) -> Self {
        self.ul_payload = ul;
        self.dl_payload = dl;
        self
    }

    pub fn with_sf(mut self, sf: u8) -> Self {
        self.radio.spreading_factor = sf;
        self
    }
}
