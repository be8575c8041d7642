//! TOML scenario files.
//!
//! A file may set any subset of keys; the rest come from the shipped
//! `defaults.toml`. Unknown sections or keys are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{CapacitorConfig, CircuitConfig, DeviceThresholds, Epr, HarvesterConfig, LoadTable};
use crate::markov::Granularity;
use crate::scenario::Scenario;
use crate::timing::{CodingRate, RadioConfig};

pub const DEFAULTS_TOML: &str = include_str!("../defaults.toml");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub harvester: Option<HarvesterSection>,
    pub capacitor: Option<CapacitorSection>,
    pub loads: Option<LoadsSection>,
    pub radio: Option<RadioSection>,
    pub traffic: Option<TrafficSection>,
    pub device: Option<DeviceSection>,
    pub markov: Option<MarkovSection>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarvesterSection {
    #[serde(rename = "E_volts")]
    pub e_volts: Option<f64>,
    pub power_watts: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacitorSection {
    #[serde(rename = "C_farads")]
    pub c_farads: Option<f64>,
    pub esr_ohms: Option<f64>,
    pub epr_ohms: Option<EprValue>,
}

/// A resistance in ohms or the string `"inf"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EprValue {
    Ohms(f64),
    Text(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadsSection {
    pub off: Option<f64>,
    pub sleep: Option<f64>,
    pub idle: Option<f64>,
    pub tx: Option<f64>,
    pub listen: Option<f64>,
    pub rx: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioSection {
    pub sf: Option<u8>,
    pub bw_hz: Option<f64>,
    pub coding_rate: Option<String>,
    pub n_preamble: Option<u32>,
    pub ih: Option<u8>,
    pub de: Option<u8>,
    pub tx_power_dbm: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficSection {
    pub ul_payload_bytes: Option<u32>,
    pub dl_payload_bytes: Option<u32>,
    pub interval_s: Option<f64>,
    pub p1: Option<f64>,
    pub p2: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSection {
    pub v_min: Option<f64>,
    pub turn_on_fraction: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkovSection {
    pub granularity: Option<u32>,
}

/// Keeps `over` where set, falls back to `base`.
trait Overlay {
    fn overlay(self, over: Self) -> Self;
}

impl<T: Overlay> Overlay for Option<T> {
    fn overlay(self, over: Self) -> Self {
        match (self, over) {
            (Some(b), Some(o)) => Some(b.overlay(o)),
            (b, None) => b,
            (None, o) => o,
        }
    }
}

macro_rules! overlay_fields {
    ($ty:ty { $($f:ident),* }) => {
        impl Overlay for $ty {
            fn overlay(self, over: Self) -> Self {
                Self { $($f: over.$f.or(self.$f)),* }
            }
        }
    };
}

overlay_fields!(HarvesterSection { e_volts, power_watts });
overlay_fields!(CapacitorSection {
    c_farads,
    esr_ohms,
    epr_ohms
});
overlay_fields!(LoadsSection {
    off,
    sleep,
    idle,
    tx,
    listen,
    rx
});
overlay_fields!(RadioSection {
    sf,
    bw_hz,
    coding_rate,
    n_preamble,
    ih,
    de,
    tx_power_dbm
});
overlay_fields!(TrafficSection {
    ul_payload_bytes,
    dl_payload_bytes,
    interval_s,
    p1,
    p2
});
overlay_fields!(DeviceSection {
    v_min,
    turn_on_fraction
});
overlay_fields!(MarkovSection { granularity });

impl Overlay for ScenarioFile {
    fn overlay(self, over: Self) -> Self {
        Self {
            harvester: self.harvester.overlay(over.harvester),
            capacitor: self.capacitor.overlay(over.capacitor),
            loads: self.loads.overlay(over.loads),
            radio: self.radio.overlay(over.radio),
            traffic: self.traffic.overlay(over.traffic),
            device: self.device.overlay(over.device),
            markov: self.markov.overlay(over.markov),
        }
    }
}

fn require<T>(v: Option<T>, key: &str) -> Result<T, ConfigError> {
    v.ok_or_else(|| ConfigError::Invalid(format!("missing key {key}")))
}

fn flag(v: u8, key: &str) -> Result<bool, ConfigError> {
    match v {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(ConfigError::Invalid(format!("{key} must be 0 or 1, got {v}"))),
    }
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string().trim_end().to_string()))
    }

    /// The shipped defaults with `self` layered on top.
    pub fn with_defaults(self) -> Self {
        let defaults = Self::parse(DEFAULTS_TOML).expect("shipped defaults parse");
        defaults.overlay(self)
    }

    /// Builds a scenario from a fully populated file (see `with_defaults`)
    /// and checks every invariant.
    pub fn to_scenario(&self) -> Result<(Scenario, Granularity), ConfigError> {
        let h = require(self.harvester.clone(), "[harvester]")?;
        let c = require(self.capacitor.clone(), "[capacitor]")?;
        let l = require(self.loads.clone(), "[loads]")?;
        let r = require(self.radio.clone(), "[radio]")?;
        let t = require(self.traffic.clone(), "[traffic]")?;
        let d = require(self.device.clone(), "[device]")?;
        let m = require(self.markov.clone(), "[markov]")?;
        let epr = match require(c.epr_ohms, "capacitor.epr_ohms")? {
            EprValue::Ohms(x) => Epr::Finite(x),
            EprValue::Text(s) if s.eq_ignore_ascii_case("inf") => Epr::Infinite,
            EprValue::Text(s) => {
                return Err(ConfigError::Invalid(format!(
                    "capacitor.epr_ohms must be a number or \"inf\", got {s:?}"
                )))
            }
        };
        let coding_rate: CodingRate = require(r.coding_rate, "radio.coding_rate")?
            .parse()
            .map_err(|e| ConfigError::Invalid(format!("radio.coding_rate: {e}")))?;
        let circuit = CircuitConfig {
            harvester: HarvesterConfig {
                operating_voltage: require(h.e_volts, "harvester.E_volts")?,
                harvest_power: require(h.power_watts, "harvester.power_watts")?,
            },
            capacitor: CapacitorConfig {
                capacitance: require(c.c_farads, "capacitor.C_farads")?,
                esr: require(c.esr_ohms, "capacitor.esr_ohms")?,
                epr,
            },
            loads: LoadTable {
                off: require(l.off, "loads.off")?,
                sleep: require(l.sleep, "loads.sleep")?,
                idle: require(l.idle, "loads.idle")?,
                tx: require(l.tx, "loads.tx")?,
                listen: require(l.listen, "loads.listen")?,
                rx: require(l.rx, "loads.rx")?,
            },
            thresholds: DeviceThresholds {
                v_min: require(d.v_min, "device.v_min")?,
                turn_on_fraction: require(d.turn_on_fraction, "device.turn_on_fraction")?,
            },
        };
        let radio = RadioConfig {
            spreading_factor: require(r.sf, "radio.sf")?,
            bandwidth_hz: require(r.bw_hz, "radio.bw_hz")?,
            coding_rate,
            n_preamble: require(r.n_preamble, "radio.n_preamble")?,
            implicit_header: flag(require(r.ih, "radio.ih")?, "radio.ih")?,
            low_data_rate: flag(require(r.de, "radio.de")?, "radio.de")?,
            tx_power_dbm: require(r.tx_power_dbm, "radio.tx_power_dbm")?,
        };
        let scenario = Scenario {
            circuit,
            radio,
            ul_payload: require(t.ul_payload_bytes, "traffic.ul_payload_bytes")?,
            dl_payload: require(t.dl_payload_bytes, "traffic.dl_payload_bytes")?,
            interval_m: require(t.interval_s, "traffic.interval_s")?,
            p1: require(t.p1, "traffic.p1")?,
            p2: require(t.p2, "traffic.p2")?,
        };
        let g = Granularity::new(require(m.granularity, "markov.granularity")?)
            .map_err(|e| ConfigError::Invalid(format!("markov.granularity: {e}")))?;
        scenario.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok((scenario, g))
    }

    /// A complete file describing `scenario` and `g`.
    pub fn from_scenario(scenario: &Scenario, g: Granularity) -> Self {
        let c = &scenario.circuit;
        let l = &c.loads;
        let r = &scenario.radio;
        Self {
            harvester: Some(HarvesterSection {
                e_volts: Some(c.harvester.operating_voltage),
                power_watts: Some(c.harvester.harvest_power),
            }),
            capacitor: Some(CapacitorSection {
                c_farads: Some(c.capacitor.capacitance),
                esr_ohms: Some(c.capacitor.esr),
                epr_ohms: Some(match c.capacitor.epr {
                    Epr::Infinite => EprValue::Text("inf".into()),
                    Epr::Finite(x) => EprValue::Ohms(x),
                }),
            }),
            loads: Some(LoadsSection {
                off: Some(l.off),
                sleep: Some(l.sleep),
                idle: Some(l.idle),
                tx: Some(l.tx),
                listen: Some(l.listen),
                rx: Some(l.rx),
            }),
            radio: Some(RadioSection {
                sf: Some(r.spreading_factor),
                bw_hz: Some(r.bandwidth_hz),
                coding_rate: Some(r.coding_rate.to_string()),
                n_preamble: Some(r.n_preamble),
                ih: Some(u8::from(r.implicit_header)),
                de: Some(u8::from(r.low_data_rate)),
                tx_power_dbm: Some(r.tx_power_dbm),
            }),
            traffic: Some(TrafficSection {
                ul_payload_bytes: Some(scenario.ul_payload),
                dl_payload_bytes: Some(scenario.dl_payload),
                interval_s: Some(scenario.interval_m),
                p1: Some(scenario.p1),
                p2: Some(scenario.p2),
            }),
            device: Some(DeviceSection {
                v_min: Some(c.thresholds.v_min),
                turn_on_fraction: Some(c.thresholds.turn_on_fraction),
            }),
            markov: Some(MarkovSection {
                granularity: Some(g.get()),
            }),
        }
    }
}

/// Parses scenario text layered over the defaults and validates it.
pub fn parse_scenario(text: &str) -> Result<(Scenario, Granularity), ConfigError> {
    ScenarioFile::parse(text)?.with_defaults().to_scenario()
}

pub fn load_scenario(path: &Path) -> Result<(Scenario, Granularity), ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_scenario(&text).map_err(|e| match e {
        ConfigError::Parse(m) => ConfigError::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// The effective configuration as TOML; reloading it gives back the same
/// scenario.
pub fn dump_config(scenario: &Scenario, g: Granularity) -> String {
    toml::to_string(&ScenarioFile::from_scenario(scenario, g)).expect("scenario serializes")
}
