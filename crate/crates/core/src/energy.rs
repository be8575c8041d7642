//! Closed-form electrical model of the harvester, capacitor and load.
//!
//! The harvester is a DC source `E` with series resistance `r_i = E²/P`.
//! Every device state is a resistive load `R_L`, so during one state the
//! capacitor sees a Thevenin source `E·R_eq/r_i` behind `R_eq = R_L ∥ r_i`
//! and the voltage relaxes exponentially towards that asymptote.
//!
//! A real capacitor adds an equivalent series resistance (ESR) and an
//! equivalent parallel resistance (EPR, self-discharge). With ESR = 0 and
//! an infinite EPR the parasitic formulas collapse onto the ideal ones.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Values closer than this to a state's asymptote cannot be reached.
pub const ASYMPTOTE_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnergyError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("{target} V is unreachable in state {state} (asymptote {asymptote} V)")]
    Unreachable {
        state: DeviceState,
        target: f64,
        asymptote: f64,
    },
    #[error("invalid circuit: {0}")]
    Invalid(String),
}

/// Power states of the device; each one maps to a load resistance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DeviceState {
    Off,
    Sleep,
    Idle,
    Tx,
    Listen,
    Rx,
}

impl DeviceState {
    pub const ALL: [DeviceState; 6] = [
        DeviceState::Off,
        DeviceState::Sleep,
        DeviceState::Idle,
        DeviceState::Tx,
        DeviceState::Listen,
        DeviceState::Rx,
    ];

    /// States whose load is light enough for the harvester to charge the
    /// capacitor.
    pub fn is_charging(self) -> bool {
        matches!(self, DeviceState::Off | DeviceState::Sleep | DeviceState::Idle)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DeviceState::Off => "Off",
            DeviceState::Sleep => "Sleep",
            DeviceState::Idle => "Idle",
            DeviceState::Tx => "Tx",
            DeviceState::Listen => "Listen",
            DeviceState::Rx => "Rx",
        }
    }
}

impl fmt::Display for DeviceState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarvesterConfig {
    /// Regulated source voltage `E`.
    pub operating_voltage: f64,
    /// Harvested power in watts.
    pub harvest_power: f64,
}

impl HarvesterConfig {
    pub fn new(operating_voltage: f64, harvest_power: f64) -> Result<Self, EnergyError> {
        let h = Self {
            operating_voltage,
            harvest_power,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        if !(self.operating_voltage > 0.0 && self.operating_voltage.is_finite()) {
            return Err(EnergyError::Invalid(format!(
                "operating voltage must be > 0, got {}",
                self.operating_voltage
            )));
        }
        if !(self.harvest_power > 0.0 && self.harvest_power.is_finite()) {
            return Err(EnergyError::Invalid(format!(
                "harvest power must be > 0, got {}",
                self.harvest_power
            )));
        }
        Ok(())
    }

    /// `r_i = E² / P`.
    pub fn series_resistance(&self) -> f64 {
        self.operating_voltage * self.operating_voltage / self.harvest_power
    }

    /// Source current of the equivalent Norton harvester, `I = E / r_i`.
    pub fn norton_current(&self) -> f64 {
        self.operating_voltage / self.series_resistance()
    }
}

/// Equivalent parallel resistance of a capacitor. `Infinite` is the ideal
/// capacitor and is kept distinct from any finite value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Epr {
    Infinite,
    Finite(f64),
}

impl Epr {
    fn conductance(self) -> f64 {
        match self {
            Epr::Infinite => 0.0,
            Epr::Finite(r) => 1.0 / r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacitorConfig {
    pub capacitance: f64,
    pub esr: f64,
    pub epr: Epr,
}

impl CapacitorConfig {
    pub fn ideal(capacitance: f64) -> Self {
        Self {
            capacitance,
            esr: 0.0,
            epr: Epr::Infinite,
        }
    }

    pub fn is_ideal(&self) -> bool {
        self.esr == 0.0 && self.epr == Epr::Infinite
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        if !(self.capacitance > 0.0 && self.capacitance.is_finite()) {
            return Err(EnergyError::Invalid(format!(
                "capacitance must be > 0, got {}",
                self.capacitance
            )));
        }
        if !(self.esr >= 0.0 && self.esr.is_finite()) {
            return Err(EnergyError::Invalid(format!("ESR must be >= 0, got {}", self.esr)));
        }
        if let Epr::Finite(r) = self.epr {
            if !(r > 0.0 && r.is_finite()) {
                return Err(EnergyError::Invalid(format!("EPR must be > 0, got {r}")));
            }
        }
        Ok(())
    }
}

/// Load resistance seen by the capacitor in each device state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadTable {
    pub off: f64,
    pub sleep: f64,
    pub idle: f64,
    pub tx: f64,
    pub listen: f64,
    pub rx: f64,
}

impl Default for LoadTable {
    /// SX1272/73 radio with an STM32L162 MCU, Tx at +13 dBm.
    fn default() -> Self {
        Self {
            off: 600_000.0,
            sleep: 589_286.0,
            idle: 471_428.0,
            tx: 117.811,
            listen: 313.957,
            rx: 294.354,
        }
    }
}

impl LoadTable {
    pub fn get(&self, state: DeviceState) -> f64 {
        match state {
            DeviceState::Off => self.off,
            DeviceState::Sleep => self.sleep,
            DeviceState::Idle => self.idle,
            DeviceState::Tx => self.tx,
            DeviceState::Listen => self.listen,
            DeviceState::Rx => self.rx,
        }
    }

    pub fn set(&mut self, state: DeviceState, ohms: f64) {
        match state {
            DeviceState::Off => self.off = ohms,
            DeviceState::Sleep => self.sleep = ohms,
            DeviceState::Idle => self.idle = ohms,
            DeviceState::Tx => self.tx = ohms,
            DeviceState::Listen => self.listen = ohms,
            DeviceState::Rx => self.rx = ohms,
        }
    }

    /// Supply current drawn in `state` at the operating voltage.
    pub fn supply_current(&self, state: DeviceState, operating_voltage: f64) -> f64 {
        operating_voltage / self.get(state)
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        for s in DeviceState::ALL {
            let r = self.get(s);
            if !(r > 0.0 && r.is_finite()) {
                return Err(EnergyError::Invalid(format!(
                    "load resistance for {s} must be > 0, got {r}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceThresholds {
    /// Turn-off voltage.
    pub v_min: f64,
    /// Turn-on threshold as a fraction of the operating voltage.
    pub turn_on_fraction: f64,
}

impl Default for DeviceThresholds {
    fn default() -> Self {
        Self {
            v_min: 1.8,
            turn_on_fraction: 0.7,
        }
    }
}

/// `R_L·r_i / (R_L + r_i)`.
pub fn equivalent_resistance(r_load: f64, r_i: f64) -> Result<f64, EnergyError> {
    if !(r_load > 0.0) || !(r_i > 0.0) {
        return Err(EnergyError::Domain(format!(
            "resistances must be positive (R_L = {r_load}, r_i = {r_i})"
        )));
    }
    if r_i.is_infinite() {
        return Ok(r_load);
    }
    if r_load.is_infinite() {
        return Ok(r_i);
    }
    Ok(r_load * r_i / (r_load + r_i))
}

/// `R_L = E / I_load`.
pub fn load_resistance(operating_voltage: f64, i_load: f64) -> Result<f64, EnergyError> {
    if !(operating_voltage > 0.0) {
        return Err(EnergyError::Domain(format!(
            "operating voltage must be positive, got {operating_voltage}"
        )));
    }
    if !(i_load > 0.0) {
        return Err(EnergyError::Domain(format!(
            "load current must be positive, got {i_load}"
        )));
    }
    Ok(operating_voltage / i_load)
}

/// Harvester, storage capacitor, load table and power thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircuitConfig {
    pub harvester: HarvesterConfig,
    pub capacitor: CapacitorConfig,
    pub loads: LoadTable,
    pub thresholds: DeviceThresholds,
}

impl Default for CircuitConfig {
    fn default() -> Self {
        Self {
            harvester: HarvesterConfig {
                operating_voltage: 3.3,
                harvest_power: 1e-3,
            },
            capacitor: CapacitorConfig::ideal(4.7e-3),
            loads: LoadTable::default(),
            thresholds: DeviceThresholds::default(),
        }
    }
}

/// Per-state constants derived once from the circuit.
#[derive(Debug, Clone, Copy)]
struct Branch {
    r_eq: f64,
    /// `E·R_eq/r_i`, the open-circuit voltage seen by the capacitor.
    thevenin: f64,
}

impl CircuitConfig {
    pub fn e(&self) -> f64 {
        self.harvester.operating_voltage
    }

    pub fn v_min(&self) -> f64 {
        self.thresholds.v_min
    }

    /// Turn-on threshold in volts.
    pub fn v_sl(&self) -> f64 {
        self.thresholds.turn_on_fraction * self.e()
    }

    fn branch(&self, state: DeviceState) -> Branch {
        let r_i = self.harvester.series_resistance();
        let r_l = self.loads.get(state);
        let r_eq = r_l * r_i / (r_l + r_i);
        Branch {
            r_eq,
            thevenin: self.e() * r_eq / r_i,
        }
    }

    /// Equivalent resistance of the harvester and the load of `state`.
    pub fn r_eq(&self, state: DeviceState) -> f64 {
        self.branch(state).r_eq
    }

    /// Load voltage reached as `t → ∞` in `state`.
    pub fn asymptote(&self, state: DeviceState) -> f64 {
        let b = self.branch(state);
        let cap = &self.capacitor;
        match cap.epr {
            Epr::Infinite => b.thevenin,
            Epr::Finite(epr) => b.thevenin * (cap.esr + epr) / (cap.esr + epr + b.r_eq),
        }
    }

    /// Voltage across the load after `t` seconds in `state`, starting from
    /// capacitor voltage `v0`.
    pub fn voltage_after(&self, state: DeviceState, v0: f64, t: f64) -> Result<f64, EnergyError> {
        check_time(t)?;
        check_voltage(v0)?;
        Ok(if self.capacitor.is_ideal() {
            self.ideal_voltage(state, v0, t)
        } else {
            self.parasitic_voltage(state, v0, t)
        })
    }

    /// Ideal-capacitor voltage-source closed form.
    pub fn ideal_voltage(&self, state: DeviceState, v0: f64, t: f64) -> f64 {
        let b = self.branch(state);
        let decay = (-t / (b.r_eq * self.capacitor.capacitance)).exp();
        b.thevenin * (1.0 - decay) + v0 * decay
    }

    /// Same circuit driven by the Norton current source `I = E/r_i` with
    /// `r_i` in parallel.
    pub fn current_source_voltage(&self, state: DeviceState, v0: f64, t: f64) -> f64 {
        let b = self.branch(state);
        let current = self.harvester.norton_current();
        let decay = (-t / (b.r_eq * self.capacitor.capacitance)).exp();
        current * b.r_eq * (1.0 - decay) + v0 * decay
    }

    /// Closed form including ESR and EPR. Valid for the ideal capacitor as
    /// well; `voltage_after` only routes here for non-ideal capacitors.
    pub fn parasitic_voltage(&self, state: DeviceState, v0: f64, t: f64) -> f64 {
        let b = self.branch(state);
        let cap = &self.capacitor;
        let esr = cap.esr;
        let rate = cap.epr.conductance() + 1.0 / (esr + b.r_eq);
        let decay = (-rate * t / cap.capacitance).exp();
        let series_share = b.r_eq / (esr + b.r_eq);
        let settled = match cap.epr {
            Epr::Infinite => b.thevenin,
            Epr::Finite(epr) => b.thevenin * (esr + epr) / (esr + epr + b.r_eq),
        };
        b.thevenin * esr / (esr + b.r_eq) * decay + v0 * series_share * decay + settled * (1.0 - decay)
    }

    /// Voltage of the ideal capacitor element itself (behind the ESR) after
    /// `t` seconds. Equals `voltage_after` for an ideal capacitor.
    pub fn capacitor_voltage_after(&self, state: DeviceState, vc0: f64, t: f64) -> f64 {
        if self.capacitor.is_ideal() {
            return self.ideal_voltage(state, vc0, t);
        }
        let b = self.branch(state);
        let cap = &self.capacitor;
        let rate = cap.epr.conductance() + 1.0 / (cap.esr + b.r_eq);
        let decay = (-rate * t / cap.capacitance).exp();
        let settled = match cap.epr {
            Epr::Infinite => b.thevenin,
            Epr::Finite(epr) => b.thevenin * epr / (epr + cap.esr + b.r_eq),
        };
        settled + (vc0 - settled) * decay
    }

    /// Load voltage for a given capacitor voltage while in `state`.
    pub fn load_voltage(&self, state: DeviceState, vc: f64) -> f64 {
        if self.capacitor.is_ideal() {
            return vc;
        }
        let b = self.branch(state);
        let esr = self.capacitor.esr;
        (b.thevenin * esr + b.r_eq * vc) / (esr + b.r_eq)
    }

    /// Time for the load voltage to go from its value at `t = 0` (capacitor
    /// voltage `v_i`) to `v_f` while in `state`.
    pub fn time_to_voltage(&self, state: DeviceState, v_i: f64, v_f: f64) -> Result<f64, EnergyError> {
        check_voltage(v_i)?;
        if !v_f.is_finite() {
            return Err(EnergyError::Domain(format!("target voltage must be finite, got {v_f}")));
        }
        if self.capacitor.is_ideal() {
            self.ideal_time_to_voltage(state, v_i, v_f)
        } else {
            self.parasitic_time_to_voltage(state, v_i, v_f)
        }
    }

    fn unreachable(&self, state: DeviceState, target: f64) -> EnergyError {
        EnergyError::Unreachable {
            state,
            target,
            asymptote: self.asymptote(state),
        }
    }

    fn ideal_time_to_voltage(&self, state: DeviceState, v_i: f64, v_f: f64) -> Result<f64, EnergyError> {
        if v_f == v_i {
            return Ok(0.0);
        }
        let b = self.branch(state);
        let gap_f = v_f - b.thevenin;
        if gap_f.abs() <= ASYMPTOTE_GUARD {
            return Err(self.unreachable(state, v_f));
        }
        let ratio = gap_f / (v_i - b.thevenin);
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(self.unreachable(state, v_f));
        }
        Ok(-b.r_eq * self.capacitor.capacitance * ratio.ln())
    }

    fn parasitic_time_to_voltage(&self, state: DeviceState, v_i: f64, v_f: f64) -> Result<f64, EnergyError> {
        let start = self.parasitic_voltage(state, v_i, 0.0);
        if v_f == start {
            return Ok(0.0);
        }
        let end = self.asymptote(state);
        if (v_f - end).abs() <= ASYMPTOTE_GUARD {
            return Err(self.unreachable(state, v_f));
        }
        let rising = end > start;
        let inside = if rising {
            v_f > start && v_f < end
        } else {
            v_f < start && v_f > end
        };
        if !inside {
            return Err(self.unreachable(state, v_f));
        }
        // The load voltage is a single exponential, so a doubling search
        // brackets the crossing and bisection converges monotonically.
        let past = |t: f64| {
            let v = self.parasitic_voltage(state, v_i, t);
            if rising {
                v >= v_f
            } else {
                v <= v_f
            }
        };
        let b = self.branch(state);
        let mut hi = b.r_eq.min(1.0) * self.capacitor.capacitance;
        while !past(hi) {
            hi *= 2.0;
            if !hi.is_finite() {
                return Err(self.unreachable(state, v_f));
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if past(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        self.harvester.validate()?;
        self.capacitor.validate()?;
        self.loads.validate()?;
        let v_min = self.v_min();
        let v_sl = self.v_sl();
        let e = self.e();
        if !(v_min > 0.0 && v_min < v_sl && v_sl < e) {
            return Err(EnergyError::Invalid(format!(
                "thresholds must satisfy 0 < v_min < v_sl < E (v_min = {v_min}, v_sl = {v_sl}, E = {e})"
            )));
        }
        self.check_monotonicity()
    }

    /// The charging states must be able to lift the voltage above `v_min`.
    /// A radio state whose asymptote lies above `v_min` (very strong
    /// harvesters) is accepted: it simply never aborts from above.
    pub fn check_monotonicity(&self) -> Result<(), EnergyError> {
        let v_min = self.v_min();
        for state in DeviceState::ALL {
            let a = self.asymptote(state);
            if state.is_charging() && a <= v_min {
                return Err(EnergyError::Invalid(format!(
                    "{state} must charge the capacitor but its asymptote {a:.6} V is not above v_min = {v_min} V"
                )));
            }
            if !state.is_charging() && a >= v_min {
                log::debug!("{state} asymptote {a:.6} V is above v_min; the state cannot abort below it");
            }
        }
        Ok(())
    }
}

fn check_time(t: f64) -> Result<(), EnergyError> {
    if t.is_nan() || t < 0.0 {
        return Err(EnergyError::Domain(format!("time must be >= 0, got {t}")));
    }
    Ok(())
}

fn check_voltage(v: f64) -> Result<(), EnergyError> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(EnergyError::Domain(format!("initial voltage must be >= 0, got {v}")));
    }
    Ok(())
}
