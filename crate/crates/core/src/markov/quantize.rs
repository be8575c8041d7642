use serde::Serialize;

use crate::energy::{CircuitConfig, DeviceState, EnergyError};
use crate::scenario::Scenario;

use super::MarkovError;

/// Voltage levels per volt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Granularity(u32);

impl Granularity {
    pub fn new(levels_per_volt: u32) -> Result<Self, MarkovError> {
        if levels_per_volt == 0 {
            return Err(MarkovError::Invalid("granularity must be at least 1".into()));
        }
        Ok(Self(levels_per_volt))
    }

    pub fn get(self) -> u32 {
        self.0
    }

    /// Nearest level to `v`, never negative.
    pub fn level(self, v: f64) -> u32 {
        (v * f64::from(self.0) + 0.5).floor().max(0.0) as u32
    }

    pub fn volts(self, level: u32) -> f64 {
        f64::from(level) / f64::from(self.0)
    }
}

impl Default for Granularity {
    fn default() -> Self {
        Self(750)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ThresholdLevels {
    pub v_min: u32,
    pub v_sl: u32,
    /// Lowest level from which an uplink ends at or above `v_min + 1`.
    pub v_tx: u32,
    /// Lowest level from which an RX1 reception ends at or above
    /// `v_min + 1`; `v_max + 1` if there is none.
    pub v_rx1: u32,
    /// As `v_rx1` for the SF12 reception in RX2.
    pub v_rx2: u32,
    pub v_max: u32,
}

/// `V̂(state, v̂0, t)`: the quantized voltage after `t` seconds, clamped to
/// `[0, level(E)]`.
pub fn discrete_voltage_after(
    circuit: &CircuitConfig,
    state: DeviceState,
    v0: u32,
    t: f64,
    g: Granularity,
) -> Result<u32, EnergyError> {
    let v = circuit.voltage_after(state, g.volts(v0), t)?;
    Ok(g.level(v).min(g.level(circuit.e())))
}

/// `t(state, v̂_i, v̂_f)` on de-quantized arguments.
pub fn discrete_time_to_level(
    circuit: &CircuitConfig,
    state: DeviceState,
    v_i: u32,
    v_f: u32,
    g: Granularity,
) -> Result<f64, EnergyError> {
    circuit.time_to_voltage(state, g.volts(v_i), g.volts(v_f))
}

/// Smallest level `l` in `lo..=hi` with `V̂(state, l, t) ≥ target`, or
/// `hi + 1`. `V̂` is non-decreasing in the start level.
pub(crate) fn min_level(
    circuit: &CircuitConfig,
    state: DeviceState,
    t: f64,
    target: u32,
    lo: u32,
    hi: u32,
    g: Granularity,
) -> u32 {
    let ok = |l: u32| discrete_voltage_after(circuit, state, l, t, g).is_ok_and(|v| v >= target);
    let (mut a, mut b) = (lo, hi + 1);
    while a < b {
        let mid = a + (b - a) / 2;
        if ok(mid) {
            b = mid;
        } else {
            a = mid + 1;
        }
    }
    a
}

pub fn threshold_levels(scenario: &Scenario, g: Granularity) -> Result<ThresholdLevels, MarkovError> {
    let schedule = scenario.validate()?;
    let c = &scenario.circuit;
    let v_min = g.level(c.v_min());
    let v_sl = g.level(c.v_sl());
    let v_max = g.level(c.e());
    if !(v_min < v_sl && v_sl <= v_max) {
        return Err(MarkovError::Invalid(format!(
            "granularity {} collapses the thresholds (v̂_min = {v_min}, v̂_sl = {v_sl}, v̂_max = {v_max})",
            g.get()
        )));
    }
    let find = |state, t| min_level(c, state, t, v_min + 1, v_min, v_max, g);
    let v_tx = find(DeviceState::Tx, schedule.t_tx);
    if v_tx > v_max {
        return Err(MarkovError::Infeasible { needed: v_tx, v_max });
    }
    Ok(ThresholdLevels {
        v_min,
        v_sl,
        v_tx,
        v_rx1: find(DeviceState::Rx, schedule.t_rx1),
        v_rx2: find(DeviceState::Rx, schedule.t_rx2),
        v_max,
    })
}
