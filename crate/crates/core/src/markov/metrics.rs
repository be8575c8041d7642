use crate::energy::DeviceState;
use crate::scenario::{Scenario, ScenarioError};

use super::quantize::{discrete_voltage_after, Granularity, ThresholdLevels};
use super::{ChainState, MarkovError, StateKind};

/// Indicator used in the RX2 reception sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pdl2Indicator {
    /// `V̂2_l ≥ v̂_min`, as the metric is printed.
    #[default]
    AboveMin,
    /// `V̂2_l ≥ v̂_rx2`, requiring enough energy for the whole reception.
    AboveRx2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainMetrics {
    pub pdr: f64,
    pub pdl1: f64,
    pub pdl2: f64,
}

/// Uplink delivery ratio and per-uplink downlink reception probabilities
/// from a stationary vector.
///
/// `V̂1_l` is the level after the uplink and the first idle period;
/// `V̂2_l` continues through the RX1 preamble watch and the second idle.
pub fn chain_metrics(
    states: &[ChainState],
    pi: &[f64],
    levels: &ThresholdLevels,
    scenario: &Scenario,
    g: Granularity,
    indicator: Pdl2Indicator,
) -> Result<ChainMetrics, MarkovError> {
    if states.len() != pi.len() {
        return Err(MarkovError::Invalid(format!(
            "{} states but {} probabilities",
            states.len(),
            pi.len()
        )));
    }
    let s = scenario.schedule().map_err(ScenarioError::from)?;
    let c = &scenario.circuit;
    let v = |state, l, t| discrete_voltage_after(c, state, l, t, g);
    let (p1, p2) = (scenario.p1, scenario.p2);
    let rx2_floor = match indicator {
        Pdl2Indicator::AboveMin => levels.v_min,
        Pdl2Indicator::AboveRx2 => levels.v_rx2,
    };
    let mut not_sent = 0.0;
    let mut pdl1 = 0.0;
    let mut pdl2 = 0.0;
    for (st, &p) in states.iter().zip(pi) {
        match st.kind {
            StateKind::Off | StateKind::Sl0 => not_sent += p,
            StateKind::Sl1 => {
                if p == 0.0 {
                    continue;
                }
                let v1 = v(DeviceState::Idle, v(DeviceState::Tx, st.level, s.t_tx)?, s.t_id1)?;
                if p1 > 0.0 && v1 >= levels.v_rx1 {
                    pdl1 += p1 * p;
                }
                if (1.0 - p1) * p2 > 0.0 {
                    let v2 = v(DeviceState::Idle, v(DeviceState::Listen, v1, s.t_l1)?, s.t_id2)?;
                    if v2 >= rx2_floor {
                        pdl2 += (1.0 - p1) * p2 * p;
                    }
                }
            }
        }
    }
    Ok(ChainMetrics {
        pdr: 1.0 - not_sent,
        pdl1,
        pdl2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::threshold_levels;

    #[test]
    fn no_downlinks_no_receptions() {
        let s = Scenario::default();
        let g = Granularity::new(100).unwrap();
        let t = threshold_levels(&s, g).unwrap();
        let states = [ChainState::new(StateKind::Sl1, t.v_max - 1)];
        let m = chain_metrics(&states, &[1.0], &t, &s, g, Pdl2Indicator::AboveMin).unwrap();
        assert_eq!((m.pdr, m.pdl1, m.pdl2), (1.0, 0.0, 0.0));
    }

    #[test]
    fn full_mass_high_in_sl1_receives_rx1() {
        let s = Scenario::default().with_downlink_probabilities(1.0, 0.0);
        let g = Granularity::new(750).unwrap();
        let t = threshold_levels(&s, g).unwrap();
        let states = [ChainState::new(StateKind::Sl1, t.v_max - 1)];
        let m = chain_metrics(&states, &[1.0], &t, &s, g, Pdl2Indicator::AboveMin).unwrap();
        assert_eq!((m.pdr, m.pdl1), (1.0, 1.0));
    }

    #[test]
    fn off_mass_is_lost() {
        let s = Scenario::default();
        let g = Granularity::new(100).unwrap();
        let t = threshold_levels(&s, g).unwrap();
        let states = [
            ChainState::new(StateKind::Off, t.v_min),
            ChainState::new(StateKind::Sl1, t.v_tx),
        ];
        let m = chain_metrics(&states, &[0.25, 0.75], &t, &s, g, Pdl2Indicator::AboveMin).unwrap();
        assert!((m.pdr - 0.75).abs() < 1e-15);
    }
}
