//! Discrete-time, discrete-voltage Markov chain of the device.
//!
//! The chain is observed at uplink epochs `0, M, 2M, …`. A state pairs the
//! system state (off, awake without enough energy for an uplink, awake with
//! enough) with a quantized capacitor voltage. Intra-cycle durations stay
//! continuous; only voltages are rounded to levels.

mod matrix;
mod metrics;
mod quantize;
mod stationary;

use std::fmt;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::energy::EnergyError;
use crate::scenario::{Scenario, ScenarioError};

pub use matrix::{build_transition_matrix, build_transition_matrix_full, TransitionMatrix, COO_HEADER};
pub use metrics::{chain_metrics, ChainMetrics, Pdl2Indicator};
pub use quantize::{discrete_time_to_level, discrete_voltage_after, threshold_levels, Granularity, ThresholdLevels};
pub use stationary::{recurrent_states, stationary_distribution, SolverOptions, Stationary};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarkovError {
    #[error(transparent)]
    InvalidScenario(#[from] ScenarioError),
    #[error("infeasible scenario: an uplink needs level {needed} but the maximum level is {v_max}")]
    Infeasible { needed: u32, v_max: u32 },
    #[error("stationary solver did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("invalid chain input: {0}")]
    Invalid(String),
}

impl From<EnergyError> for MarkovError {
    fn from(e: EnergyError) -> Self {
        MarkovError::InvalidScenario(ScenarioError::Circuit(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum StateKind {
    Off,
    Sl0,
    Sl1,
}

impl StateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StateKind::Off => "OFF",
            StateKind::Sl0 => "SL0",
            StateKind::Sl1 => "SL1",
        }
    }
}

impl fmt::Display for StateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct ChainState {
    pub kind: StateKind,
    pub level: u32,
}

impl ChainState {
    pub fn new(kind: StateKind, level: u32) -> Self {
        Self { kind, level }
    }
}

impl fmt::Display for ChainState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.kind, self.level)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainResult {
    pub levels: ThresholdLevels,
    pub states: Vec<ChainState>,
    pub pi: Vec<f64>,
    pub pdr: f64,
    pub pdl1: f64,
    pub pdl2: f64,
    pub iterations: usize,
    pub residual: f64,
    pub elapsed: Duration,
}

/// Builds the chain reachable from `(OFF, v̂_min)`, solves it and evaluates
/// the metrics.
pub fn solve_chain(scenario: &Scenario, g: Granularity, indicator: Pdl2Indicator) -> Result<ChainResult, MarkovError> {
    let start = Instant::now();
    let matrix = build_transition_matrix(scenario, g)?;
    let levels = matrix.levels;
    let initial = ChainState::new(StateKind::Off, levels.v_min);
    let st = stationary_distribution(&matrix, initial, &SolverOptions::default())?;
    let m = chain_metrics(&matrix.states, &st.pi, &levels, scenario, g, indicator)?;
    Ok(ChainResult {
        levels,
        states: matrix.states,
        pi: st.pi,
        pdr: m.pdr,
        pdl1: m.pdl1,
        pdl2: m.pdl2,
        iterations: st.iterations,
        residual: st.residual,
        elapsed: start.elapsed(),
    })
}
