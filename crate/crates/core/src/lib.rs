//! Models of a capacitor-powered LoRaWAN Class A end device: the harvester
//! and capacitor circuit, LoRa airtime, an event-based simulator, a
//! discrete-voltage Markov chain and the experiment drivers built on them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod characterization;
pub mod config;
pub mod energy;
pub mod format;
pub mod markov;
pub mod parallel;
pub mod scenario;
pub mod sim;
pub mod timing;

pub use energy::{
    CapacitorConfig, CircuitConfig, DeviceState, DeviceThresholds, EnergyError, Epr, HarvesterConfig, LoadTable,
};
pub use markov::{solve_chain, ChainResult, Granularity, MarkovError, Pdl2Indicator};
pub use parallel::Execution;
pub use scenario::{DlCase, Scenario, ScenarioError};
pub use sim::{run_simulation, single_cycle_trace, SimError, SimOptions, SimStats, TracePoint, Warmup};
pub use timing::{class_a_schedule, time_on_air, CodingRate, RadioConfig, TimingError, TimingSchedule};
