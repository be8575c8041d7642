//! Experiment drivers: capacitor sizing, minimum interval, wake-up time,
//! turn-on threshold sweeps and the simulator/chain accuracy study.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::energy::{CircuitConfig, DeviceState, EnergyError};
use crate::markov::{solve_chain, Granularity, MarkovError, Pdl2Indicator};
use crate::parallel::{map_ordered, Execution};
use crate::scenario::{DlCase, Scenario, ScenarioError};
use crate::sim::{cycle_duration, cycle_phases, run_cycle, run_simulation, SimError, SimOptions, SimStats, Warmup};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CharacterizationError {
    #[error(transparent)]
    InvalidScenario(#[from] ScenarioError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Markov(#[from] MarkovError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("no capacitance up to {max_farads} F supports the cycle")]
    NoFeasibleCapacitance { max_farads: f64 },
    #[error("invalid request: {0}")]
    Invalid(String),
}

impl CharacterizationError {
    /// Whether the scenario is valid but cannot be operated.
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            CharacterizationError::Infeasible(_)
                | CharacterizationError::NoFeasibleCapacitance { .. }
                | CharacterizationError::Markov(MarkovError::Infeasible { .. })
        )
    }
}

/// Bisection settings for the sizing searches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchTolerances {
    /// Resolution of the required start voltage, volts.
    pub voltage: f64,
    /// Resolution of the capacitance search, farads.
    pub capacitance: f64,
    pub capacitance_min: f64,
    pub capacitance_max: f64,
}

impl Default for SearchTolerances {
    fn default() -> Self {
        Self {
            voltage: 1e-4,
            capacitance: 1e-5,
            capacitance_min: 1e-4,
            capacitance_max: 1.0,
        }
    }
}

/// Highest start voltage the device can accumulate: the Off asymptote,
/// capped at `E`.
fn charge_ceiling(c: &CircuitConfig) -> f64 {
    c.asymptote(DeviceState::Off).min(c.e()) - 1e-9
}

/// Lowest start voltage from which one cycle of `dl_case` completes
/// without crossing `v_min`. The interval `M` is not used.
pub fn required_cycle_voltage(
    scenario: &Scenario,
    dl_case: DlCase,
    tol: &SearchTolerances,
) -> Result<f64, CharacterizationError> {
    scenario.circuit.validate().map_err(ScenarioError::from)?;
    let schedule = scenario.schedule().map_err(ScenarioError::from)?;
    let phases = cycle_phases(&schedule, dl_case);
    let c = &scenario.circuit;
    let completes = |v: f64| run_cycle(c, &phases, v, false).completed;
    let mut lo = c.v_min();
    let mut hi = charge_ceiling(c);
    if !(hi > lo) || !completes(hi) {
        return Err(CharacterizationError::Infeasible(format!(
            "a {dl_case} cycle does not complete even from the charge ceiling {hi:.4} V"
        )));
    }
    if completes(lo) {
        return Ok(lo);
    }
    while hi - lo > tol.voltage {
        let mid = 0.5 * (lo + hi);
        if completes(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Smallest ideal capacitance for which a `dl_case` cycle is feasible.
/// Uses the radio, payloads, harvester, loads and thresholds of `base`.
pub fn min_capacitance(base: &Scenario, dl_case: DlCase, tol: &SearchTolerances) -> Result<f64, CharacterizationError> {
    let feasible = |farads: f64| -> Result<bool, CharacterizationError> {
        match required_cycle_voltage(&base.with_capacitance(farads), dl_case, tol) {
            Ok(_) => Ok(true),
            Err(CharacterizationError::Infeasible(_)) => Ok(false),
            Err(e) => Err(e),
        }
    };
    let (mut lo, mut hi) = (tol.capacitance_min, tol.capacitance_max);
    if !feasible(hi)? {
        return Err(CharacterizationError::NoFeasibleCapacitance { max_farads: hi });
    }
    if feasible(lo)? {
        return Ok(lo);
    }
    while hi - lo > tol.capacitance {
        let mid = 0.5 * (lo + hi);
        if feasible(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Shortest interval for a device that charges from `v_min` in the Off
/// state, wakes only to run one `dl_case` cycle and then turns off.
pub fn min_tx_interval(
    scenario: &Scenario,
    dl_case: DlCase,
    tol: &SearchTolerances,
) -> Result<f64, CharacterizationError> {
    let v_star = required_cycle_voltage(scenario, dl_case, tol)?;
    let c = &scenario.circuit;
    let charge = if v_star <= c.v_min() {
        0.0
    } else {
        c.time_to_voltage(DeviceState::Off, c.v_min(), v_star)?
    };
    let schedule = scenario.schedule().map_err(ScenarioError::from)?;
    Ok(charge + cycle_duration(&schedule, dl_case))
}

/// Time to charge from `v_min` to `fraction·E` in the Off state.
pub fn wakeup_time(circuit: &CircuitConfig, fraction: f64) -> Result<f64, CharacterizationError> {
    let target = fraction * circuit.e();
    let v_min = circuit.v_min();
    if (target - v_min).abs() <= 1e-12 {
        return Ok(0.0);
    }
    if !(target > v_min) {
        return Err(CharacterizationError::Invalid(format!(
            "turn-on threshold {target:.6} V is below v_min = {v_min} V"
        )));
    }
    Ok(circuit.time_to_voltage(DeviceState::Off, v_min, target)?)
}

/// A sweepable scenario parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    UlPayload,
    DlPayload,
    Threshold,
    Interval,
    Capacitance,
    HarvestPower,
    Granularity,
}

impl Axis {
    pub const ALL: [Axis; 7] = [
        Axis::UlPayload,
        Axis::DlPayload,
        Axis::Threshold,
        Axis::Interval,
        Axis::Capacitance,
        Axis::HarvestPower,
        Axis::Granularity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Axis::UlPayload => "ul_payload",
            Axis::DlPayload => "dl_payload",
            Axis::Threshold => "threshold",
            Axis::Interval => "interval",
            Axis::Capacitance => "capacitance",
            Axis::HarvestPower => "harvest_power",
            Axis::Granularity => "granularity",
        }
    }

    /// Applies `value` to a copy of the scenario and granularity.
    pub fn apply(
        self,
        scenario: &Scenario,
        g: Granularity,
        value: f64,
    ) -> Result<(Scenario, Granularity), CharacterizationError> {
        let mut s = *scenario;
        let mut g = g;
        let whole = |v: f64| -> Result<u32, CharacterizationError> {
            if v >= 0.0 && v.fract() == 0.0 && v <= f64::from(u32::MAX) {
                Ok(v as u32)
            } else {
                Err(CharacterizationError::Invalid(format!(
                    "{} needs whole numbers, got {v}",
                    self.as_str()
                )))
            }
        };
        match self {
            Axis::UlPayload => s.ul_payload = whole(value)?,
            Axis::DlPayload => s.dl_payload = whole(value)?,
            Axis::Threshold => s.circuit.thresholds.turn_on_fraction = value,
            Axis::Interval => s.interval_m = value,
            Axis::Capacitance => s.circuit.capacitor.capacitance = value,
            Axis::HarvestPower => s.circuit.harvester.harvest_power = value,
            Axis::Granularity => g = Granularity::new(whole(value)?)?,
        }
        Ok((s, g))
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Axis {
    type Err = CharacterizationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Axis::ALL
            .into_iter()
            .find(|a| a.as_str() == s.replace('-', "_"))
            .ok_or_else(|| {
                let names: Vec<_> = Axis::ALL.iter().map(|a| a.as_str()).collect();
                CharacterizationError::Invalid(format!("unknown axis {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: Scenario,
    pub granularity: Granularity,
    pub axis: Axis,
    pub values: Vec<f64>,
    pub dl_case: DlCase,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), CharacterizationError> {
        if self.values.is_empty() {
            return Err(CharacterizationError::Invalid("sweep needs at least one value".into()));
        }
        if self.values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(CharacterizationError::Invalid(format!(
                "{} values must be strictly ascending",
                self.axis
            )));
        }
        Ok(())
    }
}

/// One cell of a sizing sweep. `value` is `None` when the cell is
/// infeasible.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizingRow {
    pub x: f64,
    pub value: Option<f64>,
}

/// Sweeps `axis` and evaluates `min_capacitance` at every value.
pub fn sweep_min_capacitance(
    spec: &SweepSpec,
    tol: &SearchTolerances,
    exec: Execution,
) -> Result<Vec<SizingRow>, CharacterizationError> {
    sizing_sweep(spec, exec, |s| min_capacitance(s, spec.dl_case, tol))
}

/// Sweeps `axis` and evaluates `min_tx_interval` at every value.
pub fn sweep_min_interval(
    spec: &SweepSpec,
    tol: &SearchTolerances,
    exec: Execution,
) -> Result<Vec<SizingRow>, CharacterizationError> {
    sizing_sweep(spec, exec, |s| min_tx_interval(s, spec.dl_case, tol))
}

fn sizing_sweep<F>(spec: &SweepSpec, exec: Execution, f: F) -> Result<Vec<SizingRow>, CharacterizationError>
where
    F: Fn(&Scenario) -> Result<f64, CharacterizationError> + Sync + Send,
{
    spec.validate()?;
    map_ordered(exec, &spec.values, |&x| {
        let (s, _) = spec.axis.apply(&spec.base, spec.granularity, x)?;
        match f(&s) {
            Ok(v) => Ok(SizingRow { x, value: Some(v) }),
            Err(e) if e.is_infeasible() => Ok(SizingRow { x, value: None }),
            Err(e) => Err(e),
        }
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Simulator,
    Chain,
    Both,
}

impl Engine {
    pub fn uses_simulator(self) -> bool {
        matches!(self, Engine::Simulator | Engine::Both)
    }

    pub fn uses_chain(self) -> bool {
        matches!(self, Engine::Chain | Engine::Both)
    }
}

impl FromStr for Engine {
    type Err = CharacterizationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sim" | "simulator" => Ok(Engine::Simulator),
            "chain" | "mc" => Ok(Engine::Chain),
            "both" => Ok(Engine::Both),
            _ => Err(CharacterizationError::Invalid(format!(
                "engine must be simulator, chain or both, got {s:?}"
            ))),
        }
    }
}

/// Simulator sample settings: `n_scheduled` uplinks for each seed in
/// `1..=seeds`, averaged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSampling {
    pub seeds: u64,
    pub n_scheduled: usize,
    pub warmup: Warmup,
}

impl Default for SimSampling {
    fn default() -> Self {
        Self {
            seeds: 5,
            n_scheduled: 1000,
            warmup: Warmup::UntilFirstWake,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Delivery {
    pub pdr: f64,
    pub pdl1: f64,
    pub pdl2: f64,
}

impl From<SimStats> for Delivery {
    fn from(s: SimStats) -> Self {
        Self {
            pdr: s.pdr,
            pdl1: s.pdl1,
            pdl2: s.pdl2,
        }
    }
}

/// Seed-averaged simulator metrics.
pub fn simulate_averaged(scenario: &Scenario, sampling: &SimSampling) -> Result<Delivery, SimError> {
    if sampling.seeds == 0 {
        return Err(SimError::Invalid("at least one seed is required".into()));
    }
    let mut acc = Delivery::default();
    for seed in 1..=sampling.seeds {
        let opts = SimOptions {
            seed,
            n_scheduled: sampling.n_scheduled,
            trace: false,
            warmup: sampling.warmup,
        };
        let d = Delivery::from(run_simulation(scenario, &opts)?.stats);
        acc.pdr += d.pdr;
        acc.pdl1 += d.pdl1;
        acc.pdl2 += d.pdl2;
    }
    let n = sampling.seeds as f64;
    Ok(Delivery {
        pdr: acc.pdr / n,
        pdl1: acc.pdl1 / n,
        pdl2: acc.pdl2 / n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSweep {
    pub base: Scenario,
    pub granularity: Granularity,
    pub thresholds: Vec<f64>,
    pub intervals: Vec<f64>,
    pub engine: Engine,
    pub sampling: SimSampling,
    pub indicator: Pdl2Indicator,
}

impl ThresholdSweep {
    /// Thresholds from 0.55 to 0.98 in steps of 0.01.
    pub fn default_thresholds() -> Vec<f64> {
        (55..=98).map(|p| f64::from(p) / 100.0).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    pub interval: f64,
    pub sim: Option<Delivery>,
    pub chain: Option<Delivery>,
    /// Set when the cell's scenario is invalid or infeasible; its metrics
    /// are then reported as zero.
    pub infeasible: bool,
}

/// One row per `(threshold, M)` pair in threshold-major order.
pub fn threshold_sweep(spec: &ThresholdSweep, exec: Execution) -> Result<Vec<ThresholdRow>, CharacterizationError> {
    for (name, xs) in [("thresholds", &spec.thresholds), ("intervals", &spec.intervals)] {
        if xs.is_empty() {
            return Err(CharacterizationError::Invalid(format!("{name} must not be empty")));
        }
        if xs.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(CharacterizationError::Invalid(format!(
                "{name} must be strictly ascending"
            )));
        }
    }
    let cells: Vec<(f64, f64)> = spec
        .thresholds
        .iter()
        .flat_map(|&t| spec.intervals.iter().map(move |&m| (t, m)))
        .collect();
    Ok(map_ordered(exec, &cells, |&(threshold, interval)| {
        let s = spec.base.with_turn_on_fraction(threshold).with_interval(interval);
        let mut infeasible = false;
        let sim = spec
            .engine
            .uses_simulator()
            .then(|| match simulate_averaged(&s, &spec.sampling) {
                Ok(d) => d,
                Err(_) => {
                    infeasible = true;
                    Delivery::default()
                }
            });
        let chain = spec
            .engine
            .uses_chain()
            .then(|| match solve_chain(&s, spec.granularity, spec.indicator) {
                Ok(r) => Delivery {
                    pdr: r.pdr,
                    pdl1: r.pdl1,
                    pdl2: r.pdl2,
                },
                Err(_) => {
                    infeasible = true;
                    Delivery::default()
                }
            });
        ThresholdRow {
            threshold,
            interval,
            sim,
            chain,
            infeasible,
        }
    }))
}

/// A row of the evaluated-scenarios table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AccuracyCase {
    pub id: char,
    pub spreading_factor: u8,
    pub ul_payload: u32,
    pub harvest_power: f64,
    /// Small, medium, high and very high `M`.
    pub intervals: [f64; 4],
}

pub const PAPER_CASES: [AccuracyCase; 5] = [
    AccuracyCase {
        id: 'A',
        spreading_factor: 7,
        ul_payload: 8,
        harvest_power: 1e-3,
        intervals: [5.0, 10.0, 35.0, 40.0],
    },
    AccuracyCase {
        id: 'B',
        spreading_factor: 7,
        ul_payload: 48,
        harvest_power: 1e-3,
        intervals: [15.0, 20.0, 60.0, 65.0],
    },
    AccuracyCase {
        id: 'C',
        spreading_factor: 9,
        ul_payload: 48,
        harvest_power: 1e-2,
        intervals: [5.0, 10.0, 35.0, 40.0],
    },
    AccuracyCase {
        id: 'D',
        spreading_factor: 7,
        ul_payload: 16,
        harvest_power: 1e-3,
        intervals: [5.0, 10.0, 40.0, 45.0],
    },
    AccuracyCase {
        id: 'E',
        spreading_factor: 9,
        ul_payload: 16,
        harvest_power: 1e-3,
        intervals: [15.0, 30.0, 100.0, 250.0],
    },
];

/// Downlink probability pairs evaluated for every case.
pub const PAPER_DL_VARIANTS: [(f64, f64); 3] = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)];

impl AccuracyCase {
    pub fn by_id(id: char) -> Option<AccuracyCase> {
        PAPER_CASES.iter().copied().find(|c| c.id == id.to_ascii_uppercase())
    }

    /// 4.7 mF capacitor and a 1 B downlink on top of `base`.
    pub fn scenario(&self, base: &Scenario, m_class: MClass, p1: f64, p2: f64) -> Scenario {
        base.with_sf(self.spreading_factor)
            .with_payloads(self.ul_payload, 1)
            .with_harvest_power(self.harvest_power)
            .with_capacitance(4.7e-3)
            .with_interval(self.intervals[m_class as usize])
            .with_downlink_probabilities(p1, p2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MClass {
    Small = 0,
    Medium = 1,
    High = 2,
    VeryHigh = 3,
}

impl MClass {
    pub const ALL: [MClass; 4] = [MClass::Small, MClass::Medium, MClass::High, MClass::VeryHigh];

    pub fn as_str(self) -> &'static str {
        match self {
            MClass::Small => "small",
            MClass::Medium => "medium",
            MClass::High => "high",
            MClass::VeryHigh => "very_high",
        }
    }
}

impl fmt::Display for MClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyStudy {
    pub base: Scenario,
    pub cases: Vec<AccuracyCase>,
    pub m_classes: Vec<MClass>,
    pub dl_variants: Vec<(f64, f64)>,
    pub thresholds: Vec<f64>,
    pub granularities: Vec<Granularity>,
    pub sampling: SimSampling,
}

impl Default for AccuracyStudy {
    fn default() -> Self {
        Self {
            base: Scenario::default(),
            cases: PAPER_CASES.to_vec(),
            m_classes: MClass::ALL.to_vec(),
            dl_variants: PAPER_DL_VARIANTS.to_vec(),
            thresholds: vec![0.70, 0.84, 0.96],
            granularities: [100, 500, 750, 1000]
                .map(|g| Granularity::new(g).expect("positive"))
                .to_vec(),
            sampling: SimSampling::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyRow {
    pub case: char,
    pub m_class: MClass,
    pub interval: f64,
    pub p1: f64,
    pub p2: f64,
    pub threshold: f64,
    pub granularity: u32,
    pub pdr_sim: f64,
    pub pdr_mc: f64,
    pub abs_error: f64,
    /// Wall-clock time of the chain build and solve, seconds.
    pub chain_seconds: f64,
}

/// Simulator and chain PDR for every cell of the study. Rows are ordered
/// by case, M class, downlink variant, threshold and granularity.
pub fn accuracy_study(study: &AccuracyStudy, exec: Execution) -> Result<Vec<AccuracyRow>, CharacterizationError> {
    let mut cells = Vec::new();
    for case in &study.cases {
        for &m_class in &study.m_classes {
            for &(p1, p2) in &study.dl_variants {
                for &threshold in &study.thresholds {
                    cells.push((*case, m_class, p1, p2, threshold));
                }
            }
        }
    }
    let chunks = map_ordered(exec, &cells, |&(case, m_class, p1, p2, threshold)| {
        let s = case
            .scenario(&study.base, m_class, p1, p2)
            .with_turn_on_fraction(threshold);
        let pdr_sim = simulate_averaged(&s, &study.sampling)?.pdr;
        study
            .granularities
            .iter()
            .map(|&g| {
                let start = Instant::now();
                let pdr_mc = match solve_chain(&s, g, Pdl2Indicator::default()) {
                    Ok(r) => r.pdr,
                    Err(MarkovError::Infeasible { .. }) => 0.0,
                    Err(e) => return Err(CharacterizationError::from(e)),
                };
                Ok(AccuracyRow {
                    case: case.id,
                    m_class,
                    interval: s.interval_m,
                    p1,
                    p2,
                    threshold,
                    granularity: g.get(),
                    pdr_sim,
                    pdr_mc,
                    abs_error: (pdr_sim - pdr_mc).abs(),
                    chain_seconds: start.elapsed().as_secs_f64(),
                })
            })
            .collect::<Result<Vec<_>, CharacterizationError>>()
    });
    let mut rows = Vec::new();
    for chunk in chunks {
        rows.extend(chunk?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracySummary {
    pub threshold: f64,
    pub granularity: u32,
    pub cells: usize,
    /// Fraction of cells with `abs_error < bound`.
    pub fraction_within: f64,
    pub bound: f64,
    pub p50: f64,
    pub p90: f64,
    pub max: f64,
    pub mean_chain_seconds: f64,
}

/// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Error statistics per `(threshold, granularity)` in first-seen order.
pub fn summarize_accuracy(rows: &[AccuracyRow], bound: f64) -> Vec<AccuracySummary> {
    let mut keys: Vec<(f64, u32)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.threshold, r.granularity)) {
            keys.push((r.threshold, r.granularity));
        }
    }
    keys.into_iter()
        .map(|(threshold, granularity)| {
            let group: Vec<&AccuracyRow> = rows
                .iter()
                .filter(|r| r.threshold == threshold && r.granularity == granularity)
                .collect();
            let mut errors: Vec<f64> = group.iter().map(|r| r.abs_error).collect();
            errors.sort_by(f64::total_cmp);
            let n = errors.len();
            AccuracySummary {
                threshold,
                granularity,
                cells: n,
                fraction_within: errors.iter().filter(|&&e| e < bound).count() as f64 / n as f64,
                bound,
                p50: percentile(&errors, 0.5),
                p90: percentile(&errors, 0.9),
                max: errors.last().copied().unwrap_or(f64::NAN),
                mean_chain_seconds: group.iter().map(|r| r.chain_seconds).sum::<f64>() / n as f64,
            }
        })
        .collect()
}
