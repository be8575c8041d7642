//! Event-based simulator of a capacitor-powered Class A end device.
//!
//! Uplinks are scheduled every `M` seconds. Between events the device either
//! charges while off (turning on at `v_sl`) or sleeps. An uplink is lost if
//! the device is off, and any phase whose load voltage would cross `v_min`
//! is cut at the crossing instant, located in closed form. Downlink
//! detection in each window is a Bernoulli draw from a ChaCha8 stream seeded
//! per run: one draw at RX1, and one at RX2 only when RX1 was empty.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::energy::{CircuitConfig, DeviceState};
use crate::format::{fmt_time, fmt_voltage};
use crate::scenario::{DlCase, Scenario, ScenarioError};
use crate::timing::TimingSchedule;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    InvalidScenario(#[from] ScenarioError),
    #[error("invalid simulation request: {0}")]
    Invalid(String),
}

/// What happens to uplinks scheduled before the device first turns on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Warmup {
    /// Count every scheduled uplink from `t = 0`.
    None,
    /// Skip uplinks scheduled before the initial charge from `v_min` reaches
    /// the turn-on threshold. Has no effect if that threshold is unreachable.
    #[default]
    UntilFirstWake,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub seed: u64,
    pub n_scheduled: usize,
    pub trace: bool,
    pub warmup: Warmup,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            seed: 1,
            n_scheduled: 1000,
            trace: false,
            warmup: Warmup::UntilFirstWake,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct SimStats {
    pub n_scheduled: u64,
    pub n_tx_success: u64,
    pub n_tx_lost_off: u64,
    pub n_tx_aborted: u64,
    pub n_dl1_success: u64,
    pub n_dl1_aborted: u64,
    pub n_dl2_success: u64,
    pub n_dl2_aborted: u64,
    /// Uplinks skipped during the initial charge; not part of `n_scheduled`.
    pub n_warmup: u64,
    pub pdr: f64,
    pub pdl1: f64,
    pub pdl2: f64,
}

impl SimStats {
    fn finish(mut self) -> Self {
        let n = self.n_scheduled as f64;
        self.pdr = self.n_tx_success as f64 / n;
        self.pdl1 = self.n_dl1_success as f64 / n;
        self.pdl2 = self.n_dl2_success as f64 / n;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracePoint {
    pub time: f64,
    pub voltage: f64,
    pub state: DeviceState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimRun {
    pub stats: SimStats,
    pub trace: Option<Vec<TracePoint>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleTrace {
    pub trace: Vec<TracePoint>,
    /// Load voltage when the cycle ended, either completed or aborted.
    pub final_voltage: f64,
    pub completed: bool,
    /// Phase in which the voltage crossed `v_min`.
    pub aborted_in: Option<DeviceState>,
    pub duration: f64,
}

/// Phases of one uplink cycle when the downlink outcome is fixed.
pub fn cycle_phases(schedule: &TimingSchedule, dl_case: DlCase) -> Vec<(DeviceState, f64)> {
    use DeviceState::*;
    let mut phases = vec![(Tx, schedule.t_tx), (Idle, schedule.t_id1)];
    match dl_case {
        DlCase::Rx1 => phases.push((Rx, schedule.t_rx1)),
        DlCase::None | DlCase::Rx2 => {
            phases.push((Listen, schedule.t_l1));
            phases.push((Idle, schedule.t_id2));
            if dl_case == DlCase::Rx2 {
                phases.push((Rx, schedule.t_rx2));
            } else {
                phases.push((Listen, schedule.t_l2));
            }
        }
    }
    phases
}

pub fn cycle_duration(schedule: &TimingSchedule, dl_case: DlCase) -> f64 {
    cycle_phases(schedule, dl_case).iter().map(|(_, d)| d).sum()
}

struct Device<'a> {
    circuit: &'a CircuitConfig,
    /// Voltage of the capacitor element; equals the load voltage when the
    /// capacitor is ideal.
    vc: f64,
    on: bool,
    ever_woke: bool,
    time: f64,
    trace: Option<Vec<TracePoint>>,
}

impl<'a> Device<'a> {
    fn new(circuit: &'a CircuitConfig, vc: f64, on: bool, trace: bool) -> Self {
        Self {
            circuit,
            vc,
            on,
            ever_woke: on,
            time: 0.0,
            trace: trace.then(Vec::new),
        }
    }

    fn load_voltage(&self, state: DeviceState) -> f64 {
        self.circuit.load_voltage(state, self.vc)
    }

    fn mark(&mut self, state: DeviceState) {
        let voltage = self.load_voltage(state).clamp(0.0, self.circuit.e());
        let time = self.time;
        if let Some(trace) = self.trace.as_mut() {
            let point = TracePoint { time, voltage, state };
            match trace.last_mut() {
                Some(last) if last.time >= time => *last = point,
                _ => trace.push(point),
            }
        }
    }

    /// Spends `duration` seconds in `state`. Returns false if the load
    /// voltage crossed `v_min`, in which case the device is now off.
    fn phase(&mut self, state: DeviceState, duration: f64) -> bool {
        self.mark(state);
        let c = self.circuit;
        let v_min = c.v_min();
        let start = self.load_voltage(state);
        let end = c
            .voltage_after(state, self.vc, duration)
            .expect("phase durations and voltages are non-negative");
        if start >= v_min && end >= v_min {
            self.vc = c.capacitor_voltage_after(state, self.vc, duration);
            self.time += duration;
            return true;
        }
        let t_abort = if start < v_min {
            0.0
        } else {
            c.time_to_voltage(state, self.vc, v_min)
                .map_or(duration, |t| t.min(duration))
        };
        self.vc = if c.capacitor.is_ideal() && start >= v_min {
            v_min
        } else {
            c.capacitor_voltage_after(state, self.vc, t_abort)
        };
        self.time += t_abort;
        self.on = false;
        false
    }

    /// Off or Sleep until `duration` seconds have passed.
    fn rest(&mut self, duration: f64) {
        let c = self.circuit;
        let mut left = duration;
        let mut stalls = 0;
        while left > 0.0 && stalls < 8 {
            let before = self.time;
            if self.on {
                if self.phase(DeviceState::Sleep, left) {
                    break;
                }
            } else {
                self.mark(DeviceState::Off);
                let v_sl = c.v_sl();
                let wake = if self.load_voltage(DeviceState::Off) >= v_sl {
                    Some(0.0)
                } else {
                    c.time_to_voltage(DeviceState::Off, self.vc, v_sl).ok()
                };
                match wake {
                    Some(t) if t <= left => {
                        self.vc = if c.capacitor.is_ideal() && t > 0.0 {
                            v_sl
                        } else {
                            c.capacitor_voltage_after(DeviceState::Off, self.vc, t)
                        };
                        self.time += t;
                        self.on = true;
                        self.ever_woke = true;
                    }
                    _ => {
                        self.vc = c.capacitor_voltage_after(DeviceState::Off, self.vc, left);
                        self.time += left;
                        break;
                    }
                }
            }
            let spent = self.time - before;
            left -= spent;
            stalls = if spent > 0.0 { 0 } else { stalls + 1 };
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Uplink {
    LostOff,
    Aborted,
    Sent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct CycleOutcome {
    uplink: Uplink,
    dl1: Option<bool>,
    dl2: Option<bool>,
}

fn transmission<R: Rng>(device: &mut Device<'_>, s: &TimingSchedule, p1: f64, p2: f64, rng: &mut R) -> CycleOutcome {
    use DeviceState::*;
    let mut out = CycleOutcome {
        uplink: Uplink::LostOff,
        dl1: None,
        dl2: None,
    };
    if !device.on {
        return out;
    }
    if !device.phase(Tx, s.t_tx) {
        out.uplink = Uplink::Aborted;
        return out;
    }
    out.uplink = Uplink::Sent;
    if !device.phase(Idle, s.t_id1) {
        return out;
    }
    if rng.random::<f64>() < p1 {
        out.dl1 = Some(device.phase(Rx, s.t_rx1));
        return out;
    }
    if !device.phase(Listen, s.t_l1) || !device.phase(Idle, s.t_id2) {
        return out;
    }
    if rng.random::<f64>() < p2 {
        out.dl2 = Some(device.phase(Rx, s.t_rx2));
        return out;
    }
    device.phase(Listen, s.t_l2);
    out
}

/// Simulates `opts.n_scheduled` counted uplinks. The device starts off with
/// its capacitor at `v_min` at `t = 0`; the first uplink is scheduled at
/// `t = 0`.
pub fn run_simulation(scenario: &Scenario, opts: &SimOptions) -> Result<SimRun, SimError> {
    let schedule = scenario.validate()?;
    if opts.n_scheduled == 0 {
        return Err(SimError::Invalid(
            "at least one scheduled transmission is required".into(),
        ));
    }
    let circuit = &scenario.circuit;
    let m = scenario.interval_m;
    let mut device = Device::new(circuit, circuit.v_min(), false, opts.trace);
    let skip_warmup = opts.warmup == Warmup::UntilFirstWake
        && circuit
            .time_to_voltage(DeviceState::Off, circuit.v_min(), circuit.v_sl())
            .is_ok();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut stats = SimStats::default();
    let mut k: u64 = 0;
    while (stats.n_scheduled as usize) < opts.n_scheduled {
        let at = k as f64 * m;
        device.rest((at - device.time).max(0.0));
        k += 1;
        let counted = !skip_warmup || device.ever_woke;
        let outcome = transmission(&mut device, &schedule, scenario.p1, scenario.p2, &mut rng);
        if !counted {
            stats.n_warmup += 1;
            continue;
        }
        stats.n_scheduled += 1;
        match outcome.uplink {
            Uplink::LostOff => stats.n_tx_lost_off += 1,
            Uplink::Aborted => stats.n_tx_aborted += 1,
            Uplink::Sent => stats.n_tx_success += 1,
        }
        match outcome.dl1 {
            Some(true) => stats.n_dl1_success += 1,
            Some(false) => stats.n_dl1_aborted += 1,
            None => {}
        }
        match outcome.dl2 {
            Some(true) => stats.n_dl2_success += 1,
            Some(false) => stats.n_dl2_aborted += 1,
            None => {}
        }
    }
    let end = k as f64 * m;
    device.rest((end - device.time).max(0.0));
    let state = if device.on {
        DeviceState::Sleep
    } else {
        DeviceState::Off
    };
    device.mark(state);
    Ok(SimRun {
        stats: stats.finish(),
        trace: device.trace,
    })
}

/// Runs one uplink cycle from capacitor voltage `v_start` with the downlink
/// outcome fixed by `dl_case`. The interval `M` is not used.
pub fn single_cycle_trace(scenario: &Scenario, v_start: f64, dl_case: DlCase) -> Result<CycleTrace, SimError> {
    scenario.circuit.validate().map_err(ScenarioError::from)?;
    let schedule = scenario.schedule().map_err(ScenarioError::from)?;
    let e = scenario.circuit.e();
    if !(v_start >= 0.0 && v_start <= e) {
        return Err(SimError::Invalid(format!(
            "start voltage {v_start} V outside [0, {e}] V"
        )));
    }
    Ok(run_cycle(
        &scenario.circuit,
        &cycle_phases(&schedule, dl_case),
        v_start,
        true,
    ))
}

pub(crate) fn run_cycle(
    circuit: &CircuitConfig,
    phases: &[(DeviceState, f64)],
    v_start: f64,
    trace: bool,
) -> CycleTrace {
    let mut device = Device::new(circuit, v_start, true, trace);
    let mut aborted_in = None;
    let mut last = DeviceState::Sleep;
    for &(state, duration) in phases {
        last = state;
        if !device.phase(state, duration) {
            aborted_in = Some(state);
            break;
        }
    }
    let final_state = if aborted_in.is_some() { DeviceState::Off } else { last };
    let final_voltage = device.load_voltage(final_state);
    device.mark(final_state);
    CycleTrace {
        trace: device.trace.unwrap_or_default(),
        final_voltage,
        completed: aborted_in.is_none(),
        aborted_in,
        duration: device.time,
    }
}

pub const TRACE_HEADER: &str = "time_s,voltage_v,state";

pub fn write_trace_csv<W: Write>(mut out: W, trace: &[TracePoint]) -> io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for p in trace {
        writeln!(out, "{},{},{}", fmt_time(p.time), fmt_voltage(p.voltage), p.state)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::CapacitorConfig;

    fn case(c: f64, power: f64) -> Scenario {
        let mut s = Scenario::default().with_capacitance(c).with_harvest_power(power);
        s.circuit.capacitor = CapacitorConfig::ideal(c);
        s
    }

    #[test]
    fn cycle_from_v_min_aborts_in_tx() {
        let s = case(4.7e-3, 1e-3);
        let out = single_cycle_trace(&s, 1.8, DlCase::None).unwrap();
        assert!(!out.completed);
        assert_eq!(out.aborted_in, Some(DeviceState::Tx));
        assert_eq!(out.duration, 0.0);
    }

    #[test]
    fn cycle_near_asymptote_completes() {
        let s = case(4.7e-3, 1e-3);
        let v = s.circuit.asymptote(DeviceState::Off) - 1e-6;
        let out = single_cycle_trace(&s, v, DlCase::None).unwrap();
        assert!(out.completed);
        let sched = s.schedule().unwrap();
        assert!((out.duration - cycle_duration(&sched, DlCase::None)).abs() < 1e-12);
    }

    #[test]
    fn completed_cycle_matches_closed_form_chain() {
        let s = case(4.7e-3, 1e-3);
        let sched = s.schedule().unwrap();
        let v0 = 3.1;
        let mut v = v0;
        for (state, d) in cycle_phases(&sched, DlCase::None) {
            v = s.circuit.voltage_after(state, v, d).unwrap();
        }
        let out = single_cycle_trace(&s, v0, DlCase::None).unwrap();
        assert!(out.completed);
        assert!((out.final_voltage - v).abs() < 1e-12);
    }

    #[test]
    fn trace_times_strictly_increase() {
        let s = case(4.7e-3, 1e-3).with_interval(9.0);
        let run = run_simulation(
            &s,
            &SimOptions {
                n_scheduled: 50,
                trace: true,
                ..SimOptions::default()
            },
        )
        .unwrap();
        let trace = run.trace.unwrap();
        assert!(trace.len() > 10);
        for w in trace.windows(2) {
            assert!(w[1].time > w[0].time, "{:?}", w);
        }
        for p in &trace {
            assert!(p.voltage >= 0.0 && p.voltage <= 3.3);
        }
    }

    #[test]
    fn abundant_energy_delivers_everything() {
        let s = case(4.7e-3, 10.0)
            .with_interval(10.0)
            .with_downlink_probabilities(1.0, 0.0);
        let stats = run_simulation(&s, &SimOptions::default()).unwrap().stats;
        assert_eq!(stats.pdr, 1.0);
        assert_eq!(stats.pdl1, 1.0);
        assert_eq!(stats.pdl2, 0.0);
    }

    #[test]
    fn accounting_adds_up() {
        let s = case(4.7e-3, 1e-3)
            .with_interval(5.0)
            .with_downlink_probabilities(0.3, 0.6)
            .with_turn_on_fraction(0.8);
        let st = run_simulation(&s, &SimOptions::default()).unwrap().stats;
        assert_eq!(st.n_scheduled, 1000);
        assert_eq!(st.n_tx_success + st.n_tx_lost_off + st.n_tx_aborted, st.n_scheduled);
        assert!(st.n_dl1_success + st.n_dl1_aborted + st.n_dl2_success + st.n_dl2_aborted <= st.n_tx_success);
    }

    #[test]
    fn warmup_only_skips_initial_charge() {
        let s = case(4.7e-3, 1e-3)
            .with_interval(8.0)
            .with_downlink_probabilities(1.0, 0.0);
        let opts = SimOptions {
            warmup: Warmup::None,
            ..SimOptions::default()
        };
        let cold = run_simulation(&s, &opts).unwrap().stats;
        let warm = run_simulation(&s, &SimOptions::default()).unwrap().stats;
        assert_eq!(cold.n_warmup, 0);
        assert!(warm.n_warmup >= 1);
        assert!(cold.pdr < 1.0);
        assert_eq!(warm.pdr, 1.0);
    }

    #[test]
    fn zero_transmissions_is_an_error() {
        let opts = SimOptions {
            n_scheduled: 0,
            ..SimOptions::default()
        };
        assert!(run_simulation(&Scenario::default(), &opts).is_err());
    }

    #[test]
    fn trace_csv_layout() {
        let pts = [TracePoint {
            time: 0.5,
            voltage: 2.123_456_78,
            state: DeviceState::Tx,
        }];
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &pts).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "time_s,voltage_v,state\n0.5,2.12346,Tx\n"
        );
    }
}
