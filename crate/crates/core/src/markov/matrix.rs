use std::collections::{HashMap, VecDeque};
use std::io::{self, Write};

use crate::energy::{CircuitConfig, DeviceState};
use crate::format::fmt_sig;
use crate::scenario::Scenario;
use crate::timing::TimingSchedule;

use super::quantize::{discrete_voltage_after, threshold_levels, Granularity, ThresholdLevels};
use super::{ChainState, MarkovError, StateKind};

pub const COO_HEADER: &str = "src_kind,src_level,dst_kind,dst_level,prob";

/// Sparse row-stochastic matrix over chain states.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub levels: ThresholdLevels,
    pub states: Vec<ChainState>,
    /// `rows[i]` lists `(j, p(i, j))` with distinct `j` and `p > 0`.
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl TransitionMatrix {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn index_of(&self, s: ChainState) -> Option<usize> {
        self.states.iter().position(|&x| x == s)
    }

    pub fn max_row_sum_error(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `x·P`.
    pub fn left_mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        for (i, row) in self.rows.iter().enumerate() {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            for &(j, p) in row {
                y[j] += xi * p;
            }
        }
        y
    }

    pub fn write_coo<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{COO_HEADER}")?;
        for (i, row) in self.rows.iter().enumerate() {
            let s = self.states[i];
            for &(j, p) in row {
                let d = self.states[j];
                writeln!(out, "{},{},{},{},{}", s.kind, s.level, d.kind, d.level, fmt_sig(p, 12))?;
            }
        }
        Ok(())
    }
}

struct Rules<'a> {
    c: &'a CircuitConfig,
    s: TimingSchedule,
    g: Granularity,
    t: ThresholdLevels,
    m: f64,
    p1: f64,
    p2: f64,
}

impl Rules<'_> {
    fn v(&self, state: DeviceState, level: u32, t: f64) -> u32 {
        discrete_voltage_after(self.c, state, level, t.max(0.0), self.g).expect("levels and times are in range")
    }

    /// Time to go from level `a` to level `b`, `None` if never reached.
    fn time(&self, state: DeviceState, a: u32, b: u32) -> Option<f64> {
        self.c.time_to_voltage(state, self.g.volts(a), self.g.volts(b)).ok()
    }

    /// Time until a phase of length `limit` starting at `level` crosses
    /// `v_min`.
    fn abort_time(&self, state: DeviceState, level: u32, limit: f64) -> f64 {
        if level <= self.t.v_min {
            return 0.0;
        }
        self.time(state, level, self.t.v_min).map_or(limit, |t| t.min(limit))
    }

    fn completes(&self, state: DeviceState, level: u32, duration: f64) -> bool {
        self.v(state, level, duration) > self.t.v_min
    }

    fn classify(&self, level: u32) -> ChainState {
        let level = level.min(self.t.v_max - 1).max(self.t.v_min);
        if level < self.t.v_tx {
            ChainState::new(StateKind::Sl0, level)
        } else {
            ChainState::new(StateKind::Sl1, level)
        }
    }

    /// Off at `level` for `r` seconds: either still off at the end, or
    /// turned on and asleep for the remainder.
    fn off_successor(&self, level: u32, r: f64) -> ChainState {
        let charge = if level >= self.t.v_sl {
            Some(0.0)
        } else {
            self.time(DeviceState::Off, level, self.t.v_sl)
        };
        match charge {
            Some(tc) if tc < r => self.classify(self.v(DeviceState::Sleep, self.t.v_sl, r - tc)),
            // Rounding can land exactly on v̂_sl while the charge time is
            // still ≥ r; that state turns on at the start of the next step.
            _ => ChainState::new(StateKind::Off, self.v(DeviceState::Off, level, r).min(self.t.v_sl)),
        }
    }

    fn recharge(&self, r: f64) -> ChainState {
        self.off_successor(self.t.v_min, r)
    }

    fn after_sleep(&self, level: u32, r: f64) -> ChainState {
        self.classify(self.v(DeviceState::Sleep, level, r))
    }

    fn step(&self, from: ChainState) -> Vec<(ChainState, f64)> {
        use DeviceState::*;
        let s = &self.s;
        let l = from.level;
        match from.kind {
            StateKind::Off => vec![(self.off_successor(l, self.m), 1.0)],
            StateKind::Sl0 => {
                let ta = self.abort_time(Tx, l, s.t_tx);
                vec![(self.recharge(self.m - ta), 1.0)]
            }
            StateKind::Sl1 => {
                let mut out = Vec::with_capacity(4);
                let a = self.v(Tx, l, s.t_tx);
                let b = self.v(Idle, a, s.t_id1);
                let t1 = s.t_tx + s.t_id1;
                if self.p1 > 0.0 {
                    let dst = if b >= self.t.v_rx1 {
                        self.after_sleep(self.v(Rx, b, s.t_rx1), self.m - t1 - s.t_rx1)
                    } else {
                        self.recharge(self.m - t1 - self.abort_time(Rx, b, s.t_rx1))
                    };
                    out.push((dst, self.p1));
                }
                let q1 = 1.0 - self.p1;
                if q1 > 0.0 {
                    if !self.completes(Listen, b, s.t_l1) {
                        out.push((self.recharge(self.m - t1 - self.abort_time(Listen, b, s.t_l1)), q1));
                        return out;
                    }
                    let c = self.v(Listen, b, s.t_l1);
                    let e = self.v(Idle, c, s.t_id2);
                    let t2 = s.rx2_offset();
                    if self.p2 > 0.0 {
                        let dst = if e >= self.t.v_rx2 {
                            self.after_sleep(self.v(Rx, e, s.t_rx2), self.m - t2 - s.t_rx2)
                        } else {
                            self.recharge(self.m - t2 - self.abort_time(Rx, e, s.t_rx2))
                        };
                        out.push((dst, q1 * self.p2));
                    }
                    let q2 = 1.0 - self.p2;
                    if q2 > 0.0 {
                        let dst = if self.completes(Listen, e, s.t_l2) {
                            self.after_sleep(self.v(Listen, e, s.t_l2), self.m - t2 - s.t_l2)
                        } else {
                            self.recharge(self.m - t2 - self.abort_time(Listen, e, s.t_l2))
                        };
                        out.push((dst, q1 * q2));
                    }
                }
                out
            }
        }
    }
}

fn rules<'a>(scenario: &'a Scenario, g: Granularity) -> Result<Rules<'a>, MarkovError> {
    if !scenario.circuit.capacitor.is_ideal() {
        return Err(MarkovError::Unsupported(
            "the Markov chain models an ideal capacitor (ESR = 0, EPR = inf); use the simulator for parasitics".into(),
        ));
    }
    let t = threshold_levels(scenario, g)?;
    Ok(Rules {
        c: &scenario.circuit,
        s: scenario.schedule().map_err(crate::scenario::ScenarioError::from)?,
        g,
        t,
        m: scenario.interval_m,
        p1: scenario.p1,
        p2: scenario.p2,
    })
}

fn merged(step: Vec<(ChainState, f64)>, index: &mut impl FnMut(ChainState) -> usize) -> Vec<(usize, f64)> {
    let mut row: Vec<(usize, f64)> = Vec::with_capacity(step.len());
    for (dst, p) in step {
        let j = index(dst);
        match row.iter_mut().find(|(k, _)| *k == j) {
            Some(entry) => entry.1 += p,
            None => row.push((j, p)),
        }
    }
    row
}

/// Transition matrix over the states reachable from `(OFF, v̂_min)`, in
/// breadth-first discovery order (the initial state is index 0).
pub fn build_transition_matrix(scenario: &Scenario, g: Granularity) -> Result<TransitionMatrix, MarkovError> {
    let r = rules(scenario, g)?;
    let initial = ChainState::new(StateKind::Off, r.t.v_min);
    let mut states = vec![initial];
    let mut index: HashMap<ChainState, usize> = HashMap::from([(initial, 0)]);
    let mut queue = VecDeque::from([0usize]);
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new()];
    while let Some(i) = queue.pop_front() {
        let step = r.step(states[i]);
        let row = merged(step, &mut |dst| {
            *index.entry(dst).or_insert_with(|| {
                states.push(dst);
                rows.push(Vec::new());
                queue.push_back(states.len() - 1);
                states.len() - 1
            })
        });
        rows[i] = row;
    }
    Ok(TransitionMatrix {
        levels: r.t,
        states,
        rows,
    })
}

/// Transition matrix over every state allowed by the level invariants:
/// OFF up to `v̂_sl`, SL0 in `[v̂_min, v̂_tx)` and SL1 in `[v̂_tx, v̂_max)`.
pub fn build_transition_matrix_full(scenario: &Scenario, g: Granularity) -> Result<TransitionMatrix, MarkovError> {
    let r = rules(scenario, g)?;
    let t = r.t;
    let mut states: Vec<ChainState> = (0..=t.v_sl).map(|l| ChainState::new(StateKind::Off, l)).collect();
    states.extend((t.v_min..t.v_tx).map(|l| ChainState::new(StateKind::Sl0, l)));
    states.extend((t.v_tx..t.v_max).map(|l| ChainState::new(StateKind::Sl1, l)));
    let index: HashMap<ChainState, usize> = states.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let rows = states
        .iter()
        .map(|&s| merged(r.step(s), &mut |dst| index[&dst]))
        .collect();
    Ok(TransitionMatrix {
        levels: t,
        states,
        rows,
    })
}
