#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use batteryless_core::characterization::{
    self, accuracy_study, min_capacitance, min_tx_interval, summarize_accuracy, sweep_min_capacitance,
    sweep_min_interval, threshold_sweep, wakeup_time, AccuracyCase, AccuracyStudy, Axis, CharacterizationError, Engine,
    MClass, SearchTolerances, SimSampling, SizingRow, SweepSpec, ThresholdSweep,
};
use batteryless_core::config::{dump_config, load_scenario, parse_scenario, ConfigError};
use batteryless_core::format::{fmt_prob, fmt_sig, fmt_time, fmt_voltage, num, text, Cell, Table};
use batteryless_core::markov::{build_transition_matrix, solve_chain, MarkovError};
use batteryless_core::sim::{write_trace_csv, TracePoint};
use batteryless_core::{
    run_simulation, single_cycle_trace, time_on_air, CodingRate, DlCase, Epr, Execution, Granularity, Pdl2Indicator,
    RadioConfig, Scenario, ScenarioError, SimError, SimOptions, Warmup,
};

/// Directory searched for relative `--scenario` paths that do not exist
/// in the working directory.
const SCENARIO_DIR_ENV: &str = "BATTERYLESS_SCENARIO_DIR";

#[derive(Parser, Debug)]
#[command(name = "batteryless", version, about = "Battery-less LoRaWAN Class A device models")]
struct Cli {
    /// Write the result table to this file instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Emit tables as a JSON array instead of CSV.
    #[arg(long, global = true)]
    json: bool,
    /// Worker threads for sweeps; 1 runs sequentially.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Time on air of one LoRa frame.
    Airtime(AirtimeArgs),
    /// Voltage trace of one cycle or of a whole simulation.
    Trace(TraceArgs),
    /// Event-based simulation.
    Simulate(SimulateArgs),
    /// Markov chain steady state.
    Chain(ChainArgs),
    /// Turn-on threshold sweep over one or more intervals.
    Sweep(SweepArgs),
    /// Minimum capacitance for a cycle.
    MinCap(SizingArgs),
    /// Minimum transmission interval for a cycle.
    MinInterval(SizingArgs),
    /// Time to wake up from v_min.
    Wakeup(WakeupArgs),
    /// Simulator versus chain accuracy study.
    Accuracy(AccuracyArgs),
}

#[derive(Args, Debug, Clone, Default)]
struct ScenarioArgs {
    /// Scenario TOML file; unset keys take the shipped defaults.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    sf: Option<u8>,
    /// Uplink payload, bytes.
    #[arg(long = "pl", alias = "ul")]
    ul_payload: Option<u32>,
    /// Downlink payload, bytes.
    #[arg(long = "dl")]
    dl_payload: Option<u32>,
    /// Transmission interval M, seconds.
    #[arg(long = "m")]
    interval: Option<f64>,
    /// Turn-on threshold as a fraction of E.
    #[arg(long)]
    threshold: Option<f64>,
    /// Capacitance, farads.
    #[arg(long)]
    capacitance: Option<f64>,
    /// Harvested power, watts.
    #[arg(long)]
    power: Option<f64>,
    #[arg(long)]
    esr: Option<f64>,
    /// Parallel resistance in ohms, or "inf".
    #[arg(long)]
    epr: Option<String>,
    #[arg(long)]
    p1: Option<f64>,
    #[arg(long)]
    p2: Option<f64>,
    #[arg(long)]
    granularity: Option<u32>,
    /// Write the effective scenario as TOML to this file.
    #[arg(long)]
    dump_config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AirtimeArgs {
    #[arg(long, default_value_t = 7)]
    sf: u8,
    /// Payload, bytes.
    #[arg(long, default_value_t = 16)]
    pl: u32,
    #[arg(long, default_value_t = 125_000.0)]
    bw: f64,
    #[arg(long, default_value = "4/5")]
    cr: String,
    #[arg(long, default_value_t = 8)]
    n_preamble: u32,
    #[arg(long, default_value_t = 1)]
    ih: u8,
    #[arg(long, default_value_t = 0)]
    de: u8,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum DlArg {
    None,
    Rx1,
    Rx2,
}

impl From<DlArg> for DlCase {
    fn from(d: DlArg) -> Self {
        match d {
            DlArg::None => DlCase::None,
            DlArg::Rx1 => DlCase::Rx1,
            DlArg::Rx2 => DlCase::Rx2,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum WarmupArg {
    None,
    FirstWake,
}

impl From<WarmupArg> for Warmup {
    fn from(w: WarmupArg) -> Self {
        match w {
            WarmupArg::None => Warmup::None,
            WarmupArg::FirstWake => Warmup::UntilFirstWake,
        }
    }
}

#[derive(Args, Debug)]
struct TraceArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Start voltage of the cycle; defaults to the turn-on threshold.
    #[arg(long)]
    v_start: Option<f64>,
    #[arg(long, value_enum, default_value_t = DlArg::None)]
    dl_case: DlArg,
    /// Trace a full simulation of this many uplinks instead of one cycle.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = WarmupArg::FirstWake)]
    warmup: WarmupArg,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Number of counted uplinks.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, value_enum, default_value_t = WarmupArg::FirstWake)]
    warmup: WarmupArg,
    /// Also write the voltage trace as CSV.
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum IndicatorArg {
    /// Window 2 counts when the level before RX2 is at least v_min.
    Min,
    /// Window 2 counts when the level before RX2 is at least the RX2 threshold.
    Rx2,
}

impl From<IndicatorArg> for Pdl2Indicator {
    fn from(i: IndicatorArg) -> Self {
        match i {
            IndicatorArg::Min => Pdl2Indicator::AboveMin,
            IndicatorArg::Rx2 => Pdl2Indicator::AboveRx2,
        }
    }
}

#[derive(Args, Debug)]
struct ChainArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, value_enum, default_value_t = IndicatorArg::Min)]
    pdl2_indicator: IndicatorArg,
    /// Write the transition matrix in coordinate format.
    #[arg(long)]
    dump_matrix: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum EngineArg {
    Sim,
    Chain,
    Both,
}

impl From<EngineArg> for Engine {
    fn from(e: EngineArg) -> Self {
        match e {
            EngineArg::Sim => Engine::Simulator,
            EngineArg::Chain => Engine::Chain,
            EngineArg::Both => Engine::Both,
        }
    }
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Thresholds as a list `a,b,c` or a range `start:stop:step`.
    #[arg(long, default_value = "0.55:0.98:0.01")]
    thresholds: String,
    /// Intervals M in seconds; defaults to the scenario interval.
    #[arg(long)]
    intervals: Option<String>,
    #[arg(long, value_enum, default_value_t = EngineArg::Sim)]
    engine: EngineArg,
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, value_enum, default_value_t = WarmupArg::FirstWake)]
    warmup: WarmupArg,
    #[arg(long, value_enum, default_value_t = IndicatorArg::Min)]
    pdl2_indicator: IndicatorArg,
}

#[derive(Args, Debug)]
struct SizingArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, value_enum, default_value_t = DlArg::None)]
    dl_case: DlArg,
    /// Parameter to sweep: ul_payload, dl_payload, threshold, interval,
    /// capacitance, harvest_power or granularity.
    #[arg(long)]
    axis: Option<String>,
    /// Axis values as `a,b,c` or `start:stop:step`.
    #[arg(long)]
    values: Option<String>,
    /// Start-voltage resolution, volts.
    #[arg(long)]
    voltage_tol: Option<f64>,
    /// Capacitance resolution, farads.
    #[arg(long)]
    capacitance_tol: Option<f64>,
}

#[derive(Args, Debug)]
struct WakeupArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Turn-on thresholds as `a,b,c` or `start:stop:step`; defaults to the
    /// scenario threshold.
    #[arg(long)]
    thresholds: Option<String>,
}

#[derive(Args, Debug)]
struct AccuracyArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Case letters from the evaluated-scenarios table.
    #[arg(long, default_value = "A,B,C,D,E")]
    cases: String,
    /// Any of small, medium, high, very_high.
    #[arg(long, default_value = "small,medium,high,very_high")]
    m_classes: String,
    #[arg(long = "accuracy-thresholds", default_value = "0.70,0.84,0.96")]
    thresholds: String,
    #[arg(long, default_value = "100,500,750,1000")]
    granularities: String,
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Error bound used in the summary printed to stderr.
    #[arg(long, default_value_t = 0.01)]
    bound: f64,
}

#[derive(Debug)]
enum Failure {
    Validation(String),
    Infeasible(String),
    Io(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Infeasible(_) => 3,
            Failure::Io(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Infeasible(m) | Failure::Io(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => Failure::Io(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Failure::Validation(e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        Failure::Validation(e.to_string())
    }
}

impl From<MarkovError> for Failure {
    fn from(e: MarkovError) -> Self {
        match e {
            MarkovError::Infeasible { .. } => Failure::Infeasible(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<CharacterizationError> for Failure {
    fn from(e: CharacterizationError) -> Self {
        if e.is_infeasible() {
            Failure::Infeasible(e.to_string())
        } else {
            Failure::Validation(e.to_string())
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn resolve_scenario_path(path: &Path) -> PathBuf {
    if path.is_relative() && !path.exists() {
        if let Some(dir) = std::env::var_os(SCENARIO_DIR_ENV) {
            let candidate = Path::new(&dir).join(path);
            if candidate.exists() {
                return candidate;
            }
        }
    }
    path.to_path_buf()
}

impl ScenarioArgs {
    fn load(&self) -> Result<(Scenario, Granularity), Failure> {
        let (mut s, mut g) = match &self.scenario {
            Some(path) => {
                let path = resolve_scenario_path(path);
                log::info!("loading scenario {}", path.display());
                load_scenario(&path)?
            }
            None => parse_scenario("")?,
        };
        if let Some(sf) = self.sf {
            s.radio.spreading_factor = sf;
        }
        if let Some(pl) = self.ul_payload {
            s.ul_payload = pl;
        }
        if let Some(pl) = self.dl_payload {
            s.dl_payload = pl;
        }
        if let Some(m) = self.interval {
            s.interval_m = m;
        }
        if let Some(t) = self.threshold {
            s.circuit.thresholds.turn_on_fraction = t;
        }
        if let Some(c) = self.capacitance {
            s.circuit.capacitor.capacitance = c;
        }
        if let Some(p) = self.power {
            s.circuit.harvester.harvest_power = p;
        }
        if let Some(esr) = self.esr {
            s.circuit.capacitor.esr = esr;
        }
        if let Some(epr) = &self.epr {
            s.circuit.capacitor.epr = if epr.eq_ignore_ascii_case("inf") {
                Epr::Infinite
            } else {
                Epr::Finite(
                    epr.parse()
                        .map_err(|_| Failure::Validation(format!("--epr must be a number or inf, got {epr:?}")))?,
                )
            };
        }
        if let Some(p) = self.p1 {
            s.p1 = p;
        }
        if let Some(p) = self.p2 {
            s.p2 = p;
        }
        if let Some(gran) = self.granularity {
            g = Granularity::new(gran)?;
        }
        s.validate()?;
        if let Some(path) = &self.dump_config {
            fs::write(path, dump_config(&s, g))?;
        }
        Ok((s, g))
    }
}

/// Parses `a,b,c` or `start:stop:step` (inclusive of `stop` up to rounding).
fn parse_values(spec: &str) -> Result<Vec<f64>, Failure> {
    let bad = || Failure::Validation(format!("cannot parse values {spec:?}; use a,b,c or start:stop:step"));
    let spec = spec.trim();
    if spec.contains(':') {
        let parts: Vec<f64> = spec
            .split(':')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad())?;
        let [start, stop, step] = parts[..] else {
            return Err(bad());
        };
        if !(step > 0.0) || stop < start {
            return Err(bad());
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        // Round to the step's decimal resolution so 0.55 + 3·0.01 prints as 0.58.
        return Ok((0..=n).map(|i| round12(start + i as f64 * step)).collect());
    }
    spec.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect()
}

fn round12(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

fn prob(x: f64) -> Cell {
    num(fmt_prob(x))
}

fn value(x: f64) -> Cell {
    num(fmt_sig(x, 9))
}

struct Output {
    out: Option<PathBuf>,
    json: bool,
}

impl Output {
    fn render(&self, table: &Table) -> String {
        if self.json {
            table.to_json()
        } else {
            table.to_csv()
        }
    }

    /// Writes the table to `--out`, or to stdout when `--out` is unset.
    fn table(&self, table: &Table) -> Outcome {
        let body = self.render(table);
        match &self.out {
            Some(path) => fs::write(path, body)?,
            None => io::stdout().write_all(body.as_bytes())?,
        }
        Ok(())
    }

    /// Writes the table only when `--out` is set.
    fn table_if_requested(&self, table: &Table) -> Outcome {
        if let Some(path) = &self.out {
            fs::write(path, self.render(table))?;
        }
        Ok(())
    }
}

fn airtime(args: &AirtimeArgs, out: &Output) -> Outcome {
    let flag = |v: u8, name: &str| match v {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(Failure::Validation(format!("--{name} must be 0 or 1"))),
    };
    let radio = RadioConfig {
        spreading_factor: args.sf,
        bandwidth_hz: args.bw,
        coding_rate: args
            .cr
            .parse::<CodingRate>()
            .map_err(|e| Failure::Validation(e.to_string()))?,
        n_preamble: args.n_preamble,
        implicit_header: flag(args.ih, "ih")?,
        low_data_rate: flag(args.de, "de")?,
        ..RadioConfig::default()
    };
    radio.validate().map_err(|e| Failure::Validation(e.to_string()))?;
    if args.pl == 0 {
        return Err(Failure::Validation("--pl must be at least 1 byte".into()));
    }
    let t = time_on_air(&radio, args.pl);
    let mut table = Table::new(["sf", "payload_bytes", "symbols", "time_on_air_s"]);
    table.push(vec![
        value(f64::from(args.sf)),
        value(f64::from(args.pl)),
        value(f64::from(radio.payload_symbols(args.pl))),
        num(fmt_time(t)),
    ]);
    println!("{}", fmt_time(t));
    out.table_if_requested(&table)
}

const TRACE_COLUMNS: [&str; 3] = ["time_s", "voltage_v", "state"];

fn trace_table(trace: &[TracePoint]) -> Table {
    let mut table = Table::new(TRACE_COLUMNS);
    for p in trace {
        table.push(vec![num(fmt_time(p.time)), num(fmt_voltage(p.voltage)), text(p.state)]);
    }
    table
}

fn trace(args: &TraceArgs, out: &Output) -> Outcome {
    let (s, _) = args.scenario.load()?;
    let points = match args.n {
        Some(n) => {
            let opts = SimOptions {
                seed: args.seed,
                n_scheduled: n,
                trace: true,
                warmup: args.warmup.into(),
            };
            run_simulation(&s, &opts)?.trace.unwrap_or_default()
        }
        None => {
            let v = args.v_start.unwrap_or_else(|| s.circuit.v_sl());
            if v < s.circuit.v_min() || v > s.circuit.e() {
                return Err(Failure::Validation(format!(
                    "--v-start must lie in [v_min, E] = [{}, {}] V",
                    s.circuit.v_min(),
                    s.circuit.e()
                )));
            }
            let cycle = single_cycle_trace(&s, v, args.dl_case.into())?;
            eprintln!(
                "completed={} final_voltage={} aborted_in={}",
                cycle.completed,
                fmt_voltage(cycle.final_voltage),
                cycle.aborted_in.map_or("-".to_string(), |st| st.to_string())
            );
            cycle.trace
        }
    };
    if out.json {
        return out.table(&trace_table(&points));
    }
    match &out.out {
        Some(path) => write_trace_csv(io::BufWriter::new(fs::File::create(path)?), &points)?,
        None => write_trace_csv(io::stdout().lock(), &points)?,
    }
    Ok(())
}

fn simulate(args: &SimulateArgs, out: &Output) -> Outcome {
    let (s, _) = args.scenario.load()?;
    let opts = SimOptions {
        seed: args.seed,
        n_scheduled: args.n,
        trace: args.trace_out.is_some(),
        warmup: args.warmup.into(),
    };
    let run = run_simulation(&s, &opts)?;
    let st = run.stats;
    if let (Some(path), Some(points)) = (&args.trace_out, &run.trace) {
        write_trace_csv(io::BufWriter::new(fs::File::create(path)?), points)?;
    }
    let mut table = Table::new([
        "seed",
        "n_scheduled",
        "n_tx_success",
        "n_tx_lost_off",
        "n_tx_aborted",
        "n_dl1_success",
        "n_dl1_aborted",
        "n_dl2_success",
        "n_dl2_aborted",
        "n_warmup",
        "pdr",
        "pdl1",
        "pdl2",
    ]);
    let count = |n: u64| num(n.to_string());
    table.push(vec![
        count(args.seed),
        count(st.n_scheduled),
        count(st.n_tx_success),
        count(st.n_tx_lost_off),
        count(st.n_tx_aborted),
        count(st.n_dl1_success),
        count(st.n_dl1_aborted),
        count(st.n_dl2_success),
        count(st.n_dl2_aborted),
        count(st.n_warmup),
        prob(st.pdr),
        prob(st.pdl1),
        prob(st.pdl2),
    ]);
    println!(
        "pdr={} pdl1={} pdl2={}",
        fmt_prob(st.pdr),
        fmt_prob(st.pdl1),
        fmt_prob(st.pdl2)
    );
    out.table_if_requested(&table)
}

fn chain(args: &ChainArgs, out: &Output) -> Outcome {
    let (s, g) = args.scenario.load()?;
    if let Some(path) = &args.dump_matrix {
        let p = build_transition_matrix(&s, g)?;
        p.write_coo(io::BufWriter::new(fs::File::create(path)?))?;
    }
    let r = solve_chain(&s, g, args.pdl2_indicator.into())?;
    let t = r.levels;
    let mut table = Table::new([
        "granularity",
        "v_min_level",
        "v_sl_level",
        "v_tx_level",
        "v_rx1_level",
        "v_rx2_level",
        "v_max_level",
        "states",
        "iterations",
        "residual",
        "pdr",
        "pdl1",
        "pdl2",
    ]);
    let int = |n: u64| num(n.to_string());
    table.push(vec![
        int(u64::from(g.get())),
        int(u64::from(t.v_min)),
        int(u64::from(t.v_sl)),
        int(u64::from(t.v_tx)),
        int(u64::from(t.v_rx1)),
        int(u64::from(t.v_rx2)),
        int(u64::from(t.v_max)),
        int(r.states.len() as u64),
        int(r.iterations as u64),
        num(fmt_sig(r.residual, 3)),
        prob(r.pdr),
        prob(r.pdl1),
        prob(r.pdl2),
    ]);
    println!(
        "pdr={} pdl1={} pdl2={}",
        fmt_prob(r.pdr),
        fmt_prob(r.pdl1),
        fmt_prob(r.pdl2)
    );
    log::info!("chain solved in {:?}", r.elapsed);
    out.table_if_requested(&table)
}

fn sweep(args: &SweepArgs, out: &Output, exec: Execution) -> Outcome {
    let (s, g) = args.scenario.load()?;
    let intervals = match &args.intervals {
        Some(v) => parse_values(v)?,
        None => vec![s.interval_m],
    };
    let spec = ThresholdSweep {
        base: s,
        granularity: g,
        thresholds: parse_values(&args.thresholds)?,
        intervals,
        engine: args.engine.into(),
        sampling: SimSampling {
            seeds: args.seeds,
            n_scheduled: args.n,
            warmup: args.warmup.into(),
        },
        indicator: args.pdl2_indicator.into(),
    };
    let rows = threshold_sweep(&spec, exec)?;
    let mut table = Table::new([
        "threshold",
        "interval_s",
        "pdr_sim",
        "pdl1_sim",
        "pdl2_sim",
        "pdr_mc",
        "pdl1_mc",
        "pdl2_mc",
        "infeasible",
    ]);
    let empty = || num(String::new());
    for r in rows {
        let mut row = vec![value(r.threshold), value(r.interval)];
        for d in [r.sim, r.chain] {
            match d {
                Some(d) => row.extend([prob(d.pdr), prob(d.pdl1), prob(d.pdl2)]),
                None => row.extend([empty(), empty(), empty()]),
            }
        }
        row.push(text(r.infeasible));
        table.push(row);
    }
    out.table(&table)
}

fn tolerances(args: &SizingArgs) -> SearchTolerances {
    let mut tol = SearchTolerances::default();
    if let Some(v) = args.voltage_tol {
        tol.voltage = v;
    }
    if let Some(c) = args.capacitance_tol {
        tol.capacitance = c;
    }
    tol
}

fn sizing(args: &SizingArgs, out: &Output, exec: Execution, interval: bool) -> Outcome {
    let (s, g) = args.scenario.load()?;
    let tol = tolerances(args);
    let dl_case: DlCase = args.dl_case.into();
    let column = if interval {
        "min_interval_s"
    } else {
        "min_capacitance_f"
    };
    let mut table = Table::new(["axis", "x", "dl_case", column, "feasible"]);
    let push = |table: &mut Table, axis: &str, x: Cell, row: SizingRow| {
        table.push(vec![
            text(axis),
            x,
            text(dl_case),
            num(row.value.map(|v| fmt_sig(v, 9)).unwrap_or_default()),
            text(row.value.is_some()),
        ]);
    };
    match (&args.axis, &args.values) {
        (Some(axis), Some(values)) => {
            let axis: Axis = axis.parse()?;
            let spec = SweepSpec {
                base: s,
                granularity: g,
                axis,
                values: parse_values(values)?,
                dl_case,
            };
            let rows = if interval {
                sweep_min_interval(&spec, &tol, exec)?
            } else {
                sweep_min_capacitance(&spec, &tol, exec)?
            };
            for row in rows {
                push(&mut table, axis.as_str(), value(row.x), row);
            }
        }
        (None, None) => {
            let v = if interval {
                min_tx_interval(&s, dl_case, &tol)?
            } else {
                min_capacitance(&s, dl_case, &tol)?
            };
            push(
                &mut table,
                "none",
                num(String::new()),
                SizingRow {
                    x: f64::NAN,
                    value: Some(v),
                },
            );
        }
        _ => return Err(Failure::Validation("--axis and --values must be given together".into())),
    }
    out.table(&table)
}

fn wakeup(args: &WakeupArgs, out: &Output) -> Outcome {
    let (s, _) = args.scenario.load()?;
    let thresholds = match &args.thresholds {
        Some(v) => parse_values(v)?,
        None => vec![s.circuit.thresholds.turn_on_fraction],
    };
    let mut table = Table::new(["turn_on_fraction", "capacitance_f", "harvest_w", "wakeup_s", "feasible"]);
    let mut circuit = s.circuit;
    if !circuit.capacitor.is_ideal() {
        log::info!("wake-up time includes the capacitor parasitics");
    }
    for t in thresholds {
        circuit.thresholds.turn_on_fraction = t;
        let w = match wakeup_time(&circuit, t) {
            Ok(w) => Some(w),
            Err(CharacterizationError::Energy(_)) => None,
            Err(e) => return Err(e.into()),
        };
        table.push(vec![
            value(t),
            value(circuit.capacitor.capacitance),
            value(circuit.harvester.harvest_power),
            num(w.map(fmt_time).unwrap_or_default()),
            text(w.is_some()),
        ]);
    }
    out.table(&table)
}

fn accuracy(args: &AccuracyArgs, out: &Output, exec: Execution) -> Outcome {
    let (base, _) = args.scenario.load()?;
    let cases = args
        .cases
        .split(',')
        .map(|c| {
            let c = c.trim();
            c.chars()
                .next()
                .filter(|_| c.len() == 1)
                .and_then(AccuracyCase::by_id)
                .ok_or_else(|| Failure::Validation(format!("unknown case {c:?}; expected A to E")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let m_classes = args
        .m_classes
        .split(',')
        .map(|m| {
            MClass::ALL
                .into_iter()
                .find(|c| c.as_str() == m.trim().replace('-', "_"))
                .ok_or_else(|| Failure::Validation(format!("unknown M class {m:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let granularities = parse_values(&args.granularities)?
        .into_iter()
        .map(|g| {
            if g >= 1.0 && g.fract() == 0.0 {
                Ok(Granularity::new(g as u32)?)
            } else {
                Err(Failure::Validation(format!(
                    "granularity must be a positive integer, got {g}"
                )))
            }
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    let study = AccuracyStudy {
        base,
        cases,
        m_classes,
        dl_variants: characterization::PAPER_DL_VARIANTS.to_vec(),
        thresholds: parse_values(&args.thresholds)?,
        granularities,
        sampling: SimSampling {
            seeds: args.seeds,
            n_scheduled: args.n,
            ..SimSampling::default()
        },
    };
    let rows = accuracy_study(&study, exec)?;
    let mut table = Table::new([
        "case",
        "m_class",
        "interval_s",
        "p1",
        "p2",
        "threshold",
        "granularity",
        "pdr_sim",
        "pdr_mc",
        "abs_error",
        "chain_s",
    ]);
    for r in &rows {
        table.push(vec![
            text(r.case),
            text(r.m_class),
            value(r.interval),
            prob(r.p1),
            prob(r.p2),
            value(r.threshold),
            num(r.granularity.to_string()),
            prob(r.pdr_sim),
            prob(r.pdr_mc),
            prob(r.abs_error),
            num(fmt_sig(r.chain_seconds, 6)),
        ]);
    }
    for s in summarize_accuracy(&rows, args.bound) {
        eprintln!(
            "threshold={} granularity={} cells={} within_{}={} p50={} p90={} max={}",
            fmt_sig(s.threshold, 6),
            s.granularity,
            s.cells,
            fmt_sig(s.bound, 6),
            fmt_prob(s.fraction_within),
            fmt_prob(s.p50),
            fmt_prob(s.p90),
            fmt_prob(s.max)
        );
    }
    out.table(&table)
}

fn run(cli: Cli) -> Outcome {
    let exec = match cli.jobs {
        Some(0) => return Err(Failure::Validation("--jobs must be at least 1".into())),
        Some(1) => Execution::Sequential,
        Some(n) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Failure::Io(e.to_string()))?;
            Execution::Parallel
        }
        None => Execution::Parallel,
    };
    let out = Output {
        out: cli.out,
        json: cli.json,
    };
    match &cli.command {
        Command::Airtime(a) => airtime(a, &out),
        Command::Trace(a) => trace(a, &out),
        Command::Simulate(a) => simulate(a, &out),
        Command::Chain(a) => chain(a, &out),
        Command::Sweep(a) => sweep(a, &out, exec),
        Command::MinCap(a) => sizing(a, &out, exec, false),
        Command::MinInterval(a) => sizing(a, &out, exec, true),
        Command::Wakeup(a) => wakeup(a, &out),
        Command::Accuracy(a) => accuracy(a, &out, exec),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
