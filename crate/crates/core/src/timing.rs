//! LoRa PHY airtime and the Class A receive-window schedule.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use thiserror::Error;

/// Window 2 always uses the slowest data rate.
pub const RX2_SPREADING_FACTOR: u8 = 12;
/// Delay between the end of an uplink and the opening of RX1.
pub const RECEIVE_DELAY1: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TimingError {
    #[error("invalid radio configuration: {0}")]
    Invalid(String),
    #[error("RX1 preamble window of {t_l1} s leaves no idle time before RX2")]
    NegativeIdle { t_l1: f64 },
}

/// LoRa forward error correction rate, 4/5 through 4/8.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum CodingRate {
    #[default]
    Cr45,
    Cr46,
    Cr47,
    Cr48,
}

impl CodingRate {
    pub const ALL: [CodingRate; 4] = [CodingRate::Cr45, CodingRate::Cr46, CodingRate::Cr47, CodingRate::Cr48];

    /// Integer used by the symbol-count formula (4/5 → 1, …, 4/8 → 4).
    pub fn index(self) -> u32 {
        match self {
            CodingRate::Cr45 => 1,
            CodingRate::Cr46 => 2,
            CodingRate::Cr47 => 3,
            CodingRate::Cr48 => 4,
        }
    }

    pub fn from_index(i: u32) -> Option<Self> {
        Self::ALL.get(i.checked_sub(1)? as usize).copied()
    }
}

impl fmt::Display for CodingRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "4/{}", self.index() + 4)
    }
}

impl FromStr for CodingRate {
    type Err = TimingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "4/5" => Ok(CodingRate::Cr45),
            "4/6" => Ok(CodingRate::Cr46),
            "4/7" => Ok(CodingRate::Cr47),
            "4/8" => Ok(CodingRate::Cr48),
            other => Err(TimingError::Invalid(format!(
                "coding rate must be one of 4/5, 4/6, 4/7, 4/8, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadioConfig {
    pub spreading_factor: u8,
    pub bandwidth_hz: f64,
    pub coding_rate: CodingRate,
    pub n_preamble: u32,
    /// Implicit header (no PHY header on air).
    pub implicit_header: bool,
    /// Low data rate optimisation.
    pub low_data_rate: bool,
    pub tx_power_dbm: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        Self {
            spreading_factor: 7,
            bandwidth_hz: 125_000.0,
            coding_rate: CodingRate::Cr45,
            n_preamble: 8,
            implicit_header: true,
            low_data_rate: false,
            tx_power_dbm: 13.0,
        }
    }
}

impl RadioConfig {
    pub fn with_sf(self, spreading_factor: u8) -> Self {
        Self {
            spreading_factor,
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), TimingError> {
        if !(7..=12).contains(&self.spreading_factor) {
            return Err(TimingError::Invalid(format!(
                "spreading factor must be in 7..=12, got {}",
                self.spreading_factor
            )));
        }
        if !(self.bandwidth_hz > 0.0 && self.bandwidth_hz.is_finite()) {
            return Err(TimingError::Invalid(format!(
                "bandwidth must be > 0, got {}",
                self.bandwidth_hz
            )));
        }
        Ok(())
    }

    pub fn symbol_time(&self) -> f64 {
        symbol_time(self.spreading_factor, self.bandwidth_hz)
    }

    pub fn preamble_time(&self) -> f64 {
        preamble_time(self.spreading_factor, self.bandwidth_hz, self.n_preamble)
    }

    pub fn payload_symbols(&self, payload: u32) -> u32 {
        payload_symbols(
            payload,
            self.spreading_factor,
            self.implicit_header,
            self.low_data_rate,
            self.coding_rate,
        )
    }
}

/// `2^SF / BW` seconds.
pub fn symbol_time(spreading_factor: u8, bandwidth_hz: f64) -> f64 {
    debug_assert!(spreading_factor <= 12 && bandwidth_hz > 0.0);
    f64::from(1u32 << spreading_factor) / bandwidth_hz
}

/// Programmed preamble plus 4.25 sync symbols.
pub fn preamble_time(spreading_factor: u8, bandwidth_hz: f64, n_preamble: u32) -> f64 {
    (f64::from(n_preamble) + 4.25) * symbol_time(spreading_factor, bandwidth_hz)
}

/// Number of payload and header symbols, including the 8 fixed symbols.
pub fn payload_symbols(
    payload: u32,
    spreading_factor: u8,
    implicit_header: bool,
    low_data_rate: bool,
    coding_rate: CodingRate,
) -> u32 {
    let sf = i64::from(spreading_factor);
    let ih = i64::from(implicit_header);
    let de = i64::from(low_data_rate);
    let numerator = 8 * i64::from(payload) - 4 * sf + 28 + 16 - 20 * ih;
    let denominator = 4 * (sf - 2 * de);
    let blocks = if numerator <= 0 {
        0
    } else {
        (numerator + denominator - 1) / denominator
    };
    8 + (blocks as u32) * (coding_rate.index() + 4)
}

/// Preamble plus payload duration of one frame.
pub fn time_on_air(radio: &RadioConfig, payload: u32) -> f64 {
    radio.preamble_time() + f64::from(radio.payload_symbols(payload)) * radio.symbol_time()
}

/// Durations of the seven Class A phases following an uplink.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingSchedule {
    pub t_tx: f64,
    pub t_id1: f64,
    pub t_l1: f64,
    pub t_id2: f64,
    pub t_l2: f64,
    pub t_rx1: f64,
    pub t_rx2: f64,
}

impl TimingSchedule {
    /// Right-hand side of the interval bound: a transmission interval must
    /// be strictly larger. The second-window term is the longer of the
    /// SF12 preamble watch and the SF12 downlink reception.
    pub fn min_interval_bound(&self) -> f64 {
        self.t_tx + self.t_id1 + self.t_l1 + self.t_id2 + self.t_rx2.max(self.t_l2)
    }

    /// Start of the RX2 window relative to the start of the uplink.
    pub fn rx2_offset(&self) -> f64 {
        self.t_tx + self.t_id1 + self.t_l1 + self.t_id2
    }
}

/// True the first time a given out-of-range payload is seen in this process.
fn first_warning(name: &'static str, pl: u32) -> bool {
    static SEEN: Mutex<BTreeSet<(&'static str, u32)>> = Mutex::new(BTreeSet::new());
    SEEN.lock().map(|mut seen| seen.insert((name, pl))).unwrap_or(false)
}

pub fn class_a_schedule(radio: &RadioConfig, ul_payload: u32, dl_payload: u32) -> Result<TimingSchedule, TimingError> {
    radio.validate()?;
    if ul_payload == 0 || dl_payload == 0 {
        return Err(TimingError::Invalid("payload sizes must be at least 1 byte".into()));
    }
    for (name, pl) in [("uplink", ul_payload), ("downlink", dl_payload)] {
        if !(13..=51).contains(&pl) && first_warning(name, pl) {
            log::warn!("{name} payload of {pl} B is outside the 13..=51 B LoRaWAN frame range");
        }
    }
    let t_l1 = radio.preamble_time();
    if t_l1 >= RECEIVE_DELAY1 {
        return Err(TimingError::NegativeIdle { t_l1 });
    }
    let rx2 = radio.with_sf(RX2_SPREADING_FACTOR);
    Ok(TimingSchedule {
        t_tx: time_on_air(radio, ul_payload),
        t_id1: RECEIVE_DELAY1,
        t_l1,
        t_id2: RECEIVE_DELAY1 - t_l1,
        t_l2: rx2.preamble_time(),
        t_rx1: time_on_air(radio, dl_payload),
        t_rx2: time_on_air(&rx2, dl_payload),
    })
}

pub fn min_interval_bound(schedule: &TimingSchedule) -> f64 {
    schedule.min_interval_bound()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn symbol_times() {
        assert!(close(symbol_time(7, 125_000.0), 1.024e-3));
        assert!(close(symbol_time(12, 125_000.0), 32.768e-3));
        assert!(close(symbol_time(7, 250_000.0), 0.512e-3));
    }

    #[test]
    fn preamble_times() {
        assert!(close(preamble_time(7, 125_000.0, 8), 12.544e-3));
        assert!(close(preamble_time(12, 125_000.0, 8), 401.408e-3));
        assert!(close(preamble_time(7, 125_000.0, 0), 4.352e-3));
    }

    #[test]
    fn symbol_counts() {
        let cr = CodingRate::Cr45;
        assert_eq!(payload_symbols(16, 7, true, false, cr), 33);
        assert_eq!(payload_symbols(1, 12, true, false, cr), 8);
        assert_eq!(payload_symbols(51, 7, true, false, cr), 83);
        assert_eq!(payload_symbols(1, 7, true, false, cr), 13);
    }

    #[test]
    fn airtimes() {
        let sf7 = RadioConfig::default();
        let sf12 = sf7.with_sf(12);
        assert!(close(time_on_air(&sf7, 16), 46.336e-3));
        assert!(close(time_on_air(&sf12, 1), 663.552e-3));
        assert!(close(time_on_air(&sf7, 8), 36.096e-3));
    }

    #[test]
    fn coding_rate_parsing() {
        assert_eq!("4/5".parse::<CodingRate>().unwrap().index(), 1);
        assert_eq!("4/8".parse::<CodingRate>().unwrap(), CodingRate::Cr48);
        assert!("5/4".parse::<CodingRate>().is_err());
        assert_eq!(CodingRate::Cr47.to_string(), "4/7");
        assert_eq!(CodingRate::from_index(2), Some(CodingRate::Cr46));
        assert_eq!(CodingRate::from_index(0), None);
    }

    #[test]
    fn sf7_schedule() {
        let s = class_a_schedule(&RadioConfig::default(), 16, 1).unwrap();
        assert!(close(s.t_tx, 46.336e-3));
        assert!(close(s.t_l1, 12.544e-3));
        assert!(close(s.t_id2, 987.456e-3));
        assert!(close(s.t_l2, 401.408e-3));
        assert!(close(s.t_rx2, 663.552e-3));
        assert!(close(s.t_rx1, 25.856e-3));
        assert_eq!(s.t_id1, 1.0);
        let bound = s.min_interval_bound();
        assert!(close(bound, 0.046336 + 1.0 + 0.012544 + 0.987456 + 0.663552));
        assert!((bound - 2.710).abs() < 1e-3);
    }

    #[test]
    fn sf12_schedule_is_valid() {
        let s = class_a_schedule(&RadioConfig::default().with_sf(12), 51, 51).unwrap();
        assert!(close(s.t_l1, 401.408e-3));
        let sf7 = class_a_schedule(&RadioConfig::default(), 16, 1).unwrap();
        let sf12 = class_a_schedule(&RadioConfig::default().with_sf(12), 48, 48).unwrap();
        assert!(sf12.min_interval_bound() > sf7.min_interval_bound());
    }

    #[test]
    fn bound_uses_listen_when_longer() {
        let s = TimingSchedule {
            t_tx: 0.1,
            t_id1: 1.0,
            t_l1: 0.01,
            t_id2: 0.99,
            t_l2: 0.4,
            t_rx1: 0.02,
            t_rx2: 0.3,
        };
        assert!(close(s.min_interval_bound(), 0.1 + 1.0 + 0.01 + 0.99 + 0.4));
    }

    #[test]
    fn long_preamble_leaves_negative_idle() {
        let radio = RadioConfig {
            n_preamble: 40,
            ..RadioConfig::default().with_sf(12)
        };
        assert!(matches!(
            class_a_schedule(&radio, 16, 1),
            Err(TimingError::NegativeIdle { .. })
        ));
    }

    #[test]
    fn invalid_radio_is_rejected() {
        assert!(class_a_schedule(&RadioConfig::default().with_sf(6), 16, 1).is_err());
        assert!(class_a_schedule(&RadioConfig::default(), 0, 1).is_err());
    }
}
