//! PWM stimuli and the edge timeline that drives the event-driven solver.
//!
//! A stimulus is high during the first `duty_cycle` fraction of each period
//! (the rising edge sits at phase 0). Frequencies are held as exact rationals
//! so that the common period of several stimuli can be found without
//! floating-point guesswork; a stimulus whose frequency has no rational form
//! must be flagged as [`Frequency::Incommensurate`].

use std::fmt;

use num_integer::Integer;
use num_rational::Ratio;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("frequency must be positive and finite, got {0}")]
    BadFrequency(f64),
    #[error("duty cycle {0} outside [0, 1]")]
    BadDuty(f64),
    #[error("phase {0} outside [0, 1)")]
    BadPhase(f64),
    #[error("v_high ({high}) below v_low ({low})")]
    BadRails { high: f64, low: f64 },
    #[error("input value {0} outside [0, 1]")]
    InputOutOfRange(f64),
    #[error("quantization needs at least 2 levels, got {0}")]
    TooFewLevels(u32),
}

/// Logic level of a stimulus at an instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Level {
    High,
    Low,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Level::High => f.write_str("high"),
            Level::Low => f.write_str("low"),
        }
    }
}

/// Stimulus frequency in hertz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Frequency {
    /// Exact rational frequency, `numer / denom` Hz.
    Exact(Ratio<u64>),
    /// A frequency with no exact rational representation. Any stimulus set
    /// containing one has no hyperperiod.
    Incommensurate(f64),
}

impl Frequency {
    pub fn hz(hz: u64) -> Result<Self, SignalError> {
        if hz == 0 {
            return Err(SignalError::BadFrequency(0.0));
        }
        Ok(Frequency::Exact(Ratio::from_integer(hz)))
    }

    pub fn ratio(numer: u64, denom: u64) -> Result<Self, SignalError> {
        if numer == 0 || denom == 0 {
            return Err(SignalError::BadFrequency(numer as f64 / denom as f64));
        }
        Ok(Frequency::Exact(Ratio::new(numer, denom)))
    }

    pub fn incommensurate(hz: f64) -> Result<Self, SignalError> {
        if !(hz.is_finite() && hz > 0.0) {
            return Err(SignalError::BadFrequency(hz));
        }
        Ok(Frequency::Incommensurate(hz))
    }

    /// Converts a decimal value (as read from a config file) into an exact
    /// frequency. Integral values are kept as whole hertz; anything else is
    /// rounded to the nearest millihertz.
    pub fn from_f64(hz: f64) -> Result<Self, SignalError> {
        if !(hz.is_finite() && hz > 0.0) || hz >= u64::MAX as f64 / 1000.0 {
            return Err(SignalError::BadFrequency(hz));
        }
        if hz.fract() == 0.0 {
            return Frequency::hz(hz as u64);
        }
        let milli = (hz * 1000.0).round() as u64;
        Frequency::ratio(milli.max(1), 1000)
    }

    pub fn as_hz(&self) -> f64 {
        match *self {
            Frequency::Exact(r) => *r.numer() as f64 / *r.denom() as f64,
            Frequency::Incommensurate(hz) => hz,
        }
    }

    pub fn period(&self) -> f64 {
        match *self {
            Frequency::Exact(r) => *r.denom() as f64 / *r.numer() as f64,
            Frequency::Incommensurate(hz) => 1.0 / hz,
        }
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Frequency::Exact(r) if *r.denom() == 1 => write!(f, "{}", r.numer()),
            Frequency::Exact(r) => write!(f, "{}/{}", r.numer(), r.denom()),
            Frequency::Incommensurate(hz) => write!(f, "~{hz}"),
        }
    }
}

/// One periodic rail-to-rail stimulus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PwmSpec {
    frequency: Frequency,
    duty_cycle: f64,
    phase: f64,
    v_high: f64,
    v_low: f64,
}

impl PwmSpec {
    pub fn new(
        frequency: Frequency,
        duty_cycle: f64,
        phase: f64,
        v_high: f64,
        v_low: f64,
    ) -> Result<Self, SignalError> {
        if !(0.0..=1.0).contains(&duty_cycle) {
            return Err(SignalError::BadDuty(duty_cycle));
        }
        if !(0.0..1.0).contains(&phase) {
            return Err(SignalError::BadPhase(phase));
        }
        if !(v_high.is_finite() && v_low.is_finite() && v_high >= v_low) {
            return Err(SignalError::BadRails { high: v_high, low: v_low });
        }
        Ok(PwmSpec { frequency, duty_cycle, phase, v_high, v_low })
    }

    /// Stimulus swinging between ground and `v_dd`, zero phase.
    pub fn rail_to_rail(frequency: Frequency, duty_cycle: f64, v_dd: f64) -> Result<Self, SignalError> {
        PwmSpec::new(frequency, duty_cycle, 0.0, v_dd, 0.0)
    }

    pub fn frequency(&self) -> Frequency {
        self.frequency
    }

    pub fn duty_cycle(&self) -> f64 {
        self.duty_cycle
    }

    pub fn phase(&self) -> f64 {
        self.phase
    }

    pub fn v_high(&self) -> f64 {
        self.v_high
    }

    pub fn v_low(&self) -> f64 {
        self.v_low
    }

    pub fn period(&self) -> f64 {
        self.frequency.period()
    }

    /// Always-high or always-low stimulus; emits no edges.
    pub fn is_degenerate(&self) -> bool {
        self.duty_cycle == 0.0 || self.duty_cycle == 1.0
    }

    pub fn level_at(&self, t: f64) -> Level {
        let pos = (t * self.frequency.as_hz() + self.phase).rem_euclid(1.0);
        if pos < self.duty_cycle {
            Level::High
        } else {
            Level::Low
        }
    }
}

/// A level transition on one input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeEvent {
    pub time: f64,
    pub input_index: usize,
    pub new_level: Level,
}

/// Edges closer than this fraction of the shortest period are treated as
/// coincident.
const MERGE_FRACTION: f64 = 1e-9;

fn merge_tolerance(specs: &[PwmSpec]) -> f64 {
    specs
        .iter()
        .filter(|s| !s.is_degenerate())
        .map(|s| s.period())
        .fold(f64::INFINITY, f64::min)
        * MERGE_FRACTION
}

/// Every level transition of every stimulus in `[t_start, t_end)`, sorted by
/// time then input index. Coincident edges on different inputs carry the
/// identical timestamp.
pub fn edge_schedule(specs: &[PwmSpec], t_start: f64, t_end: f64) -> Vec<EdgeEvent> {
    if !(t_start < t_end) {
        return Vec::new();
    }
    let tol = merge_tolerance(specs);
    let mut raw = Vec::new();
    for (input_index, spec) in specs.iter().enumerate() {
        if spec.is_degenerate() {
            continue;
        }
        let period = spec.period();
        let hz = spec.frequency.as_hz();
        let mut k = (t_start * hz + spec.phase).floor() - 1.0;
        loop {
            let rise = (k - spec.phase) * period;
            if rise >= t_end - tol {
                break;
            }
            let fall = (k + spec.duty_cycle - spec.phase) * period;
            for (time, new_level) in [(rise, Level::High), (fall, Level::Low)] {
                if time >= t_start - tol && time < t_end - tol {
                    raw.push(EdgeEvent { time: time.max(t_start), input_index, new_level });
                }
            }
            k += 1.0;
        }
    }
    raw.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.input_index.cmp(&b.input_index)));

    let mut head = f64::NEG_INFINITY;
    for ev in raw.iter_mut() {
        if ev.time - head <= tol {
            ev.time = head;
        } else {
            head = ev.time;
        }
    }
    raw.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.input_index.cmp(&b.input_index)));
    raw
}

/// Least common period of all stimuli, or `None` when any frequency is
/// incommensurate (or the common period overflows the rational range).
pub fn hyperperiod(specs: &[PwmSpec]) -> Option<f64> {
    let mut numer_gcd: u128 = 0;
    let mut denom_lcm: u128 = 1;
    for spec in specs {
        let Frequency::Exact(f) = spec.frequency else {
            return None;
        };
        // period = denom / numer, already in lowest terms
        let (pn, pd) = (*f.denom() as u128, *f.numer() as u128);
        let g = pn.gcd(&denom_lcm);
        denom_lcm = (denom_lcm / g).checked_mul(pn)?;
        numer_gcd = numer_gcd.gcd(&pd);
    }
    if numer_gcd == 0 {
        return None;
    }
    Some(denom_lcm as f64 / numer_gcd as f64)
}

/// Maps a value in `[0, 1]` onto one of `levels` evenly spaced duty cycles.
pub fn encode_input(x: f64, levels: u32) -> Result<f64, SignalError> {
    if levels < 2 {
        return Err(SignalError::TooFewLevels(levels));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(SignalError::InputOutOfRange(x));
    }
    let steps = f64::from(levels - 1);
    Ok((x * steps).round() / steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mhz(m: u64) -> Frequency {
        Frequency::hz(m * 1_000_000).unwrap()
    }

    #[test]
    fn degenerate_levels() {
        let lo = PwmSpec::rail_to_rail(mhz(500), 0.0, 2.5).unwrap();
        let hi = PwmSpec::rail_to_rail(mhz(500), 1.0, 2.5).unwrap();
        for t in [0.0, 0.3e-9, 1.0e-9, 7.77e-6] {
            assert_eq!(lo.level_at(t), Level::Low);
            assert_eq!(hi.level_at(t), Level::High);
        }
    }

    #[test]
    fn high_window_opens_the_period() {
        let s = PwmSpec::rail_to_rail(mhz(500), 0.25, 2.5).unwrap();
        assert_eq!(s.level_at(0.4e-9), Level::High);
        assert_eq!(s.level_at(0.6e-9), Level::Low);
        assert_eq!(s.level_at(2.1e-9), Level::High);
    }

    #[test]
    fn rejects_invalid_specs() {
        assert!(PwmSpec::rail_to_rail(mhz(1), 1.5, 2.5).is_err());
        assert!(PwmSpec::new(mhz(1), 0.5, 1.0, 2.5, 0.0).is_err());
        assert!(PwmSpec::new(mhz(1), 0.5, 0.0, 0.0, 2.5).is_err());
        assert!(Frequency::hz(0).is_err());
        assert!(Frequency::incommensurate(f64::NAN).is_err());
    }

    #[test]
    fn single_spec_schedule() {
        let s = PwmSpec::rail_to_rail(mhz(500), 0.5, 2.5).unwrap();
        let ev = edge_schedule(&[s], 0.0, 2e-9);
        assert_eq!(ev.len(), 2);
        assert_eq!(ev[0].time, 0.0);
        assert_eq!(ev[0].new_level, Level::High);
        assert!((ev[1].time - 1e-9).abs() < 1e-21);
        assert_eq!(ev[1].new_level, Level::Low);
    }

    #[test]
    fn degenerate_spec_has_no_edges() {
        let s = PwmSpec::rail_to_rail(mhz(500), 0.0, 2.5).unwrap();
        assert!(edge_schedule(&[s], 0.0, 1e-6).is_empty());
    }

    #[test]
    fn two_spec_schedule_merges_coincident_edges() {
        let a = PwmSpec::rail_to_rail(mhz(500), 0.5, 2.5).unwrap();
        let b = PwmSpec::rail_to_rail(mhz(250), 0.5, 2.5).unwrap();
        let ev = edge_schedule(&[a, b], 0.0, 4e-9);
        // by hand: A rises 0,2 falls 1,3; B rises 0 falls 2
        let expected = [
            (0.0, 0, Level::High),
            (0.0, 1, Level::High),
            (1e-9, 0, Level::Low),
            (2e-9, 0, Level::High),
            (2e-9, 1, Level::Low),
            (3e-9, 0, Level::Low),
        ];
        assert_eq!(ev.len(), expected.len());
        for (e, (t, i, l)) in ev.iter().zip(expected) {
            assert!((e.time - t).abs() < 1e-20, "{e:?}");
            assert_eq!((e.input_index, e.new_level), (i, l));
        }
        // coincident edges share the exact timestamp
        assert_eq!(ev[3].time, ev[4].time);
        let mut distinct: Vec<f64> = ev.iter().map(|e| e.time).collect();
        distinct.dedup();
        assert_eq!(distinct.len(), 4);
    }

    #[test]
    fn hyperperiods() {
        let a = PwmSpec::rail_to_rail(mhz(500), 0.5, 2.5).unwrap();
        let b = PwmSpec::rail_to_rail(mhz(250), 0.5, 2.5).unwrap();
        let c = PwmSpec::rail_to_rail(
            Frequency::incommensurate(500e6 * std::f64::consts::SQRT_2).unwrap(),
            0.5,
            2.5,
        )
        .unwrap();
        assert!((hyperperiod(&[a, a, a]).unwrap() - 2e-9).abs() < 1e-24);
        assert!((hyperperiod(&[a, b]).unwrap() - 4e-9).abs() < 1e-24);
        assert_eq!(hyperperiod(&[a, c]), None);
        // 2 Hz and 3 Hz share a 1 s period
        let two = PwmSpec::rail_to_rail(Frequency::hz(2).unwrap(), 0.5, 1.0).unwrap();
        let three = PwmSpec::rail_to_rail(Frequency::hz(3).unwrap(), 0.5, 1.0).unwrap();
        assert_eq!(hyperperiod(&[two, three]), Some(1.0));
        // 3/2 Hz and 1 Hz: periods 2/3 s and 1 s -> 2 s
        let slow = PwmSpec::rail_to_rail(Frequency::ratio(3, 2).unwrap(), 0.5, 1.0).unwrap();
        let one = PwmSpec::rail_to_rail(Frequency::hz(1).unwrap(), 0.5, 1.0).unwrap();
        assert_eq!(hyperperiod(&[slow, one]), Some(2.0));
    }

    #[test]
    fn frequency_from_decimal() {
        assert_eq!(Frequency::from_f64(5e8).unwrap(), mhz(500));
        assert_eq!(Frequency::from_f64(0.5).unwrap(), Frequency::ratio(1, 2).unwrap());
        assert!(Frequency::from_f64(-1.0).is_err());
    }

    #[test]
    fn encode_examples() {
        assert_eq!(encode_input(0.0, 256).unwrap(), 0.0);
        assert_eq!(encode_input(1.0, 256).unwrap(), 1.0);
        assert_eq!(encode_input(0.5, 2).unwrap(), 1.0);
        assert!(encode_input(1.01, 256).is_err());
        assert!(encode_input(-0.1, 256).is_err());
        assert!(encode_input(0.5, 1).is_err());
    }

    proptest! {
        #[test]
        fn level_is_periodic(
            m in 1u64..2000,
            duty in 0.0f64..=1.0,
            phase in 0.0f64..1.0,
            frac in 0.0f64..1.0,
            k in 0u32..1000,
        ) {
            let s = PwmSpec::new(mhz(m), duty, phase, 1.0, 0.0).unwrap();
            // stay clear of the edges where rounding decides the level
            let pos = (frac + phase).rem_euclid(1.0);
            prop_assume!((pos - duty).abs() > 1e-6 && pos > 1e-6 && pos < 1.0 - 1e-6);
            let t = frac * s.period();
            prop_assert_eq!(s.level_at(t), s.level_at(t + f64::from(k) * s.period()));
        }

        #[test]
        fn schedule_has_two_edges_per_period(
            m in 1u64..2000,
            duty in 0.001f64..0.999,
            phase in 0.0f64..1.0,
            n in 1u32..50,
        ) {
            let s = PwmSpec::new(mhz(m), duty, phase, 1.0, 0.0).unwrap();
            let ev = edge_schedule(&[s], 0.0, f64::from(n) * s.period());
            prop_assert_eq!(ev.len(), 2 * n as usize);
            prop_assert!(ev.windows(2).all(|w| w[0].time < w[1].time));
        }

        #[test]
        fn high_fraction_matches_duty(m in 1u64..2000, duty in 0.001f64..0.999) {
            let s = PwmSpec::rail_to_rail(mhz(m), duty, 1.0).unwrap();
            let ev = edge_schedule(&[s], 0.0, s.period());
            let high = ev[1].time - ev[0].time;
            let frac = high / s.period();
            prop_assert!((frac - duty).abs() <= 2.0 * f64::EPSILON * duty.max(frac));
        }

        #[test]
        fn encode_is_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0, q in 2u32..1024) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(encode_input(lo, q).unwrap() <= encode_input(hi, q).unwrap());
        }
    }
}
