//! Flat `section.key = value` configuration.
//!
//! One assignment per line; `#` starts a comment. Numbers accept SPICE-style
//! multiplier suffixes, optionally followed by a unit:
//!
//! | suffix | factor |
//! |--------|--------|
//! | `f`    | 1e-15  |
//! | `p`    | 1e-12  |
//! | `n`    | 1e-9   |
//! | `u`    | 1e-6   |
//! | `m`    | 1e-3   |
//! | `k`    | 1e3    |
//! | `Meg`, `M` | 1e6 |
//! | `G`    | 1e9    |
//! | `%`    | 1e-2   |
//!
//! `m` is always milli and `M`/`Meg` (any case for `meg`) always mega.
//! Recognised units are `F`, `Hz`, `V`, `A`, `W`, `s`, `Ohm`/`ohm`.
//! Lists are comma-separated. Precedence: built-in defaults, then the
//! file, then `--set` overrides.

use std::fmt;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::device::{
    DeviceModel, LinearSwitchModel, SquareLawModel, DEFAULT_CHANNEL_LENGTH, DEFAULT_N_WIDTH, DEFAULT_P_WIDTH,
};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{origin}: {message}")]
pub struct ConfigError {
    /// `file:line`, `--set key=value`, or the key of a cross-field check.
    pub origin: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Linear,
    SquareLaw,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<Self, String> {
        match s {
            "linear" => Ok(ModelKind::Linear),
            "squarelaw" | "square-law" => Ok(ModelKind::SquareLaw),
            other => Err(format!("unknown model kind `{other}` (expected linear or squarelaw)")),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Linear => "linear",
            ModelKind::SquareLaw => "squarelaw",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CircuitKind {
    Inverter,
    Adder,
}

/// Fully resolved parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub freq: f64,
    pub v_dd: f64,

    pub inverter_c_out: f64,
    pub inverter_r_out: f64,
    pub adder_c_out: f64,
    pub adder_r_out_base: f64,

    pub n_width: f64,
    pub p_width: f64,
    pub channel_length: f64,

    pub model_kind: ModelKind,
    pub linear: LinearSwitchModel,
    pub square_law: SquareLawModel,

    pub steps_per_period: usize,
    pub newton_tol: f64,
    pub ss_tol: f64,
    pub max_periods: usize,
    pub v_init: f64,

    pub duty_sweep_duties: Vec<f64>,
    pub duty_sweep_r_outs: Vec<f64>,

    pub freq_sweep_f_min: f64,
    pub freq_sweep_f_max: f64,
    pub freq_sweep_points: usize,
    pub freq_sweep_duties: Vec<f64>,

    pub vdd_sweep_v_min: f64,
    pub vdd_sweep_v_max: f64,
    pub vdd_sweep_v_step: f64,
    pub vdd_sweep_duties: Vec<f64>,

    pub power_sweep_f_min: f64,
    pub power_sweep_f_max: f64,
    pub power_sweep_points: usize,
    pub power_sweep_duties: Vec<f64>,
    pub power_sweep_weights: Vec<u64>,

    pub single_circuit: CircuitKind,
    pub single_duties: Vec<f64>,
    pub single_weights: Vec<u64>,
    pub single_periods: usize,

    pub threads: usize,
    pub plot: bool,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            freq: 500e6,
            v_dd: 2.5,
            inverter_c_out: 1e-12,
            inverter_r_out: 100e3,
            adder_c_out: 10e-12,
            adder_r_out_base: 100e3,
            n_width: DEFAULT_N_WIDTH,
            p_width: DEFAULT_P_WIDTH,
            channel_length: DEFAULT_CHANNEL_LENGTH,
            model_kind: ModelKind::Linear,
            linear: LinearSwitchModel::default(),
            square_law: SquareLawModel::default(),
            steps_per_period: 256,
            newton_tol: 1e-6,
            ss_tol: 1e-6,
            max_periods: 10_000,
            v_init: 0.0,
            duty_sweep_duties: (1..=99).map(|p| f64::from(p) / 100.0).collect(),
            duty_sweep_r_outs: vec![0.0, 10e3, 100e3, 1e6],
            freq_sweep_f_min: 1e6,
            freq_sweep_f_max: 1500e6,
            freq_sweep_points: 30,
            freq_sweep_duties: vec![0.25, 0.5, 0.75],
            vdd_sweep_v_min: 0.5,
            vdd_sweep_v_max: 3.0,
            vdd_sweep_v_step: 0.1,
            vdd_sweep_duties: vec![0.25, 0.5, 0.75],
            power_sweep_f_min: 1e6,
            power_sweep_f_max: 1000e6,
            power_sweep_points: 30,
            power_sweep_duties: vec![0.5, 0.5, 0.5],
            power_sweep_weights: vec![1, 2, 4],
            single_circuit: CircuitKind::Inverter,
            single_duties: vec![0.5],
            single_weights: vec![7],
            single_periods: 20,
            threads: 0,
            plot: false,
        }
    }
}

/// Largest weight of the 3-bit adder.
pub const MAX_WEIGHT: u64 = 7;

fn positive(v: f64) -> Result<f64, String> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(format!("must be > 0, got {v}"))
    }
}

fn non_negative(v: f64) -> Result<f64, String> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("must be >= 0, got {v}"))
    }
}

fn fraction(v: f64) -> Result<f64, String> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("duty cycle {v} outside [0, 1]"))
    }
}

fn count(text: &str, min: usize) -> Result<usize, String> {
    let n: usize = text.trim().parse().map_err(|_| format!("expected an integer, got `{text}`"))?;
    if n < min {
        return Err(format!("must be >= {min}, got {n}"));
    }
    Ok(n)
}

fn list<T>(text: &str, item: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    let items = text.split(',').map(str::trim).filter(|s| !s.is_empty());
    let out = items.map(item).collect::<Result<Vec<_>, _>>()?;
    if out.is_empty() {
        return Err("list must not be empty".into());
    }
    Ok(out)
}

fn weight(text: &str) -> Result<u64, String> {
    let w: u64 = text.parse().map_err(|_| format!("expected an integer weight, got `{text}`"))?;
    if w > MAX_WEIGHT {
        return Err(format!("weight {w} outside [0, {MAX_WEIGHT}]"));
    }
    Ok(w)
}

fn boolean(text: &str) -> Result<bool, String> {
    match text.trim() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        other => Err(format!("expected true or false, got `{other}`")),
    }
}

const UNITS: [&str; 8] = ["F", "Hz", "V", "A", "W", "s", "Ohm", "ohm"];

/// Parses a number with an optional SI multiplier and unit.
pub fn parse_si(text: &str) -> Result<f64, String> {
    let t = text.trim();
    let split = (1..=t.len())
        .rev()
        .filter(|&end| t.is_char_boundary(end))
        .find(|&end| t[..end].parse::<f64>().is_ok())
        .ok_or_else(|| format!("expected a number, got `{t}`"))?;
    let value: f64 = t[..split].parse().expect("checked above");
    let suffix = &t[split..];
    let is_unit = |s: &str| s.is_empty() || UNITS.contains(&s);

    let factor = if is_unit(suffix) {
        1.0
    } else if suffix == "%" {
        1e-2
    } else if suffix.len() >= 3 && suffix.is_char_boundary(3) && suffix[..3].eq_ignore_ascii_case("meg") && is_unit(&suffix[3..]) {
        1e6
    } else {
        let mut chars = suffix.chars();
        let prefix = chars.next().expect("non-empty suffix");
        let factor = match prefix {
            'f' => 1e-15,
            'p' => 1e-12,
            'n' => 1e-9,
            'u' | 'µ' => 1e-6,
            'm' => 1e-3,
            'k' | 'K' => 1e3,
            'M' => 1e6,
            'G' => 1e9,
            _ => return Err(format!("unknown suffix `{suffix}` in `{t}`")),
        };
        if !is_unit(chars.as_str()) {
            return Err(format!("unknown suffix `{suffix}` in `{t}`"));
        }
        factor
    };
    let v = value * factor;
    if !v.is_finite() {
        return Err(format!("`{t}` is not a finite number"));
    }
    Ok(v)
}

fn fmt_list<T: fmt::Debug>(items: &[T]) -> String {
    items.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")
}

impl Params {
    /// Applies one assignment. The error message does not include the origin.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let num = || parse_si(value);
        match key {
            "sim.freq" => self.freq = positive(num()?)?,
            "sim.v_dd" => self.v_dd = positive(num()?)?,
            "inverter.c_out" => self.inverter_c_out = positive(num()?)?,
            "inverter.r_out" => self.inverter_r_out = non_negative(num()?)?,
            "adder.c_out" => self.adder_c_out = positive(num()?)?,
            "adder.r_out_base" => self.adder_r_out_base = non_negative(num()?)?,
            "geometry.n_width" => self.n_width = positive(num()?)?,
            "geometry.p_width" => self.p_width = positive(num()?)?,
            "geometry.length" => self.channel_length = positive(num()?)?,
            "model.kind" => self.model_kind = ModelKind::parse(value.trim())?,
            "model.r_on_n" => self.linear.r_on_n = positive(num()?)?,
            "model.r_on_p" => self.linear.r_on_p = positive(num()?)?,
            "model.vth_n" => self.square_law.vth_n = non_negative(num()?)?,
            "model.vth_p" => self.square_law.vth_p = non_negative(num()?)?,
            "model.kp_n" => self.square_law.kp_n = positive(num()?)?,
            "model.kp_p" => self.square_law.kp_p = positive(num()?)?,
            "solver.steps_per_period" => self.steps_per_period = count(value, 1)?,
            "solver.newton_tol" => self.newton_tol = positive(num()?)?,
            "solver.ss_tol" => self.ss_tol = positive(num()?)?,
            "solver.max_periods" => self.max_periods = count(value, 1)?,
            "solver.v_init" => self.v_init = num()?,
            "duty_sweep.duties" => self.duty_sweep_duties = list(value, |s| fraction(parse_si(s)?))?,
            "duty_sweep.r_outs" => self.duty_sweep_r_outs = list(value, |s| non_negative(parse_si(s)?))?,
            "freq_sweep.f_min" => self.freq_sweep_f_min = positive(num()?)?,
            "freq_sweep.f_max" => self.freq_sweep_f_max = positive(num()?)?,
            "freq_sweep.points" => self.freq_sweep_points = count(value, 2)?,
            "freq_sweep.duties" => self.freq_sweep_duties = list(value, |s| fraction(parse_si(s)?))?,
            "vdd_sweep.v_min" => self.vdd_sweep_v_min = positive(num()?)?,
            "vdd_sweep.v_max" => self.vdd_sweep_v_max = positive(num()?)?,
            "vdd_sweep.v_step" => self.vdd_sweep_v_step = positive(num()?)?,
            "vdd_sweep.duties" => self.vdd_sweep_duties = list(value, |s| fraction(parse_si(s)?))?,
            "power_sweep.f_min" => self.power_sweep_f_min = positive(num()?)?,
            "power_sweep.f_max" => self.power_sweep_f_max = positive(num()?)?,
            "power_sweep.points" => self.power_sweep_points = count(value, 2)?,
            "power_sweep.duties" => self.power_sweep_duties = list(value, |s| fraction(parse_si(s)?))?,
            "power_sweep.weights" => self.power_sweep_weights = list(value, weight)?,
            "single.circuit" => {
                self.single_circuit = match value.trim() {
                    "inverter" => CircuitKind::Inverter,
                    "adder" => CircuitKind::Adder,
                    other => return Err(format!("unknown circuit `{other}` (expected inverter or adder)")),
                }
            }
            "single.duties" => self.single_duties = list(value, |s| fraction(parse_si(s)?))?,
            "single.weights" => self.single_weights = list(value, weight)?,
            "single.periods" => self.single_periods = count(value, 1)?,
            "run.threads" => self.threads = count(value, 0)?,
            "plot.enabled" => self.plot = boolean(value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let circuit = match self.single_circuit {
            CircuitKind::Inverter => "inverter",
            CircuitKind::Adder => "adder",
        };
        vec![
            ("sim.freq", format!("{:?}", self.freq)),
            ("sim.v_dd", format!("{:?}", self.v_dd)),
            ("inverter.c_out", format!("{:?}", self.inverter_c_out)),
            ("inverter.r_out", format!("{:?}", self.inverter_r_out)),
            ("adder.c_out", format!("{:?}", self.adder_c_out)),
            ("adder.r_out_base", format!("{:?}", self.adder_r_out_base)),
            ("geometry.n_width", format!("{:?}", self.n_width)),
            ("geometry.p_width", format!("{:?}", self.p_width)),
            ("geometry.length", format!("{:?}", self.channel_length)),
            ("model.kind", self.model_kind.to_string()),
            ("model.r_on_n", format!("{:?}", self.linear.r_on_n)),
            ("model.r_on_p", format!("{:?}", self.linear.r_on_p)),
            ("model.vth_n", format!("{:?}", self.square_law.vth_n)),
            ("model.vth_p", format!("{:?}", self.square_law.vth_p)),
            ("model.kp_n", format!("{:?}", self.square_law.kp_n)),
            ("model.kp_p", format!("{:?}", self.square_law.kp_p)),
            ("solver.steps_per_period", format!("{:?}", self.steps_per_period)),
            ("solver.newton_tol", format!("{:?}", self.newton_tol)),
            ("solver.ss_tol", format!("{:?}", self.ss_tol)),
            ("solver.max_periods", format!("{:?}", self.max_periods)),
            ("solver.v_init", format!("{:?}", self.v_init)),
            ("duty_sweep.duties", fmt_list(&self.duty_sweep_duties)),
            ("duty_sweep.r_outs", fmt_list(&self.duty_sweep_r_outs)),
            ("freq_sweep.f_min", format!("{:?}", self.freq_sweep_f_min)),
            ("freq_sweep.f_max", format!("{:?}", self.freq_sweep_f_max)),
            ("freq_sweep.points", format!("{:?}", self.freq_sweep_points)),
            ("freq_sweep.duties", fmt_list(&self.freq_sweep_duties)),
            ("vdd_sweep.v_min", format!("{:?}", self.vdd_sweep_v_min)),
            ("vdd_sweep.v_max", format!("{:?}", self.vdd_sweep_v_max)),
            ("vdd_sweep.v_step", format!("{:?}", self.vdd_sweep_v_step)),
            ("vdd_sweep.duties", fmt_list(&self.vdd_sweep_duties)),
            ("power_sweep.f_min", format!("{:?}", self.power_sweep_f_min)),
            ("power_sweep.f_max", format!("{:?}", self.power_sweep_f_max)),
            ("power_sweep.points", format!("{:?}", self.power_sweep_points)),
            ("power_sweep.duties", fmt_list(&self.power_sweep_duties)),
            ("power_sweep.weights", fmt_list(&self.power_sweep_weights)),
            ("single.circuit", circuit.to_string()),
            ("single.duties", fmt_list(&self.single_duties)),
            ("single.weights", fmt_list(&self.single_weights)),
            ("single.periods", format!("{:?}", self.single_periods)),
            ("run.threads", format!("{:?}", self.threads)),
            ("plot.enabled", format!("{:?}", self.plot)),
        ]
    }

    /// Cross-field checks that a single assignment cannot catch.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |origin: &str, message: String| Err(ConfigError { origin: origin.into(), message });
        if self.freq_sweep_f_min >= self.freq_sweep_f_max {
            return fail("freq_sweep", "f_min must be below f_max".into());
        }
        if self.power_sweep_f_min >= self.power_sweep_f_max {
            return fail("power_sweep", "f_min must be below f_max".into());
        }
        if self.vdd_sweep_v_min > self.vdd_sweep_v_max {
            return fail("vdd_sweep", "v_min must not exceed v_max".into());
        }
        if self.power_sweep_duties.len() != self.power_sweep_weights.len() {
            return fail(
                "power_sweep",
                format!(
                    "{} duties but {} weights",
                    self.power_sweep_duties.len(),
                    self.power_sweep_weights.len()
                ),
            );
        }
        if self.single_circuit == CircuitKind::Inverter && self.single_duties.len() != 1 {
            return fail("single.duties", "the inverter takes exactly one duty cycle".into());
        }
        if self.single_circuit == CircuitKind::Adder && self.single_duties.len() != self.single_weights.len() {
            return fail(
                "single",
                format!("{} duties but {} weights", self.single_duties.len(), self.single_weights.len()),
            );
        }
        if let Err(e) = self.device_model().validate() {
            return fail("model", e.to_string());
        }
        Ok(())
    }

    pub fn device_model(&self) -> DeviceModel {
        self.model_for(self.model_kind)
    }

    pub fn model_for(&self, kind: ModelKind) -> DeviceModel {
        match kind {
            ModelKind::Linear => DeviceModel::Linear(self.linear),
            ModelKind::SquareLaw => DeviceModel::SquareLaw(self.square_law),
        }
    }

    /// Applies `key = value` lines; `origin` names the source in errors.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = || format!("{origin}:{}", i + 1);
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError {
                origin: at(),
                message: format!("expected `section.key = value`, got `{line}`"),
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|message| ConfigError { origin: at(), message })?;
        }
        Ok(())
    }

    /// Applies one `key=value` command-line override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let origin = format!("--set {assignment}");
        let (key, value) = assignment.split_once('=').ok_or_else(|| ConfigError {
            origin: origin.clone(),
            message: "expected key=value".into(),
        })?;
        self.set(key.trim(), value.trim()).map_err(|message| ConfigError { origin, message })
    }
}

/// Defaults, overlaid with the file at `path` (if any), overlaid with
/// `overrides`.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<Params, ConfigError> {
    let mut params = Params::default();
    if let Some(path) = path {
        let origin = path.display().to_string();
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError { origin: origin.clone(), message: e.to_string() })?;
        params.apply_text(&text, &origin)?;
    }
    for o in overrides {
        params.apply_override(o)?;
    }
    params.validate()?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn si_suffixes() {
        let cases = [
            ("10pF", 10e-12),
            ("1p", 1e-12),
            ("320n", 320e-9),
            ("1.2u", 1.2e-6),
            ("1.2um", f64::NAN),
            ("100m", 0.1),
            ("100k", 100e3),
            ("100kOhm", 100e3),
            ("1Meg", 1e6),
            ("1meg", 1e6),
            ("1M", 1e6),
            ("500MHz", 500e6),
            ("2.5V", 2.5),
            ("2.5", 2.5),
            ("1e3", 1e3),
            ("25%", 0.25),
            ("1G", 1e9),
            ("3f", 3e-15),
        ];
        for (text, expected) in cases {
            match parse_si(text) {
                Ok(v) => assert!((v - expected).abs() <= 1e-12 * expected.abs(), "{text} -> {v}"),
                Err(_) => assert!(expected.is_nan(), "{text} rejected"),
            }
        }
        assert!(parse_si("abc").is_err());
        assert!(parse_si("5x").is_err());
        assert!(parse_si("inf").is_err());
    }

    #[test]
    fn empty_file_gives_defaults() {
        let mut p = Params::default();
        p.apply_text("", "empty.cfg").unwrap();
        assert_eq!(p, Params::default());
        assert_eq!(p.v_dd, 2.5);
        assert_eq!(p.inverter_c_out, 1e-12);
        assert_eq!(p.freq, 500e6);
        assert_eq!(p.inverter_r_out, 100e3);
    }

    #[test]
    fn file_values_and_comments() {
        let mut p = Params::default();
        let text = "# adder settings\n\nadder.c_out = 10pF   # extended\nmodel.kind = squarelaw\n";
        p.apply_text(text, "x.cfg").unwrap();
        assert!((p.adder_c_out - 10e-12).abs() < 1e-24);
        assert_eq!(p.model_kind, ModelKind::SquareLaw);
        // unspecified square-law parameters keep their defaults
        assert_eq!(p.square_law, SquareLawModel::default());
    }

    #[test]
    fn errors_name_the_line() {
        let mut p = Params::default();
        let err = p.apply_text("sim.v_dd = 2\nbogus.key = 1\n", "bad.cfg").unwrap_err();
        assert_eq!(err.origin, "bad.cfg:2");
        assert!(err.message.contains("unknown key"));
        let err = p.apply_text("model.vth_n = -0.2", "bad.cfg").unwrap_err();
        assert_eq!(err.origin, "bad.cfg:1");
        let err = p.apply_text("sim.freq = fast", "bad.cfg").unwrap_err();
        assert!(err.message.contains("expected a number"));
        let err = p.apply_text("sim.freq 5", "bad.cfg").unwrap_err();
        assert!(err.message.contains("section.key = value"));
        let err = p.apply_text("power_sweep.weights = 1, 9", "bad.cfg").unwrap_err();
        assert!(err.message.contains("weight 9"));
    }

    #[test]
    fn overrides_take_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "sim.v_dd = 1.8\ninverter.r_out = 10k\n").unwrap();
        let p = load_config(Some(&path), &["sim.v_dd=3.3".to_string()]).unwrap();
        assert_eq!(p.v_dd, 3.3);
        assert_eq!(p.inverter_r_out, 10e3);
        let err = load_config(Some(&path), &["nope".to_string()]).unwrap_err();
        assert_eq!(err.origin, "--set nope");
        assert!(load_config(Some(&dir.path().join("missing.cfg")), &[]).is_err());
    }

    #[test]
    fn cross_field_validation() {
        let err = load_config(None, &["freq_sweep.f_min=2G".into()]).unwrap_err();
        assert_eq!(err.origin, "freq_sweep");
        let err = load_config(None, &["power_sweep.weights=1,2".into()]).unwrap_err();
        assert_eq!(err.origin, "power_sweep");
    }

    #[test]
    fn entries_round_trip() {
        let mut p = Params::default();
        p.set("duty_sweep.duties", "0, 100%").unwrap();
        p.set("model.kind", "squarelaw").unwrap();
        let mut q = Params::default();
        for (k, v) in p.entries() {
            q.set(k, &v).unwrap();
        }
        assert_eq!(p, q);
    }
}
