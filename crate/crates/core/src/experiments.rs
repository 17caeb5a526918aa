//! Experiment catalog: parametric sweeps over the inverter cell and the 3x3
//! weighted adder, written as deterministic CSV (and optionally SVG).
//!
//! Sweep points run on a bounded worker pool; rows are collected in grid
//! order before writing, so thread count never changes the output bytes.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::analysis::{eq2_prediction, measure, AnalysisError};
use crate::config::{CircuitKind, ConfigError, ModelKind, Params};
use crate::device::{CellGeometry, DeviceModel};
use crate::netlist::{build_inverter, build_weighted_adder, AdderConfig, Netlist, NetlistError};
use crate::plot::{LinePlot, Series};
use crate::signal::{Frequency, PwmSpec, SignalError};
use crate::solver::{periodic_steady_state, transient, SolverError, SolverOptions, SteadyStateResult};

pub const ADDER_BITS: u32 = 3;

/// The six 3x3 adder cases: duty cycles and weights of inputs 1..3.
pub const ADDER_TABLE_ROWS: [([f64; 3], [u64; 3]); 6] = [
    ([0.70, 0.80, 0.90], [7, 7, 7]),
    ([0.50, 0.50, 0.50], [1, 2, 4]),
    ([0.20, 0.60, 0.80], [5, 6, 7]),
    ([0.95, 0.90, 0.80], [7, 6, 6]),
    ([0.30, 0.40, 0.50], [1, 4, 2]),
    ([0.80, 0.20, 0.50], [7, 3, 4]),
];

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("solver error at {context}: {source}")]
    Solver { context: String, source: SolverError },
    #[error("steady state did not converge at {0}")]
    NotConverged(String),
    #[error("circuit error at {context}: {message}")]
    Circuit { context: String, message: String },
    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl ExperimentError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) | ExperimentError::UnknownExperiment(_) => 2,
            ExperimentError::Solver { .. } | ExperimentError::NotConverged(_) | ExperimentError::Circuit { .. } => 3,
            ExperimentError::Io { .. } => 1,
        }
    }
}

fn circuit_err(context: &str, e: impl fmt::Display) -> ExperimentError {
    ExperimentError::Circuit { context: context.to_string(), message: e.to_string() }
}

impl From<(String, NetlistError)> for ExperimentError {
    fn from((context, e): (String, NetlistError)) -> Self {
        circuit_err(&context, e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentName {
    DutySweep,
    FreqSweep,
    VddSweepAbs,
    VddSweepRel,
    AdderTable,
    PowerSweep,
    SingleRun,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 7] = [
        ExperimentName::DutySweep,
        ExperimentName::FreqSweep,
        ExperimentName::VddSweepAbs,
        ExperimentName::VddSweepRel,
        ExperimentName::AdderTable,
        ExperimentName::PowerSweep,
        ExperimentName::SingleRun,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentName::DutySweep => "duty_sweep",
            ExperimentName::FreqSweep => "freq_sweep",
            ExperimentName::VddSweepAbs => "vdd_sweep_abs",
            ExperimentName::VddSweepRel => "vdd_sweep_rel",
            ExperimentName::AdderTable => "adder_table",
            ExperimentName::PowerSweep => "power_sweep",
            ExperimentName::SingleRun => "single_run",
        }
    }
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentName {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ExperimentName::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| ExperimentError::UnknownExperiment(s.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub name: ExperimentName,
    pub params: Params,
    pub out_dir: PathBuf,
}

/// A CSV table with its column header.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(columns: &[&'static str]) -> Self {
        Table { columns: columns.to_vec(), rows: Vec::new() }
    }

    /// CSV text: the reproducibility stamp, the header, then the rows.
    pub fn to_csv(&self, stamp: &str) -> String {
        let mut out = String::new();
        out.push_str(stamp);
        out.push('\n');
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Header comment recording the experiment and every resolved parameter.
pub fn stamp(name: ExperimentName, params: &Params) -> String {
    let entries: Vec<String> = params.entries().into_iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("# pwmsim {name}; {}", entries.join("; "))
}

fn cell(v: f64) -> String {
    format!("{v:?}")
}

/// `n` log-spaced frequencies, rounded to whole hertz.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let ratio = (hi / lo).ln();
    (0..n)
        .map(|i| {
            if i == 0 {
                lo.round()
            } else if i == n - 1 {
                hi.round()
            } else {
                (lo * (ratio * i as f64 / (n - 1) as f64).exp()).round()
            }
        })
        .collect()
}

/// Supply grid `v_min, v_min + step, ..., v_max`, rounded to the nanovolt.
pub fn vdd_grid(v_min: f64, v_max: f64, step: f64) -> Vec<f64> {
    let n = ((v_max - v_min) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| ((v_min + step * i as f64) * 1e9).round() / 1e9).collect()
}

fn base_geometry(params: &Params, r_out: f64) -> Result<CellGeometry, ExperimentError> {
    CellGeometry::new(1, r_out, params.n_width, params.p_width, params.channel_length)
        .map_err(|e| circuit_err("geometry", e))
}

fn inverter_netlist(params: &Params, model: DeviceModel, r_out: f64, v_dd: f64) -> Result<Netlist, ExperimentError> {
    build_inverter(base_geometry(params, r_out)?, model, params.inverter_c_out, v_dd)
        .map_err(|e| circuit_err("inverter", e))
}

fn adder_netlist(params: &Params, model: DeviceModel, weights: &[u64], v_dd: f64) -> Result<Netlist, ExperimentError> {
    build_weighted_adder(&AdderConfig {
        n_bits: ADDER_BITS,
        weights: weights.to_vec(),
        v_dd,
        c_out: params.adder_c_out,
        base_geometry: base_geometry(params, params.adder_r_out_base)?,
        model,
    })
    .map_err(|e| circuit_err("adder", e))
}

fn stimuli(freq: f64, duties: &[f64], v_dd: f64) -> Result<Vec<PwmSpec>, SignalError> {
    let f = Frequency::from_f64(freq)?;
    duties.iter().map(|&d| PwmSpec::rail_to_rail(f, d, v_dd)).collect()
}

fn solver_options(params: &Params, netlist: &Netlist, freq: f64) -> SolverOptions {
    SolverOptions {
        max_step: Some(1.0 / freq / params.steps_per_period as f64),
        newton_tol: params.newton_tol,
        ss_tol: params.ss_tol,
        max_periods: params.max_periods,
        v_init: params.v_init,
        ..SolverOptions::for_netlist(netlist)
    }
}

/// Steady state of `netlist` driven at `freq` with `duties`.
pub fn solve_point(
    params: &Params,
    netlist: &Netlist,
    freq: f64,
    duties: &[f64],
    context: &str,
) -> Result<SteadyStateResult, ExperimentError> {
    let stim = stimuli(freq, duties, netlist.v_dd()).map_err(|e| circuit_err(context, e))?;
    let opts = solver_options(params, netlist, freq);
    let pss = periodic_steady_state(netlist, &stim, &opts)
        .map_err(|source| ExperimentError::Solver { context: context.to_string(), source })?;
    if !pss.converged {
        return Err(ExperimentError::NotConverged(context.to_string()));
    }
    Ok(pss)
}

fn pool(params: &Params) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(params.threads)
        .build()
        .expect("thread pool")
}

/// Runs `f` over `items` on the worker pool, keeping item order.
fn sweep<T: Sync, R: Send>(
    params: &Params,
    items: &[T],
    f: impl Fn(&T) -> Result<R, ExperimentError> + Sync + Send,
) -> Result<Vec<R>, ExperimentError> {
    pool(params).install(|| items.par_iter().map(&f).collect())
}

fn duty_label(d: f64) -> String {
    format!("DC {}%", (d * 1e4).round() / 1e2)
}

pub fn duty_sweep(params: &Params) -> Result<(Table, LinePlot), ExperimentError> {
    let model = params.device_model();
    let grid: Vec<(f64, f64)> = params
        .duty_sweep_r_outs
        .iter()
        .flat_map(|&r| params.duty_sweep_duties.iter().map(move |&d| (r, d)))
        .collect();
    let results = sweep(params, &grid, |&(r_out, duty)| {
        let net = inverter_netlist(params, model, r_out, params.v_dd)?;
        solve_point(params, &net, params.freq, &[duty], &format!("r_out={r_out} duty={duty}"))
    })?;
    let mut table = Table::new(&["r_out_ohm", "duty", "v_avg_V"]);
    let mut series: Vec<Series> = params
        .duty_sweep_r_outs
        .iter()
        .map(|r| Series { label: format!("R_out {r} ohm"), points: Vec::new() })
        .collect();
    for (i, (&(r, d), pss)) in grid.iter().zip(&results).enumerate() {
        table.rows.push(vec![cell(r), cell(d), cell(pss.v_avg)]);
        series[i / params.duty_sweep_duties.len()].points.push((d, pss.v_avg));
    }
    let plot = LinePlot {
        title: "Output voltage vs input duty cycle".into(),
        x_label: "duty cycle".into(),
        y_label: "V_out (V)".into(),
        log_x: false,
        series,
    };
    Ok((table, plot))
}

pub fn freq_sweep(params: &Params) -> Result<(Table, LinePlot), ExperimentError> {
    let model = params.device_model();
    let freqs = log_grid(params.freq_sweep_f_min, params.freq_sweep_f_max, params.freq_sweep_points);
    let grid: Vec<(f64, f64)> = params
        .freq_sweep_duties
        .iter()
        .flat_map(|&d| freqs.iter().map(move |&f| (f, d)))
        .collect();
    let net = inverter_netlist(params, model, params.inverter_r_out, params.v_dd)?;
    let results = sweep(params, &grid, |&(f, duty)| {
        solve_point(params, &net, f, &[duty], &format!("freq={f} duty={duty}"))
    })?;
    let mut table = Table::new(&["freq_hz", "duty", "v_avg_V"]);
    let mut series: Vec<Series> = params
        .freq_sweep_duties
        .iter()
        .map(|&d| Series { label: duty_label(d), points: Vec::new() })
        .collect();
    for (i, (&(f, d), pss)) in grid.iter().zip(&results).enumerate() {
        table.rows.push(vec![cell(f), cell(d), cell(pss.v_avg)]);
        series[i / freqs.len()].points.push((f, pss.v_avg));
    }
    let plot = LinePlot {
        title: "Output voltage vs input frequency".into(),
        x_label: "frequency (Hz)".into(),
        y_label: "V_out (V)".into(),
        log_x: true,
        series,
    };
    Ok((table, plot))
}

fn vdd_sweep(params: &Params, relative: bool) -> Result<(Table, LinePlot), ExperimentError> {
    let model = params.device_model();
    let supplies = vdd_grid(params.vdd_sweep_v_min, params.vdd_sweep_v_max, params.vdd_sweep_v_step);
    let grid: Vec<(f64, f64)> = params
        .vdd_sweep_duties
        .iter()
        .flat_map(|&d| supplies.iter().map(move |&v| (v, d)))
        .collect();
    let results = sweep(params, &grid, |&(v_dd, duty)| {
        let net = inverter_netlist(params, model, params.inverter_r_out, v_dd)?;
        solve_point(params, &net, params.freq, &[duty], &format!("v_dd={v_dd} duty={duty}"))
    })?;
    let columns: &[&'static str] =
        if relative { &["v_dd_V", "duty", "v_avg_V", "v_rel"] } else { &["v_dd_V", "duty", "v_avg_V"] };
    let mut table = Table::new(columns);
    let mut series: Vec<Series> = params
        .vdd_sweep_duties
        .iter()
        .map(|&d| Series { label: duty_label(d), points: Vec::new() })
        .collect();
    for (i, (&(v_dd, d), pss)) in grid.iter().zip(&results).enumerate() {
        let mut row = vec![cell(v_dd), cell(d), cell(pss.v_avg)];
        let y = if relative {
            let rel = pss.v_avg / v_dd;
            row.push(cell(rel));
            rel
        } else {
            pss.v_avg
        };
        table.rows.push(row);
        series[i / supplies.len()].points.push((v_dd, y));
    }
    let plot = LinePlot {
        title: if relative { "Output voltage relative to supply" } else { "Output voltage vs supply" }.into(),
        x_label: "V_dd (V)".into(),
        y_label: if relative { "V_out / V_dd" } else { "V_out (V)" }.into(),
        log_x: false,
        series,
    };
    Ok((table, plot))
}

pub fn vdd_sweep_abs(params: &Params) -> Result<(Table, LinePlot), ExperimentError> {
    vdd_sweep(params, false)
}

pub fn vdd_sweep_rel(params: &Params) -> Result<(Table, LinePlot), ExperimentError> {
    vdd_sweep(params, true)
}

/// One adder case under both device models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdderRow {
    pub duties: [f64; 3],
    pub weights: [u64; 3],
    pub v_theoretical: f64,
    pub v_linear: f64,
    pub v_square_law: f64,
}

pub fn adder_rows(params: &Params) -> Result<Vec<AdderRow>, ExperimentError> {
    let jobs: Vec<(usize, ModelKind)> = (0..ADDER_TABLE_ROWS.len())
        .flat_map(|i| [(i, ModelKind::Linear), (i, ModelKind::SquareLaw)])
        .collect();
    let sims = sweep(params, &jobs, |&(i, kind)| {
        let (duties, weights) = ADDER_TABLE_ROWS[i];
        let net = adder_netlist(params, params.model_for(kind), &weights, params.v_dd)?;
        solve_point(params, &net, params.freq, &duties, &format!("adder row {} ({kind})", i + 1)).map(|p| p.v_avg)
    })?;
    ADDER_TABLE_ROWS
        .iter()
        .enumerate()
        .map(|(i, &(duties, weights))| {
            let v_theoretical = eq2_prediction(&duties, &weights, ADDER_BITS, params.v_dd)
                .map_err(|e: AnalysisError| circuit_err("adder table", e))?;
            Ok(AdderRow { duties, weights, v_theoretical, v_linear: sims[2 * i], v_square_law: sims[2 * i + 1] })
        })
        .collect()
}

/// The adder table and its per-model error report.
pub fn adder_table(params: &Params) -> Result<(Table, Table, LinePlot), ExperimentError> {
    let rows = adder_rows(params)?;
    let mut table = Table::new(&[
        "dc1",
        "w1",
        "dc2",
        "w2",
        "dc3",
        "w3",
        "v_theoretical",
        "v_simulated",
        "v_simulated_linear",
        "v_simulated_squarelaw",
    ]);
    let mut errors = Table::new(&["row", "model", "v_theoretical", "v_simulated", "abs_error", "rel_error"]);
    let mut theory = Series { label: "theoretical".into(), points: Vec::new() };
    let mut lin = Series { label: "linear".into(), points: Vec::new() };
    let mut sq = Series { label: "squarelaw".into(), points: Vec::new() };
    for (i, r) in rows.iter().enumerate() {
        let selected = match params.model_kind {
            ModelKind::Linear => r.v_linear,
            ModelKind::SquareLaw => r.v_square_law,
        };
        let mut row = Vec::new();
        for k in 0..3 {
            row.push(cell(r.duties[k]));
            row.push(r.weights[k].to_string());
        }
        row.extend([cell(r.v_theoretical), cell(selected), cell(r.v_linear), cell(r.v_square_law)]);
        table.rows.push(row);
        for (kind, v) in [(ModelKind::Linear, r.v_linear), (ModelKind::SquareLaw, r.v_square_law)] {
            let rep = measure(r.v_theoretical, v, params.v_dd);
            errors.rows.push(vec![
                (i + 1).to_string(),
                kind.to_string(),
                cell(rep.v_theoretical),
                cell(rep.v_simulated),
                cell(rep.abs_error),
                cell(rep.rel_error),
            ]);
        }
        let x = (i + 1) as f64;
        theory.points.push((x, r.v_theoretical));
        lin.points.push((x, r.v_linear));
        sq.points.push((x, r.v_square_law));
    }
    let plot = LinePlot {
        title: "3x3 weighted adder cases".into(),
        x_label: "case".into(),
        y_label: "V_out (V)".into(),
        log_x: false,
        series: vec![theory, lin, sq],
    };
    Ok((table, errors, plot))
}

pub fn power_sweep(params: &Params) -> Result<(Table, LinePlot), ExperimentError> {
    let model = params.device_model();
    let freqs = log_grid(params.power_sweep_f_min, params.power_sweep_f_max, params.power_sweep_points);
    let net = adder_netlist(params, model, &params.power_sweep_weights, params.v_dd)?;
    let results = sweep(params, &freqs, |&f| {
        solve_point(params, &net, f, &params.power_sweep_duties, &format!("freq={f}"))
    })?;
    let mut table = Table::new(&["freq_hz", "avg_power_W"]);
    let mut series = Series { label: format!("{} model", model.name()), points: Vec::new() };
    for (&f, pss) in freqs.iter().zip(&results) {
        table.rows.push(vec![cell(f), cell(pss.avg_power)]);
        series.points.push((f, pss.avg_power));
    }
    let plot = LinePlot {
        title: "Average power vs input frequency".into(),
        x_label: "frequency (Hz)".into(),
        y_label: "power (W)".into(),
        log_x: true,
        series: vec![series],
    };
    Ok((table, plot))
}

/// Steady-state summary, transient trace from `solver.v_init`, and the
/// netlist table of the configured single circuit.
pub fn single_run(params: &Params) -> Result<(Table, Table, String), ExperimentError> {
    let model = params.device_model();
    let net = match params.single_circuit {
        CircuitKind::Inverter => inverter_netlist(params, model, params.inverter_r_out, params.v_dd)?,
        CircuitKind::Adder => adder_netlist(params, model, &params.single_weights, params.v_dd)?,
    };
    let pss = solve_point(params, &net, params.freq, &params.single_duties, "single run")?;
    let mut summary = Table::new(&[
        "v_avg_V",
        "ripple_pp_V",
        "avg_power_W",
        "periods_to_converge",
        "window_s",
        "v_start_V",
        "v_end_V",
    ]);
    summary.rows.push(vec![
        cell(pss.v_avg),
        cell(pss.ripple_pp),
        cell(pss.avg_power),
        pss.periods_to_converge.to_string(),
        cell(pss.window),
        cell(pss.v_start),
        cell(pss.v_end),
    ]);

    let stim = stimuli(params.freq, &params.single_duties, params.v_dd).map_err(|e| circuit_err("single run", e))?;
    let t_end = params.single_periods as f64 / params.freq;
    let trace = transient(&net, &stim, t_end, &solver_options(params, &net, params.freq))
        .map_err(|source| ExperimentError::Solver { context: "single run trace".into(), source })?;
    let mut trace_table = Table::new(&["t_s", "v_node_V", "i_supply_A"]);
    for s in trace.samples() {
        trace_table.rows.push(vec![cell(s.t), cell(s.v_node), cell(s.i_supply)]);
    }
    Ok((summary, trace_table, net.to_string()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), ExperimentError> {
    fs::write(path, contents).map_err(|source| ExperimentError::Io { path: path.to_path_buf(), source })
}

/// Runs one experiment and writes its files into `spec.out_dir`, returning
/// the paths written.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<PathBuf>, ExperimentError> {
    let params = &spec.params;
    params.validate()?;
    fs::create_dir_all(&spec.out_dir).map_err(|source| ExperimentError::Io { path: spec.out_dir.clone(), source })?;
    let stamp = stamp(spec.name, params);
    let name = spec.name.as_str();
    let mut written = Vec::new();
    let mut emit = |file: String, contents: String| -> Result<(), ExperimentError> {
        let path = spec.out_dir.join(file);
        write_file(&path, &contents)?;
        written.push(path);
        Ok(())
    };

    let (table, plot) = match spec.name {
        ExperimentName::DutySweep => duty_sweep(params)?,
        ExperimentName::FreqSweep => freq_sweep(params)?,
        ExperimentName::VddSweepAbs => vdd_sweep_abs(params)?,
        ExperimentName::VddSweepRel => vdd_sweep_rel(params)?,
        ExperimentName::PowerSweep => power_sweep(params)?,
        ExperimentName::AdderTable => {
            let (table, errors, plot) = adder_table(params)?;
            emit(format!("{name}_errors.csv"), errors.to_csv(&stamp))?;
            (table, plot)
        }
        ExperimentName::SingleRun => {
            let (summary, trace, netlist) = single_run(params)?;
            emit(format!("{name}.csv"), summary.to_csv(&stamp))?;
            emit(format!("{name}_trace.csv"), trace.to_csv(&stamp))?;
            emit(format!("{name}_netlist.txt"), netlist)?;
            return Ok(written);
        }
    };
    emit(format!("{name}.csv"), table.to_csv(&stamp))?;
    if params.plot {
        emit(format!("{name}.svg"), plot.to_svg())?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        let g = log_grid(1e6, 1500e6, 30);
        assert_eq!(g.len(), 30);
        assert_eq!(g[0], 1e6);
        assert_eq!(g[29], 1500e6);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!(g.iter().all(|f| f.fract() == 0.0));
        let v = vdd_grid(0.5, 3.0, 0.1);
        assert_eq!(v.len(), 26);
        assert_eq!(v[0], 0.5);
        assert_eq!(v[25], 3.0);
        assert_eq!(v[7], 1.2);
    }

    #[test]
    fn experiment_names_round_trip() {
        for e in ExperimentName::ALL {
            assert_eq!(e.as_str().parse::<ExperimentName>().unwrap(), e);
        }
        assert!("fig9".parse::<ExperimentName>().is_err());
    }

    #[test]
    fn stamp_lists_every_key() {
        let p = Params::default();
        let s = stamp(ExperimentName::DutySweep, &p);
        assert!(s.starts_with("# pwmsim duty_sweep; "));
        for (k, _) in p.entries() {
            assert!(s.contains(&format!("{k}=")), "{k}");
        }
        assert!(!s.contains('\n'));
    }

    #[test]
    fn exit_codes() {
        let c = ExperimentError::Config(ConfigError { origin: "x".into(), message: "y".into() });
        assert_eq!(c.exit_code(), 2);
        let s = ExperimentError::Solver { context: "p".into(), source: SolverError::NoHyperperiod };
        assert_eq!(s.exit_code(), 3);
    }
}
