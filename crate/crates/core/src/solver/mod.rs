//! Shared-node voltage trajectory and periodic steady state.
//!
//! Time is cut into segments at PWM edges; inside a segment every cell drives
//! one fixed branch. With the linear device model each segment is an RC
//! relaxation solved exactly, and the periodic steady state follows in closed
//! form from the affine one-period map `V -> A*V + B`. With the square-law
//! model segments are integrated by backward Euler with Newton iteration and
//! the steady state is found by repeating periods until the start voltage
//! stops moving.

mod engine;
mod reference;
mod trace;

use thiserror::Error;

use crate::device::DeviceError;
use crate::netlist::Netlist;
use crate::signal::{hyperperiod, PwmSpec};

pub use engine::AffineMap;
pub use reference::reference_integrator;
pub use trace::{Sample, TransientTrace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("netlist has {expected} inputs but {got} stimuli were given")]
    StimulusCount { expected: usize, got: usize },
    #[error("invalid solver option: {0}")]
    InvalidOption(String),
    #[error("analytic_linear mode requires the linear device model")]
    NonlinearModel,
    #[error("stimuli are incommensurate and no long-run horizon was supplied")]
    NoHyperperiod,
    #[error("common period spans {periods:.3e} stimulus periods; supply a long-run horizon")]
    HyperperiodTooLong { periods: f64 },
    #[error("newton iteration did not converge at t={time:e} s, v={voltage} V")]
    NewtonDiverged { time: f64, voltage: f64 },
    #[error("step {dt:e} s must be positive and below the shortest high/low interval {min_gap:e} s")]
    InvalidStep { dt: f64, min_gap: f64 },
    #[error(transparent)]
    Device(#[from] DeviceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverMode {
    /// Exact exponentials between edges; linear device model only.
    AnalyticLinear,
    /// Backward Euler with Newton iteration; any device model.
    ImplicitNonlinear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub mode: SolverMode,
    /// Substep cap. `None` means the shortest stimulus period / 256.
    pub max_step: Option<f64>,
    pub newton_tol: f64,
    pub ss_tol: f64,
    pub max_periods: usize,
    pub v_init: f64,
    /// Averaging horizon for stimuli without a usable common period.
    pub horizon: Option<f64>,
    /// Bracketed shooting on the start voltage while settling in implicit
    /// mode, instead of plain period iteration. The stopping test is
    /// unchanged.
    pub accelerate: bool,
}

pub const DEFAULT_STEPS_PER_PERIOD: usize = 256;

/// Common periods longer than this many stimulus periods need a horizon.
const MAX_WINDOW_PERIODS: f64 = 1e6;

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            mode: SolverMode::AnalyticLinear,
            max_step: None,
            newton_tol: 1e-6,
            ss_tol: 1e-6,
            max_periods: 10_000,
            v_init: 0.0,
            horizon: None,
            accelerate: true,
        }
    }
}

impl SolverOptions {
    /// Defaults with the mode matching the device model.
    pub fn for_netlist(netlist: &Netlist) -> Self {
        let mode = if netlist.model().is_linear() {
            SolverMode::AnalyticLinear
        } else {
            SolverMode::ImplicitNonlinear
        };
        SolverOptions { mode, ..Default::default() }
    }

    fn validate(&self) -> Result<(), SolverError> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(SolverError::InvalidOption(format!("{name} must be > 0, got {v}")))
            }
        };
        positive("newton_tol", self.newton_tol)?;
        positive("ss_tol", self.ss_tol)?;
        if let Some(s) = self.max_step {
            positive("max_step", s)?;
        }
        if let Some(h) = self.horizon {
            positive("horizon", h)?;
        }
        if self.max_periods == 0 {
            return Err(SolverError::InvalidOption("max_periods must be >= 1".into()));
        }
        if !self.v_init.is_finite() {
            return Err(SolverError::InvalidOption("v_init must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyStateResult {
    pub v_avg: f64,
    pub ripple_pp: f64,
    /// Time average of `v_dd` times the total pull-up current.
    pub avg_power: f64,
    pub periods_to_converge: usize,
    /// Length of the averaging window in seconds.
    pub window: f64,
    pub v_start: f64,
    pub v_end: f64,
    pub converged: bool,
}

fn check_stimuli(netlist: &Netlist, stimuli: &[PwmSpec]) -> Result<(), SolverError> {
    let expected = netlist.input_count();
    if stimuli.len() != expected {
        return Err(SolverError::StimulusCount { expected, got: stimuli.len() });
    }
    Ok(())
}

fn shortest_period(stimuli: &[PwmSpec]) -> f64 {
    stimuli.iter().map(PwmSpec::period).fold(f64::INFINITY, f64::min)
}

fn resolve_max_step(opts: &SolverOptions, stimuli: &[PwmSpec]) -> f64 {
    opts.max_step
        .unwrap_or_else(|| shortest_period(stimuli) / DEFAULT_STEPS_PER_PERIOD as f64)
}

/// The averaging window, or `None` when the long-run horizon must be used.
fn pss_window(stimuli: &[PwmSpec], opts: &SolverOptions) -> Result<Option<f64>, SolverError> {
    match hyperperiod(stimuli) {
        Some(t) if t / shortest_period(stimuli) <= MAX_WINDOW_PERIODS => Ok(Some(t)),
        Some(t) if opts.horizon.is_none() => {
            Err(SolverError::HyperperiodTooLong { periods: t / shortest_period(stimuli) })
        }
        None if opts.horizon.is_none() => Err(SolverError::NoHyperperiod),
        _ => Ok(None),
    }
}

/// Node trajectory from `opts.v_init` over `[0, t_end]`.
pub fn transient(
    netlist: &Netlist,
    stimuli: &[PwmSpec],
    t_end: f64,
    opts: &SolverOptions,
) -> Result<TransientTrace, SolverError> {
    check_stimuli(netlist, stimuli)?;
    opts.validate()?;
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(SolverError::InvalidOption(format!("t_end must be > 0, got {t_end}")));
    }
    let engine = engine::Engine::new(netlist, stimuli, opts, resolve_max_step(opts, stimuli))?;
    let mut samples = Vec::new();
    engine.run(0.0, t_end, opts.v_init, Some(&mut samples))?;
    Ok(TransientTrace::new(samples))
}

/// Affine one-period map of the linear model over the common period.
pub fn period_map(netlist: &Netlist, stimuli: &[PwmSpec]) -> Result<AffineMap, SolverError> {
    check_stimuli(netlist, stimuli)?;
    let opts = SolverOptions::default();
    let window = pss_window(stimuli, &opts)?.ok_or(SolverError::NoHyperperiod)?;
    let engine = engine::Engine::new(netlist, stimuli, &opts, resolve_max_step(&opts, stimuli))?;
    engine.affine_map(0.0, window)
}

pub fn periodic_steady_state(
    netlist: &Netlist,
    stimuli: &[PwmSpec],
    opts: &SolverOptions,
) -> Result<SteadyStateResult, SolverError> {
    check_stimuli(netlist, stimuli)?;
    opts.validate()?;
    let engine = engine::Engine::new(netlist, stimuli, opts, resolve_max_step(opts, stimuli))?;
    let Some(window) = pss_window(stimuli, opts)? else {
        let horizon = opts.horizon.expect("checked by pss_window");
        return engine.long_run(horizon);
    };
    match opts.mode {
        SolverMode::AnalyticLinear => engine.closed_form_pss(window),
        SolverMode::ImplicitNonlinear => engine.settle_pss(window),
    }
}
