//! Brute-force fixed-step explicit Euler. No edge schedule, no segment logic;
//! used as an independent check on the event-driven engine.

use crate::device::{branch_current, Branch, BranchState};
use crate::netlist::{CellKind, Netlist};
use crate::signal::PwmSpec;

use super::trace::{Sample, TransientTrace};
use super::{check_stimuli, SolverError};

/// Integrates `[0, t_end]` from `v_init` with step `dt`. Input levels are
/// sampled at each step's midpoint.
pub fn reference_integrator(
    netlist: &Netlist,
    stimuli: &[PwmSpec],
    t_end: f64,
    dt: f64,
    v_init: f64,
) -> Result<TransientTrace, SolverError> {
    check_stimuli(netlist, stimuli)?;
    let min_gap = stimuli
        .iter()
        .filter(|s| !s.is_degenerate())
        .map(|s| s.duty_cycle().min(1.0 - s.duty_cycle()) * s.period())
        .fold(f64::INFINITY, f64::min);
    if !(dt > 0.0 && dt < min_gap && dt.is_finite()) {
        return Err(SolverError::InvalidStep { dt, min_gap });
    }
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(SolverError::InvalidOption(format!("t_end must be > 0, got {t_end}")));
    }

    let v_dd = netlist.v_dd();
    let c = netlist.c_out();
    let model = netlist.model();
    let steps = (t_end / dt).round().max(1.0) as usize;
    let mut samples = Vec::with_capacity(steps + 1);
    let mut v = v_init;
    let mut i_supply = 0.0;
    for k in 0..steps {
        let t = k as f64 * dt;
        let mid = t + 0.5 * dt;
        let mut i_total = 0.0;
        i_supply = 0.0;
        for cell in netlist.cells() {
            let stim = &stimuli[cell.input_index];
            let branch = cell.drive_state(stim.level_at(mid));
            let gate_drive = match (cell.kind, branch) {
                (CellKind::Inverter, Branch::PullDown) => stim.v_high(),
                (CellKind::Inverter, Branch::PullUp) => v_dd - stim.v_low(),
                (CellKind::Gated { .. }, _) => v_dd,
            };
            let i = branch_current(model, &cell.geometry, BranchState { branch, gate_drive }, v_dd, v)?;
            i_total += i;
            if branch == Branch::PullUp {
                i_supply += i;
            }
        }
        samples.push(Sample { t, v_node: v, i_supply });
        v += dt * i_total / c;
    }
    samples.push(Sample { t: steps as f64 * dt, v_node: v, i_supply });
    Ok(TransientTrace::new(samples))
}
