//! Closed-form predictions, error reports and the threshold decision.

use thiserror::Error;

use crate::device::{linear_conductance, Branch, DeviceModel};
use crate::netlist::{CellKind, Netlist};
use crate::solver::SteadyStateResult;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("duty cycle {0} outside [0, 1]")]
    DutyOutOfRange(f64),
    #[error("weight {weight} outside [0, {max}]")]
    WeightOutOfRange { weight: u64, max: u64 },
    #[error("bit width {0} outside 1..=63")]
    BadBitWidth(u32),
    #[error("no closed form for the {0} device model")]
    NonlinearModel(&'static str),
    #[error("steady state did not converge")]
    NotConverged,
}

fn check_duty(d: f64) -> Result<(), AnalysisError> {
    if (0.0..=1.0).contains(&d) {
        Ok(())
    } else {
        Err(AnalysisError::DutyOutOfRange(d))
    }
}

/// Ideal weighted-adder output, `v_dd * sum(DC_i * W_i) / (k * (2^n - 1))`
/// with ground at 0 V.
pub fn eq2_prediction(duties: &[f64], weights: &[u64], n_bits: u32, v_dd: f64) -> Result<f64, AnalysisError> {
    if duties.len() != weights.len() {
        return Err(AnalysisError::LengthMismatch { expected: weights.len(), got: duties.len() });
    }
    if n_bits == 0 || n_bits > 63 {
        return Err(AnalysisError::BadBitWidth(n_bits));
    }
    let max = (1u64 << n_bits) - 1;
    let mut sum = 0.0;
    for (&d, &w) in duties.iter().zip(weights) {
        check_duty(d)?;
        if w > max {
            return Err(AnalysisError::WeightOutOfRange { weight: w, max });
        }
        sum += d * w as f64;
    }
    Ok(v_dd * sum / (duties.len() as f64 * max as f64))
}

/// High-frequency limit of the linear model: every cell contributes its
/// duty-weighted pull-up and pull-down conductances,
/// `v_dd * sum(a_c g_up) / sum(a_c g_up + (1 - a_c) g_dn)`,
/// where `a_c` is the fraction of time cell `c` pulls up. Exact for any
/// frequency when pull-up and pull-down conductances match.
pub fn divider_prediction(netlist: &Netlist, duties: &[f64]) -> Result<f64, AnalysisError> {
    let DeviceModel::Linear(model) = netlist.model() else {
        return Err(AnalysisError::NonlinearModel(netlist.model().name()));
    };
    if duties.len() != netlist.input_count() {
        return Err(AnalysisError::LengthMismatch { expected: netlist.input_count(), got: duties.len() });
    }
    for &d in duties {
        check_duty(d)?;
    }
    let mut up = 0.0;
    let mut total = 0.0;
    for cell in netlist.cells() {
        let dc = duties[cell.input_index];
        let alpha = match cell.kind {
            CellKind::Inverter => 1.0 - dc,
            CellKind::Gated { weight_bit: true } => dc,
            CellKind::Gated { weight_bit: false } => 0.0,
        };
        let g_up = linear_conductance(model, &cell.geometry, Branch::PullUp);
        let g_dn = linear_conductance(model, &cell.geometry, Branch::PullDown);
        up += alpha * g_up;
        total += alpha * g_up + (1.0 - alpha) * g_dn;
    }
    Ok(netlist.v_dd() * up / total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionReport {
    pub v_theoretical: f64,
    pub v_simulated: f64,
    pub abs_error: f64,
    /// Referenced to full scale (`v_dd`).
    pub rel_error: f64,
}

pub fn measure(v_theoretical: f64, v_simulated: f64, v_dd: f64) -> PredictionReport {
    let abs_error = (v_theoretical - v_simulated).abs();
    PredictionReport { v_theoretical, v_simulated, abs_error, rel_error: abs_error / v_dd }
}

pub fn average_power(pss: &SteadyStateResult) -> Result<f64, AnalysisError> {
    if !pss.converged {
        return Err(AnalysisError::NotConverged);
    }
    Ok(pss.avg_power)
}

/// Strict comparison: equality decides 0.
pub fn perceptron_output(v_avg: f64, v_threshold: f64) -> u8 {
    u8::from(v_avg > v_threshold)
}

/// Voltage threshold equivalent to a dot-product bias `b` under the adder's
/// scaling, so that `w.x + b > 0` maps onto `v_avg > threshold`.
pub fn threshold_from_bias(bias: f64, v_dd: f64, inputs: usize, n_bits: u32) -> f64 {
    let full_scale = inputs as f64 * ((1u64 << n_bits) - 1) as f64;
    v_dd * -bias / full_scale
}
