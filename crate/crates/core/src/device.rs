//! Conduction laws for a cell's pull-up and pull-down branches.
//!
//! A branch is one transistor in series with the cell's output resistor.
//! Two fidelities are provided: an ideal switched resistor and a square-law
//! transistor (no channel-length modulation). Currents are signed positive
//! into the shared output node.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("invalid device parameter: {0}")]
    InvalidParameter(String),
    #[error(
        "series solve failed for {branch} branch at v_node={v_node} V, rail={rail} V, \
         gate_drive={gate_drive} V, r_out={r_out} ohm"
    )]
    BracketFailure { branch: Branch, rail: f64, v_node: f64, gate_drive: f64, r_out: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    PullUp,
    PullDown,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Branch::PullUp => f.write_str("pull-up"),
            Branch::PullDown => f.write_str("pull-down"),
        }
    }
}

/// Which branch of a cell conducts, and the gate-to-source voltage
/// magnitude its transistor sees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchState {
    pub branch: Branch,
    pub gate_drive: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellGeometry {
    width_multiplier: u32,
    r_out: f64,
    base_n_width: f64,
    base_p_width: f64,
    channel_length: f64,
}

/// Minimum-size transistor dimensions of the reference design.
pub const DEFAULT_N_WIDTH: f64 = 320e-9;
pub const DEFAULT_P_WIDTH: f64 = 865e-9;
pub const DEFAULT_CHANNEL_LENGTH: f64 = 1.2e-6;

impl CellGeometry {
    pub fn new(
        width_multiplier: u32,
        r_out: f64,
        base_n_width: f64,
        base_p_width: f64,
        channel_length: f64,
    ) -> Result<Self, DeviceError> {
        if width_multiplier == 0 {
            return Err(DeviceError::InvalidParameter("width_multiplier must be >= 1".into()));
        }
        if !(r_out.is_finite() && r_out >= 0.0) {
            return Err(DeviceError::InvalidParameter(format!("r_out must be >= 0, got {r_out}")));
        }
        for (name, v) in [
            ("base_n_width", base_n_width),
            ("base_p_width", base_p_width),
            ("channel_length", channel_length),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(DeviceError::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(CellGeometry { width_multiplier, r_out, base_n_width, base_p_width, channel_length })
    }

    /// X1 cell with the default transistor dimensions.
    pub fn with_r_out(r_out: f64) -> Result<Self, DeviceError> {
        CellGeometry::new(1, r_out, DEFAULT_N_WIDTH, DEFAULT_P_WIDTH, DEFAULT_CHANNEL_LENGTH)
    }

    /// Same base dimensions, scaled for weight bit `bit`: transistor widths
    /// times 2^bit, output resistor divided by 2^bit.
    pub fn for_bit(&self, bit: u32) -> Result<Self, DeviceError> {
        let scale = 1u32
            .checked_shl(bit)
            .filter(|s| s.checked_mul(self.width_multiplier).is_some())
            .ok_or_else(|| DeviceError::InvalidParameter(format!("bit index {bit} too large")))?;
        Ok(CellGeometry {
            width_multiplier: self.width_multiplier * scale,
            r_out: self.r_out / f64::from(scale),
            ..*self
        })
    }

    pub fn width_multiplier(&self) -> u32 {
        self.width_multiplier
    }

    pub fn r_out(&self) -> f64 {
        self.r_out
    }

    pub fn n_width(&self) -> f64 {
        self.base_n_width * f64::from(self.width_multiplier)
    }

    pub fn p_width(&self) -> f64 {
        self.base_p_width * f64::from(self.width_multiplier)
    }

    pub fn channel_length(&self) -> f64 {
        self.channel_length
    }
}

/// Each transistor as an ideal switch with a fixed on-resistance (X1 size).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSwitchModel {
    pub r_on_n: f64,
    pub r_on_p: f64,
}

impl Default for LinearSwitchModel {
    fn default() -> Self {
        LinearSwitchModel { r_on_n: 10e3, r_on_p: 10e3 }
    }
}

/// Long-channel square-law transistor. `kp_*` already includes the X1 W/L.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquareLawModel {
    pub vth_n: f64,
    pub vth_p: f64,
    pub kp_n: f64,
    pub kp_p: f64,
}

impl Default for SquareLawModel {
    fn default() -> Self {
        SquareLawModel { vth_n: 0.45, vth_p: 0.45, kp_n: 100e-6, kp_p: 40e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeviceModel {
    Linear(LinearSwitchModel),
    SquareLaw(SquareLawModel),
}

impl DeviceModel {
    pub fn validate(&self) -> Result<(), DeviceError> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(DeviceError::InvalidParameter(format!("{name} must be > 0, got {v}")))
            }
        };
        match *self {
            DeviceModel::Linear(m) => {
                positive("r_on_n", m.r_on_n)?;
                positive("r_on_p", m.r_on_p)
            }
            DeviceModel::SquareLaw(m) => {
                positive("kp_n", m.kp_n)?;
                positive("kp_p", m.kp_p)?;
                for (name, v) in [("vth_n", m.vth_n), ("vth_p", m.vth_p)] {
                    if !(v.is_finite() && v >= 0.0) {
                        return Err(DeviceError::InvalidParameter(format!("{name} must be >= 0, got {v}")));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, DeviceModel::Linear(_))
    }

    pub fn name(&self) -> &'static str {
        match self {
            DeviceModel::Linear(_) => "linear",
            DeviceModel::SquareLaw(_) => "squarelaw",
        }
    }
}

/// Series conductance of a linear-model branch: `1 / (r_on/mult + r_out)`.
pub fn linear_conductance(model: &LinearSwitchModel, geom: &CellGeometry, branch: Branch) -> f64 {
    let r_on = match branch {
        Branch::PullUp => model.r_on_p,
        Branch::PullDown => model.r_on_n,
    };
    1.0 / (r_on / f64::from(geom.width_multiplier) + geom.r_out)
}

/// Current delivered into the node by an active branch. Pull-up branches
/// drive toward `v_supply`, pull-down branches toward ground.
pub fn branch_current(
    model: &DeviceModel,
    geom: &CellGeometry,
    state: BranchState,
    v_supply: f64,
    v_node: f64,
) -> Result<f64, DeviceError> {
    let rail = match state.branch {
        Branch::PullUp => v_supply,
        Branch::PullDown => 0.0,
    };
    match model {
        DeviceModel::Linear(m) => Ok((rail - v_node) * linear_conductance(m, geom, state.branch)),
        DeviceModel::SquareLaw(m) => {
            let (vth, kp) = match state.branch {
                Branch::PullUp => (m.vth_p, m.kp_p),
                Branch::PullDown => (m.vth_n, m.kp_n),
            };
            let k = kp * f64::from(geom.width_multiplier);
            let overdrive = state.gate_drive - vth;
            series_current(k, overdrive, geom.r_out, rail - v_node).ok_or(DeviceError::BracketFailure {
                branch: state.branch,
                rail,
                v_node,
                gate_drive: state.gate_drive,
                r_out: geom.r_out,
            })
        }
    }
}

/// Small-signal conductance seen from the node, `-dI/dv_node`. Exact for the
/// linear model, a 1 mV central difference for the square-law model.
pub fn branch_conductance(
    model: &DeviceModel,
    geom: &CellGeometry,
    state: BranchState,
    v_supply: f64,
    v_node: f64,
) -> Result<f64, DeviceError> {
    match model {
        DeviceModel::Linear(m) => Ok(linear_conductance(m, geom, state.branch)),
        DeviceModel::SquareLaw(_) => {
            const STEP: f64 = 1e-3;
            let lo = branch_current(model, geom, state, v_supply, v_node - STEP)?;
            let hi = branch_current(model, geom, state, v_supply, v_node + STEP)?;
            Ok((lo - hi) / (2.0 * STEP))
        }
    }
}

const CURRENT_TOL: f64 = 1e-12;
const MAX_ITER: usize = 200;

fn drain_current(k: f64, overdrive: f64, vds: f64) -> f64 {
    if vds <= overdrive {
        k * (overdrive * vds - 0.5 * vds * vds)
    } else {
        0.5 * k * overdrive * overdrive
    }
}

fn drain_slope(k: f64, overdrive: f64, vds: f64) -> f64 {
    if vds <= overdrive {
        k * (overdrive - vds)
    } else {
        0.0
    }
}

/// Current through transistor + resistor with `headroom` volts across the
/// stack. Odd in `headroom`, so a node pushed past its rail is pulled back.
fn series_current(k: f64, overdrive: f64, r_out: f64, headroom: f64) -> Option<f64> {
    if !(headroom.is_finite() && overdrive.is_finite() && k.is_finite()) {
        return None;
    }
    if headroom < 0.0 {
        return series_current(k, overdrive, r_out, -headroom).map(|i| -i);
    }
    if headroom == 0.0 || overdrive <= 0.0 {
        return Some(0.0);
    }
    if r_out == 0.0 {
        return Some(drain_current(k, overdrive, headroom));
    }

    // Root of h(vds) = Id(vds) - (headroom - vds)/r_out on [0, headroom];
    // h is increasing, h(0) < 0 <= h(headroom).
    let g_r = 1.0 / r_out;
    let h = |x: f64| drain_current(k, overdrive, x) - (headroom - x) * g_r;
    let (mut lo, mut hi) = (0.0, headroom);
    if h(hi) < 0.0 {
        return None;
    }
    let r_dev = 1.0 / (k * overdrive);
    let mut x = (headroom * r_dev / (r_dev + r_out)).clamp(lo, hi);
    for _ in 0..MAX_ITER {
        let hx = h(x);
        if hx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let slope = drain_slope(k, overdrive, x) + g_r;
        let mut next = x - hx / slope;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - x).abs();
        x = next;
        if step * slope <= CURRENT_TOL || hi - lo <= f64::EPSILON * headroom {
            return Some((headroom - x) * g_r);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn up(gate: f64) -> BranchState {
        BranchState { branch: Branch::PullUp, gate_drive: gate }
    }

    fn down(gate: f64) -> BranchState {
        BranchState { branch: Branch::PullDown, gate_drive: gate }
    }

    fn square() -> DeviceModel {
        DeviceModel::SquareLaw(SquareLawModel::default())
    }

    #[test]
    fn linear_ohms_law() {
        let m = DeviceModel::Linear(LinearSwitchModel::default());
        let g = CellGeometry::with_r_out(100e3).unwrap();
        let i = branch_current(&m, &g, up(2.5), 2.5, 0.0).unwrap();
        assert!((i - 2.5 / 110e3).abs() < 1e-18);
        assert!((i - 22.73e-6).abs() < 0.01e-6);
        let i = branch_current(&m, &g, down(2.5), 2.5, 1.0).unwrap();
        assert!((i + 1.0 / 110e3).abs() < 1e-18);
    }

    #[test]
    fn zero_headroom_gives_zero_current() {
        let g = CellGeometry::with_r_out(100e3).unwrap();
        for m in [DeviceModel::Linear(LinearSwitchModel::default()), square()] {
            assert_eq!(branch_current(&m, &g, up(2.5), 2.5, 2.5).unwrap(), 0.0);
            assert_eq!(branch_current(&m, &g, down(2.5), 2.5, 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn square_law_pull_down_matches_bisection_oracle() {
        // Frozen from an independent 200-step bisection on the two-element
        // stack (vth=0.45, kp=100u, gate 2.5 V, r_out=100k, v_node=1 V).
        const ORACLE: f64 = 9.52974084481309e-06;
        let g = CellGeometry::with_r_out(100e3).unwrap();
        let i = branch_current(&square(), &g, down(2.5), 2.5, 1.0).unwrap();
        assert!((i + ORACLE).abs() <= 1e-12, "{i}");
    }

    #[test]
    fn square_law_without_resistor_is_bare_device() {
        let g = CellGeometry::with_r_out(0.0).unwrap();
        let i = branch_current(&square(), &g, down(2.5), 2.5, 1.0).unwrap();
        let k = 100e-6;
        assert!((i + k * (2.05 * 1.0 - 0.5)).abs() < 1e-18);
        // saturated: vds = 2.4 > 2.05
        let i = branch_current(&square(), &g, down(2.5), 2.5, 2.4).unwrap();
        assert!((i + 0.5 * k * 2.05 * 2.05).abs() < 1e-18);
    }

    #[test]
    fn cutoff_conducts_nothing() {
        let g = CellGeometry::with_r_out(100e3).unwrap();
        assert_eq!(branch_current(&square(), &g, down(0.3), 0.3, 0.2).unwrap(), 0.0);
    }

    #[test]
    fn non_finite_operating_point_is_an_error() {
        let g = CellGeometry::with_r_out(100e3).unwrap();
        let err = branch_current(&square(), &g, down(2.5), 2.5, f64::NAN).unwrap_err();
        assert!(matches!(err, DeviceError::BracketFailure { .. }));
    }

    #[test]
    fn linear_conductances() {
        let m = DeviceModel::Linear(LinearSwitchModel::default());
        let g2 = CellGeometry::new(2, 50e3, DEFAULT_N_WIDTH, DEFAULT_P_WIDTH, DEFAULT_CHANNEL_LENGTH).unwrap();
        let g = branch_conductance(&m, &g2, down(2.5), 2.5, 1.0).unwrap();
        assert!((g - 1.0 / 55e3).abs() < 1e-18);
        assert!((g - 18.18e-6).abs() < 0.01e-6);
        let gu = branch_conductance(&m, &g2, up(2.5), 2.5, 1.0).unwrap();
        assert_eq!(g, gu);
    }

    #[test]
    fn square_law_conductance_at_rail_is_finite() {
        let g = CellGeometry::with_r_out(100e3).unwrap();
        let c = branch_conductance(&square(), &g, up(2.5), 2.5, 2.5).unwrap();
        // linearized stack at zero vds: device slope k*vov in series with r_out
        let expected = 1.0 / (100e3 + 1.0 / (40e-6 * 2.05));
        assert!(c.is_finite() && c > 0.0);
        assert!((c - expected).abs() / expected < 1e-3, "{c} vs {expected}");
    }

    #[test]
    fn doubling_width_halves_device_resistance() {
        let m = LinearSwitchModel { r_on_n: 12e3, r_on_p: 7e3 };
        let x1 = CellGeometry::with_r_out(0.0).unwrap();
        let x2 = CellGeometry::new(2, 0.0, DEFAULT_N_WIDTH, DEFAULT_P_WIDTH, DEFAULT_CHANNEL_LENGTH).unwrap();
        for b in [Branch::PullUp, Branch::PullDown] {
            assert_eq!(1.0 / linear_conductance(&m, &x2, b), 0.5 / linear_conductance(&m, &x1, b));
        }
    }

    #[test]
    fn bit_scaling() {
        let base = CellGeometry::with_r_out(100e3).unwrap();
        let x4 = base.for_bit(2).unwrap();
        assert_eq!(x4.width_multiplier(), 4);
        assert_eq!(x4.r_out(), 25e3);
        assert!((x4.n_width() - 1280e-9).abs() < 1e-15);
    }

    #[test]
    fn square_law_tends_to_resistor_for_huge_gain() {
        let base = SquareLawModel::default();
        let strong = DeviceModel::SquareLaw(SquareLawModel { kp_n: base.kp_n * 1000.0, kp_p: base.kp_p * 1000.0, ..base });
        let g = CellGeometry::with_r_out(100e3).unwrap();
        for v in [0.3, 0.8, 1.25, 1.7, 2.1] {
            let iu = branch_current(&strong, &g, up(2.5), 2.5, v).unwrap();
            let id = branch_current(&strong, &g, down(2.5), 2.5, v).unwrap();
            let ru = (2.5 - v) / 100e3;
            let rd = -v / 100e3;
            assert!((iu - ru).abs() / ru.abs() < 0.01, "up at {v}: {iu} vs {ru}");
            assert!((id - rd).abs() / rd.abs() < 0.01, "down at {v}: {id} vs {rd}");
        }
    }

    proptest! {
        #[test]
        fn current_is_monotone_in_node_voltage(
            r_out in prop_oneof![Just(0.0), 1e3f64..1e6],
            mult in 1u32..8,
            v in 0.0f64..2.49,
            dv in 1e-3f64..0.5,
        ) {
            let g = CellGeometry::new(mult, r_out, DEFAULT_N_WIDTH, DEFAULT_P_WIDTH, DEFAULT_CHANNEL_LENGTH).unwrap();
            let v2 = (v + dv).min(2.5);
            prop_assume!(v2 > v);
            // a saturated square-law device (no channel-length modulation)
            // carries a flat current, so only the linear model is strict
            for (m, strict) in [(DeviceModel::Linear(LinearSwitchModel::default()), true), (square(), false)] {
                let u1 = branch_current(&m, &g, up(2.5), 2.5, v).unwrap();
                let u2 = branch_current(&m, &g, up(2.5), 2.5, v2).unwrap();
                let d1 = branch_current(&m, &g, down(2.5), 2.5, v).unwrap();
                let d2 = branch_current(&m, &g, down(2.5), 2.5, v2).unwrap();
                if strict {
                    prop_assert!(u2 < u1 && d2 < d1);
                } else {
                    prop_assert!(u2 <= u1 && d2 <= d1);
                }
                prop_assert!(u1 >= 0.0 && d1 <= 0.0);
            }
        }
    }
}
