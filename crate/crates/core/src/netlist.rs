//! Circuit shapes: a single inverter cell, and the k-input n-bit weighted
//! adder built from gated cells. Every circuit is a set of driver cells
//! sharing one output node with a capacitor to ground.

use std::fmt;

use thiserror::Error;

use crate::device::{Branch, CellGeometry, DeviceError, DeviceModel};
use crate::signal::Level;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetlistError {
    #[error("weight {weight} of input {input} outside [0, {max}]")]
    WeightOutOfRange { input: usize, weight: u64, max: u64 },
    #[error("expected {expected} weights, got {got}")]
    WeightCount { expected: usize, got: usize },
    #[error("invalid adder: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

/// Transistors per gated cell (NAND + inverter).
pub const GATED_CELL_TRANSISTORS: usize = 6;
pub const INVERTER_CELL_TRANSISTORS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Inverter,
    /// AND of the PWM input and a static weight bit.
    Gated { weight_bit: bool },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellInstance {
    pub kind: CellKind,
    pub input_index: usize,
    /// 0 is the least significant weight bit.
    pub bit_index: u32,
    pub geometry: CellGeometry,
}

impl CellInstance {
    pub fn drive_state(&self, input: Level) -> Branch {
        match (self.kind, input) {
            (CellKind::Inverter, Level::Low) => Branch::PullUp,
            (CellKind::Inverter, Level::High) => Branch::PullDown,
            (CellKind::Gated { weight_bit: true }, Level::High) => Branch::PullUp,
            (CellKind::Gated { .. }, _) => Branch::PullDown,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdderConfig {
    pub n_bits: u32,
    pub weights: Vec<u64>,
    pub v_dd: f64,
    pub c_out: f64,
    /// X1 output resistor; bit j uses `r_out_base / 2^j`.
    pub base_geometry: CellGeometry,
    pub model: DeviceModel,
}

impl AdderConfig {
    pub fn inputs(&self) -> usize {
        self.weights.len()
    }

    pub fn max_weight(&self) -> u64 {
        (1u64 << self.n_bits) - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Netlist {
    cells: Vec<CellInstance>,
    c_out: f64,
    v_dd: f64,
    model: DeviceModel,
    transistor_count: usize,
}

fn check_node(c_out: f64, v_dd: f64) -> Result<(), NetlistError> {
    if !(c_out.is_finite() && c_out > 0.0) {
        return Err(NetlistError::InvalidConfig(format!("c_out must be > 0, got {c_out}")));
    }
    if !(v_dd.is_finite() && v_dd > 0.0) {
        return Err(NetlistError::InvalidConfig(format!("v_dd must be > 0, got {v_dd}")));
    }
    Ok(())
}

/// One inverter cell driving the output capacitor through its resistor.
pub fn build_inverter(
    geometry: CellGeometry,
    model: DeviceModel,
    c_out: f64,
    v_dd: f64,
) -> Result<Netlist, NetlistError> {
    check_node(c_out, v_dd)?;
    model.validate()?;
    let cell = CellInstance { kind: CellKind::Inverter, input_index: 0, bit_index: 0, geometry };
    Ok(Netlist::from_cells(vec![cell], c_out, v_dd, model))
}

/// k inputs times n weight bits of gated cells, binary-weighted sizing.
/// Disabled cells stay connected and pull the node low.
pub fn build_weighted_adder(config: &AdderConfig) -> Result<Netlist, NetlistError> {
    check_node(config.c_out, config.v_dd)?;
    config.model.validate()?;
    if config.weights.is_empty() {
        return Err(NetlistError::InvalidConfig("adder needs at least one input".into()));
    }
    if config.n_bits == 0 || config.n_bits > 31 {
        return Err(NetlistError::InvalidConfig(format!("n_bits must be in 1..=31, got {}", config.n_bits)));
    }
    let max = config.max_weight();
    let mut cells = Vec::with_capacity(config.weights.len() * config.n_bits as usize);
    for (input, &weight) in config.weights.iter().enumerate() {
        if weight > max {
            return Err(NetlistError::WeightOutOfRange { input, weight, max });
        }
        for bit in 0..config.n_bits {
            cells.push(CellInstance {
                kind: CellKind::Gated { weight_bit: (weight >> bit) & 1 == 1 },
                input_index: input,
                bit_index: bit,
                geometry: config.base_geometry.for_bit(bit)?,
            });
        }
    }
    Ok(Netlist::from_cells(cells, config.c_out, config.v_dd, config.model))
}

impl Netlist {
    fn from_cells(cells: Vec<CellInstance>, c_out: f64, v_dd: f64, model: DeviceModel) -> Self {
        let transistor_count = cells
            .iter()
            .map(|c| match c.kind {
                CellKind::Inverter => INVERTER_CELL_TRANSISTORS,
                CellKind::Gated { .. } => GATED_CELL_TRANSISTORS,
            })
            .sum();
        Netlist { cells, c_out, v_dd, model, transistor_count }
    }

    pub fn cells(&self) -> &[CellInstance] {
        &self.cells
    }

    pub fn c_out(&self) -> f64 {
        self.c_out
    }

    pub fn v_dd(&self) -> f64 {
        self.v_dd
    }

    pub fn model(&self) -> &DeviceModel {
        &self.model
    }

    pub fn transistor_count(&self) -> usize {
        self.transistor_count
    }

    pub fn input_count(&self) -> usize {
        self.cells.iter().map(|c| c.input_index + 1).max().unwrap_or(0)
    }

    /// Same circuit with a different supply voltage.
    pub fn with_v_dd(&self, v_dd: f64) -> Result<Self, NetlistError> {
        check_node(self.c_out, v_dd)?;
        Ok(Netlist { v_dd, ..self.clone() })
    }
}

impl fmt::Display for Netlist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "# {} cells, {} transistors, c_out={} F, v_dd={} V, model={}",
            self.cells.len(),
            self.transistor_count,
            self.c_out,
            self.v_dd,
            self.model.name()
        )?;
        writeln!(f, "{:>4}  {:>8}  {:>5}  {:>3}  {:>4}  {:>12}  {:>10}", "cell", "kind", "input", "bit", "mult", "r_out_ohm", "weight_bit")?;
        for (i, c) in self.cells.iter().enumerate() {
            let (kind, wbit) = match c.kind {
                CellKind::Inverter => ("inverter", "-".to_string()),
                CellKind::Gated { weight_bit } => ("gated", u8::from(weight_bit).to_string()),
            };
            writeln!(
                f,
                "{:>4}  {:>8}  {:>5}  {:>3}  {:>4}  {:>12}  {:>10}",
                i,
                kind,
                c.input_index,
                c.bit_index,
                c.geometry.width_multiplier(),
                c.geometry.r_out(),
                wbit
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{linear_conductance, LinearSwitchModel, SquareLawModel};

    fn adder(weights: Vec<u64>, n_bits: u32, model: DeviceModel) -> Result<Netlist, NetlistError> {
        build_weighted_adder(&AdderConfig {
            n_bits,
            weights,
            v_dd: 2.5,
            c_out: 10e-12,
            base_geometry: CellGeometry::with_r_out(100e3).unwrap(),
            model,
        })
    }

    fn linear() -> DeviceModel {
        DeviceModel::Linear(LinearSwitchModel::default())
    }

    #[test]
    fn inverter_netlist() {
        let n = build_inverter(CellGeometry::with_r_out(100e3).unwrap(), linear(), 1e-12, 2.5).unwrap();
        assert_eq!(n.cells().len(), 1);
        assert_eq!(n.transistor_count(), 2);
        assert_eq!(n.input_count(), 1);
        let bare = build_inverter(CellGeometry::with_r_out(0.0).unwrap(), linear(), 1e-12, 2.5).unwrap();
        assert_eq!(bare.cells()[0].geometry.r_out(), 0.0);
        assert!(build_inverter(CellGeometry::with_r_out(0.0).unwrap(), linear(), 0.0, 2.5).is_err());
    }

    #[test]
    fn three_by_three_adder_has_54_transistors() {
        let n = adder(vec![7, 2, 5], 3, linear()).unwrap();
        assert_eq!(n.cells().len(), 9);
        assert_eq!(n.transistor_count(), 54);
        assert_eq!(n.input_count(), 3);
        for c in n.cells() {
            assert_eq!(c.geometry.width_multiplier(), 1 << c.bit_index);
            assert_eq!(c.geometry.r_out(), 100e3 / f64::from(1u32 << c.bit_index));
        }
        let bits: Vec<bool> = n
            .cells()
            .iter()
            .map(|c| matches!(c.kind, CellKind::Gated { weight_bit: true }))
            .collect();
        assert_eq!(bits, [true, true, true, false, true, false, true, false, true]);
    }

    #[test]
    fn minimal_and_maximal_adders() {
        let n = adder(vec![1], 1, linear()).unwrap();
        assert_eq!(n.cells().len(), 1);
        assert_eq!(n.transistor_count(), 6);
        let n = adder(vec![7, 7, 7], 3, linear()).unwrap();
        assert!(n.cells().iter().all(|c| c.kind == CellKind::Gated { weight_bit: true }));
    }

    #[test]
    fn weight_out_of_range_rejected() {
        let err = adder(vec![1, 8, 0], 3, linear()).unwrap_err();
        assert_eq!(err, NetlistError::WeightOutOfRange { input: 1, weight: 8, max: 7 });
        assert!(adder(vec![], 3, linear()).is_err());
        assert!(adder(vec![1], 0, linear()).is_err());
    }

    #[test]
    fn drive_states() {
        let g = CellGeometry::with_r_out(1e3).unwrap();
        let inv = CellInstance { kind: CellKind::Inverter, input_index: 0, bit_index: 0, geometry: g };
        assert_eq!(inv.drive_state(Level::Low), Branch::PullUp);
        assert_eq!(inv.drive_state(Level::High), Branch::PullDown);
        let off = CellInstance { kind: CellKind::Gated { weight_bit: false }, ..inv };
        assert_eq!(off.drive_state(Level::Low), Branch::PullDown);
        assert_eq!(off.drive_state(Level::High), Branch::PullDown);
        let on = CellInstance { kind: CellKind::Gated { weight_bit: true }, ..inv };
        assert_eq!(on.drive_state(Level::High), Branch::PullUp);
        assert_eq!(on.drive_state(Level::Low), Branch::PullDown);
    }

    #[test]
    fn conductance_ladder_doubles_per_bit() {
        let m = LinearSwitchModel::default();
        let n = adder(vec![7], 4, DeviceModel::Linear(m)).unwrap();
        let g0 = linear_conductance(&m, &n.cells()[0].geometry, Branch::PullUp);
        for c in n.cells() {
            let g = linear_conductance(&m, &c.geometry, Branch::PullUp);
            assert_eq!(g, g0 * f64::from(1u32 << c.bit_index));
        }
    }

    #[test]
    fn symmetric_total_conductance_is_state_independent() {
        let m = LinearSwitchModel::default();
        let n = adder(vec![5, 3, 6], 3, DeviceModel::Linear(m)).unwrap();
        let total = |levels: [Level; 3]| -> f64 {
            n.cells()
                .iter()
                .map(|c| linear_conductance(&m, &c.geometry, c.drive_state(levels[c.input_index])))
                .sum()
        };
        let reference = total([Level::Low; 3]);
        for mask in 0..8 {
            let levels = [0, 1, 2].map(|i| if mask >> i & 1 == 1 { Level::High } else { Level::Low });
            assert_eq!(total(levels), reference);
        }
    }

    #[test]
    fn summary_table_lists_every_cell() {
        let n = adder(vec![1, 2], 2, DeviceModel::SquareLaw(SquareLawModel::default())).unwrap();
        let text = n.to_string();
        assert!(text.starts_with("# 4 cells, 24 transistors"));
        assert_eq!(text.lines().count(), 2 + 4);
        assert!(text.contains("gated"));
    }
}
